#!/usr/bin/env python3
"""Two-weight quadratics: when does pruning on one task spare another?"""

import numpy as np

from sopai.landscape import CASES, QuadraticTask, case_report, toy_prune_demo

# every canonical panel, scored with the exact inverse Hessian
for case in sorted(CASES):
    demo, _, meta = case_report(case, "exact", resolution=21)
    print(f"{case:<11s} pruned w{demo.pruned}  "
          f"source {demo.losses['pruned'][0]:.3f} -> {demo.losses['retrained'][0]:.3f}  "
          f"transfer {demo.losses['pruned'][1]:.3f} -> {demo.losses['retrained'][1]:.3f}  "
          f"same argmin: {meta['p1_argmin_agreement']}")

# magnitude ignores curvature; on the diagonal panel that costs loss
for approx in ("magnitude", "diag", "exact"):
    d = case_report("diag", approx)[0]
    print(approx, "drops w%d, source loss %.3f" % (d.pruned, d.losses["pruned"][0]))

# rotate the transfer task away from the source and watch the benefit of re-training vanish
th0 = np.array([1.0, 0.7])
src = QuadraticTask(th0, (4.0, 0.05), np.pi / 6)
for dphi in np.linspace(0, np.pi / 2, 5):
    d = toy_prune_demo(src, QuadraticTask(th0, (4.0, 0.05), np.pi / 6 + dphi))
    print(f"angle gap {np.degrees(dphi):5.1f} deg  transfer gain from re-training {d.transfer_improvement:+.4f}")
