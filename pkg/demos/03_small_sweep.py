#!/usr/bin/env python3
"""A reduced sweep: three source rotations, two criteria, the full sparsity grid."""

import sys
from dataclasses import replace

from sopai.runner import RunConfig, format_summary, run, summarize

out = sys.argv[1] if len(sys.argv) > 1 else "results_demo"
cfg = replace(RunConfig(), methods=("magnitude", "diag"), rotations=(0, 1, 2), out_dir=out)
res = run(cfg)
print(f"{len(res.records)} records, transfer leakage {res.leakage}, incomplete cells {len(res.incomplete)}")

rows = [r for r in summarize(f"{out}/results.csv") if r["role"] == "transfer"]
print(format_summary(rows))
