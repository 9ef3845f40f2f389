"""Seeded end-to-end sweeps, aggregation and plot-data emission."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import os
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import hessian as hs
from . import landscape as ls
from . import oracles
from .errors import NumericalError, SizeLimitError, SopaiError
from .masking import SPARSITY_GRID
from .net import init_network
from .probe import AccessLog, fit_probe, run_protocol, write_records_csv
from .saliency import METHODS
from .tasks import generate, rotate_roles
from .trainer import SgdSchedule, pretrain, save_checkpoint

log = logging.getLogger(__name__)

WORKERS_ENV = "SOPAI_WORKERS"
DEFAULT_METHODS = ("magnitude", "diag", "block", "snip", "grasp")
PRETRAIN_SCHEDULE = SgdSchedule(epochs=40, lr=0.03, decay_epochs=(30,))
RETRAIN_SCHEDULE = SgdSchedule()


class MalformedCsvError(SopaiError, ValueError):
    def __init__(self, problems):
        self.problems = problems
        super().__init__("; ".join(f"line {n}: {msg}" for n, msg in problems))


@dataclass(frozen=True)
class RunConfig:
    task_seed: int = 0
    n_tasks: int = 10
    n_classes: int = 10
    dim: int = 64
    per_class: int = 50
    rho: float = 1.0
    noise: float = 0.8
    scale: float = 3.0
    hidden: tuple = (128, 64)
    pretrain: SgdSchedule = PRETRAIN_SCHEDULE
    retrain: SgdSchedule = RETRAIN_SCHEDULE
    methods: tuple = DEFAULT_METHODS
    sparsities: tuple = SPARSITY_GRID
    alpha: float = 1.0
    seeds: tuple = (0,)
    rotations: Optional[tuple] = None
    apply_obs_update: bool = False
    report_heldout: bool = False
    exact_max_params: int = hs.EXACT_MAX_PARAMS
    out_dir: str = "results"
    save_checkpoints: bool = True

    def __post_init__(self):
        for name in ("hidden", "methods", "sparsities", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.rotations is not None:
            object.__setattr__(self, "rotations", tuple(self.rotations))
        sp = self.sparsities
        if not sp or any(b <= a for a, b in zip(sp, sp[1:])) or sp[0] < 0 or sp[-1] >= 100:
            raise ValueError(f"sparsities must be strictly increasing percentages in [0, 100), got {sp}")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @property
    def dims(self):
        return (self.dim, *self.hidden)

    @property
    def q_grid(self):
        return [s / 100.0 for s in self.sparsities]


def _ints(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _schedule_section(s: SgdSchedule):
    return dict(epochs=s.epochs, lr=repr(s.lr), momentum=repr(s.momentum), weight_decay=repr(s.weight_decay),
                decay_epochs=", ".join(map(str, s.decay_epochs)), decay_factor=repr(s.decay_factor),
                batch_size=s.batch_size)


def _read_schedule(sec, default: SgdSchedule):
    if sec is None:
        return default
    return SgdSchedule(
        epochs=sec.getint("epochs", default.epochs), lr=sec.getfloat("lr", default.lr),
        momentum=sec.getfloat("momentum", default.momentum),
        weight_decay=sec.getfloat("weight_decay", default.weight_decay),
        decay_epochs=_ints(sec.get("decay_epochs", ", ".join(map(str, default.decay_epochs)))),
        decay_factor=sec.getfloat("decay_factor", default.decay_factor),
        batch_size=sec.getint("batch_size", default.batch_size))


def config_to_text(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser()
    cp["tasks"] = dict(seed=cfg.task_seed, n_tasks=cfg.n_tasks, n_classes=cfg.n_classes, dim=cfg.dim,
                       per_class=cfg.per_class, rho=repr(cfg.rho), noise=repr(cfg.noise), scale=repr(cfg.scale))
    cp["network"] = dict(hidden=", ".join(map(str, cfg.hidden)))
    cp["pretrain"] = _schedule_section(cfg.pretrain)
    cp["retrain"] = _schedule_section(cfg.retrain)
    cp["experiment"] = dict(
        methods=", ".join(cfg.methods), sparsities=", ".join(f"{s:.2f}" for s in cfg.sparsities),
        alpha=repr(cfg.alpha), seeds=", ".join(map(str, cfg.seeds)),
        rotations="all" if cfg.rotations is None else ", ".join(map(str, cfg.rotations)),
        apply_obs_update=str(cfg.apply_obs_update).lower(), report_heldout=str(cfg.report_heldout).lower(),
        exact_max_params=cfg.exact_max_params)
    cp["output"] = dict(dir=cfg.out_dir, save_checkpoints=str(cfg.save_checkpoints).lower())
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_text(text: str) -> RunConfig:
    """Parse an INI-style config; missing keys keep their defaults."""
    cp = configparser.ConfigParser()
    cp.read_string(text)
    d = RunConfig()
    get = lambda sec: cp[sec] if cp.has_section(sec) else None  # noqa: E731
    t, n, e, o = get("tasks"), get("network"), get("experiment"), get("output")
    kw = {}
    if t is not None:
        kw.update(task_seed=t.getint("seed", d.task_seed), n_tasks=t.getint("n_tasks", d.n_tasks),
                  n_classes=t.getint("n_classes", d.n_classes), dim=t.getint("dim", d.dim),
                  per_class=t.getint("per_class", d.per_class), rho=t.getfloat("rho", d.rho),
                  noise=t.getfloat("noise", d.noise), scale=t.getfloat("scale", d.scale))
    if n is not None and "hidden" in n:
        kw["hidden"] = _ints(n["hidden"])
    kw["pretrain"] = _read_schedule(get("pretrain"), d.pretrain)
    kw["retrain"] = _read_schedule(get("retrain"), d.retrain)
    if e is not None:
        if "methods" in e:
            kw["methods"] = tuple(m.strip() for m in e["methods"].split(",") if m.strip())
        if "sparsities" in e:
            kw["sparsities"] = _floats(e["sparsities"])
        if "seeds" in e:
            kw["seeds"] = _ints(e["seeds"])
        if "rotations" in e:
            kw["rotations"] = None if e["rotations"].strip() == "all" else _ints(e["rotations"])
        kw.update(alpha=e.getfloat("alpha", d.alpha), apply_obs_update=e.getboolean("apply_obs_update", False),
                  report_heldout=e.getboolean("report_heldout", False),
                  exact_max_params=e.getint("exact_max_params", d.exact_max_params))
    if o is not None:
        kw.update(out_dir=o.get("dir", d.out_dir), save_checkpoints=o.getboolean("save_checkpoints", True))
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_text(fh.read())


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass
class RunResult:
    records: list
    heldout: list = field(default_factory=list)
    leakage: int = 0
    incomplete: list = field(default_factory=list)
    pretrain_accuracy: dict = field(default_factory=dict)
    csv_text: str = ""


def _run_cell(args):
    """One (rotation, method, sparsity) cell; ``q is None`` evaluates only the dense model."""
    ctx, rot, method, qi = args
    cfg, taskset, net0, probes, seed = ctx
    src, transfers = rotate_roles(taskset, rot)
    alog = AccessLog()
    q_grid = [] if qi is None else [cfg.q_grid[qi]]
    cell_seed = derive_seed(seed, rot, METHODS.index(method), 0 if qi is None else qi + 1)

    def go(split):
        return run_protocol(net0, (src.task_id, getattr(src, split)),
                            [(t.task_id, getattr(t, split)) for t in transfers], method, q_grid, cfg.retrain, seed,
                            probes, access_log=alog, apply_obs_update=cfg.apply_obs_update,
                            exact_max_params=cfg.exact_max_params, rng_seed=cell_seed)

    try:
        recs = go("train")
        if qi is not None:
            recs = [r for r in recs if r.stage != "unpruned"]
        held = []
        if cfg.report_heldout:
            held = _heldout(net0, src, transfers, method, q_grid, cfg, seed, probes, cell_seed, qi)
        return recs, held, alog.leakage(), None
    except (SopaiError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return [], [], alog.leakage(), f"seed={seed} rotation={rot} method={method} " \
                                       f"q={'dense' if qi is None else cfg.sparsities[qi]}: {exc}"


def _heldout(net0, src, transfers, method, q_grid, cfg, seed, probes, cell_seed, qi):
    """Same cell, re-evaluated on each task's held-out split (pruning still uses the source train split)."""
    from .masking import apply_mask, topk_mask
    from .probe import EvalRecord, evaluate
    from .saliency import compute_scores
    from .trainer import retrain
    tasks = [src, *transfers]
    heads = net0.with_heads({t.task_id: probes[t.task_id].xi for t in tasks})
    role = lambda t: "source" if t.task_id == src.task_id else "transfer"  # noqa: E731
    if qi is None:
        return [EvalRecord(method, 0.0, t.task_id, role(t), "unpruned", evaluate(heads, probes[t.task_id], t.eval),
                           seed) for t in tasks]
    q = q_grid[0]
    scores = compute_scores(method, heads, src.train, src.task_id, seed=seed, exact_max_params=cfg.exact_max_params)
    mask = topk_mask(scores, q)
    pruned = apply_mask(heads, mask)
    rng = np.random.default_rng(cell_seed)
    tuned, _ = retrain(pruned, mask, src.train, src.task_id, cfg.retrain, seed=int(rng.integers(2**63)))
    out = []
    for stage, net in (("pruned", pruned), ("pruned_finetuned", tuned)):
        out += [EvalRecord(method, q, t.task_id, role(t), stage, evaluate(net, probes[t.task_id], t.eval), seed)
                for t in tasks]
    return out


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def prepare_seed(cfg: RunConfig, seed: int):
    """Task suite, pre-trained network and frozen probes for one seed."""
    taskset = generate(derive_seed(cfg.task_seed, seed, 0), cfg.n_tasks, cfg.n_classes, cfg.dim, cfg.per_class,
                       cfg.rho, cfg.noise, cfg.scale)
    net = init_network(cfg.dims, {t.task_id: cfg.n_classes for t in taskset.tasks}, seed=derive_seed(seed, 1))
    net0, hist = pretrain(net, taskset.train_batches(), cfg.pretrain, seed=derive_seed(seed, 2))
    probes = {t.task_id: fit_probe(net0, t.train, t.task_id, cfg.n_classes, cfg.alpha) for t in taskset.tasks}
    return taskset, net0, hist, probes


def run(cfg: RunConfig, out_dir=None, workers=None) -> RunResult:
    """Full sweep: every seed x source rotation x method x sparsity.

    Writes ``config.ini``, ``results.csv``, ``summary.csv``, ``summary.txt``,
    ``summary.svg`` and per-seed checkpoints under ``out_dir``.  A failing cell
    is logged and listed in the summary; the sweep continues.
    """
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(config_to_text(replace(cfg, out_dir=out_dir)))
    workers = workers or _workers()
    res = RunResult([])
    for seed in cfg.seeds:
        taskset, net0, hist, probes = prepare_seed(cfg, seed)
        res.pretrain_accuracy[seed] = hist.accuracy
        if cfg.save_checkpoints:
            sdir = os.path.join(out_dir, f"seed{seed}")
            os.makedirs(sdir, exist_ok=True)
            save_checkpoint(os.path.join(sdir, "theta0.ckpt"), net0, seed, cfg.pretrain)
            hist.write_csv(os.path.join(sdir, "pretrain_loss.csv"))
        ctx = (cfg, taskset, net0, probes, seed)
        rotations = cfg.rotations if cfg.rotations is not None else range(taskset.n_tasks)
        cells = [(ctx, r, m, qi) for r in rotations for m in cfg.methods
                 for qi in [None, *range(len(cfg.sparsities))]]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                outs = list(pool.map(_run_cell, cells))
        else:
            outs = [_run_cell(c) for c in cells]
        for recs, held, leak, err in outs:
            res.records += recs
            res.heldout += held
            res.leakage += leak
            if err:
                log.error("cell failed: %s", err)
                res.incomplete.append(err)
    buf = io.StringIO()
    write_records_csv(buf, res.records)
    res.csv_text = buf.getvalue()
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        fh.write(res.csv_text)
    if cfg.report_heldout:
        write_records_csv(os.path.join(out_dir, "results_heldout.csv"), res.heldout)
    rows = summarize_records(res.records)
    write_summary(out_dir, rows, res)
    return res


def summarize_records(records):
    groups = defaultdict(list)
    for r in records:
        groups[(r.method, round(r.sparsity * 100, 4), r.role, r.stage)].append(r.accuracy)
    return [dict(method=k[0], sparsity=k[1], role=k[2], stage=k[3], mean=float(np.mean(v)), std=float(np.std(v)),
                 n=len(v)) for k, v in sorted(groups.items(), key=lambda kv: _summary_key(kv[0]))]


def _summary_key(k):
    method, sp, role, stage = k
    order = {s: i for i, s in enumerate(("unpruned", "pruned", "pruned_finetuned"))}
    return (method, role, sp, order.get(stage, 9))


def summarize(path):
    """Mean/std accuracy per (method, sparsity, role, stage) from a results CSV."""
    from .probe import CSV_FIELDS, EvalRecord
    problems, records = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_FIELDS:
            raise MalformedCsvError([(1, f"expected header {','.join(CSV_FIELDS)}")])
        for n, row in enumerate(reader, start=2):
            if len(row) != len(CSV_FIELDS):
                problems.append((n, f"expected {len(CSV_FIELDS)} fields, got {len(row)}"))
                continue
            try:
                acc = float(row[5])
                if not 0.0 <= acc <= 1.0:
                    raise ValueError(f"accuracy {acc} outside [0, 1]")
                if row[3] not in ("source", "transfer"):
                    raise ValueError(f"unknown role {row[3]!r}")
                records.append(EvalRecord(row[0], float(row[1]), row[2], row[3], row[4], acc,
                                          None if row[6] in ("", "None") else int(row[6])))
            except ValueError as exc:
                problems.append((n, str(exc)))
    if problems:
        raise MalformedCsvError(problems)
    return summarize_records(records)


def format_summary(rows) -> str:
    lines = [f"{'method':<10s} {'role':<8s} {'sparsity':>8s} {'stage':<17s} {'mean':>8s} {'std':>8s} {'n':>5s}"]
    for r in rows:
        lines.append(f"{r['method']:<10s} {r['role']:<8s} {r['sparsity']:8.2f} {r['stage']:<17s} "
                     f"{r['mean']:8.4f} {r['std']:8.4f} {r['n']:5d}")
    return "\n".join(lines)


def write_summary(out_dir, rows, res: RunResult):
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sparsity", "role", "stage", "mean", "std", "n"])
        for r in rows:
            w.writerow([r["method"], f"{r['sparsity']:.2f}", r["role"], r["stage"], f"{r['mean']:.6f}",
                        f"{r['std']:.6f}", r["n"]])
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(format_summary(rows) + "\n\n")
        fh.write(f"transfer_leakage_reads {res.leakage}\n")
        fh.write(f"incomplete_cells {len(res.incomplete)}\n")
        for err in res.incomplete:
            fh.write(f"  INCOMPLETE {err}\n")
    try:
        from . import plots
        plots.summary_bars(os.path.join(out_dir, "summary.svg"), rows)
    except ImportError:
        log.info("matplotlib unavailable; skipping summary.svg")


def landscape_cmd(case, approx, out_dir, resolution=101):
    """Write plot data for one canonical toy panel; returns the metadata dict."""
    if approx not in ls.APPROXIMATIONS:
        raise ValueError(f"unknown approximation {approx!r}; expected one of {ls.APPROXIMATIONS}")
    demo, proj, meta = ls.case_report(case, approx, resolution)
    os.makedirs(out_dir, exist_ok=True)
    base = os.path.join(out_dir, f"{case}_{approx}")
    ls.write_projection_csv(base + ".csv", proj)
    try:
        from . import plots
        plots.contour(base + ".svg", proj, title=f"{case} / {approx}")
    except ImportError:
        log.info("matplotlib unavailable; skipping %s.svg", base)
    return meta


def oracle_cmd(check):
    """Run one oracle suite; returns ``(all_passed, results)``."""
    results = oracles.run_check(check)
    return all(r.passed for r in results), results


__all__ = ["RunConfig", "RunResult", "run", "summarize", "landscape_cmd", "oracle_cmd", "load_config",
           "config_from_text", "config_to_text", "MalformedCsvError", "NumericalError", "SizeLimitError"]
