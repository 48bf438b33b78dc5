"""``mtkd-rl`` command line: train teachers, distill, ablate, report.

Exit codes: 0 success, 1 runtime error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import config as cfgmod
from . import report
from .data import Dataset, Shard, gen_synthetic, load_csv, load_idx
from .errors import ConfigError, MTKDError
from .models import load_checkpoint, save_checkpoint
from .state import PRESETS
from .trainer import STRATEGIES, TeacherPool, build_pool, run_strategy

log = logging.getLogger("mtkd_rl")

AXES = ("strategy", "state", "gamma", "alpha-beta", "teachers")
ALPHA_GRID = (0.5, 1.0, 2.0)
BETA_GRID = (1.0, 5.0, 10.0)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def build_dataset(cfg: cfgmod.ExperimentConfig) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        return gen_synthetic(d.synthetic_spec(cfg.seed))
    if d.source == "idx":
        ds = load_idx(d.idx_images, d.idx_labels, test_fraction=d.test_fraction, seed=cfg.seed)
    else:
        ds = load_csv(d.csv_path, d.label_column, test_fraction=d.test_fraction, seed=cfg.seed)
    # real data: every teacher sees the clean train split
    x, y = ds.split("train")
    ds.shards = [Shard(x, y, y.copy(), 0.0) for _ in cfg.teachers.hidden]
    return ds


def checkpoint_path(cfg: cfgmod.ExperimentConfig, out: Path) -> Path:
    p = Path(cfg.paths.checkpoint)
    return p if p.is_absolute() else out / p


def load_pool(path: Path) -> TeacherPool:
    if not path.is_file():
        raise FileNotFoundError(f"teacher checkpoint not found: {path} (run train-teachers first)")
    nets, meta = load_checkpoint(path, with_meta=True)
    pool = TeacherPool.from_checkpoint(nets, meta)
    if len(pool) == 0:
        raise MTKDError(f"{path} holds no teacher networks")
    return pool


def write_echo(cfg: cfgmod.ExperimentConfig, directory: Path):
    (directory / "config.ini").write_text(cfgmod.to_text(cfg), encoding="utf-8")


def thread_budget() -> int:
    raw = os.environ.get("MTKD_RL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"MTKD_RL_THREADS must be an integer, got {raw!r}", key="MTKD_RL_THREADS") from None
    return max(1, n)


@dataclass
class RunJob:
    label: str
    cfg: cfgmod.ExperimentConfig  # train.seed is the run seed
    strategy: str
    run_dir: str
    checkpoint: str
    teachers: tuple = None  # subset of pool indices


def execute(job: RunJob) -> tuple:
    """Run one (strategy, seed) cell into its own directory; returns (label, seed, acc)."""
    run_dir = Path(job.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ds = build_dataset(job.cfg)
    pool = None
    if job.strategy != "baseline":
        pool = load_pool(Path(job.checkpoint))
        if job.teachers is not None:
            pool = pool.subset(job.teachers)
    metrics, _, _ = run_strategy(job.strategy, job.cfg.train, ds, pool)
    metrics.write_csv(run_dir / "metrics.csv")
    write_echo(job.cfg, run_dir)
    return job.label, job.cfg.train.seed, metrics.final_acc


def execute_all(jobs, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [execute(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(execute, jobs))


def seed_list(base: int, n: int) -> list:
    return [base + i for i in range(n)]


# ---------------------------------------------------------------------------
# verbs
# ---------------------------------------------------------------------------


def cmd_train_teachers(cfg: cfgmod.ExperimentConfig, out: Path) -> int:
    ds = build_dataset(cfg)
    pool = build_pool(ds, cfg.teachers)
    path = checkpoint_path(cfg, out)
    nets, meta = pool.as_checkpoint()
    meta["seed"] = cfg.seed
    save_checkpoint(nets, path, meta)
    write_echo(cfg, out)
    print(f"{'teacher':<8} {'layers':<18} {'noise':>6} {'test acc':>9}")
    for m, net in enumerate(pool.nets):
        layers = "x".join(str(s) for s in net.spec.layer_sizes)
        print(f"{m + 1:<8} {layers:<18} {pool.noise_rates[m]:>6.2f} {pool.accuracies[m]:>9.4f}")
    print(f"checkpoint: {path}")
    return 0


def cmd_distill(cfg: cfgmod.ExperimentConfig, out: Path, strategy: str, seeds: int) -> int:
    ckpt = checkpoint_path(cfg, out)
    if strategy != "baseline" and not ckpt.is_file():
        raise FileNotFoundError(f"teacher checkpoint not found: {ckpt} (run train-teachers first)")
    jobs = [
        RunJob(strategy, replace(cfg, train=replace(cfg.train, seed=s)),
               strategy, str(out / strategy / f"seed{s}"), str(ckpt))
        for s in seed_list(cfg.seed, seeds)
    ]
    results = execute_all(jobs, thread_budget())
    for _, seed, acc in results:
        print(f"{strategy} seed {seed}: acc {acc:.4f}")
    mean, std = report.mean_std([acc for _, _, acc in results])
    print(f"{strategy}: {mean:.4f} ± {std:.4f} over {len(results)} seed(s)")
    return 0


def ablation_grid(axis: str, cfg: cfgmod.ExperimentConfig, pool_size: int) -> list:
    """``[(label, strategy, cfg, teacher subset)]`` cells for one axis."""
    t = cfg.train
    if axis == "strategy":
        return [(s, s, cfg, None) for s in STRATEGIES]
    if axis == "state":
        return [(f"state-{name}", "rl", replace(cfg, train=replace(t, state_mask=PRESETS[name])), None)
                for name in ("performance", "gaps", "all")]
    if axis == "gamma":
        third = (1 / 3,) * 6
        cells = [
            ("gamma-constant", replace(t, gamma_mode="constant", gammas=third)),
            ("gamma-learnable", replace(t, gamma_mode="learnable")),
            ("gamma-generator", replace(t, gamma_mode="constant", gammas=(1.0, 0.0, 0.0, 1.0, 0.0, 0.0))),
        ]
        return [(label, "rl", replace(cfg, train=tt), None) for label, tt in cells]
    if axis == "alpha-beta":
        return [
            (f"alpha{a:g}-beta{b:g}", "rl", replace(cfg, train=replace(t, kd=replace(t.kd, alpha=a, beta=b))), None)
            for a in ALPHA_GRID for b in BETA_GRID
        ]
    if axis == "teachers":
        return [(f"teachers-{m}", "rl", cfg, tuple(range(m))) for m in range(1, pool_size + 1)]
    raise UsageError(f"unknown ablation axis {axis!r}; choose from {AXES}")


def cmd_ablate(cfg: cfgmod.ExperimentConfig, out: Path, axis: str, seeds: int) -> int:
    if axis not in AXES:
        raise UsageError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    ckpt = checkpoint_path(cfg, out)
    if ckpt.is_file():
        pool_size = len(load_pool(ckpt))
    else:
        log.info("no teacher checkpoint at %s; training the pool first", ckpt)
        cmd_train_teachers(cfg, out)
        pool_size = len(cfg.teachers.hidden)
    root = out / f"ablate-{axis}"
    jobs = []
    for label, strategy, cell_cfg, subset in ablation_grid(axis, cfg, pool_size):
        for s in seed_list(cfg.seed, seeds):
            run_cfg = replace(cell_cfg, train=replace(cell_cfg.train, seed=s))
            jobs.append(RunJob(label, run_cfg, strategy, str(root / label / f"seed{s}"), str(ckpt), subset))
    execute_all(jobs, thread_budget())
    runs = report.load_runs(root)
    rows = report.summarize(runs)
    (root / "table.csv").write_text(report.table_csv(rows), encoding="utf-8")
    print(report.table_text(rows), end="")
    return 0


def cmd_report(metrics_dir: Path, out: Path) -> int:
    if not metrics_dir.exists():
        raise FileNotFoundError(f"metrics directory not found: {metrics_dir}")
    runs = report.load_runs(metrics_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = report.write_report(runs, out)
    print(report.table_text(report.summarize(runs)), end="")
    for path in written.values():
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", metavar="PATH", default=default, help="key=value config file")
    p.add_argument("--seed", type=int, metavar="N", default=default, help="master seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS if suppress else ".",
                   help="output directory (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mtkd-rl", parents=[_global_flags(False)],
                     description="Multi-teacher distillation with an RL teacher-weighting agent.")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True
    common = [_global_flags(True)]
    sub.add_parser("train-teachers", parents=common, help="train and checkpoint the teacher pool")
    d = sub.add_parser("distill", parents=common, help="distill a student with one strategy over several seeds")
    d.add_argument("--strategy", default="rl", help=f"one of {', '.join(STRATEGIES)}")
    d.add_argument("--seeds", type=int, default=1, metavar="N", help="number of consecutive seeds")
    a = sub.add_parser("ablate", parents=common, help="run an ablation grid and print a comparison table")
    a.add_argument("--axis", required=True, help=f"one of {', '.join(AXES)}")
    a.add_argument("--seeds", type=int, default=1, metavar="N")
    r = sub.add_parser("report", parents=common, help="tables and SVG curves from metrics CSVs")
    r.add_argument("metrics_dir", help="directory searched recursively for metrics CSVs")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        if args.verb == "distill":
            if args.strategy not in STRATEGIES:
                raise UsageError(f"unknown strategy {args.strategy!r}; choose from {', '.join(STRATEGIES)}")
            if args.seeds < 1:
                raise UsageError("--seeds must be at least 1")
        if args.verb == "ablate" and args.axis not in AXES:
            raise UsageError(f"unknown ablation axis {args.axis!r}; choose from {', '.join(AXES)}")
        if args.verb == "ablate" and args.seeds < 1:
            raise UsageError("--seeds must be at least 1")
        if args.verb != "report" and not out.is_dir():
            raise FileNotFoundError(f"output directory does not exist: {out}")
        if args.verb == "train-teachers":
            return cmd_train_teachers(cfg, out)
        if args.verb == "distill":
            return cmd_distill(cfg, out, args.strategy, args.seeds)
        if args.verb == "ablate":
            return cmd_ablate(cfg, out, args.axis, args.seeds)
        return cmd_report(Path(args.metrics_dir), out)
    except (UsageError, ConfigError) as exc:
        print(f"mtkd-rl: {exc}", file=sys.stderr)
        return 2
    except (MTKDError, OSError, ValueError) as exc:
        print(f"mtkd-rl: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
