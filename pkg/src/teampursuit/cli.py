"""Command-line entry point.

Exit codes:
  0  success
  1  gradient check failure
  2  invalid or missing configuration
  3  missing evader checkpoint
  4  corrupt or unreadable checkpoint
  5  malformed metrics CSV
  64 usage error (bad arguments)
"""

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import gradcheck, trainer
from .evader_policy import EvaderTrainConfig, QTableError, load_qtables, pretrain, save_qtables
from .nn_core import CheckpointError
from .road_network import NetworkError, build_grid
from .traffic_sim import SimConfig

EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_NO_EVADERS = 3
EXIT_CHECKPOINT = 4
EXIT_CSV = 5
EXIT_USAGE = 64

ABLATIONS = ("none", "no-mi", "no-adj")
SECTIONS = {"sim": SimConfig, "evader": EvaderTrainConfig, "train": trainer.TrainConfig}
SCENE_KEYS = {"rows": int, "cols": int, "lane_length": float}


class ConfigError(ValueError):
    pass


class CliExit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    rows: int = 3
    cols: int = 3
    lane_length: float = 200.0
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    evader: EvaderTrainConfig = field(default_factory=EvaderTrainConfig)
    train: trainer.TrainConfig = field(default_factory=trainer.TrainConfig)

    def network(self):
        return build_grid(self.rows, self.cols, self.lane_length)

    def validate(self):
        try:
            self.network()
            self.sim.validate()
            self.evader.validate()
            self.train.validate()
        except (ValueError, NetworkError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def items(self):
        out = {k: getattr(self, k) for k in ("rows", "cols", "lane_length", "seed")}
        for sec in SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                v = getattr(obj, f.name)
                out[f"{sec}.{f.name}"] = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
        return out

    def text(self):
        return trainer.config_text(self.items())


def _convert(raw, like, key):
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(like, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return type(like)(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc


def parse_pairs(text, where="config"):
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        pairs.append((k, v))
    return pairs


def build_config(pairs, env=None):
    """Merge ``key=value`` pairs (later ones win) into a validated RunConfig.

    ``seed`` seeds both training stages unless ``evader.seed`` or
    ``train.seed`` is given; without any seed, ``PURSUIT_SEED`` is used.
    """
    env = os.environ if env is None else env
    top = {"rows": 3, "cols": 3, "lane_length": 200.0}
    sec = {name: {} for name in SECTIONS}
    seed = None
    for k, v in pairs:
        if k in SCENE_KEYS:
            top[k] = _convert(v, SCENE_KEYS[k](0), k)
        elif k == "seed":
            seed = _convert(v, 0, k)
        elif "." in k and k.split(".", 1)[0] in SECTIONS:
            name, attr = k.split(".", 1)
            defaults = SECTIONS[name]()
            if attr not in {f.name for f in fields(defaults)}:
                raise ConfigError(f"unknown key {k!r}")
            sec[name][attr] = _convert(v, getattr(defaults, attr), k)
        else:
            raise ConfigError(f"unknown key {k!r}")
    if seed is None:
        raw = env.get("PURSUIT_SEED")
        seed = _convert(raw, 0, "PURSUIT_SEED") if raw not in (None, "") else 0
    sec["evader"].setdefault("seed", seed)
    sec["train"].setdefault("seed", seed)
    cfg = RunConfig(top["rows"], top["cols"], top["lane_length"], seed,
                    SimConfig(**sec["sim"]), EvaderTrainConfig(**sec["evader"]),
                    trainer.TrainConfig(**sec["train"]))
    return cfg.validate()


def load_config(path, overrides=(), env=None):
    if path is None:
        pairs = []
    else:
        try:
            pairs = parse_pairs(Path(path).read_text(), str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    try:
        return build_config(pairs, env)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _config_or_exit(args):
    try:
        return load_config(args.config, args.set)
    except ConfigError as exc:
        raise CliExit(EXIT_CONFIG, f"invalid config: {exc}") from exc


def cmd_train_evaders(args):
    cfg = _config_or_exit(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tables, log = pretrain(cfg.network(), cfg.sim, cfg.evader)
    (out / "qtables.txt").write_text(save_qtables(tables))
    with open(out / "pretrain_metrics.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["episode", "completion_step", "captures", "epsilon"])
        for ep, clock, caps, eps in log:
            w.writerow([ep, clock, caps, repr(float(eps))])
    print(f"wrote {out / 'qtables.txt'} ({sum(len(t) for t in tables)} entries)")
    return 0


def _read_tables(path, code):
    try:
        return load_qtables(Path(path).read_text())
    except OSError as exc:
        raise CliExit(code, f"cannot read evader checkpoint {path}: {exc.strerror}") from exc
    except QTableError as exc:
        raise CliExit(EXIT_CHECKPOINT, f"corrupt evader checkpoint {path}: {exc}") from exc


def cmd_train_pursuers(args):
    cfg = _config_or_exit(args)
    if args.ablation == "no-mi":
        cfg.train = replace(cfg.train, mi_weight=0.0)
    elif args.ablation == "no-adj":
        cfg.train = replace(cfg.train, no_adj=True)
    tables = _read_tables(args.evaders, EXIT_NO_EVADERS)
    if len(tables) != cfg.sim.num_evaders:
        raise CliExit(EXIT_CONFIG, f"invalid config: {len(tables)} evader tables for "
                                   f"{cfg.sim.num_evaders} evaders")
    net = cfg.network()
    log = None
    if args.verbose:
        def log(m):
            print(f"episode {m.episode} step {m.completion_step} captures {m.captures} "
                  f"return {m.undiscounted:.3f} loss {m.total_loss:.4f}", file=sys.stderr)
    learner, metrics = trainer.train(net, cfg.sim, cfg.train, tables, progress=log)
    run = Path(args.out)
    trainer.save_run(run, learner, tables, cfg.items())
    trainer.write_metrics_csv(run / "metrics.csv", metrics)
    print(f"wrote {run} ({len(metrics)} episodes, ablation {args.ablation})")
    return 0


def _load_method(run_dir, overrides):
    run = Path(run_dir)
    try:
        cfg = load_config(run / "config.txt", overrides, env={})
    except ConfigError as exc:
        raise CliExit(EXIT_CHECKPOINT, f"corrupt checkpoint {run}: {exc}") from exc
    net = cfg.network()
    try:
        learner, tables = trainer.load_run(run, net, cfg.train)
    except (OSError, CheckpointError, QTableError) as exc:
        raise CliExit(EXIT_CHECKPOINT, f"corrupt checkpoint {run}: {exc}") from exc
    expected = trainer.joint_observe(net, trainer.reset(net, cfg.sim, seed=0)).width(net)
    if learner.obs_width != expected or len(tables) != cfg.sim.num_evaders:
        raise CliExit(EXIT_CHECKPOINT, f"corrupt checkpoint {run}: shapes do not match config")
    return cfg, net, learner, tables


def _parse_seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise CliExit(EXIT_USAGE, f"bad --seeds value {text!r}") from exc
    if not seeds:
        raise CliExit(EXIT_USAGE, "empty seed set")
    return seeds


SUMMARY_HEADER = ["method", "episodes", "mean_undiscounted", "best_undiscounted",
                  "mean_completion_step", "best_completion_step", "capture_rate"]


def cmd_eval(args):
    if args.seeds is not None:
        seeds = _parse_seeds(args.seeds)
    else:
        seeds = list(range(args.episodes))
    if args.episodes < 1:
        raise CliExit(EXIT_USAGE, "--episodes must be >= 1")
    if len(seeds) < args.episodes:
        raise CliExit(EXIT_USAGE, f"{len(seeds)} seeds for {args.episodes} episodes")
    rows = []
    for run in args.runs:
        cfg, net, learner, tables = _load_method(run, args.set)
        s = trainer.evaluate(net, cfg.sim, learner, tables, args.episodes, seeds, workers=args.workers)
        rows.append([Path(run).name] + [s[k] for k in SUMMARY_HEADER[1:]])
        if args.trajectory:
            lines = []
            trainer.run_episode(net, cfg.sim, learner, tables, seeds[0], 0.0,
                                np.random.default_rng(0), trajectory=lines)
            Path(args.trajectory).write_text("\n".join(lines) + "\n")
    widths = [max(len(SUMMARY_HEADER[i]), *(len(_fmt(r[i])) for r in rows))
              for i in range(len(SUMMARY_HEADER))]
    print("  ".join(h.ljust(w) for h, w in zip(SUMMARY_HEADER, widths)))
    for r in rows:
        print("  ".join(_fmt(v).ljust(w) for v, w in zip(r, widths)))
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SUMMARY_HEADER)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return 0


def _fmt(v):
    return f"{v:.3f}" if isinstance(v, float) else str(v)


def cmd_gradcheck(args):
    results = gradcheck.run_all(args.instances, args.seed)
    print(gradcheck.format_report(results))
    ok = all(r.passed for r in results)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else EXIT_GRADCHECK


def cmd_plot(args):
    try:
        rows = trainer.read_metrics_csv(args.csv)
    except OSError as exc:
        raise CliExit(EXIT_CSV, f"cannot read {args.csv}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CliExit(EXIT_CSV, f"malformed metrics CSV: {exc}") from exc
    if not rows:
        raise CliExit(EXIT_CSV, f"malformed metrics CSV: {args.csv} has no rows")
    from .plots import plot_metrics
    out = Path(args.out)
    paths = plot_metrics(rows, out)
    for p in paths:
        print(f"wrote {p}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def make_parser():
    p = _Parser(prog="teampursuit", description="Team pursuit training and evaluation.",
                epilog=__doc__.split("\n", 2)[2], formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, required=False):
        sp.add_argument("config", nargs=None if required else "?", help="key=value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    sp = sub.add_parser("train-evaders", help="pretrain evader Q-tables against random pursuers")
    with_config(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train_evaders)

    sp = sub.add_parser("train-pursuers", help="train the pursuing team")
    with_config(sp)
    sp.add_argument("--evaders", required=True, help="qtables.txt from train-evaders")
    sp.add_argument("--ablation", choices=ABLATIONS, default="none")
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--verbose", action="store_true")
    sp.set_defaults(func=cmd_train_pursuers)

    sp = sub.add_parser("eval", help="greedy evaluation of one or more run directories")
    sp.add_argument("runs", nargs="+", help="run directories (one method each)")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--seeds", help="comma-separated scene seeds (default 0..episodes-1)")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", help="summary CSV path")
    sp.add_argument("--trajectory", help="write a per-vehicle trajectory log of the first episode")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("plot", help="reward and loss charts from a metrics CSV")
    sp.add_argument("csv")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
