"""Seeded comparison of the full method against the MI-disabled ablation.

Each (seed, method) job pretrains the evader tables, trains the pursuers and
evaluates them greedily on held-out scenes.  Results are cached as JSON keyed
by a hash of the library source and the experiment settings, so a finished
run is reused until either changes.
"""

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import trainer
from .evader_policy import EvaderTrainConfig, pretrain
from .road_network import build_grid
from .traffic_sim import SimConfig

# modules whose behaviour the results depend on
SOURCES = ("road_network", "traffic_sim", "observation", "nn_core", "evader_policy",
           "opponent_model", "pursuer_agent", "loss_core", "trainer", "experiment")
METHODS = {"full": 1.0, "no-mi": 0.0}


@dataclass(frozen=True)
class ExperimentConfig:
    rows: int = 3
    cols: int = 3
    lane_length: float = 200.0
    sim: SimConfig = field(default_factory=lambda: SimConfig(num_pursuers=4, num_evaders=2,
                                                              num_background=10, max_steps=500))
    episodes: int = 2000
    evader_episodes: int = 500
    seeds: tuple = (0, 1, 2, 3, 4)
    eval_seeds: tuple = tuple(range(100000, 100020))
    window: int = 100


def source_hash(cfg):
    h = hashlib.sha256()
    here = Path(__file__).parent
    for name in SOURCES:
        h.update((here / f"{name}.py").read_bytes())
    h.update(repr(asdict(cfg)).encode())
    return h.hexdigest()[:16]


def run_job(args):
    cfg, seed, method = args
    t0 = time.perf_counter()
    net = build_grid(cfg.rows, cfg.cols, cfg.lane_length)
    tables, _ = pretrain(net, cfg.sim, EvaderTrainConfig(episodes=cfg.evader_episodes, seed=seed))
    tcfg = trainer.TrainConfig(episodes=cfg.episodes, seed=seed, mi_weight=METHODS[method])
    learner, metrics = trainer.train(net, cfg.sim, tcfg, tables)
    summary = trainer.evaluate(net, cfg.sim, learner, tables, len(cfg.eval_seeds), cfg.eval_seeds)
    return {"seed": seed, "method": method, "summary": summary,
            "total_loss": [m.total_loss for m in metrics],
            "completion_step": [m.completion_step for m in metrics],
            "seconds": time.perf_counter() - t0}


def moving_average(x, window):
    """Trailing mean over the last ``window`` finite values (NaN before any)."""
    x = np.asarray(x, dtype=float)
    out = np.full(len(x), np.nan)
    for i in range(len(x)):
        seg = x[max(0, i - window + 1):i + 1]
        seg = seg[np.isfinite(seg)]
        if len(seg):
            out[i] = seg.mean()
    return out


def quarter_loss(total_loss, window):
    """Mean moving-average loss over the first and the last quarter of training."""
    ma = moving_average(total_loss, window)
    q = len(ma) // 4
    return float(np.nanmean(ma[:q])), float(np.nanmean(ma[-q:]))


def run(cfg=ExperimentConfig(), workers=1, cache_dir=None, progress=print):
    key = source_hash(cfg)
    path = Path(cache_dir) / f"directional-{key}.json" if cache_dir else None
    if path is not None and path.exists():
        return json.loads(path.read_text())
    jobs = [(cfg, s, m) for s in cfg.seeds for m in METHODS]
    t0 = time.perf_counter()
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r in pool.map(run_job, jobs):
                results.append(r)
                progress(f"seed {r['seed']} {r['method']}: {r['seconds']:.0f}s")
    else:
        for job in jobs:
            r = run_job(job)
            results.append(r)
            progress(f"seed {r['seed']} {r['method']}: {r['seconds']:.0f}s")
    out = {"key": key, "config": repr(asdict(cfg)), "workers": workers,
           "wall_seconds": time.perf_counter() - t0, "runs": results}
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(out, indent=1))
    return out


def analyse(out, window=100):
    """Paired completion-step comparison and per-seed loss trend."""
    runs = {(r["seed"], r["method"]): r for r in out["runs"]}
    seeds = sorted({s for s, _ in runs})
    full = np.array([runs[s, "full"]["summary"]["mean_completion_step"] for s in seeds])
    base = np.array([runs[s, "no-mi"]["summary"]["mean_completion_step"] for s in seeds])
    trends = {m: [quarter_loss(runs[s, m]["total_loss"], window) for s in seeds] for m in METHODS}
    return {
        "seeds": seeds,
        "full_steps": full.tolist(),
        "no_mi_steps": base.tolist(),
        "mean_full": float(full.mean()),
        "mean_no_mi": float(base.mean()),
        "paired_diff": (full - base).tolist(),
        "loss_quarters": trends,
        "cpu_seconds": float(sum(r["seconds"] for r in out["runs"])),
        "wall_seconds": out["wall_seconds"],
    }
