"""Full method versus the MI-disabled ablation on the 3x3 grid.

Five seeds, 2000 training episodes per method and seed, greedy evaluation on
20 held-out scenes.  On one core this takes a few hours; pass --workers to
spread the ten training runs over processes.  Results land in results/.

    python3 demos/directional_comparison.py --workers 4
"""

import argparse
from pathlib import Path

from teampursuit import experiment

ROOT = Path(__file__).resolve().parent.parent

p = argparse.ArgumentParser()
p.add_argument("--workers", type=int, default=1)
p.add_argument("--cache", default=str(ROOT / "results"))
args = p.parse_args()

out = experiment.run(workers=args.workers, cache_dir=args.cache, progress=lambda s: print(s, flush=True))
a = experiment.analyse(out)
print(f"{'seed':>4}  {'full':>8}  {'no-mi':>8}  {'diff':>8}")
for s, f, b, d in zip(a["seeds"], a["full_steps"], a["no_mi_steps"], a["paired_diff"]):
    print(f"{s:>4}  {f:8.2f}  {b:8.2f}  {d:+8.2f}")
print(f"mean completion step: full {a['mean_full']:.2f}, no-mi {a['mean_no_mi']:.2f}")
for m, qs in a["loss_quarters"].items():
    print(m, "loss MA first/last quarter:", ", ".join(f"{x:.3f}->{y:.3f}" for x, y in qs))
print(f"training time {a['cpu_seconds'] / 3600:.2f} h of CPU, {a['wall_seconds'] / 3600:.2f} h wall")
