"""SVG line charts of a training metrics log."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so identical input gives identical bytes
matplotlib.rcParams["svg.hashsalt"] = "teampursuit"
SVG_META = {"Date": None}


def _chart(path, x, series, xlabel, ylabel):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series:
        ax.plot(x, y, label=label, linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def plot_metrics(rows, out_dir):
    """Write ``reward.svg`` and ``loss.svg``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ep = [r["episode"] for r in rows]
    reward = _chart(out / "reward.svg", ep,
                    [("undiscounted", [r["undiscounted"] for r in rows]),
                     ("discounted", [r["discounted"] for r in rows])],
                    "episode", "return")
    loss = _chart(out / "loss.svg", ep,
                  [("l1", [r["l1"] for r in rows]), ("mi", [r["mi"] for r in rows]),
                   ("total", [r["total_loss"] for r in rows])],
                  "episode", "loss")
    return [reward, loss]
