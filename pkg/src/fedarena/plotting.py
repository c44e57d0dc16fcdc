"""PNG figures drawn from a run's rounds.csv."""
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from .reporting import read_rounds  # noqa: E402

PANELS = (
    ("reputation", "Reputation"),
    ("accuracy", "Test accuracy"),
    ("divergence", "||w_i - w_g||"),
)


def _series(rows, column):
    per = defaultdict(lambda: ([], []))
    for row in rows:
        if row[column] is None:
            continue
        xs, ys = per[row["participant_id"]]
        xs.append(row["round"])
        ys.append(row[column])
    return dict(sorted(per.items()))


def plot_run(run_dir, out_dir=None, dpi=120):
    """Render one PNG per traced column; columns with no values are skipped."""
    rows = read_rounds(os.path.join(run_dir, "rounds.csv"))
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for column, label in PANELS:
        series = _series(rows, column)
        if not series:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for pid, (xs, ys) in series.items():
            ax.plot(xs, ys, label=f"P{pid}", linewidth=1.2)
        ax.set_xlabel("Round")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        if len(series) <= 12:
            ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{column}.png")
        fig.savefig(path, dpi=dpi)
        plt.close(fig)
        written.append(path)
    return written
