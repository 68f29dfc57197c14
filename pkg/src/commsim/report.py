"""Figure rendering for run outputs.

Reads the trace CSVs a run or sweep produced and writes PNG figures next
to them: gradient norm against cumulative downlink cost, against
cumulative uplink cost, and against the iteration counter. One curve per
trace file, log-scaled vertical axis.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .telemetry import read_trace_csv  # noqa: E402

PANELS = (
    ("s2w_cum", "cumulative downlink coords per worker", "grad_vs_s2w"),
    ("w2s_cum", "cumulative uplink coords per worker", "grad_vs_w2s"),
    ("t", "iteration", "grad_vs_iters"),
)


def _trace_files(target: Path):
    if target.is_file():
        return [target]
    files = sorted(p for p in target.glob("*.csv")
                   if not p.name.endswith("summary.csv")
                   and not p.name.endswith("__best.txt"))
    # Mean traces carry the curve shape; fall back to per-seed files.
    means = [p for p in files if p.stem.endswith("__mean")]
    return means or files


def render_report(target, out_dir=None) -> list:
    """Render the standard panels for every trace under ``target``.

    Returns the list of written figure paths.
    """
    target = Path(target)
    files = _trace_files(target)
    if not files:
        raise FileNotFoundError(f"no trace CSVs under {target}")
    out_dir = Path(out_dir) if out_dir else (target if target.is_dir()
                                             else target.parent)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for field, xlabel, stem in PANELS:
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for path in files:
            trace = read_trace_csv(path)
            xs = [getattr(rec, field) for rec in trace]
            ys = [max(rec.grad_norm_sq, 1e-300) for rec in trace]
            label = path.stem.replace("__mean", "")
            ax.plot(xs, ys, label=label, linewidth=1.2)
        ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("squared gradient norm")
        ax.grid(True, which="both", alpha=0.3)
        if len(files) <= 12:
            ax.legend(fontsize=7)
        fig.tight_layout()
        out_path = out_dir / f"{stem}.png"
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
        written.append(out_path)
    return written
