"""Optional PNG figures next to the CSV output (``dtn-lab run --figures``)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .harness import DiscrepancyReport  # noqa: E402


def plot_ladder(report: DiscrepancyReport, path: Path) -> Path | None:
    rows = [r for r in report.ladder if r["discrepancy"] > 0]
    if len(rows) < 2:
        return None
    h = np.array([r["h"] for r in rows])
    e = np.array([r["discrepancy"] for r in rows])
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(h, e, "o-", label=report.experiment)
    ax.loglog(h, e[0] * (h / h[0]) ** 2, "k--", lw=0.8, label="slope 2")
    ax.set_xlabel("h")
    ax.set_ylabel("discrepancy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trace_pair(report: DiscrepancyReport, path: Path) -> Path | None:
    """Trace of source 0 at the central node for both operators."""
    a = report.traces.get("spec1_src0")
    b = report.traces.get("spec2_src0")
    if a is None or b is None:
        return None
    k = len(a.arclength) // 2
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(a.times, a.values[:, k].real, label="operator 1")
    ax.plot(b.times, b.values[:, k].real, "--", label="operator 2")
    ax.set_xlabel("t")
    ax.set_ylabel(f"Re trace at s = {a.arclength[k]:.3g}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render(report: DiscrepancyReport, out_dir) -> list[Path]:
    """Write whatever figures apply to ``report``; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    made = [plot_ladder(report, out / f"{report.experiment}_ladder.png"),
            plot_trace_pair(report, out / f"{report.experiment}_trace.png")]
    return [p for p in made if p is not None]
