"""Log-log convergence figures rendered next to the delimited sweep output."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import RunRecord

__all__ = ["render_sweep_figure"]


def render_sweep_figure(
    records: list[RunRecord],
    path,
    slope: float = math.nan,
    guide_order: int | None = None,
    title: str | None = None,
) -> Path:
    """Plot err_frobenius against R for one sweep and save to ``path``.

    Adds a dashed R^-(guide_order) guide anchored at the first usable
    point; the fitted slope goes into the legend label when finite.
    """
    pts = [
        (r.config.R, r.err_frobenius)
        for r in records
        if r.error is None and math.isfinite(r.err_frobenius) and r.err_frobenius > 0
    ]
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    if pts:
        R = [p[0] for p in pts]
        err = [p[1] for p in pts]
        label = "measured" if math.isnan(slope) else f"measured (slope {slope:.2f})"
        ax.loglog(R, err, "o-", color="tab:blue", label=label)
        if guide_order is not None:
            c = err[0] * R[0] ** guide_order
            guide = [c * r ** (-guide_order) for r in R]
            ax.loglog(R, guide, "k--", linewidth=1.0, label=f"$R^{{-{guide_order}}}$")
    ax.set_xlabel("$R$")
    ax.set_ylabel("Frobenius error vs reference")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
