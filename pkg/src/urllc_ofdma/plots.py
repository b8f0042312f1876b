"""Figure rendering for sweep results.

One figure per sweep: mean throughput with standard-error bars on top,
infeasible fraction below.  Files are written next to the delimited
output; nothing here feeds back into the solvers.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SCHEME_STYLE = {
    "upper_bound": dict(color="tab:gray", marker="^", ls="--",
                        label="upper bound"),
    "proposed": dict(color="tab:blue", marker="o", ls="-",
                     label="proposed"),
    "benchmark1": dict(color="tab:red", marker="s", ls="-.",
                       label="benchmark 1"),
    "benchmark2": dict(color="tab:green", marker="d", ls=":",
                       label="benchmark 2"),
    "oracle": dict(color="tab:purple", marker="*", ls="-",
                   label="oracle"),
}

AXIS_LABEL = {
    "p_max_dbm": "Maximum transmit power (dBm)",
    "num_users": "Number of users",
}


def render_sweep_figure(table, path: str) -> str:
    """Render mean-throughput and infeasibility curves; returns the path."""
    xs = table.sweep_values()
    fig, (ax_top, ax_bot) = plt.subplots(
        2, 1, figsize=(6.4, 6.4), sharex=True,
        gridspec_kw={"height_ratios": [2.4, 1.0]})
    for scheme in table.schemes():
        cells = [table.cell(x, scheme) for x in xs]
        style = SCHEME_STYLE.get(scheme, dict(marker="x", label=scheme))
        ax_top.errorbar(xs, [c.mean for c in cells],
                        yerr=[c.stderr for c in cells],
                        capsize=2.5, ms=4.5, **style)
        ax_bot.plot(xs, [c.infeasible_fraction for c in cells],
                    ms=4.5, **style)
    ax_top.set_ylabel("Average sum throughput (bits/s/Hz)")
    ax_top.grid(True, alpha=0.4)
    ax_top.legend(loc="upper left", fontsize=9)
    ax_bot.set_ylabel("Infeasible fraction")
    ax_bot.set_ylim(-0.03, 1.03)
    ax_bot.grid(True, alpha=0.4)
    ax_bot.set_xlabel(AXIS_LABEL.get(table.sweep_axis, table.sweep_axis))
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
