"""Static SVG views of recorded traces: reference and outputs, then |e|."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from ..exceptions import RangeOutsideTrace  # noqa: E402

COLORS = {"HDLNNC": "tab:orange", "AMPC": "tab:blue"}


def _check_range(traces, t0, t1):
    if not t1 > t0:
        raise RangeOutsideTrace(f"plot range [{t0}, {t1}] is empty")
    for name, tr in traces.items():
        if len(tr) < 2 or t0 < tr.t[0] - 1e-9 or t1 > tr.t[-1] + 1e-9:
            raise RangeOutsideTrace(f"plot range [{t0}, {t1}] is outside the {name} trace")


def plot_range(traces, t0, t1, path):
    _check_range(traces, t0, t1)
    with plt.rc_context({"svg.hashsalt": "nacbench", "svg.fonttype": "none"}):
        fig, (ax_y, ax_e) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
        ref_drawn = False
        for name, tr in traces.items():
            m = (tr.t >= t0 - 1e-9) & (tr.t <= t1 + 1e-9)
            if not ref_drawn:
                ax_y.plot(tr.t[m], tr.r[m], "k--", lw=1, label="reference")
                ref_drawn = True
            ax_y.plot(tr.t[m], tr.y[m], color=COLORS.get(name), lw=1, label=name)
            ax_e.plot(tr.t[m], np.abs(tr.e[m]), color=COLORS.get(name), lw=1, label=name)
        ax_y.set_ylabel("y")
        ax_y.legend(loc="upper right", fontsize=8)
        ax_e.set_ylabel("|e|")
        ax_e.set_xlabel("t [s]")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)


def emit_plots(traces, ranges, out_dir):
    """One SVG per ``(t0, t1)`` range; returns the written paths."""
    out_dir = Path(out_dir)
    files = []
    for t0, t1 in ranges:
        name = f"plot_{t0:g}-{t1:g}.svg"
        files.append(plot_range(traces, float(t0), float(t1), out_dir / name))
    return files
