"""Windowed integral control-quality indices (IAE, ISE, ITAE) over traces."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import EmptyWindow

TRACE_HEADER = ("k", "t", "r", "y", "u", "e")
CONTROLLERS = ("HDLNNC", "AMPC")
INDICES = ("iae", "ise", "itae")


class Icqi(NamedTuple):
    iae: float
    ise: float
    itae: float


@dataclass(frozen=True)
class ControlTrace:
    """Sampled closed-loop record; ``e`` is always ``r - y``."""

    k: np.ndarray
    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        cols = {}
        for name in ("k", "t", "r", "y", "u"):
            cols[name] = np.asarray(getattr(self, name), dtype=np.int64 if name == "k" else float)
            object.__setattr__(self, name, cols[name])
        n = cols["k"].shape[0]
        if any(c.shape != (n,) for c in cols.values()):
            raise ValueError("trace columns must be 1-D and of equal length")
        if n > 1:
            dt = np.diff(self.t)
            if not np.all(dt > 0):
                raise ValueError("trace time must be strictly increasing")
            if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
                raise ValueError("trace time step must be constant")

    @property
    def e(self):
        return self.r - self.y

    @property
    def ts(self):
        return float(self.t[1] - self.t[0]) if len(self) > 1 else math.nan

    def __len__(self):
        return self.k.shape[0]

    @classmethod
    def from_arrays(cls, r, y, u, ts, k0=0):
        k = np.arange(k0, k0 + len(r))
        return cls(k, k * float(ts), r, y, u)

    def to_csv(self, path_or_buf):
        """Write ``k,t,r,y,u,e`` rows; floats use their shortest round-trip repr."""
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            e = self.e
            for i in range(len(self)):
                w.writerow(
                    (int(self.k[i]), repr(float(self.t[i])), repr(float(self.r[i])),
                     repr(float(self.y[i])), repr(float(self.u[i])), repr(float(e[i])))
                )
        finally:
            if own:
                fh.close()

    @classmethod
    def read_csv(cls, path_or_buf):
        """Parse a trace written by :meth:`to_csv`; error marker rows are skipped."""
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, newline="") if own else path_or_buf
        try:
            rows = list(csv.reader(fh))
        finally:
            if own:
                fh.close()
        if not rows or tuple(rows[0]) != TRACE_HEADER:
            raise ValueError(f"trace header must be {','.join(TRACE_HEADER)}")
        data = [row for row in rows[1:] if row and not row[0].startswith("#")]
        if not data:
            return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))
        k = np.array([int(row[0]) for row in data], dtype=np.int64)
        t, r, y, u = (np.array([float(row[j]) for row in data]) for j in range(1, 5))
        return cls(k, t, r, y, u)

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def window_slice(trace, window):
    """Sample indices covering the closed window ``[t0, t1]`` on the trace grid."""
    t0, t1 = map(float, window)
    if not t1 > t0:
        raise EmptyWindow(f"window {window!r} has no extent")
    if len(trace) < 2:
        raise EmptyWindow("trace holds fewer than two samples")
    ts = trace.ts
    start = trace.t[0]
    eps = 1e-9
    i0 = max(0, math.ceil((t0 - start) / ts - eps))
    i1 = min(len(trace) - 1, math.floor((t1 - start) / ts + eps))
    if t0 < start - eps * ts or t1 > trace.t[-1] + eps * ts or i1 - i0 < 1:
        raise EmptyWindow(f"window {window!r} is not covered by the trace")
    return slice(i0, i1 + 1)


def icqi(trace, window):
    """IAE, ISE and ITAE over ``[t0, t1)`` by the trapezoid rule.

    ITAE weights by absolute scenario time. The sample at ``t1`` serves as
    the closing trapezoid node, so adjacent windows add up exactly.
    """
    sl = window_slice(trace, window)
    t = trace.t[sl]
    ae = np.abs(trace.e[sl])
    return Icqi(
        float(np.trapezoid(ae, t)),
        float(np.trapezoid(ae * ae, t)),
        float(np.trapezoid(t * ae, t)),
    )


@dataclass
class IcqiReport:
    """Rows of ``(window, controller, iae, ise, itae)``."""

    rows: list = field(default_factory=list)

    def add(self, window, controller, values):
        values = Icqi(*map(float, values))
        if any(not (v >= 0) for v in values):
            raise ValueError("quality indices must be non-negative")
        self.rows.append(((float(window[0]), float(window[1])), str(controller), values))

    @classmethod
    def from_traces(cls, traces, windows):
        """``traces`` maps controller id to ControlTrace."""
        rep = cls()
        for w in windows:
            for name in CONTROLLERS:
                if name in traces:
                    rep.add(w, name, icqi(traces[name], w))
        return rep

    @property
    def windows(self):
        seen = []
        for w, _, _ in self.rows:
            if w not in seen:
                seen.append(w)
        return seen

    def lookup(self, window, controller):
        w = (float(window[0]), float(window[1]))
        for rw, name, vals in self.rows:
            if rw == w and name == controller:
                return vals
        raise KeyError((window, controller))

    def winners(self, window):
        """Per index, the controller with the strictly smaller value (``None`` on ties)."""
        out = {}
        for idx in INDICES:
            vals = {}
            for name in CONTROLLERS:
                try:
                    vals[name] = getattr(self.lookup(window, name), idx)
                except KeyError:
                    pass
            if len(vals) < 2 or vals["HDLNNC"] == vals["AMPC"]:
                out[idx] = None
            else:
                out[idx] = min(vals, key=vals.get)
        return out

    def to_dict(self):
        return {
            "rows": [
                {"window": list(w), "controller": name, **v._asdict()}
                for w, name, v in self.rows
            ],
            "winners": [
                {"window": list(w), **self.winners(w)} for w in self.windows
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc):
        rep = cls()
        for row in doc.get("rows", []):
            rep.add(row["window"], row["controller"], (row["iae"], row["ise"], row["itae"]))
        return rep

    def to_text(self):
        """Fixed-width table: window, then IAE/ISE/ITAE each for HDLNNC and AMPC.

        A ``*`` marks the smaller value of each pair.
        """
        head = ["window"] + [f"{i.upper()}_{c}" for i in INDICES for c in CONTROLLERS]
        widths = [12] + [14] * (len(head) - 1)
        lines = ["".join(h.rjust(wd) if j else h.ljust(wd) for j, (h, wd) in enumerate(zip(head, widths)))]
        for w in self.windows:
            win = self.winners(w)
            cells = [f"{_fmt_t(w[0])}:{_fmt_t(w[1])}".ljust(widths[0])]
            for idx in INDICES:
                for name in CONTROLLERS:
                    try:
                        v = getattr(self.lookup(w, name), idx)
                        mark = "*" if win[idx] == name else " "
                        cells.append(f"{v:.3e}{mark}".rjust(14))
                    except KeyError:
                        cells.append("-".rjust(14))
            lines.append("".join(cells))
        return "\n".join(lines) + "\n"


def _fmt_t(x):
    return f"{x:g}"
