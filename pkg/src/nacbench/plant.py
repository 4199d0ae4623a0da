"""Benchmark nonlinear plant, output delay line and reference generators.

The plant is the two-state discrete map::

    x1(k+1) = a1*x1(k) + a2*x2(k) + u(k)
    x2(k+1) = x1(k) / (a3 + x1(k)**2 + x2(k)**2)
    y(k+1)  = x1(k+1)

The control enters additively in the ``x1`` update (``Injection.ADDITIVE_X1``);
the free map has no input term.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

from .exceptions import OutOfWindow, SingularDenominator

SINGULAR_TOL = 1e-12


class Injection(enum.Enum):
    ADDITIVE_X1 = "additive_x1"


@dataclass(frozen=True)
class PlantParams:
    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        for name in ("a1", "a2", "a3"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_tuple(self):
        return (self.a1, self.a2, self.a3)


NOMINAL_PARAMS = PlantParams(0.2, 0.8, 1.1)
SWITCHED_PARAMS = PlantParams(-0.2, 1.4, -15.0)


@dataclass(frozen=True)
class PlantState:
    x1: float = 0.0
    x2: float = 0.0
    k: int = 0


def plant_step(state, params, u, injection=Injection.ADDITIVE_X1):
    """Advance the plant one step; return ``(new_state, y)``.

    Raises SingularDenominator when ``|a3 + x1**2 + x2**2| < 1e-12``.
    """
    if injection is not Injection.ADDITIVE_X1:
        raise ValueError(f"unsupported injection mode {injection!r}")
    u = float(u)
    if not math.isfinite(u):
        raise ValueError(f"control input must be finite, got {u!r}")
    x1, x2 = state.x1, state.x2
    den = params.a3 + x1 * x1 + x2 * x2
    if abs(den) < SINGULAR_TOL:
        raise SingularDenominator(
            f"a3 + x1^2 + x2^2 = {den!r} at step {state.k} "
            f"(x1={x1!r}, x2={x2!r}, a3={params.a3!r})"
        )
    nx1 = params.a1 * x1 + params.a2 * x2 + u
    nx2 = x1 / den
    return PlantState(nx1, nx2, state.k + 1), nx1


class DelayLine:
    """Fixed-length FIFO returning the value pushed ``length`` calls earlier."""

    def __init__(self, length, fill=0.0):
        if int(length) != length or length < 0:
            raise ValueError(f"delay length must be a non-negative integer, got {length!r}")
        self.length = int(length)
        self.fill = float(fill)
        self._buf = deque([self.fill] * self.length)

    def push(self, value):
        if self.length == 0:
            return float(value)
        self._buf.append(float(value))
        return self._buf.popleft()

    def contents(self):
        """Oldest-first snapshot of the values still in flight."""
        return list(self._buf)

    def reset(self):
        self._buf = deque([self.fill] * self.length)


def delay_push(line, y):
    return line.push(y)


def filter_step(y_f, u_f, ts, tau):
    """Exact zero-order-hold step of the first-order lag ``1/(tau*s + 1)``."""
    if ts <= 0 or tau <= 0:
        raise ValueError("ts and tau must be positive")
    a = math.exp(-ts / tau)
    return a * y_f + (1.0 - a) * u_f


class RefKind(enum.Enum):
    SINE = "sine"
    FILTERED_SQUARE = "filtered_square"
    RAMPED_SQUARE = "ramped_square"


@dataclass(frozen=True)
class ReferenceSpec:
    """One segment of the reference signal, active on ``[t_start, t_end)``.

    Time inside a square segment is measured from ``t_start`` so each
    segment begins at the start of its high half-period.
    """

    kind: RefKind
    t_start: float
    t_end: float
    amplitude: float = 1.0
    angular_frequency: float = math.pi / 4
    period: float = 4.0
    levels: tuple = (-0.4, 0.4)
    filter_time_constant: float = 0.025
    ramp_duration: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", RefKind(self.kind))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if self.amplitude <= 0:
            raise ValueError("amplitude must be > 0")
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if not self.t_end > self.t_start:
            raise ValueError("segment must have t_end > t_start")
        if self.kind is RefKind.RAMPED_SQUARE and not 0 <= self.ramp_duration < self.period / 2:
            raise ValueError("ramp_duration must be in [0, period/2)")

    def contains(self, t):
        return self.t_start <= t < self.t_end

    def raw_value(self, t):
        """Unfiltered value at absolute time ``t``."""
        if self.kind is RefKind.SINE:
            return self.amplitude * math.sin(self.angular_frequency * t)
        low, high = self.levels
        phase = (t - self.t_start) % self.period
        half = self.period / 2
        if self.kind is RefKind.FILTERED_SQUARE or self.ramp_duration == 0:
            return high if phase < half else low
        # every half period opens with a linear ramp from the previous level
        ramp = self.ramp_duration
        if phase < half:
            return low + (high - low) * phase / ramp if phase < ramp else high
        phase -= half
        return high + (low - high) * phase / ramp if phase < ramp else low


class ReferenceGenerator:
    """Piecewise reference with the first-order output filter state.

    Filtered segments must be sampled once per step in increasing time order.
    On entering a filtered segment the filter starts from the last emitted
    reference value, so the switch from one segment to the next is smooth.
    """

    def __init__(self, segments, ts):
        self.segments = sorted(segments, key=lambda s: s.t_start)
        if not self.segments:
            raise ValueError("at least one reference segment is required")
        for a, b in zip(self.segments, self.segments[1:]):
            if b.t_start < a.t_end:
                raise ValueError("reference segments overlap")
        self.ts = float(ts)
        self.reset()

    def reset(self):
        self.y_f = None
        self.last = None

    def segment_at(self, t):
        for seg in self.segments:
            if seg.contains(t):
                return seg
        # the closing sample of a scenario sits exactly on the last t_end
        last = self.segments[-1]
        if abs(t - last.t_end) <= 1e-9 * max(1.0, abs(t)):
            return last
        raise OutOfWindow(f"t={t!r} is not covered by any reference segment")

    def __call__(self, t):
        return reference_at(self, t)


def reference_at(gen, t):
    """Reference value at ``t`` for a ReferenceGenerator."""
    seg = gen.segment_at(t)
    raw = seg.raw_value(t)
    if seg.kind is RefKind.SINE:
        gen.y_f = None
        value = raw
    else:
        if gen.y_f is None:
            gen.y_f = gen.last if gen.last is not None else raw
        gen.y_f = filter_step(gen.y_f, raw, gen.ts, seg.filter_time_constant)
        value = gen.y_f
    gen.last = value
    return value


@dataclass(frozen=True)
class ParamSchedule:
    entries: tuple = field(default_factory=lambda: ((0.0, NOMINAL_PARAMS),))

    def __post_init__(self):
        entries = tuple((float(t), p) for t, p in self.entries)
        if not entries:
            raise ValueError("schedule must be non-empty")
        if entries[0][0] != 0.0:
            raise ValueError("first schedule entry must start at t=0")
        times = [t for t, _ in entries]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("switch times must be strictly increasing")
        object.__setattr__(self, "entries", entries)


def params_at(schedule, t):
    """Parameters of the latest switch at or before ``t`` (right-continuous)."""
    current = schedule.entries[0][1]
    for switch_time, params in schedule.entries:
        if switch_time <= t:
            current = params
        else:
            break
    return current


class Plant:
    """Stateful wrapper: applies the scheduled params and the output delay."""

    def __init__(self, schedule=None, delay_steps=0, ts=1.0, state=None):
        self.schedule = schedule or ParamSchedule()
        self.delay_steps = int(delay_steps)
        self.ts = float(ts)
        self._initial = state or PlantState()
        self.reset()

    def reset(self):
        self.state = self._initial
        self.delay = DelayLine(self.delay_steps)
        # measured output at k=0 passes through the delay line as well
        self.y_measured = self.delay.push(self.state.x1)

    def step(self, u):
        """Apply ``u`` for one sample; return the (delayed) measured output."""
        t = self.state.k * self.ts
        params = params_at(self.schedule, t)
        self.state, y = plant_step(self.state, params, u)
        self.y_measured = self.delay.push(y)
        return self.y_measured
