"""Closed-loop execution of both controllers and artifact writing."""

from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ampc.controller import AmpcController
from ..ampc.pretrain import pretrain_elman
from ..ann.elman import ElmanModel
from ..ann.snapshot import load_model, save_model
from ..exceptions import SimulationAbort
from ..hdlnnc import HdlnncController
from ..metrics import ControlTrace, IcqiReport, window_slice
from ..exceptions import EmptyWindow
from ..plant import Plant, ReferenceGenerator
from .plots import emit_plots

log = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"
TRACE_FILES = {"HDLNNC": "trace_hdlnnc.csv", "AMPC": "trace_ampc.csv"}


@dataclass
class LoopResult:
    trace: ControlTrace
    error: str | None = None


@dataclass
class RunArtifacts:
    out_dir: Path
    traces: dict
    report: IcqiReport
    metadata: dict
    plot_files: list = field(default_factory=list)
    pretrain: object = None

    @property
    def aborted(self):
        return any(self.metadata["aborts"].values())

    @property
    def ok(self):
        return not self.aborted and self.metadata["constraint_violations"] == 0


def seed_streams(seed):
    """Independent PCG64 generators for the HDLNNC weights and the process model."""
    children = np.random.SeedSequence(int(seed)).spawn(2)
    return {
        "HDLNNC": np.random.Generator(np.random.PCG64(children[0])),
        "AMPC": np.random.Generator(np.random.PCG64(children[1])),
    }


def reference_samples(config):
    """``r(k)`` for ``k = 0 .. n_steps``."""
    gen = ReferenceGenerator(config.reference, config.Ts)
    return np.array([gen(k * config.Ts) for k in range(config.n_steps + 1)])


def make_plant(config):
    return Plant(config.params, config.delay_steps, config.Ts)


def pretrained_model(config, rng):
    """Load ``ampc.model`` if configured, else pretrain a fresh Elman model."""
    path = config.ampc.get("model")
    if path:
        model = load_model(path)
        if not isinstance(model, ElmanModel):
            raise ValueError(f"{path} does not hold an Elman model")
        return model, None
    model = ElmanModel.random(rng, int(config.ampc.get("n_hidden", 5)), 1, config.delay_steps)
    first_params = config.params.entries[0][1]
    result = pretrain_elman(model, config.pretrain, config.Ts, config.delay_steps, first_params, rng)
    return result.model, result


def build_controllers(config, rngs=None):
    rngs = rngs or seed_streams(config.seed)
    hd = HdlnncController(**config.hdlnnc_kwargs(), random_state=rngs["HDLNNC"]).initialize()
    model, pre = pretrained_model(config, rngs["AMPC"])
    opts = {k: v for k, v in config.ampc.items() if k not in ("n_hidden", "model")}
    am = AmpcController(model, config.mpc, **opts)
    return {"HDLNNC": hd, "AMPC": am}, model, pre


def run_loop(controller, config, r, lookahead=0):
    """Measure, compute, actuate, record; one row per step ``k = 0 .. n_steps``.

    ``lookahead`` future reference samples are passed to the controller.
    On an abort the rows recorded so far are returned with the error text.
    """
    plant = make_plant(config)
    n = config.n_steps + 1
    ys = np.empty(n)
    us = np.empty(n)
    y = plant.y_measured
    error = None
    k = 0
    try:
        for k in range(n):
            ref = r[k : k + 1 + lookahead] if lookahead else r[k]
            u = controller.step(y, ref)
            ys[k] = y
            us[k] = u
            y = plant.step(u)
        k = n
    except SimulationAbort as exc:
        error = f"step {k}: {type(exc).__name__}: {exc}"
        log.error("%s aborted at %s", type(controller).__name__, error)
    trace = ControlTrace.from_arrays(r[:k], ys[:k], us[:k], config.Ts)
    return LoopResult(trace, error)


def constraint_violations(trace, problem, u_prev=0.0):
    """Count samples outside the box or rate bounds; exact comparisons."""
    u = trace.u
    if u.size == 0:
        return 0
    box = (u < problem.u_min) | (u > problem.u_max)
    du = np.abs(np.diff(np.concatenate([[u_prev], u])))
    return int(np.count_nonzero(box) + np.count_nonzero(du > problem.du_max))


def write_trace(path, result):
    result.trace.to_csv(path)
    if result.error is not None:
        with open(path, "a") as fh:
            fh.write(f"# ERROR {result.error}\n")


def covered_windows(traces, windows):
    """Windows lying inside every trace (aborted runs leave partial traces)."""
    keep = []
    for w in windows:
        try:
            for tr in traces.values():
                window_slice(tr, w)
        except EmptyWindow:
            log.warning("window %s not covered by all traces; skipped", w)
            continue
        keep.append(w)
    return keep


def covered_ranges(traces, ranges):
    """Plot ranges lying inside every trace."""
    keep = []
    for t0, t1 in ranges:
        if all(len(tr) > 1 and tr.t[0] <= t0 + 1e-9 and t1 <= tr.t[-1] + 1e-9 for tr in traces.values()):
            keep.append((t0, t1))
        else:
            log.warning("plot range %s not covered by all traces; skipped", (t0, t1))
    return keep


def write_report(out_dir, report):
    out_dir = Path(out_dir)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.txt").write_text(report.to_text())


def run_scenario(config, out_dir=None, plots=True):
    """Run both controllers on identical plants and write traces, report and plots."""
    out_dir = Path(out_dir or config.output_dir or f"runs/{config.name}-seed{config.seed}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(config.to_yaml())

    t_start = time.time()
    ctrls, model, pre = build_controllers(config)
    save_model(model, out_dir / "model_pretrained.json",
               meta={"final_mse": pre.final_mse if pre else None})
    r = reference_samples(config)

    results = {
        "HDLNNC": run_loop(ctrls["HDLNNC"], config, r),
        "AMPC": run_loop(ctrls["AMPC"], config, r, lookahead=config.mpc.N),
    }
    traces = {}
    for name, res in results.items():
        write_trace(out_dir / TRACE_FILES[name], res)
        traces[name] = res.trace

    violations = constraint_violations(traces["AMPC"], config.mpc)
    if violations:
        log.error("AMPC trace violates the input constraints at %d samples", violations)

    report = IcqiReport.from_traces(traces, covered_windows(traces, config.windows))
    write_report(out_dir, report)
    plot_files = emit_plots(traces, covered_ranges(traces, config.plots), out_dir) if plots else []

    metadata = {
        "scenario": config.name,
        "seed": config.seed,
        "rng": RNG_ALGORITHM,
        "config_sha256": config.digest(),
        "steps": config.n_steps,
        "pretrain": None if pre is None else {
            "final_mse": pre.final_mse, "passes": pre.passes, "reached_target": pre.reached_target,
        },
        "aborts": {name: res.error for name, res in results.items()},
        "constraint_violations": violations,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": round(time.time() - t_start, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out_dir / "metadata.json").write_text(json.dumps(metadata, indent=2) + "\n")
    return RunArtifacts(out_dir, traces, report, metadata, plot_files, pre)


def load_traces(in_dir):
    in_dir = Path(in_dir)
    traces = {}
    for name, fname in TRACE_FILES.items():
        path = in_dir / fname
        if path.exists():
            traces[name] = ControlTrace.read_csv(path)
    return traces


def emit_report(in_dir, windows=None):
    """Recompute the report of a finished run directory from its traces."""
    from .config import load_config

    in_dir = Path(in_dir)
    traces = load_traces(in_dir)
    if not traces:
        raise FileNotFoundError(f"no traces in {in_dir}")
    if windows is None:
        windows = load_config(in_dir / "config.yaml").windows
    report = IcqiReport.from_traces(traces, covered_windows(traces, windows))
    write_report(in_dir, report)
    return report
