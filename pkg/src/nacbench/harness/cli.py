"""Command line: ``pretrain``, ``run`` and ``report``.

Exit status is 0 on success, 1 when a simulation aborts (or the AMPC trace
breaks its input constraints) and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..ann.elman import ElmanModel
from ..ann.snapshot import save_model
from ..ampc.pretrain import pretrain_elman
from ..exceptions import ConfigError, SimulationAbort
from .config import SCENARIO_NAMES, load_config
from .run import emit_report, run_scenario, seed_streams

EXIT_OK, EXIT_ABORT, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("nacbench")


def _parser():
    p = argparse.ArgumentParser(prog="nacbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("pretrain", help="identify the process model and save a snapshot")
    pt.add_argument("--config", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--seed", type=int)
    pt.add_argument("--mse-target", type=float)
    pt.add_argument("--scenario", choices=SCENARIO_NAMES)

    rn = sub.add_parser("run", help="run both controllers on one scenario")
    rn.add_argument("--config", required=True)
    rn.add_argument("--scenario", choices=SCENARIO_NAMES)
    rn.add_argument("--seed", type=int)
    rn.add_argument("--out", required=True)
    rn.add_argument("--no-plots", action="store_true")

    rp = sub.add_parser("report", help="recompute and print the report of a run directory")
    rp.add_argument("--in", dest="in_dir", required=True)
    return p


def _config(args):
    cfg = load_config(args.config, getattr(args, "scenario", None))
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg.seed = args.seed
    return cfg


def cmd_pretrain(args):
    cfg = _config(args)
    spec = cfg.pretrain
    if args.mse_target is not None:
        from dataclasses import replace

        spec = replace(spec, mse_target=args.mse_target)
    rng = seed_streams(cfg.seed)["AMPC"]
    model = ElmanModel.random(rng, int(cfg.ampc.get("n_hidden", 5)), 1, cfg.delay_steps)
    res = pretrain_elman(model, spec, cfg.Ts, cfg.delay_steps, cfg.params.entries[0][1], rng)
    save_model(res.model, args.out, meta={
        "seed": cfg.seed, "Ts": cfg.Ts, "final_mse": res.final_mse,
        "passes": res.passes, "reached_target": res.reached_target,
    })
    print(f"final MSE {res.final_mse:.3e} after {res.passes} passes -> {args.out}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    art = run_scenario(cfg, args.out, plots=not args.no_plots)
    sys.stdout.write(art.report.to_text())
    for name, err in art.metadata["aborts"].items():
        if err:
            print(f"{name} aborted: {err}", file=sys.stderr)
    if art.metadata["constraint_violations"]:
        print(f"AMPC constraint violations: {art.metadata['constraint_violations']}", file=sys.stderr)
    return EXIT_OK if art.ok else EXIT_ABORT


def cmd_report(args):
    report = emit_report(args.in_dir)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {"pretrain": cmd_pretrain, "run": cmd_run, "report": cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
