"""Command-line interface: ``generate``, ``run``, ``sweep`` and ``check``.

Settings are resolved in increasing priority: built-in defaults (full scale,
m=100, dx=10, du=6, ell=5), ``--desk-scale`` preset, ``--config`` JSON file, explicit flags.
Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 I/O error.
"""

import argparse
import json
import logging
import os
import sys

from . import kernels
from .algorithm import AlgorithmConfig, collect_data, joint_outcome, run_individual_baseline
from .ensemble import Dimensions, generate_ensemble, load_ensemble, save_ensemble
from .errors import NumericalError, UsageError
from .estimator import FitOptions
from .harness import (
    DEFAULT_T_GRID, DESK_DIMS, FULL_DIMS, SweepConfig, aggregate, emit_plot_script,
    emit_summary_csv, run_sweep, check_output_path, emit_csv,
)

log = logging.getLogger("jointstab")

DEFAULTS = {
    "m": FULL_DIMS.m, "dx": FULL_DIMS.dx, "du": FULL_DIMS.du, "ell": FULL_DIMS.ell,
    "sigma_xi": 2.0, "rho_min": 1.2, "rho_max": 1.5, "seed": 0,
    "T": None, "k": None, "sigma_g": [0.3], "sigma_eta": [2.0], "r": [0.25],
    "n_seeds": 10, "restarts": 5, "workers": 1,
    "desk_scale": False, "fixed_ensemble": False, "timing": False, "debug": False,
}
DESK = {"m": DESK_DIMS.m, "dx": DESK_DIMS.dx, "du": DESK_DIMS.du, "ell": DESK_DIMS.ell}
LIST_KEYS = ("T", "k", "sigma_g", "sigma_eta", "r")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _add_common(p):
    p.add_argument("--config", help="JSON file of settings; flags override it")
    p.add_argument("--seed", type=int, help="master seed (u64)")
    p.add_argument("--m", type=int, help="number of systems")
    p.add_argument("--dx", type=int, help="state dimension")
    p.add_argument("--du", type=int, help="input dimension")
    p.add_argument("--ell", type=int, help="number of shared bases")
    p.add_argument("--sigma-xi", type=float, help="process noise std")
    p.add_argument("--rho-min", type=float)
    p.add_argument("--rho-max", type=float)
    p.add_argument("--desk-scale", action="store_const", const=True,
                   help="shrink to m=20, dx=6, du=3, ell=3")
    p.add_argument("--out", help="output path")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_algorithm(p):
    p.add_argument("--T", type=_ints, help="horizon(s), comma separated")
    p.add_argument("--k", type=_ints, help="epoch count(s)")
    p.add_argument("--sigma-g", type=_floats, help="feedback std(s)")
    p.add_argument("--sigma-eta", type=_floats, help="dither std(s)")
    p.add_argument("--r", type=_floats, help="input cost scale(s), R = r I")
    p.add_argument("--restarts", type=int, help="joint-fit restarts")
    p.add_argument("--ensemble", help="load the ensemble from a `generate` file")


def build_parser():
    parser = _Parser(prog="jointstab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a random ensemble file")
    _add_common(p)

    p = sub.add_parser("run", help="one configuration, both methods, outcome JSON")
    _add_common(p)
    _add_algorithm(p)

    p = sub.add_parser("sweep", help="Monte Carlo grid to CSV, summary CSV and gnuplot script")
    _add_common(p)
    _add_algorithm(p)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--fixed-ensemble", action="store_const", const=True,
                   help="reuse one ensemble across seeds")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--timing", action="store_const", const=True,
                   help="record wall_time_ms (output is then not byte-reproducible)")
    p.add_argument("--debug", action="store_const", const=True,
                   help="append a dataset checksum column")

    p = sub.add_parser("check", help="run the built-in invariant checks")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_settings(args):
    """Merge defaults, preset, config file and flags into one dict."""
    settings = dict(DEFAULTS)
    from_file = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            from_file = json.load(fh)
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        from_file = {k.replace("-", "_"): v for k, v in from_file.items()}
        unknown = set(from_file) - set(DEFAULTS) - {"out"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    flags = {k: v for k, v in vars(args).items() if v is not None and k in set(DEFAULTS) | {"out"}}
    if flags.get("desk_scale") or (from_file.get("desk_scale") and "desk_scale" not in flags):
        settings.update(DESK)
    settings.update(from_file)
    settings.update(flags)
    for key in LIST_KEYS:
        value = settings[key]
        if value is not None and not isinstance(value, list):
            settings[key] = [value]
    return settings


def _dims(s):
    return Dimensions(int(s["m"]), int(s["dx"]), int(s["du"]), int(s["ell"]))


def _ensemble_for(s, args):
    if getattr(args, "ensemble", None):
        return load_ensemble(args.ensemble)
    return generate_ensemble(_dims(s), s["rho_min"], s["rho_max"], s["sigma_xi"], s["seed"])


def cmd_generate(args, s):
    out = s.get("out") or "ensemble.json"
    check_output_path(out)
    ens = _ensemble_for(s, args)
    save_ensemble(ens, out)
    print(f"wrote {out}: m={ens.dims.m} dx={ens.dims.dx} du={ens.dims.du} ell={ens.dims.ell}")


def cmd_run(args, s):
    out = s.get("out") or "outcome.json"
    check_output_path(out)
    T = (s["T"] or [15])[0]
    k = (s["k"] or [4])[0]
    ens = _ensemble_for(s, args)
    cfg = AlgorithmConfig(T=T, k=k, sigma_g=s["sigma_g"][0], sigma_eta=s["sigma_eta"][0],
                          r=s["r"][0], fit=FitOptions(restarts=s["restarts"]), seed=s["seed"])
    data, _ = collect_data(ens, cfg)
    joint = joint_outcome(ens, data, cfg)
    indiv = run_individual_baseline(ens, data, cfg)
    doc = {
        "config": {"T": T, "k": k, "sigma_g": cfg.sigma_g, "sigma_eta": cfg.sigma_eta,
                   "r": cfg.r, "seed": cfg.seed, **ens.to_dict()["dims"]},
        "dataset_checksum": data.checksum(),
        "joint": joint.to_dict(),
        "individual": indiv.to_dict(),
    }
    if joint.estimate is not None:
        doc["joint"]["estimate"] = joint.estimate.to_dict()
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(f"T={T} k={k}: joint {joint.fraction_stabilized:.3f}, "
          f"individual {indiv.fraction_stabilized:.3f} -> {out}")


def cmd_sweep(args, s):
    out = s.get("out") or "sweep.csv"
    stem, _ = os.path.splitext(out)
    for path in (out, stem + "_summary.csv", stem + ".gp"):
        check_output_path(path)
    if getattr(args, "ensemble", None):
        raise UsageError("sweep generates its own ensembles; use --fixed-ensemble instead")
    cfg = SweepConfig(
        dims=_dims(s), rho_band=(s["rho_min"], s["rho_max"]), sigma_xi=s["sigma_xi"],
        T_values=tuple(s["T"] or DEFAULT_T_GRID), sigma_g_values=tuple(s["sigma_g"]),
        sigma_eta_values=tuple(s["sigma_eta"]), k_values=tuple(s["k"] or (3, 4, 5)),
        r_values=tuple(s["r"]), n_seeds=int(s["n_seeds"]), master_seed=int(s["seed"]),
        regenerate_ensemble_per_seed=not s["fixed_ensemble"],
        fit=FitOptions(restarts=int(s["restarts"])), workers=int(s["workers"]),
        record_timing=bool(s["timing"]),
    )
    rows = run_sweep(cfg)
    emit_csv(rows, out, debug=bool(s["debug"]))
    summary = aggregate(rows)
    emit_summary_csv(summary, stem + "_summary.csv")
    emit_plot_script(summary, stem + ".gp", image=os.path.basename(stem) + ".png")
    print(f"wrote {len(rows)} rows to {out}, summary and plot script alongside")


def cmd_check(args, s):
    from .checks import run_checks

    print(f"kernel backend: {kernels.BACKEND}")
    results = run_checks()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    if not all(ok for _, ok, _ in results):
        raise NumericalError("one or more checks failed")


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve_settings(args)
        COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"usage error: bad JSON: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
