"""Command-line front end.

Subcommands: ``estimate`` (one method, JSON report), ``sweep`` (MSE-vs-k
curve CSV), ``rank`` (per-EC influence scores CSV), ``calibrate`` (bias fit
and calibrated outcomes CSV), ``simulate`` (replication study CSV).  Every
run writes a manifest next to its outputs; reruns with the same manifest
inputs produce byte-identical files.  Flags can be overridden through
``ECBORROW_<FLAG>`` environment variables.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import alb
from .borrowing import KGrid, mse_curve_export, scan
from .calibration import acib, calibrate, fit_bias
from .data import Schema, continuous_columns, load_csv, split, standardize
from .influence import rank_and_nest
from .nuisance import expand_features
from .simulation import METHODS, DgpConfig, replicate, run_method
from .validation import NumericalError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
ENV_PREFIX = "ECBORROW_"


def _env_default(flag: str, fallback):
    return os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"),
                          fallback)


def _parse_schema(text: str) -> Schema:
    text = text.strip()
    if text.startswith("{"):
        return Schema.from_dict(json.loads(text))
    return Schema.from_dict(json.loads(Path(text).read_text(encoding="utf-8")))


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, payload: dict,
                    outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config_hash": _config_hash(payload),
        "config": payload,
        "version": __version__,
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
        encoding="utf-8")


def _load_dataset(args):
    schema = _parse_schema(args.schema)
    ds = load_csv(args.data, schema)
    records = None
    mode = getattr(args, "standardize", "auto")
    if mode == "auto":
        cols = continuous_columns(ds)
    elif mode in ("none", ""):
        cols = []
    else:
        name_to_idx = {n: i for i, n in enumerate(ds.column_names)}
        cols = [name_to_idx[c.strip()] for c in mode.split(",")]
    if cols:
        ds, records = standardize(ds, cols)
    if getattr(args, "features", "linear") != "linear":
        ds = ds.with_covariates(expand_features(ds.covariates, args.features))
    return ds, records


def _common_payload(args, keys) -> dict:
    return {k: getattr(args, k) for k in keys}


def cmd_estimate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, records = _load_dataset(args)
    report = run_method(args.method, ds, grid_step=args.grid_step,
                        lam=args.lam, nu_exp=args.nu, e1_mode=args.e1,
                        ridge=args.ridge)
    out = out_dir / "estimate.json"
    out.write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    outputs = [out.name]
    if records is not None:
        side = out_dir / "standardization.json"
        side.write_text(records.to_json() + "\n", encoding="utf-8")
        outputs.append(side.name)
    payload = _common_payload(args, ("data", "schema", "method", "grid_step",
                                     "lam", "nu", "e1", "standardize",
                                     "features", "seed"))
    _write_manifest(out_dir, "estimate", payload, outputs)
    print(f"[{args.method}] {report.summary()}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, _ = _load_dataset(args)
    n_ec = split(ds).n_ec
    grid = KGrid.from_step(n_ec, args.grid_step)
    if args.method == "acib":
        result = acib(ds, lam=args.lam, grid=grid, e1_mode=args.e1)
    else:
        result = scan(ds, grid=grid, e1_mode=args.e1)
    out = out_dir / "mse_curve.csv"
    out.write_text(mse_curve_export(result), encoding="utf-8")
    payload = _common_payload(args, ("data", "schema", "method", "grid_step",
                                     "lam", "e1", "standardize", "features"))
    _write_manifest(out_dir, "sweep", payload, [out.name])
    print(f"[sweep:{args.method}] k_hat={result.k_hat} "
          f"mse_hat={result.final.mse_hat:.6f} -> {out}")
    return EXIT_OK


def cmd_rank(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, _ = _load_dataset(args)
    ranking = rank_and_nest(ds)
    out = out_dir / "influence_scores.csv"
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write("ec_index,score\n")
        for idx, score in zip(ranking.ec_indices, ranking.scores):
            fh.write(f"{int(idx)},{float(score)!r}\n")
    payload = _common_payload(args, ("data", "schema", "standardize",
                                     "features"))
    _write_manifest(out_dir, "rank", payload, [out.name])
    print(f"[rank] scored {len(ranking.scores)} ECs -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds, _ = _load_dataset(args)
    bias = fit_bias(ds, lam=args.lam)
    cal = calibrate(ds, bias)
    outputs = []
    if args.dump:
        out = out_dir / "calibrated_ecs.csv"
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write("ec_index,y,b_hat,y_tilde\n")
            for idx, yv, bv, yt in zip(cal.ec_indices,
                                       ds.outcome[cal.ec_indices],
                                       cal.bias_at_ec, cal.y_tilde):
                fh.write(f"{int(idx)},{float(yv)!r},{float(bv)!r},{float(yt)!r}\n")
        outputs.append(out.name)
    bias_out = out_dir / "bias_fit.json"
    bias_out.write_text(json.dumps(bias.to_dict(), indent=2) + "\n",
                        encoding="utf-8")
    outputs.append(bias_out.name)
    payload = _common_payload(args, ("data", "schema", "lam", "standardize",
                                     "features"))
    _write_manifest(out_dir, "calibrate", payload, outputs)
    print(f"[calibrate] lambda={bias.lam:g} "
          f"mean|b_hat|={float(np.abs(cal.bias_at_ec).mean()):.4f} "
          f"-> {out_dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    deltas = ([float(x) for x in args.delta_sweep.split(",")]
              if args.delta_sweep else [args.delta])
    header = ["delta", "method", "est_mean", "bias_abs", "sd_empirical",
              "sd_estimated_mean", "mse_empirical", "mse_estimated_mean",
              "n_ecs_modal", "n_reps", "tau_true", "tau_provenance",
              "n_failures"]
    lines = [",".join(header)]
    for delta in deltas:
        cfg = DgpConfig(mechanism=args.mechanism, delta=delta,
                        seed=args.seed, beta_seed=args.beta_seed)
        reports = replicate(cfg, methods=methods, n_reps=args.reps,
                            n_jobs=args.jobs, grid_step=args.grid_step,
                            lam=args.lam, nu_exp=args.nu, e1_mode=args.e1)
        for rep in reports:
            row = rep.to_row()
            row["delta"] = delta
            lines.append(",".join(repr(row[k]) if isinstance(row[k], float)
                                  else str(row[k]) for k in header))
    out = out_dir / "simulation.csv"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload = _common_payload(args, ("mechanism", "methods", "delta",
                                     "delta_sweep", "reps", "seed",
                                     "beta_seed", "grid_step", "lam", "nu",
                                     "e1", "jobs"))
    _write_manifest(out_dir, "simulate", payload, [out.name])
    print(f"[simulate] {args.mechanism} deltas={deltas} reps={args.reps} "
          f"-> {out}")
    return EXIT_OK


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV path")
    p.add_argument("--schema", required=True,
                   help="schema JSON (inline or file path)")
    p.add_argument("--standardize", default=_env_default("standardize", "auto"),
                   help="'auto', 'none', or comma-separated column names")
    p.add_argument("--features", default=_env_default("features", "linear"),
                   choices=["linear", "quadratic"],
                   help="basis expansion applied before fitting")


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-step", dest="grid_step", type=int,
                   default=int(_env_default("grid_step", 0)) or None)
    p.add_argument("--lambda", dest="lam",
                   default=_env_default("lambda", "cv"),
                   help="bias-fit penalty weight or 'cv'")
    p.add_argument("--nu", type=float, default=float(_env_default("nu", 2.0)))
    p.add_argument("--e1", default=_env_default("e1", "known"),
                   choices=["known", "fitted"])
    p.add_argument("--ridge", type=float,
                   default=(None if _env_default("ridge", "") == ""
                            else float(_env_default("ridge", ""))),
                   help="outcome-model ridge (default: tiny stabilizer)")
    p.add_argument("--seed", type=int,
                   default=int(_env_default("seed", 0)))
    p.add_argument("--jobs", type=int, default=int(_env_default("jobs", 1)))
    p.add_argument("--out-dir", dest="out_dir",
                   default=_env_default("out_dir", "."))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecborrow",
        description="Adaptive borrowing of external controls for ATE "
                    "estimation in randomized trials.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="run one estimator on a CSV")
    _add_data_flags(p_est)
    p_est.add_argument("--method", required=True, choices=list(METHODS))
    _add_common_flags(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_sweep = sub.add_parser("sweep", help="emit the MSE-vs-k curve")
    _add_data_flags(p_sweep)
    p_sweep.add_argument("--method", default="aib", choices=["aib", "acib"])
    _add_common_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_rank = sub.add_parser("rank", help="dump per-EC influence scores")
    _add_data_flags(p_rank)
    _add_common_flags(p_rank)
    p_rank.set_defaults(func=cmd_rank)

    p_cal = sub.add_parser("calibrate", help="fit the EC bias function")
    _add_data_flags(p_cal)
    p_cal.add_argument("--dump", action="store_true",
                       help="write per-EC calibrated outcomes CSV")
    _add_common_flags(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_sim = sub.add_parser("simulate", help="seeded replication study")
    p_sim.add_argument("--mechanism", default="linear",
                       choices=["linear", "nonlinear"])
    p_sim.add_argument("--methods", default=",".join(METHODS))
    p_sim.add_argument("--delta", type=float,
                       default=float(_env_default("delta", 0.0)))
    p_sim.add_argument("--delta-sweep", dest="delta_sweep", default="",
                       help="comma-separated deltas for a sweep")
    p_sim.add_argument("--reps", type=int,
                       default=int(_env_default("reps", 200)))
    p_sim.add_argument("--beta-seed", dest="beta_seed", type=int,
                       default=int(_env_default("beta_seed", 0)))
    _add_common_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error (validation): {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"error (validation): {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError) as e:
        print(f"error (numerical): {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
