"""Command-line entry points: calibrate, train, evaluate, bench, perturb.

Every command reads one JSON config (validated against ``CONFIG_SCHEMA``),
writes JSON into ``--out`` and is deterministic given the config and seed.
Precedence for seed, threads, output directory and route is command-line
flag, then ``MIXDRO_*`` environment variable, then config.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from pathlib import Path

import jsonschema
import numpy as np

from .calibration import (
    RHO_X_BOUNDS,
    RHO_Z_CEILING,
    CalibrationError,
    CertaintySpec,
    calibrate,
    sample_certainty,
    stddev_half_widths,
)
from .conic import SolverError
from .dataset import DataError, EncodedDataset, RawTable, encode, load_csv, preprocess, split, write_csv
from .evaluation import PerturbationRun, clean_metrics, evaluate_under_shift, perturb_dataset
from .graph import graph_sizes
from .model import Coefficients
from .separation import build_state_space
from .solve import ROUTES, MonolithicCapError, train
from .synthetic import make_dataset

log = logging.getLogger("mixdro")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_DISAGREE = 0, 2, 3, 4
ENV_PREFIX = "MIXDRO_"

_vector = {"type": "array", "items": {"type": "number"}}
_synthetic = {
    "type": "object",
    "additionalProperties": False,
    "required": ["N", "n", "cardinalities"],
    "properties": {
        "N": {"type": "integer", "minimum": 2},
        "n": {"type": "integer", "minimum": 0},
        "cardinalities": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "seed": {"type": "integer"},
        "signal": {"type": "number", "exclusiveMinimum": 0},
        "noise": {"type": "number", "exclusiveMinimum": 0},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mixdro run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train": {"type": "string"},
                "test": {"type": "string"},
                "label_column": {"type": "string"},
                "columns": {
                    "type": "object",
                    "additionalProperties": {"enum": ["numerical", "categorical"]},
                },
                "category_order": {
                    "type": "object",
                    "additionalProperties": {"type": "array", "items": {"type": "string"}},
                },
                "delimiter": {"type": "string", "minLength": 1, "maxLength": 1},
                "missing_tokens": {"type": "array", "items": {"type": "string"}},
                "drop_columns": {"type": "array", "items": {"type": "string"}},
                "synthetic": _synthetic,
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "oneOf": [
                {"required": ["train", "label_column", "columns"], "not": {"required": ["synthetic"]}},
                {"required": ["synthetic"], "not": {"required": ["train"]}},
            ],
        },
        "certainty": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rho_x": _vector,
                "rho_z": _vector,
                "u": {"oneOf": [_vector, {"const": "stddev"}]},
                "u_factor": {"type": "number", "exclusiveMinimum": 0},
                "sampling": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mean", "std"],
                    "properties": {"mean": {"type": "number"}, "std": {"type": "number", "minimum": 0}},
                },
                "theta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            },
        },
        "precision": {"enum": ["integer", "one-decimal", "none"]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "route": {"enum": list(ROUTES)},
                "backend": {"enum": ["clarabel", "scs"]},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "multi_cut": {"type": "boolean"},
                "time_limit": {"type": "number", "exclusiveMinimum": 0},
                "steps": {"type": "integer", "minimum": 1},
                "share_structure": {"type": "boolean"},
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "K": {"type": "integer", "minimum": 1},
                "bins": {"type": "integer", "minimum": 1},
                "scenarios": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["none", "shift", "radius"]},
                            "value": {"type": "number"},
                        },
                    },
                },
            },
        },
        "bench": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "routes": {"type": "array", "items": {"enum": list(ROUTES)}, "uniqueItems": True},
                "instances": {"type": "array", "items": _synthetic, "minItems": 1},
                "precisions": {"type": "array", "items": {"enum": ["integer", "one-decimal", "none"]}},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "time_limit": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "certainty": {"u": "stddev", "u_factor": 0.4, "sampling": {"mean": 0.6, "std": 0.2}, "theta": 0.8},
    "precision": "integer",
    "solver": {"route": "graph", "backend": "clarabel", "tol": 1e-7, "max_iter": 5000, "multi_cut": False, "steps": 3000},
    "evaluation": {"K": 200, "bins": 10, "scenarios": [{"kind": "none"}]},
    "bench": {"routes": ["graph", "cutting-plane"], "precisions": ["integer", "one-decimal"], "rtol": 1e-4},
    "data": {"test_fraction": 0.2, "delimiter": ",", "missing_tokens": ["", "?"], "drop_columns": []},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path, overrides: dict | None = None) -> dict:
    """Read, validate and complete a config; relative data paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {path}: {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    for key in ("train", "test"):
        if key in cfg["data"]:
            cfg["data"][key] = str((path.parent / cfg["data"][key]).resolve())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "route":
            cfg["solver"]["route"] = value
        else:
            cfg[key] = value
    return cfg


def env_overrides(args) -> dict:
    def pick(flag, name, cast):
        if flag is not None:
            return flag
        raw = os.environ.get(ENV_PREFIX + name)
        if raw is None:
            return None
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"{ENV_PREFIX}{name}={raw!r} is not a valid {cast.__name__}") from None

    out = {
        "seed": pick(args.seed, "SEED", int),
        "threads": pick(args.threads, "THREADS", int),
        "route": pick(args.route, "ROUTE", str),
    }
    if out["route"] is not None and out["route"] not in ROUTES:
        raise ConfigError(f"unknown route {out['route']!r}; choose from {', '.join(ROUTES)}")
    if out["threads"] is not None and out["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    return out


def _config_digest(cfg: dict) -> str:
    # thread count never changes results, so it stays out of the digest
    payload = {k: v for k, v in cfg.items() if k != "threads"}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_data(cfg: dict) -> tuple[EncodedDataset, EncodedDataset]:
    d = cfg["data"]
    seed = cfg["seed"]
    if "synthetic" in d:
        s = d["synthetic"]
        ds = make_dataset(s["N"], s["n"], s["cardinalities"], s.get("seed", seed), s.get("signal", 1.0), s.get("noise", 1.0))
        return split(ds, d["test_fraction"], seed)
    kw = dict(
        delimiter=d["delimiter"], missing_tokens=d["missing_tokens"], drop_columns=d["drop_columns"],
    )
    train_table = load_csv(d["train"], d["label_column"], d["columns"], **kw)
    if "test" not in d:
        ds = encode(preprocess(train_table), d.get("category_order"))
        return split(ds, d["test_fraction"], seed)
    # preprocess both files together so dictionaries and label signs agree
    test_table = load_csv(d["test"], d["label_column"], d["columns"], **kw)
    if test_table.columns != train_table.columns:
        raise DataError("train and test files have different columns")
    both = RawTable(train_table.columns, train_table.kinds, train_table.rows + test_table.rows)
    ds = encode(preprocess(both), d.get("category_order"))
    n_train = len(train_table.rows)
    return ds.subset(np.arange(n_train)), ds.subset(np.arange(n_train, ds.N))


def run_calibration(cfg: dict, train_ds: EncodedDataset):
    """Certainties, calibrated parameters and a JSON-ready record."""
    c = cfg["certainty"]
    schema = train_ds.schema
    rng = np.random.default_rng(cfg["seed"])
    rho_x_s, rho_z_s = sample_certainty(rng, schema.n, schema.cardinalities, c["sampling"]["mean"], c["sampling"]["std"])
    rho_x = np.asarray(c.get("rho_x", rho_x_s), dtype=float)
    rho_z = np.asarray(c.get("rho_z", rho_z_s), dtype=float)
    if len(rho_x) != schema.n or len(rho_z) != schema.m:
        raise CalibrationError(f"certainty vectors need lengths ({schema.n}, {schema.m})")
    if c["u"] == "stddev":
        u = stddev_half_widths(train_ds.X, c["u_factor"]) if schema.n else np.zeros(0)
    else:
        u = np.asarray(c["u"], dtype=float)
    try:
        spec = CertaintySpec(rho_x, u, rho_z, schema.cardinalities, c["theta"])
    except CalibrationError as exc:
        raise CalibrationError(f"{exc} (features: {', '.join(schema.numerical + schema.categorical)})") from None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cal = calibrate(spec, cfg["precision"], schema.categorical)
    for w in caught:
        log.warning("%s", w.message)
    record = {
        "schema_version": SCHEMA_VERSION,
        "features": {"numerical": list(schema.numerical), "categorical": list(schema.categorical)},
        "gamma": cal.params.gamma.tolist(),
        "delta_raw": cal.delta_raw.tolist(),
        "delta": cal.params.delta.tolist(),
        "epsilon": cal.params.epsilon,
        "laplace_scale": cal.perturbation.b.tolist(),
        "rho_x": spec.rho_x.tolist(),
        "rho_z": spec.rho_z.tolist(),
        "u": spec.u.tolist(),
        "theta": spec.theta,
        "precision": cfg["precision"],
        "warnings": cal.warnings,
        "provenance": {
            "seed": cfg["seed"],
            "rho_source": {
                "rho_x": "config" if "rho_x" in c else "sampled",
                "rho_z": "config" if "rho_z" in c else "sampled",
            },
            "sampling": {
                "law": "normal",
                **c["sampling"],
                "truncation": {"rho_x": list(RHO_X_BOUNDS), "rho_z": ["1/|C|", RHO_Z_CEILING]},
            },
            "u_rule": f"{c['u_factor']} x training stddev" if c["u"] == "stddev" else "config",
            "schema_fingerprint": schema.fingerprint(),
            "config_digest": _config_digest(cfg),
        },
    }
    return cal, record


def _train_kwargs(cfg: dict, route: str) -> dict:
    s = cfg["solver"]
    if route == "cutting-plane":
        kw = {"tol": s["tol"], "max_iter": s["max_iter"], "multi_cut": s["multi_cut"], "backend": s["backend"], "threads": cfg["threads"]}
        if "time_limit" in s:
            kw["time_limit"] = s["time_limit"]
        return kw
    if route == "graph":
        kw = {"share_structure": s.get("share_structure", True)}
        if s["backend"] != "clarabel":
            kw["backend"] = s["backend"]
        return kw
    if route == "monolithic":
        return {"backend": s["backend"]}
    return {"steps": s["steps"]}


def cmd_calibrate(cfg: dict, out: Path) -> int:
    train_ds, _ = load_data(cfg)
    _, record = run_calibration(cfg, train_ds)
    _dump(out / "calibration.json", record)
    print(out / "calibration.json")
    return EXIT_OK


def cmd_train(cfg: dict, out: Path) -> int:
    train_ds, _ = load_data(cfg)
    cal, record = run_calibration(cfg, train_ds)
    route = cfg["solver"]["route"]
    report = train(train_ds, cal.params, route, **_train_kwargs(cfg, route))
    fp = train_ds.schema.fingerprint()
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(report.coefficients.to_json(fp) + "\n", encoding="utf-8")
    _dump(out / "calibration.json", record)
    _dump(out / "train_report.json", {
        "schema_version": SCHEMA_VERSION,
        "schema": train_ds.schema.to_dict(),
        "schema_fingerprint": fp,
        "config_digest": _config_digest(cfg),
        "report": report.to_dict(),
    })
    _dump(out / "timing.json", {"route": route, "wall_time": report.wall_time})
    print(f"{route}: objective {report.objective:.10g} status {report.status}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, out: Path, model_path: Path | None) -> int:
    train_ds, test_ds = load_data(cfg)
    cal, _ = run_calibration(cfg, train_ds)
    model_path = model_path or out / "model.json"
    try:
        beta = Coefficients.from_json(Path(model_path).read_text(encoding="utf-8"), test_ds.schema.fingerprint())
    except OSError as exc:
        raise ConfigError(f"cannot read model {model_path}: {exc}") from None
    ev = cfg["evaluation"]
    reports = []
    for k, sc in enumerate(ev["scenarios"]):
        run = PerturbationRun(ev["K"], cfg["seed"], sc["kind"], sc.get("value", 0.0))
        rep = evaluate_under_shift(beta, test_ds, run, cal.perturbation, ev["bins"], cfg["threads"])
        d = rep.to_dict()
        d["schema_version"] = SCHEMA_VERSION
        _dump(out / f"eval_{k:02d}.json", d)
        (out / f"eval_{k:02d}.csv").write_text(rep.to_csv(), encoding="utf-8")
        reports.append({"file": f"eval_{k:02d}.json", "scenario": rep.scenario, **d["summary"]})
    _dump(out / "evaluation.json", {
        "schema_version": SCHEMA_VERSION,
        "clean": clean_metrics(beta, test_ds, ev["bins"]),
        "scenarios": reports,
    })
    for r in reports:
        print(f"{r['scenario']}: worst ACE {r['worst_ace']:.4f} worst AUC {r['worst_auc']:.4f} worst log-loss {r['worst_log_loss']:.4f}")
    return EXIT_OK


def cmd_perturb(cfg: dict, out: Path, count: int) -> int:
    train_ds, test_ds = load_data(cfg)
    cal, _ = run_calibration(cfg, train_ds)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(np.random.SeedSequence(cfg["seed"]).spawn(count)):
        write_csv(perturb_dataset(test_ds, cal.perturbation, s), out / f"perturbed_{k:04d}.csv")
    print(f"wrote {count} perturbed test sets to {out}")
    return EXIT_OK


def cmd_bench(cfg: dict, out: Path) -> int:
    b = cfg["bench"]
    routes = b["routes"]
    if len(routes) < 2:
        raise ConfigError("bench needs at least two routes")
    instances = b.get("instances") or [cfg["data"].get("synthetic")]
    if instances == [None]:
        raise ConfigError("bench needs synthetic instances (bench.instances or data.synthetic)")
    rows, timing, flagged = [], [], False
    for inst in instances:
        ds = make_dataset(inst["N"], inst["n"], inst["cardinalities"], inst.get("seed", cfg["seed"]),
                          inst.get("signal", 1.0), inst.get("noise", 1.0))
        for precision in b["precisions"]:
            cal, _ = run_calibration(_merge(cfg, {"precision": precision}), ds)
            space = build_state_space(cal.params.delta, precision)
            n_v, n_a = graph_sizes(ds, space)
            row = {"instance": inst, "precision": precision, "vertices": n_v, "arcs": n_a, "routes": {}}
            for route in routes:
                kw = _train_kwargs(cfg, route)
                if route == "cutting-plane" and "time_limit" in b:
                    kw["time_limit"] = b["time_limit"]
                rep = train(ds, cal.params, route, **kw)
                row["routes"][route] = {"objective": rep.objective, "status": rep.status, "iterations": rep.iterations}
                timing.append({"instance": inst, "precision": precision, "route": route, "wall_time": rep.wall_time})
            res = row["routes"]
            conic = [v["objective"] for r, v in res.items() if r != "subgradient"]
            ok = True
            if conic:
                ref = max(abs(min(conic)), 1e-12)
                ok = (max(conic) - min(conic)) / ref <= b["rtol"]
                # the first-order fallback only has to come within 1e-2
                if "subgradient" in res:
                    ok &= (res["subgradient"]["objective"] - min(conic)) / ref <= 1e-2
            row["flagged"] = not ok
            flagged |= row["flagged"]
            rows.append(row)
    _dump(out / "bench.json", {"schema_version": SCHEMA_VERSION, "rows": rows})
    _dump(out / "bench_timing.json", timing)
    header = f"{'N':>6} {'m':>3} {'precision':>11} {'|V|':>9} {'|A|':>9}  " + "  ".join(f"{r:>14}" for r in routes)
    print(header)
    for k, row in enumerate(rows):
        times = [t["wall_time"] for t in timing[k * len(routes):(k + 1) * len(routes)]]
        inst = row["instance"]
        print(f"{inst['N']:>6} {len(inst['cardinalities']):>3} {row['precision']:>11} {row['vertices']:>9} {row['arcs']:>9}  "
              + "  ".join(f"{t:>13.2f}s" for t in times) + ("  DISAGREE" if row["flagged"] else ""))
    return EXIT_DISAGREE if flagged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixdro", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("calibrate", "compute ambiguity-set and shift-model parameters"),
        ("train", "train a robust model"),
        ("evaluate", "score a model on shifted test sets"),
        ("bench", "time several training routes on synthetic data"),
        ("perturb", "write shifted copies of the test set as CSV"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--route")
        if name == "evaluate":
            sp.add_argument("--model", type=Path, help="coefficients JSON (default OUT/model.json)")
        if name == "perturb":
            sp.add_argument("--count", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, env_overrides(args))
        out = args.out or Path(os.environ.get(ENV_PREFIX + "OUT", "mixdro-out"))
        t0 = time.perf_counter()
        if args.command == "calibrate":
            code = cmd_calibrate(cfg, out)
        elif args.command == "train":
            code = cmd_train(cfg, out)
        elif args.command == "evaluate":
            code = cmd_evaluate(cfg, out, args.model)
        elif args.command == "perturb":
            code = cmd_perturb(cfg, out, args.count)
        else:
            code = cmd_bench(cfg, out)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
        return code
    except SolverError as exc:
        print(f"error: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, DataError, CalibrationError, MonolithicCapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
