"""Command-line interface: ``polyhazard fit | simulate | summarize``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, postprocess
from .engine import ChainFailure, SamplerConfig, diagnostics, format_acceptance, run
from .model import Dataset, NumericalError, PriorConfig, model_key
from .oracle import simulate_polyhazard, simulate_supplement_data

log = logging.getLogger("polyhazard")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# input


def read_csv(path) -> tuple:
    """Parse a ``time,event,x1..xp`` file.

    Returns ``(time, event, X, names)``.  Lines starting with ``#`` are
    comments; errors name the offending line of the file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    rows = []
    header = None
    for lineno, fields in _numbered_rows(text):
        if header is None:
            header = [f.strip() for f in fields]
            missing = [c for c in ("time", "event") if c not in header]
            if missing:
                raise InputError(f"{path}: schema error: missing column(s) {', '.join(missing)} in header")
            if len(set(header)) != len(header) or any(not h for h in header):
                raise InputError(f"{path}: schema error: empty or duplicate column names")
            continue
        if len(fields) != len(header):
            raise InputError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(fields)}")
        rows.append((lineno, fields))
    if header is None:
        raise InputError(f"{path}: empty file (header required)")
    if len(rows) < 2:
        raise InputError(f"{path}: at least 2 data rows required, got {len(rows)}")
    it, ie = header.index("time"), header.index("event")
    cov = [j for j in range(len(header)) if j not in (it, ie)]
    time = np.empty(len(rows))
    event = np.empty(len(rows), dtype=np.int64)
    X = np.empty((len(rows), len(cov)))
    for r, (lineno, fields) in enumerate(rows):
        t = _number(fields[it], path, lineno, "time")
        if not (math.isfinite(t) and t > 0):
            raise InputError(f"{path}: line {lineno}: time must be a positive number, got {fields[it].strip()!r}")
        e = fields[ie].strip()
        if e not in ("0", "1"):
            raise InputError(f"{path}: line {lineno}: event must be 0 or 1, got {e!r}")
        time[r], event[r] = t, int(e)
        for c, j in enumerate(cov):
            X[r, c] = _number(fields[j], path, lineno, header[j])
            if not math.isfinite(X[r, c]):
                raise InputError(f"{path}: line {lineno}: covariate {header[j]} is not finite")
    return time, event, X, [header[j] for j in cov]


def _numbered_rows(text: str):
    lines = text.splitlines()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, next(csv.reader([line]))


def _number(s: str, path, lineno: int, column: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise InputError(f"{path}: line {lineno}: column {column} is not numeric: {s.strip()!r}") from None


def load_dataset(path) -> Dataset:
    time, event, X, names = read_csv(path)
    return Dataset.from_arrays(time, event, X, names=names)


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            out = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(out, dict):
        raise InputError(f"{path}: expected a JSON object")
    return out


def load_config(path) -> tuple:
    """Read ``{"prior": {...}, "sampler": {...}}``; either section may be omitted."""
    cfg = load_json(path) if path else {}
    unknown = set(cfg) - {"prior", "sampler"}
    if unknown:
        raise InputError(f"{path}: unknown config sections {sorted(unknown)}")
    try:
        prior = PriorConfig(**cfg.get("prior", {}))
        sampler = SamplerConfig.from_dict(cfg.get("sampler", {}))
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: invalid config: {exc}") from None
    return prior, sampler


# ---------------------------------------------------------------------------
# output helpers


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _config_hash(prior: PriorConfig, sampler: SamplerConfig) -> str:
    payload = _dumps({"prior": prior.to_dict(), "sampler": sampler.to_dict()})
    return hashlib.sha256(payload.encode()).hexdigest()


def _submodel_rows(occ: dict, snap: dict):
    for key in sorted(set(occ) | set(snap), key=lambda k: (-occ.get(k, 0.0), k)):
        yield key, len(key.split("-")), occ.get(key, 0.0), snap.get(key, 0.0)


SUBMODEL_HEADER = ("model", "K", "occupancy_probability", "snapshot_probability")


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    data = load_dataset(args.data)
    prior, config = load_config(args.config)
    if args.chains is not None:
        config.chains = args.chains
    if args.seed is not None:
        config.seed = args.seed
    if args.total_time is not None:
        config.total_time = args.total_time
    if args.skeleton:
        config.emit_skeleton = True
    if args.chains is not None and args.chains < 1:
        raise InputError("--chains must be at least 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("fitting %d observations, %d covariates, %d chain(s)", data.n, data.p, config.chains)
    skeletons = run(config, prior, data)

    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for sk in skeletons:
            for s in sk.samples:
                fh.write(_dumps(s) + "\n")
    if config.emit_skeleton:
        with open(out / "skeleton.jsonl", "w", encoding="utf-8") as fh:
            for sk in skeletons:
                fh.write(_dumps({"chain": sk.chain, "kind": "initial", "clock": sk.initial["anchor"],
                                 "model": sk.initial_model, "state": sk.initial}) + "\n")
                for ev in sk.events:
                    fh.write(_dumps({"chain": sk.chain, **ev.to_dict()}) + "\n")
                fh.write(_dumps({"chain": sk.chain, "kind": "end", "clock": sk.end_clock, "burn_in": sk.burn_in}) + "\n")

    report = diagnostics(skeletons)
    report["acceptance_summary"] = format_acceptance(report)
    _write_json(out / "diagnostics.json", report)

    occ = postprocess.submodel_probabilities(skeletons)
    samples = [s for sk in skeletons for s in sk.samples]
    snap = postprocess.snapshot_probabilities(samples) if samples else {}
    _write_csv(out / "submodels.csv", SUBMODEL_HEADER, _submodel_rows(occ, snap))

    std = data.standardization()
    std["quartiles"] = {
        name: np.quantile(data.X[:, j] * data.scale[j] + data.center[j], [0.25, 0.5, 0.75]).tolist()
        for j, name in enumerate(data.names)
    }
    manifest = {
        "version": __version__,
        "config_hash": _config_hash(prior, config),
        "data": {
            "path": str(args.data),
            "sha256": hashlib.sha256(Path(args.data).read_bytes()).hexdigest(),
            "n": data.n,
            "events": int(data.event.sum()),
            "max_time": float(data.time.max()),
        },
        "prior": prior.to_dict(),
        "prior_defaults": PriorConfig().to_dict(),
        "sampler": config.to_dict(),
        "standardization": std,
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json") + ["manifest.json"],
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(samples)} samples to {out}; {report['acceptance_summary']}")
    return EXIT_OK


GENERATORS = ("supplement", "weibull", "loglogistic")


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise InputError("--n must be at least 1")
    rng = np.random.default_rng(args.seed)
    if args.gen == "supplement":
        data = simulate_supplement_data(args.n, rng)
        X = np.column_stack([data.X[:, 0] * data.scale[0] + data.center[0]])
    else:
        if not (args.nu > 0 and args.mu > 0):
            raise InputError("--nu and --mu must be positive")
        if args.censor_rate < 0:
            raise InputError("--censor-rate must be nonnegative")
        data = simulate_polyhazard([args.gen], [args.nu], [args.mu], args.n, rng, censor_rate=args.censor_rate)
        X = np.zeros((args.n, 0))
    header = ["time", "event"] + [f"x{j + 1}" for j in range(X.shape[1])]
    rows = ([float(t), int(e), *(float(v) for v in x)] for t, e, x in zip(data.time, data.event, X))
    if args.out in (None, "-"):
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    else:
        _write_csv(Path(args.out), header, rows)
    return EXIT_OK


def _read_run(run_dir: Path):
    needed = ("manifest.json", "samples.jsonl", "submodels.csv")
    missing = [f for f in needed if not (run_dir / f).exists()]
    if missing:
        raise InputError(f"{run_dir}: missing run artifacts: {', '.join(missing)}")
    manifest = load_json(run_dir / "manifest.json")
    with open(run_dir / "samples.jsonl", encoding="utf-8") as fh:
        samples = [json.loads(line) for line in fh if line.strip()]
    if not samples:
        raise InputError(f"{run_dir}: samples.jsonl holds no samples")
    with open(run_dir / "submodels.csv", encoding="utf-8") as fh:
        table = list(csv.DictReader(fh))
    return manifest, samples, table


def resolve_profile(values, manifest: dict) -> np.ndarray:
    """Map ``{covariate: value}`` on the original scale to the standardised scale.

    Omitted covariates sit at their sample means.  A value may also be
    ``"q25"``, ``"median"`` or ``"q75"`` for the observed quartiles.
    """
    std = manifest["standardization"]
    names = std["names"]
    if not isinstance(values, dict):
        raise InputError("a profile must be a JSON object of covariate values")
    unknown = set(values) - set(names)
    if unknown:
        raise InputError(f"unknown covariates in profile: {sorted(unknown)}")
    raw = np.array(std["center"], dtype=float)
    for j, name in enumerate(names):
        if name not in values:
            continue
        v = values[name]
        if isinstance(v, str):
            idx = {"q25": 0, "median": 1, "q75": 2}.get(v)
            if idx is None:
                raise InputError(f"profile value for {name} must be a number, q25, median or q75")
            v = std["quartiles"][name][idx]
        raw[j] = float(v)
    return (raw - np.array(std["center"])) / np.array(std["scale"])


def _profiles(doc: dict) -> dict:
    if "profiles" in doc:
        if not isinstance(doc["profiles"], dict) or not doc["profiles"]:
            raise InputError("'profiles' must be a non-empty object of named profiles")
        return doc["profiles"]
    return {"profile": doc}


def _curve_rows(curve: dict):
    return zip(curve["time"], curve["mean"], curve["lower"], curve["upper"])


def cmd_summarize(args) -> int:
    run_dir = Path(args.run)
    manifest, samples, table = _read_run(run_dir)
    out = Path(args.out) if args.out else run_dir / "summary"
    out.mkdir(parents=True, exist_ok=True)
    samples = [postprocess.apply_ordering(s) for s in samples]
    max_time = float(manifest["data"]["max_time"])
    horizon = args.horizon or 10.0 * max_time
    grid = postprocess.default_grid(max_time, args.grid_points)

    profiles = {name: resolve_profile(p, manifest) for name, p in _profiles(load_json(args.profile)).items()}
    summary = {"horizon": horizon, "n_samples": len(samples), "profiles": {}}
    for name, x in profiles.items():
        ms = postprocess.mean_survival(samples, x, horizon)
        summary["profiles"][name] = ms.summary()
        _write_csv(out / f"hazard_{name}.csv", ("time", "mean", "lower", "upper"),
                   _curve_rows(postprocess.hazard_curve(samples, x, grid)))
    if args.contrast:
        doc = load_json(args.contrast)
        if set(doc) != {"x1", "x0"}:
            raise InputError("contrast must be an object with exactly the keys x1 and x0")
        x1, x0 = resolve_profile(doc["x1"], manifest), resolve_profile(doc["x0"], manifest)
        summary["difference"] = postprocess.mean_survival_difference(samples, x1, x0, horizon)
        _write_csv(out / "hazard_ratio.csv", ("time", "mean", "lower", "upper"),
                   _curve_rows(postprocess.hazard_ratio_curve(samples, x1, x0, grid)))
    _write_json(out / "mean_survival.json", summary)
    _write_csv(out / "submodels.csv", SUBMODEL_HEADER, ([r[h] for h in SUBMODEL_HEADER] for r in table))
    for name, s in summary["profiles"].items():
        print(f"{name}: mean survival {s['mean']:.4g} (95% {s['q2.5']:.4g} to {s['q97.5']:.4g})")
    if "difference" in summary:
        d = summary["difference"]
        print(f"difference: {d['mean']:.4g} (95% {d['q2.5']:.4g} to {d['q97.5']:.4g})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyhazard", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="sample the polyhazard posterior")
    fit.add_argument("--data", required=True, help="CSV with columns time,event,x1..xp")
    fit.add_argument("--config", help='JSON {"prior": {...}, "sampler": {...}}')
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--chains", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--total-time", type=float, help="override sampler total_time")
    fit.add_argument("--skeleton", action="store_true", help="also write skeleton.jsonl")
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", help="write a simulated dataset")
    sim.add_argument("--gen", required=True, choices=GENERATORS)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--nu", type=float, default=1.0)
    sim.add_argument("--mu", type=float, default=1.0)
    sim.add_argument("--censor-rate", type=float, default=0.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", help="CSV path (default stdout)")
    sim.set_defaults(func=cmd_simulate)

    summ = sub.add_parser("summarize", help="posterior summaries of a fit")
    summ.add_argument("--run", required=True, help="fit output directory")
    summ.add_argument("--profile", required=True, help="JSON covariate profile(s) on the original scale")
    summ.add_argument("--contrast", help='JSON {"x1": {...}, "x0": {...}}')
    summ.add_argument("--out", help="output directory (default <run>/summary)")
    summ.add_argument("--horizon", type=float, help="mean-survival integration horizon")
    summ.add_argument("--grid-points", type=int, default=100)
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ChainFailure, NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
