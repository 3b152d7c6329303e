"""Command-line entry point: ``propval <subcommand> [options]``.

Settings are resolved from built-in defaults, then an INI config file
(``--config``), then the environment (``PROPVAL_OUTPUT_DIR``,
``PROPVAL_THREADS``), then command-line flags. Every artifact carries a
hash of the resolved settings plus the content of the input files, and
the seed, so a run can be traced back to what produced it.

Exit status is 0 on success, 1 on input errors (bad flags, missing or
malformed files) and 2 on fitting or numerical failures.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .design import ModelSpec
from .evaluate import (
    MODEL_FAMILIES,
    WeightSpec,
    comparison_table,
    kfold_cv,
    knot_curve_csv,
    knot_selection_cv,
    metrics_csv,
    submarket_csv,
    submarket_table,
)
from .fit import FitError
from .forest import (
    ForestConfig,
    format_importance,
    grow_forest,
    load_forest,
    rf_predict,
    save_forest,
    variable_importance,
)
from .ingest.geo import RegionGraph, SubmarketConfig, project_web_mercator
from .ingest.listings import HeaderError, clean, parse_listings
from .model import (
    PredictionError,
    extract_smooth,
    extract_spatial_surface,
    fit_model,
    format_scalings,
    load_model,
    monthly_inflation,
    predict,
    save_model,
    summarize_parametric,
    write_raster,
)
from .records import read_records, write_records
from .synth import ConfigError, SynthConfig, simulate_dataset, write_submarket_files

log = logging.getLogger("propval")

SUBCOMMANDS = ("ingest", "simulate", "fit", "predict", "cv", "knots", "surfaces", "report")


class InputError(Exception):
    """Bad user input: exit status 1."""


def _opt_int(v):
    return None if v in (None, "", "none") else int(v)


def _opt_float(v):
    return None if v in (None, "", "none") else float(v)


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s not in configparser.ConfigParser.BOOLEAN_STATES:
        raise ValueError(f"not a boolean: {v!r}")
    return configparser.ConfigParser.BOOLEAN_STATES[s]


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "output_dir": (str, "propval-out"),
        "threads": (int, 1),
        "seed": (int, 1),
        "log_level": (str, "INFO"),
    },
    "paths": {
        "records": (str, ""),
        "regions": (str, ""),
        "cities": (str, ""),
        "towns": (str, ""),
        "listings": (str, ""),
        "keywords": (str, ""),
        "model": (str, ""),
    },
    "model": {
        "family": (str, "sgam"),
        "knots_beds": (int, 8),
        "knots_baths": (int, 7),
        "knots_size": (int, 40),
        "knots_month": (int, 10),
        "knots_location": (int, 400),
        "knot_seed": (int, 42),
        "kernel_rho": (_opt_float, None),
        "use_features": (_bool, True),
        "use_ber": (_bool, True),
        "use_type": (_bool, True),
    },
    "forest": {
        "n_trees": (int, 500),
        "mtry": (int, 7),
        "min_node_size": (int, 5),
        "sample_fraction": (float, 1.0),
        "bootstrap": (_bool, True),
    },
    "cv": {
        "models": (str, ",".join(("sgam", "ngam", "hedonic", "rf"))),
        "folds": (int, 5),
        "neighbours": (int, 20),
        "weighting": (str, "inverse_distance"),
        "row_standardize": (_bool, True),
        "permutations": (int, 999),
    },
    "simulate": {
        "n": (int, 5000),
        "noise_seed": (_opt_int, None),
        "rural_share": (_opt_float, None),
        "sigma": (float, 0.12),
    },
    "knots": {
        "term": (str, "size"),
        "candidates": (str, "10,20,30,40,60,80"),
    },
    "surfaces": {
        "cell_m": (float, 5000.0),
    },
}

# settings that change where or how fast a run executes, not what it computes
_ENVIRONMENT_KEYS = {("run", "output_dir"), ("run", "threads"), ("run", "log_level")}

# config sections each subcommand reads (besides "run" and "paths")
SECTIONS = {
    "ingest": (), "simulate": ("simulate",), "fit": ("model", "forest"), "predict": (),
    "cv": ("model", "forest", "cv"), "knots": ("model", "knots", "cv"),
    "surfaces": ("surfaces",), "report": (),
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _flag(p, name, key, help, type=str):
    p.add_argument(name, dest=key, type=type, default=None, metavar=key.split(".")[1].upper(),
                   help=help)


def _common(p):
    p.add_argument("--config", default=None, help="INI file with default settings")
    _flag(p, "--output-dir", "run.output_dir", "directory for all artifacts")
    _flag(p, "--threads", "run.threads", "worker threads (results do not depend on it)", int)
    _flag(p, "--seed", "run.seed", "seed for simulation, folds and forests", int)
    _flag(p, "--log-level", "run.log_level", "DEBUG, INFO, WARNING or ERROR")


def _model_flags(p):
    for term in ("beds", "baths", "size", "month", "location"):
        _flag(p, f"--knots-{term}", f"model.knots_{term}", f"basis size for {term}", int)
    _flag(p, "--knot-seed", "model.knot_seed", "seed for spatial knot placement", int)
    _flag(p, "--kernel-rho", "model.kernel_rho", "Matérn range in metres", float)


def _forest_flags(p):
    _flag(p, "--trees", "forest.n_trees", "number of trees", int)
    _flag(p, "--mtry", "forest.mtry", "candidate features per split", int)
    _flag(p, "--min-node-size", "forest.min_node_size", "minimum leaf size", int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="propval", description="Property valuation models.")
    parser.add_argument("--version", action="version", version=f"propval {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="parse and clean a listings file")
    _common(p)
    _flag(p, "--listings", "paths.listings", "raw listings CSV")
    _flag(p, "--regions", "paths.regions", "region polygons (GeoJSON)")
    _flag(p, "--cities", "paths.cities", "city polygons (GeoJSON)")
    _flag(p, "--towns", "paths.towns", "town centres CSV (name,lon,lat)")
    _flag(p, "--keywords", "paths.keywords", "commercial keyword list, one per line")

    p = sub.add_parser("simulate", help="draw a synthetic data set with known truth")
    _common(p)
    _flag(p, "--n", "simulate.n", "number of records", int)
    _flag(p, "--noise-seed", "simulate.noise_seed", "seed of the noise draw", int)
    _flag(p, "--rural-share", "simulate.rural_share", "share of uniformly placed rural records",
          float)
    _flag(p, "--sigma", "simulate.sigma", "noise standard deviation (log scale)", float)

    p = sub.add_parser("fit", help="fit one model and save the artifact")
    _common(p)
    _flag(p, "--records", "paths.records", "records CSV")
    _flag(p, "--regions", "paths.regions", "region polygons (GeoJSON)")
    _flag(p, "--model", "model.family", "sgam, ngam, hedonic or rf")
    _model_flags(p)
    _forest_flags(p)

    p = sub.add_parser("predict", help="predict prices with a saved model")
    _common(p)
    _flag(p, "--records", "paths.records", "records CSV")
    _flag(p, "--model-file", "paths.model", "model or forest artifact")

    p = sub.add_parser("cv", help="k-fold cross-validation of several models")
    _common(p)
    _flag(p, "--records", "paths.records", "records CSV")
    _flag(p, "--regions", "paths.regions", "region polygons (GeoJSON)")
    _flag(p, "--model", "cv.models", "comma-separated model list")
    _flag(p, "--folds", "cv.folds", "number of folds", int)
    _flag(p, "--neighbours", "cv.neighbours", "nearest neighbours in Moran's I weights", int)
    _flag(p, "--weighting", "cv.weighting", "inverse_distance or binary")
    _flag(p, "--permutations", "cv.permutations", "permutations for the Moran's I p-value", int)
    _model_flags(p)
    _forest_flags(p)

    p = sub.add_parser("knots", help="cross-validated accuracy against basis size")
    _common(p)
    _flag(p, "--records", "paths.records", "records CSV")
    _flag(p, "--regions", "paths.regions", "region polygons (GeoJSON)")
    _flag(p, "--model", "model.family", "sgam or ngam")
    _flag(p, "--term", "knots.term", "size or location")
    _flag(p, "--candidates", "knots.candidates", "comma-separated knot counts")
    _flag(p, "--folds", "cv.folds", "number of folds", int)
    _model_flags(p)

    p = sub.add_parser("surfaces", help="export smooth curves, spatial rasters and inflation")
    _common(p)
    _flag(p, "--model-file", "paths.model", "model artifact")
    _flag(p, "--regions", "paths.regions", "region polygons (GeoJSON)")
    _flag(p, "--cell-m", "surfaces.cell_m", "raster cell size in metres", float)

    p = sub.add_parser("report", help="summarise a saved model")
    _common(p)
    _flag(p, "--model-file", "paths.model", "model or forest artifact")
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def resolve_config(args, environ=None) -> dict:
    """Defaults < config file < environment < flags, with values typed."""
    environ = os.environ if environ is None else environ
    cfg = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}

    def put(section, key, raw, origin):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise InputError(f"{origin}: unknown setting [{section}] {key}")
        try:
            cfg[section][key] = SCHEMA[section][key][0](raw)
        except (TypeError, ValueError):
            raise InputError(f"{origin}: bad value for [{section}] {key}: {raw!r}") from None

    if args.config:
        if not os.path.isfile(args.config):
            raise InputError(f"config file not found: {args.config}")
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(args.config, encoding="utf-8")
        except configparser.Error as exc:
            raise InputError(f"cannot parse {args.config}: {exc}") from None
        for section in cp.sections():
            for key, raw in cp.items(section):
                put(section, key, raw, args.config)
    if environ.get("PROPVAL_OUTPUT_DIR"):
        put("run", "output_dir", environ["PROPVAL_OUTPUT_DIR"], "PROPVAL_OUTPUT_DIR")
    if environ.get("PROPVAL_THREADS"):
        put("run", "threads", environ["PROPVAL_THREADS"], "PROPVAL_THREADS")
    for dest, raw in vars(args).items():
        if "." in dest and raw is not None:
            section, key = dest.split(".")
            cfg[section][key] = raw
    if cfg["run"]["threads"] < 1:
        raise InputError("threads must be >= 1")
    return cfg


def _file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: dict, inputs=()) -> str:
    """Digest of the settings that affect results plus the input contents.

    Output directory, thread count and log level are excluded, as are the
    input paths themselves (their contents are hashed instead), so a run
    moved to another directory keeps its hash. ``cfg`` is usually already
    narrowed to the sections a command reads.
    """
    keep = {s: {k: v for k, v in keys.items() if (s, k) not in _ENVIRONMENT_KEYS}
            for s, keys in cfg.items() if s != "paths"}
    payload = {"config": keep, "inputs": [_file_digest(p) for p in inputs]}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class Run:
    """Resolved settings, input bookkeeping and artifact writing for one command."""

    def __init__(self, command, cfg):
        self.command = command
        self.cfg = cfg
        self.out = cfg["run"]["output_dir"]
        self.seed = cfg["run"]["seed"]
        self.threads = cfg["run"]["threads"]
        self.inputs = []
        self.hash = None

    def input(self, key, default_name=None):
        """Path of a required input; falls back to ``output_dir/default_name``."""
        path = self.cfg["paths"][key]
        if not path and default_name:
            path = os.path.join(self.out, default_name)
        if not path:
            raise InputError(f"missing required input: --{key.replace('model', 'model-file')}")
        if not os.path.isfile(path):
            raise InputError(f"input file not found: {path}")
        self.inputs.append(os.path.abspath(path))
        return path

    def optional_input(self, key, default_name):
        path = self.cfg["paths"][key] or os.path.join(self.out, default_name)
        if os.path.isfile(path):
            self.inputs.append(os.path.abspath(path))
            return path
        if self.cfg["paths"][key]:
            raise InputError(f"input file not found: {path}")
        return None

    def start(self):
        os.makedirs(self.out, exist_ok=True)
        if not os.access(self.out, os.W_OK):
            raise InputError(f"output directory not writable: {self.out}")
        used = {s: self.cfg[s] for s in ("run", "paths") + SECTIONS[self.command]}
        self.hash = config_hash(used, self.inputs)
        resolved = {"command": self.command, "config_hash": self.hash, "seed": self.seed,
                    "inputs": self.inputs, "settings": used}
        log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
        self.write_text(f"{self.command}.config.json",
                        json.dumps(resolved, indent=1, sort_keys=True) + "\n", stamp=False)

    @property
    def metadata(self):
        return {"config_hash": self.hash, "seed": self.seed, "command": self.command}

    @property
    def stamp(self):
        return f"propval {self.command} config_hash={self.hash} seed={self.seed}"

    def path(self, name):
        p = os.path.join(self.out, name)
        if os.path.abspath(p) in self.inputs:
            raise InputError(f"refusing to overwrite input file {p}")
        return p

    def write_text(self, name, text, stamp=True, comment="#"):
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            if stamp:
                fh.write(f"{comment} {self.stamp}\n")
            fh.write(text)
        return p


def _graph(run, required):
    path = run.optional_input("regions", "regions.geojson")
    if path is None:
        if required:
            raise InputError("this model needs region polygons: pass --regions")
        return None
    return RegionGraph.load(path)


def _read_records(path):
    with open(path, encoding="utf-8") as fh:
        return read_records(fh)


def _model_spec(cfg, family) -> ModelSpec:
    m = cfg["model"]
    knots = {t: m[f"knots_{t}"] for t in ("beds", "baths", "size", "month", "location")}
    return ModelSpec(family=family, knots=knots, kernel_rho=m["kernel_rho"],
                     knot_seed=m["knot_seed"], use_features=m["use_features"],
                     use_ber=m["use_ber"], use_type=m["use_type"])


def _spec_overrides(cfg) -> dict:
    s = _model_spec(cfg, "ngam").as_dict()
    return {k: s[k] for k in ("knots", "kernel_rho", "knot_seed", "use_features", "use_ber",
                              "use_type")}


def _forest_config(cfg, seed, threads) -> ForestConfig:
    f = cfg["forest"]
    return ForestConfig(n_trees=f["n_trees"], mtry=f["mtry"], min_node_size=f["min_node_size"],
                        sample_fraction=f["sample_fraction"], bootstrap=f["bootstrap"],
                        seed=seed, n_threads=threads)


def _models(text):
    models = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in models if m not in MODEL_FAMILIES]
    if not models or bad:
        raise InputError(f"unknown model(s) {bad or text!r}; choose from {', '.join(MODEL_FAMILIES)}")
    return models


def _load_artifact(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path} is not a model artifact: {exc}") from None
    fmt = d.get("format") if isinstance(d, dict) else None
    if fmt == "propval-forest":
        return "rf", load_forest(path)
    if fmt == "propval-model":
        return "gam", load_model(path)
    raise InputError(f"{path} is not a model artifact")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(run):
    listings_path = run.input("listings")
    graph = RegionGraph.load(run.input("regions"))
    subcfg = SubmarketConfig.load(run.input("cities"), run.input("towns"))
    keywords = None
    if run.cfg["paths"]["keywords"]:
        with open(run.input("keywords"), encoding="utf-8") as fh:
            keywords = tuple(w.strip().lower() for w in fh if w.strip() and not w.startswith("#"))
    run.start()
    with open(listings_path, encoding="utf-8", newline="") as fh:
        listings, rejected = parse_listings(fh)
    records, report = clean(listings, graph, subcfg, keywords)
    buf = _StringWriter()
    write_records(records, buf)
    run.write_text("records.csv", buf.text)
    rej = "row,id,reason\n" + "".join(f"{r.row},{r.id},{r.reason}\n" for r in rejected)
    run.write_text("rejected.csv", rej)
    summary = {**report.as_dict(), "n_rows": len(listings) + len(rejected),
               "n_rejected_rows": len(rejected), **run.metadata}
    run.write_text("ingest_report.json", json.dumps(summary, indent=1, sort_keys=True) + "\n",
                   stamp=False)
    return (f"ingest: {len(records)} records from {summary['n_rows']} rows "
            f"({len(rejected)} unparseable, {report.n_input - report.n_output} dropped) "
            f"-> {run.path('records.csv')}")


def cmd_simulate(run):
    s = run.cfg["simulate"]
    try:
        cfg = SynthConfig(n=s["n"], seed=run.seed, noise_seed=s["noise_seed"], sigma=s["sigma"])
        if s["rural_share"] is not None:
            cfg = cfg.with_rural_share(s["rural_share"])
    except ConfigError as exc:
        raise InputError(str(exc)) from None
    run.start()
    ds = simulate_dataset(cfg)
    buf = _StringWriter()
    write_records(ds.records, buf)
    run.write_text("records.csv", buf.text)
    truth = ds.truth.to_dict()
    truth["metadata"] = run.metadata
    truth["synth_config"] = cfg.as_dict()
    run.write_text("truth.json", json.dumps(truth) + "\n", stamp=False)
    g = json.loads(ds.graph.to_geojson())
    g["metadata"] = run.metadata
    run.write_text("regions.geojson", json.dumps(g, indent=1) + "\n", stamp=False)
    write_submarket_files(ds.submarkets, run.path("cities.geojson"), run.path("towns.csv"))
    counts = {}
    for r in ds.records:
        counts[r.submarket] = counts.get(r.submarket, 0) + 1
    mix = ", ".join(f"{k} {v}" for k, v in sorted(counts.items()))
    return f"simulate: {len(ds.records)} records ({mix}) -> {run.path('records.csv')}"


def cmd_fit(run):
    family = run.cfg["model"]["family"]
    if family not in MODEL_FAMILIES:
        raise InputError(f"unknown model {family!r}; choose from {', '.join(MODEL_FAMILIES)}")
    records_path = run.input("records", "records.csv")
    graph = _graph(run, required=family in ("sgam", "ngam"))
    spec = None if family == "rf" else _model_spec(run.cfg, family)
    records = _read_records(records_path)
    run.start()
    if family == "rf":
        cfg = _forest_config(run.cfg, run.seed, run.threads)
        forest = grow_forest(records, cfg, n_regions=len(graph) if graph else None,
                             county_labels=graph.county_labels() if graph else None)
        save_forest(forest, run.path("forest.json"), run.metadata)
        run.write_text("importance.csv", format_importance(variable_importance(forest)))
        return f"fit: random forest of {cfg.n_trees} trees on {len(records)} records -> " \
               f"{run.path('forest.json')}"
    model = fit_model(records, spec, graph)
    save_model(model, run.path("model.json"), run.metadata)
    run.write_text("parametric.csv", format_scalings(summarize_parametric(model)))
    run.write_text("terms.csv", _terms_csv(model))
    dev = model.diagnostics.get("deviance_explained", float("nan"))
    return (f"fit: {family} on {len(records)} records, edf {model.edf_total:.1f}, "
            f"deviance explained {dev:.3f} -> {run.path('model.json')}")


def _terms_csv(model):
    lines = ["term,lambda,edf"]
    lam = dict(zip([t.label for t in model.terms if t.penalized], np.asarray(model.lambdas)))
    for t in model.terms:
        lv = lam.get(t.label)
        lines.append(f"{t.label},{'' if lv is None else repr(float(lv))},"
                     f"{float(model.edf.get(t.label, 0.0))!r}")
    return "\n".join(lines) + "\n"


def cmd_predict(run):
    model_path = run.input("model")
    records_path = run.input("records", "records.csv")
    kind, model = _load_artifact(model_path)
    records = _read_records(records_path)
    run.start()
    lines = ["id,price,predicted,lower_50,upper_50,lower_95,upper_95,error"]
    failed = 0
    if kind == "rf":
        preds = rf_predict(model, records)
    else:
        preds = predict(model, records)
    for r, p in zip(records, preds):
        if isinstance(p, PredictionError):
            failed += 1
            lines.append(f"{r.id},{r.price!r},,,,,,{_csv_cell(p.reason)}")
            continue
        (l5, u5), (l95, u95) = p.intervals[0.5], p.intervals[0.95]
        lines.append(f"{r.id},{r.price!r},{float(p.price)!r},{float(l5)!r},{float(u5)!r},"
                     f"{float(l95)!r},{float(u95)!r},")
    run.write_text("predictions.csv", "\n".join(lines) + "\n")
    return (f"predict: {len(records) - failed} of {len(records)} records priced -> "
            f"{run.path('predictions.csv')}")


def _csv_cell(s):
    return '"' + s.replace('"', '""') + '"' if any(c in s for c in ',"\n') else s


def cmd_cv(run):
    models = _models(run.cfg["cv"]["models"])
    records_path = run.input("records", "records.csv")
    graph = _graph(run, required=any(m in ("sgam", "ngam") for m in models))
    c = run.cfg["cv"]
    try:
        weights = WeightSpec(k=c["neighbours"], weighting=c["weighting"],
                             row_standardize=c["row_standardize"])
    except ValueError as exc:
        raise InputError(str(exc)) from None
    records = _read_records(records_path)
    if c["folds"] < 2 or c["folds"] > len(records):
        raise InputError(f"folds must lie in [2, {len(records)}]")
    run.start()
    # parallelise over folds when there are several; otherwise inside the forest
    fold_threads = run.threads if len(models) * c["folds"] > 1 else 1
    forest_threads = 1 if fold_threads > 1 else run.threads
    res = kfold_cv(records, models, k=c["folds"], seed=run.seed, graph=graph,
                   spec_overrides=_spec_overrides(run.cfg),
                   forest_config=_forest_config(run.cfg, run.seed, forest_threads),
                   weights=weights, n_threads=fold_threads, moran_permutations=c["permutations"])
    run.write_text("metrics.csv", metrics_csv(res.national, res.per_fold))
    run.write_text("submarkets.csv", submarket_csv(res.submarkets))
    run.write_text("comparison.txt", "National\n\n" + comparison_table(res.national)
                   + "\nBy submarket\n\n" + submarket_table(res.submarkets))
    lines = ["model,morans_i,p_value,expected,n"]
    for m, mr in res.morans.items():
        lines.append(f"{m},{mr.i:.6f},{mr.p_value:.6f},{mr.expected:.6f},{mr.n}")
    run.write_text("morans.csv", "\n".join(lines) + "\n")
    run.write_text("heldout.csv", _heldout_csv(res))
    best = max(models, key=lambda m: res.national[m].r2)
    return (f"cv: {len(models)} model(s) x {c['folds']} folds on {len(records)} records, "
            f"best R2 {res.national[best].r2:.3f} ({best}) -> {run.path('comparison.txt')}")


def _heldout_csv(res):
    lines = ["model,id,fold,submarket,price,predicted,lower_50,upper_50,lower_95,upper_95"]
    for m, h in res.heldout.items():
        for i, rid in enumerate(h.ids):
            if not h.ok[i]:
                lines.append(f"{m},{rid},{h.fold[i]},{h.submarket[i]},{h.actual[i]!r},,,,,")
                continue
            iv = [float(h.intervals[lv][j][i]) for lv in (0.5, 0.95) for j in (0, 1)]
            lines.append(f"{m},{rid},{h.fold[i]},{h.submarket[i]},{h.actual[i]!r},"
                         f"{float(h.pred[i])!r}," + ",".join(repr(v) for v in iv))
    return "\n".join(lines) + "\n"


def cmd_knots(run):
    family = run.cfg["model"]["family"]
    if family not in ("sgam", "ngam"):
        raise InputError("knot selection needs --model sgam or ngam")
    term = run.cfg["knots"]["term"]
    if term not in ("size", "location"):
        raise InputError("--term must be size or location")
    try:
        ks = [int(v) for v in run.cfg["knots"]["candidates"].split(",") if v.strip()]
    except ValueError:
        raise InputError("--candidates must be comma-separated integers") from None
    records_path = run.input("records", "records.csv")
    graph = _graph(run, required=True)
    records = _read_records(records_path)
    run.start()
    overrides = _spec_overrides(run.cfg)
    curve = knot_selection_cv(records, term, ks, k=run.cfg["cv"]["folds"], seed=run.seed,
                              graph=graph, family=family, spec_overrides=overrides,
                              n_threads=run.threads)
    run.write_text(f"knots_{term}.csv", knot_curve_csv(curve))
    return f"knots: {term} suggested k={curve.suggested} -> {run.path(f'knots_{term}.csv')}"


def cmd_surfaces(run):
    kind, model = _load_artifact(run.input("model"))
    if kind != "gam" or not model.spec.has_smooths:
        raise InputError("surfaces need a fitted sgam or ngam model")
    graph = _graph(run, required=True)
    cell = run.cfg["surfaces"]["cell_m"]
    if not cell > 0:
        raise InputError("--cell-m must be positive")
    run.start()
    lines = ["term,x,fit,se,lower,upper"]
    for t in model.terms:
        if t.kind == "smooth" and t.variable in ("beds", "baths", "size", "month"):
            c = extract_smooth(model, t.variable, t.by)
            for row in zip(c.x, c.fit, c.se, c.lower, c.upper):
                lines.append(f"{c.label}," + ",".join(repr(float(v)) for v in row))
    run.write_text("smooths.csv", "\n".join(lines) + "\n")

    infl = monthly_inflation(model)
    lines = ["group," + ",".join(f"m{m}" for m in range(1, 13))]
    for g, v in infl.items():
        lines.append(f"{g}," + ",".join(repr(float(x)) for x in v))
    run.write_text("inflation.csv", "\n".join(lines) + "\n")

    boxes = np.array([p.bbox() for p in graph.polygons])
    x0, y0 = project_web_mercator(boxes[:, 0].min(), boxes[:, 1].min())
    x1, y1 = project_web_mercator(boxes[:, 2].max(), boxes[:, 3].max())
    gx = np.arange(float(x0) + cell / 2, float(x1), cell)
    gy = np.arange(float(y0) + cell / 2, float(y1), cell)
    surf = extract_spatial_surface(model, graph, gx, gy)
    for name in ("gp", "mrf", "fused"):
        buf = _StringWriter()
        write_raster(surf, name, buf)
        run.write_text(f"surface_{name}.csv", buf.text)
    n_cells = int(np.isfinite(surf.fused).sum())
    return f"surfaces: {len(infl)} inflation series, {n_cells} raster cells -> {run.out}"


def cmd_report(run):
    kind, model = _load_artifact(run.input("model"))
    run.start()
    if kind == "rf":
        text = format_importance(variable_importance(model))
        run.write_text("report.csv", text)
        return f"report: importance of {len(model.schema.names)} features -> {run.path('report.csv')}"
    parts = [f"family: {model.spec.family}",
             f"coefficients: {len(model.coef)}",
             f"total edf: {model.edf_total:.3f}",
             f"residual variance: {model.sigma2:.6g}"]
    for k, v in sorted(model.diagnostics.items()):
        parts.append(f"{k}: {v}")
    rows = summarize_parametric(model)
    width = max([len(f"{r.term} {r.level}") for r in rows] + [4])
    parts.append("")
    parts.append("Multiplicative effects on price per m2 (95% intervals)")
    for r in rows:
        parts.append(f"  {(r.term + ' ' + r.level).ljust(width)}  {r.formatted()}")
    parts.append("")
    parts.append("Smoothing parameters and effective degrees of freedom")
    parts.append(_terms_csv(model).rstrip("\n"))
    run.write_text("report.txt", "\n".join(parts) + "\n")
    return f"report: {len(rows)} parametric effects -> {run.path('report.txt')}"


class _StringWriter:
    def __init__(self):
        self._parts = []

    def write(self, s):
        self._parts.append(s)

    @property
    def text(self):
        return "".join(self._parts)


COMMANDS = {
    "ingest": cmd_ingest, "simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
    "cv": cmd_cv, "knots": cmd_knots, "surfaces": cmd_surfaces, "report": cmd_report,
}


def run(argv=None, environ=None) -> int:
    """Execute one subcommand; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args, environ)
        level = getattr(logging, str(cfg["run"]["log_level"]).upper(), None)
        if not isinstance(level, int):
            raise InputError(f"unknown log level {cfg['run']['log_level']!r}")
        _configure_logging(level)
        summary = COMMANDS[args.command](Run(args.command, cfg))
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except (InputError, HeaderError, ConfigError, ValueError, KeyError, OSError) as exc:
        log.error("input error: %s", exc)
        return 1
    print(summary)
    return 0


def _configure_logging(level):
    root = logging.getLogger("propval")
    root.setLevel(level)
    for h in [h for h in root.handlers if getattr(h, "_propval", False)]:
        root.removeHandler(h)
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    h._propval = True
    root.addHandler(h)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
