"""Command-line pipelines: ``synth``, ``calibrate``, ``evaluate``, ``sweep``, ``theory-sweep``.

Exit codes: 0 success, 2 config error, 3 data error, 4 hash mismatch.
"""

import argparse
import copy
import hashlib
import json
import os
import re
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import approx
from .conformal import ConformalWarning, HashMismatchError, calibration_from_files, calibration_to_files
from .forward import Normalization, SceneConfig, canonical_hash, delta_psf, gaussian_psf, image_peak_snr
from .forward import make_experiment_data
from .metric import ChemEstimator, hallucination_map, perturbation_sweep, standardize_scores
from .raster import read_raster, write_pgm, write_raster
from .reconstructors import make_reconstructor

OUTPUT_ROOT_ENV = "CHEM_OUTPUT_ROOT"
MANIFEST_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_HASH = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


DEFAULT_CONFIG = {
    "scene": SceneConfig().to_dict(),
    "fwhm": 15.0,
    "test_fwhm": None,
    "noise_sigma": "auto",
    "seed": 0,
    "splits": {"init": 100, "calibration": 100, "test": 100},
    "model": "tikhonov:sure",
    "transform": "db8",
    "levels": 4,
    "scales": 3,
    "shear_levels": [1, 2, 2],
    "normalize": "auto",
    "alpha": 0.01,
    "theta": 1.0,
    "delta": 0.05,
    "family": "multiplicative",
    "bounds": [0.0, 1e6],
    "eps": 1e-12,
    "batch_size": 16,
    "maps": {"mode": "across", "threshold": 0.5, "scale_count": 2},
    "sweep": {"models": ["tikhonov:sure"], "fwhms": [15.0, 20.0, 25.0], "reference": None},
    "theory": {
        "kind": "bernstein",
        "operator": "identity",
        "fields": ["square", "sin3", "linear2", "radial"],
        "ms": [2, 4, 8, 16, 32],
        "budget": 100000,
        "seed": 0,
    },
    "output": "chem-out",
}

# flag -> (config path, parser)
FLAGS = {
    "--side": ("scene.side", int),
    "--scene-seed": ("scene.seed", int),
    "--fwhm": ("fwhm", float),
    "--test-fwhm": ("test_fwhm", float),
    "--noise-sigma": ("noise_sigma", lambda v: v if v == "auto" else float(v)),
    "--seed": ("seed", int),
    "--n-init": ("splits.init", int),
    "--n-calibration": ("splits.calibration", int),
    "--n-test": ("splits.test", int),
    "--model": ("model", str),
    "--transform": ("transform", str),
    "--levels": ("levels", int),
    "--alpha": ("alpha", float),
    "--theta": ("theta", float),
    "--delta": ("delta", float),
    "--family": ("family", str),
    "--output": ("output", str),
}


# -- config -------------------------------------------------------------------


def _merge(base, override, path=""):
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], value, where + ".")
        else:
            base[key] = value


def _set_path(cfg, dotted, value):
    *parents, leaf = dotted.split(".")
    node = cfg
    for p in parents:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[p]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = value


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    """Defaults, then the JSON file, then ``(dotted_key, value)`` overrides."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        _merge(cfg, doc)
    for key, value in overrides:
        _set_path(cfg, key, value)
    try:
        validate_config(cfg)
    except TypeError as exc:
        raise ConfigError(f"config value has the wrong type: {exc}") from exc
    return cfg


def _scene(cfg):
    try:
        return SceneConfig.from_dict(cfg["scene"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scene config: {exc}") from exc


def _psf(side, fwhm):
    return delta_psf(side) if fwhm == 0 else gaussian_psf(side, fwhm)


def estimator_params(cfg):
    return {
        "transform": cfg["transform"],
        "levels": cfg["levels"],
        "scales": cfg["scales"],
        "shear_levels": tuple(cfg["shear_levels"]),
        "normalize": cfg["normalize"],
        "alpha": cfg["alpha"],
        "theta": cfg["theta"],
        "family": cfg["family"],
        "bounds": tuple(cfg["bounds"]),
        "eps": cfg["eps"],
        "batch_size": cfg["batch_size"],
        "n_init": cfg["splits"]["init"],
    }


def validate_config(cfg):
    if not 0 < cfg["alpha"] < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {cfg['alpha']!r}")
    if not cfg["theta"] > 0:
        raise ConfigError(f"theta must be positive, got {cfg['theta']!r}")
    if not 0 < cfg["delta"] < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {cfg['delta']!r}")
    for name, n in cfg["splits"].items():
        if not isinstance(n, int) or n < 1:
            raise ConfigError(f"split size {name!r} must be an integer >= 1, got {n!r}")
    if not cfg["fwhm"] >= 0 or cfg["test_fwhm"] is not None and not cfg["test_fwhm"] >= 0:
        raise ConfigError("psf widths must be non-negative")
    if cfg["noise_sigma"] != "auto" and not (isinstance(cfg["noise_sigma"], (int, float)) and cfg["noise_sigma"] >= 0):
        raise ConfigError(f"noise_sigma must be 'auto' or a non-negative number, got {cfg['noise_sigma']!r}")
    scene = _scene(cfg)
    try:
        ChemEstimator(**estimator_params(cfg)).expected_transform_hash((scene.side, scene.side))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad transform config: {exc}") from exc
    psf = _psf(scene.side, cfg["fwhm"])
    for ident in [cfg["model"]] + list(cfg["sweep"]["models"]):
        try:
            make_reconstructor(ident, psf, 0.1)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad model id {ident!r}: {exc}") from exc
    if cfg["maps"]["mode"] not in ("across", "per_image"):
        raise ConfigError(f"unknown map standardization {cfg['maps']['mode']!r}")
    if cfg["theory"]["kind"] not in ("bernstein", "discretization"):
        raise ConfigError(f"theory kind must be 'bernstein' or 'discretization', got {cfg['theory']['kind']!r}")


def config_hash(cfg):
    """Hash of everything except the output location."""
    return canonical_hash({k: v for k, v in cfg.items() if k != "output"})


def output_root(cfg):
    root = Path(cfg["output"])
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env and not root.is_absolute():
        root = Path(env) / root
    return root


# -- files ----------------------------------------------------------------------


def _sha256_file(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def _write_json(path, doc):
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    with open(path, "w") as f:
        f.write(text)
    return text


def _mkdir(path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise DataError(f"output directory {path} is not writable")
    return path


def load_manifest(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    if doc.get("version") != MANIFEST_VERSION or "pairs" not in doc:
        raise DataError(f"{path} is not a dataset manifest")
    return doc


def load_split(manifest_path, manifest, split):
    """Stacked ``(X, Y)`` of one split, verifying every raster's digest."""
    base = Path(manifest_path).parent
    X, Y = [], []
    for pair in manifest["pairs"]:
        if pair["split"] != split:
            continue
        for key, out in (("x", X), ("y", Y)):
            path = base / pair[key]
            try:
                digest = _sha256_file(path)
            except OSError as exc:
                raise DataError(f"cannot read raster {path}: {exc}") from exc
            if digest != pair[f"sha256_{key}"]:
                raise HashMismatchError(f"raster {path} does not match its manifest digest")
            try:
                out.append(read_raster(path))
            except ValueError as exc:
                raise DataError(f"bad raster {path}: {exc}") from exc
    if not X:
        raise DataError(f"manifest has no {split!r} pairs")
    return np.stack(X), np.stack(Y)


# -- commands ---------------------------------------------------------------------


def cmd_synth(cfg, out=None):
    """Write raster pairs for every split and a manifest describing them."""
    out = _mkdir(Path(out) if out else output_root(cfg) / "dataset")
    scene = _scene(cfg)
    splits = cfg["splits"]
    psf = _psf(scene.side, cfg["fwhm"])
    test_fwhm = cfg["fwhm"] if cfg["test_fwhm"] is None else cfg["test_fwhm"]
    test_psf = _psf(scene.side, test_fwhm)
    try:
        cal, test = make_experiment_data(scene, psf, splits["init"] + splits["calibration"], splits["test"],
                                         cfg["noise_sigma"], cfg["seed"], test_psf)
    except ValueError as exc:
        raise DataError(f"cannot synthesize dataset: {exc}") from exc
    _mkdir(out / "pairs")
    pairs = []
    for data, split_of in ((cal, lambda i: "init" if i < splits["init"] else "calibration"), (test, lambda i: "test")):
        snr = data.manifest["peak_snr"].get("image_peak")
        for i in range(len(data)):
            split = split_of(i)
            stem = f"{split}_{i:05d}"
            entry = {"index": i, "split": split, "fwhm": data.psf.fwhm,
                     "scene_seed": data.manifest["sample_seeds"][i], "noise_seed": data.manifest["noise_seeds"][i],
                     "peak_snr": None if snr is None else snr[i]}
            for key, img in (("x", data.X[i]), ("y", data.Y[i])):
                rel = f"pairs/{stem}_{key}.chem"
                entry[key] = rel
                entry[f"sha256_{key}"] = hashlib.sha256(write_raster(out / rel, img)).hexdigest()
            pairs.append(entry)
    snr_all = [p["peak_snr"] for p in pairs if p["peak_snr"] is not None]
    manifest = {
        "version": MANIFEST_VERSION,
        "config_hash": config_hash(cfg),
        "side": scene.side,
        "psf": psf.describe(),
        "test_psf": test_psf.describe(),
        "noise_sigma": cal.noise_sigma,
        "noise_sigma_normalized": cal.noise_sigma_normalized,
        "normalization": {"offset": cal.normalization.offset, "scale": cal.normalization.scale},
        "splits": dict(splits),
        "seeds": {"scene": scene.seed, "test_scene": scene.seed + 1, "noise": cfg["seed"], "test_noise": cfg["seed"] + 1},
        "peak_snr": {
            "min": min(snr_all) if snr_all else None,
            "max": max(snr_all) if snr_all else None,
            "calibration_sources": cal.manifest["peak_snr"],
            "test_sources": test.manifest["peak_snr"],
        },
        "pairs": pairs,
    }
    _write_json(out / "manifest.json", manifest)
    print(f"synth: {len(pairs)} pairs -> {out}")
    return out / "manifest.json"


def recompute_peak_snr(manifest_path):
    """Peak S/N of every pair recomputed from its truth raster."""
    manifest = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    norm = Normalization(**manifest["normalization"])
    side = manifest["side"]
    out = []
    for pair in manifest["pairs"]:
        Y = read_raster(base / pair["y"])[None]
        out.append(float(image_peak_snr(Y, _psf(side, pair["fwhm"]), manifest["noise_sigma"], norm)[0]))
    return out


def _model(cfg, manifest, ident=None):
    psf = _psf(manifest["side"], manifest["psf"]["fwhm"])
    return make_reconstructor(ident or cfg["model"], psf, manifest["noise_sigma_normalized"])


def _check_shape(manifest, cfg):
    if manifest["side"] != cfg["scene"]["side"]:
        raise ConfigError(f"dataset side {manifest['side']} differs from configured side {cfg['scene']['side']}")


def cmd_calibrate(cfg, dataset=None, out=None):
    """Fit radii and lambdas on the init and calibration splits; write the sidecar."""
    root = output_root(cfg)
    manifest_path = Path(dataset) if dataset else root / "dataset" / "manifest.json"
    manifest = load_manifest(manifest_path)
    _check_shape(manifest, cfg)
    X1, Y1 = load_split(manifest_path, manifest, "init")
    X2, Y2 = load_split(manifest_path, manifest, "calibration")
    est = ChemEstimator(model=_model(cfg, manifest), **estimator_params(cfg))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConformalWarning)
        est.fit_split(X1, Y1, X2, Y2)
    cal = est.calibration_
    meta = dict(cal.meta)
    meta.update({"config_hash": config_hash(cfg), "dataset_hash": _sha256_file(manifest_path)})
    records = list(cal.warnings) + [str(w.message) for w in caught if str(w.message) not in cal.warnings]
    meta["warning_records"] = records
    cal = replace(cal, meta=meta)
    out = _mkdir(Path(out) if out else root / "calibration")
    calibration_to_files(cal, out / "calibration.json", out / "calibration.bin")
    diag = cal.diagnostics()
    print(f"calibrate: N={diag['n_samples']} level={diag['level']!r} "
          f"clipped_low={diag['clipped_low']!r} clipped_high={diag['clipped_high']!r}")
    for w in records:
        print(f"warning: {w}", file=sys.stderr)
    return out / "calibration.json"


def cmd_evaluate(cfg, dataset=None, calibration=None, out=None, maps=False):
    """Score the configured model on the test split against a stored calibration."""
    root = output_root(cfg)
    manifest_path = Path(dataset) if dataset else root / "dataset" / "manifest.json"
    cal_path = Path(calibration) if calibration else root / "calibration" / "calibration.json"
    manifest = load_manifest(manifest_path)
    _check_shape(manifest, cfg)
    try:
        cal = calibration_from_files(cal_path)
    except HashMismatchError:
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read calibration {cal_path}: {exc}") from exc
    side = manifest["side"]
    expected = ChemEstimator(**estimator_params(cfg)).expected_transform_hash((side, side))
    if cal.meta.get("transform_hash") != expected:
        raise HashMismatchError("calibration transform hash does not match the configured transform")
    if cal.meta.get("dataset_hash") != _sha256_file(manifest_path):
        raise HashMismatchError("calibration was fitted on a different dataset manifest")
    params = {k: v for k, v in estimator_params(cfg).items()
              if k not in ("alpha", "family", "bounds", "eps", "transform", "levels", "scales", "shear_levels")}
    model = _model(cfg, manifest)
    est = ChemEstimator.from_calibration(cal, model, **params)
    X, Y = load_split(manifest_path, manifest, "test")
    P = model.predict(X)
    report = est.evaluate(X, Y, model=model, delta=cfg["delta"], predictions=P)
    out = _mkdir(Path(out) if out else root / "evaluation")
    blob = report.per_coefficient.astype("<f8").tobytes()
    with open(out / "report.bin", "wb") as f:
        f.write(blob)
    doc = report.to_dict()
    doc.update({
        "mse": float(np.mean((P - Y) ** 2)),
        "config_hash": config_hash(cfg),
        "dataset_hash": _sha256_file(manifest_path),
        "calibration_hash": _sha256_file(cal_path),
        "per_coefficient": {"file": "report.bin", "dtype": "<f8", "n": int(report.per_coefficient.size),
                            "sha256": hashlib.sha256(blob).hexdigest()},
    })
    if maps:
        m = cfg["maps"]
        z = standardize_scores(report, m["mode"])
        img = hallucination_map(z, est.layout_, est.transform_, m["scale_count"], m["threshold"])
        raster = write_raster(out / "map.chem", img)
        lo, hi = write_pgm(out / "map.pgm", img)
        doc["map"] = {"file": "map.chem", "sha256": hashlib.sha256(raster).hexdigest(), "pgm": "map.pgm",
                      "pgm_low": lo, "pgm_high": hi, **m}
    _write_json(out / "report.json", doc)
    print(f"evaluate: CHEM={report.aggregate!r} hoeffding={report.hoeffding!r} mse={doc['mse']!r}")
    return out / "report.json"


def cmd_sweep(cfg, out=None):
    """Perturbation sweep over the configured models and PSF widths; writes a CSV."""
    scene = _scene(cfg)
    s = cfg["sweep"]
    splits = cfg["splits"]
    try:
        result = perturbation_sweep(s["models"], s["fwhms"], scene, splits["init"] + splits["calibration"],
                                    splits["test"], cfg["fwhm"], cfg["noise_sigma"],
                                    ChemEstimator(**estimator_params(cfg)), s["reference"], cfg["seed"])
    except ValueError as exc:
        raise DataError(f"sweep failed: {exc}") from exc
    out = _mkdir(Path(out) if out else output_root(cfg) / "sweep")
    result.to_csv(out / "sweep.csv")
    _write_json(out / "sweep.json", {"config_hash": config_hash(cfg), "transform_hash": result.transform,
                                      "csv_sha256": _sha256_file(out / "sweep.csv")})
    print(f"sweep: {len(result.rows)} rows -> {out / 'sweep.csv'}")
    return out / "sweep.csv"


_FIELD = re.compile(r"^(sin|linear)(-?\d+(?:\.\d+)?)(?:@(\d+))?$")


def parse_field(spec):
    """``square``, ``radial``, ``sin<a>`` or ``linear<slope>[@d]``."""
    if spec == "square":
        return approx.square_field()
    if spec == "radial":
        return approx.radial_square_field()
    m = _FIELD.match(spec)
    if m is None:
        raise ConfigError(f"unknown field {spec!r}")
    kind, value, d = m.group(1), float(m.group(2)), m.group(3)
    if kind == "sin":
        if d is not None:
            raise ConfigError("sine fields are one-dimensional")
        return approx.sine_field(value)
    return approx.linear_field(value, int(d or 1), name=spec)


def parse_operator(spec, d):
    """``identity``, ``softclip[:level]`` or ``smooth[:width]``."""
    name, _, arg = spec.partition(":")
    if name == "identity" and not arg:
        return approx.IdentityOperator()
    if name == "softclip":
        return approx.soft_clip(float(arg) if arg else 1.0)
    if name == "smooth":
        return approx.box_smoother(d, float(arg) if arg else 0.1)
    raise ConfigError(f"unknown operator {spec!r}")


def cmd_theory_sweep(cfg, out=None):
    """Approximation error table for the Bernstein projector or the discretization bound."""
    t = cfg["theory"]
    fields = [parse_field(f) for f in t["fields"]]
    ms = [int(m) for m in t["ms"]]
    if not ms or min(ms) < 1:
        raise ConfigError("theory sweep degrees must be >= 1")
    if t["kind"] == "bernstein":
        table = approx.bernstein_error_sweep(fields, ms, budget=t["budget"], seed=t["seed"])
    else:
        rows = []
        for f in fields:
            op = parse_operator(t["operator"], f.d)
            rows += approx.discretization_error_sweep(op, [f], ms, budget=t["budget"], seed=t["seed"]).rows
        table = approx.ErrorTable(rows)
    out = _mkdir(Path(out) if out else output_root(cfg) / "theory")
    table.to_csv(out / "theory.csv")
    print(f"theory-sweep: {len(table.rows)} rows, {len(table.violations())} bound violations")
    return out / "theory.csv"


# -- entry point ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="chem", description="Conformal hallucination scoring pipelines.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry by dotted key; VALUE is parsed as JSON when possible")
        for flag in FLAGS:
            p.add_argument(flag, dest="flag_" + flag[2:].replace("-", "_"), metavar=flag[2:].replace("-", "_").upper())
        p.add_argument("--out", help="directory for this command's artifacts")
        return p

    common(sub.add_parser("synth", help="synthesize a dataset"))
    p = common(sub.add_parser("calibrate", help="calibrate coefficient intervals"))
    p.add_argument("--dataset", help="dataset manifest path")
    p = common(sub.add_parser("evaluate", help="score a model against a calibration"))
    p.add_argument("--dataset", help="dataset manifest path")
    p.add_argument("--calibration", help="calibration JSON path")
    p.add_argument("--maps", action="store_true", help="also write hallucination-map rasters")
    p = common(sub.add_parser("sweep", help="PSF perturbation sweep"))
    p.add_argument("--models", help="comma-separated model ids")
    p.add_argument("--fwhms", help="comma-separated PSF widths")
    p = common(sub.add_parser("theory-sweep", help="approximation bound sweep"))
    p.add_argument("--kind", choices=["bernstein", "discretization"])
    p.add_argument("--operator")
    p.add_argument("--fields", help="comma-separated field specs")
    p.add_argument("--ms", help="comma-separated polynomial degrees")
    return parser


def _overrides(args):
    pairs = []
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        pairs.append((key, _parse_value(value)))
    for flag, (key, parse) in FLAGS.items():
        raw = getattr(args, "flag_" + flag[2:].replace("-", "_"))
        if raw is not None:
            try:
                pairs.append((key, parse(raw)))
            except ValueError as exc:
                raise ConfigError(f"bad value for {flag}: {raw!r}") from exc
    lists = {"models": ("sweep.models", str), "fwhms": ("sweep.fwhms", float),
             "fields": ("theory.fields", str), "ms": ("theory.ms", int)}
    for name, (key, parse) in lists.items():
        raw = getattr(args, name, None)
        if raw is not None:
            try:
                pairs.append((key, [parse(v) for v in raw.split(",") if v]))
            except ValueError as exc:
                raise ConfigError(f"bad value for --{name}: {raw!r}") from exc
    for name in ("kind", "operator"):
        if getattr(args, name, None) is not None:
            pairs.append((f"theory.{name}", getattr(args, name)))
    return pairs


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "calibrate":
            cmd_calibrate(cfg, args.dataset, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.dataset, args.calibration, args.out, args.maps)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.out)
        else:
            cmd_theory_sweep(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HashMismatchError as exc:
        print(f"hash mismatch: {exc}", file=sys.stderr)
        return EXIT_HASH
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
