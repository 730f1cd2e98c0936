"""Command-line pipeline: preprocess, train, build-library, predict, evaluate.

Options resolve in this order: built-in defaults, then the dataset preset,
then the JSON config file, then explicit flags (flags always win). Exit codes:
0 success, 1 usage error, 2 validation or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ingest, metrics, model, priors, similarity
from .errors import NumericError, ParseError, ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

EMA_LAMBDA_DEFAULT = 0.9
EPSILON_DEFAULT = priors.DEFAULT_EPSILON
K_DEFAULT = 30


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----- option resolution ----------------------------------------------------


# Settings a config file may supply; anything else in the file is rejected to
# catch typos early.
_CONFIG_KEYS = {
    "dataset", "data_dir", "train_file", "test_file", "rul_file", "out", "seed",
    "epochs", "batch_size", "window_length", "codebook_size", "ema_lambda",
    "epsilon", "k", "cap", "sensor_indices", "include_settings", "latent_len",
    "latent_dim", "model_dim", "enc_layers", "enc_heads", "dec_layers",
    "dec_heads", "ffn_hidden", "beta", "learning_rate", "tol", "max_iter",
    "one_based_positions",
}

_PRESET_LAMBDAS = {name: preset["ema_lambda"] for name, preset in model.PRESETS.items()}


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"config file not found: {p}")
    doc = json.loads(p.read_text())
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return doc


def _resolve(args) -> dict:
    """Merge defaults, preset, config file, and flags into one settings dict."""
    settings = {
        "data_dir": ".",
        "out": "out",
        "seed": 0,
        "ema_lambda": None,   # stays None unless a preset, config file, or flag sets it
        "epsilon": None,
        "k": K_DEFAULT,
        "cap": 125.0,
        "sensor_indices": list(ingest.DEFAULT_SENSORS),
        "include_settings": 3,
        "tol": priors.DEFAULT_TOL,
        "max_iter": priors.DEFAULT_MAX_ITER,
    }
    settings.update(_load_config_file(getattr(args, "config", None)))
    for key in _CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    dataset = settings.get("dataset")
    if settings.get("ema_lambda") is None and dataset is not None:
        settings["ema_lambda"] = _PRESET_LAMBDAS[dataset]
    return settings


def _model_overrides(settings) -> dict:
    keys = (
        "window_length", "epochs", "batch_size", "codebook_size", "latent_len",
        "latent_dim", "model_dim", "enc_layers", "enc_heads", "dec_layers",
        "dec_heads", "ffn_hidden", "beta", "learning_rate", "seed",
        "one_based_positions",
    )
    overrides = {k: settings.get(k) for k in keys if settings.get(k) is not None}
    if settings.get("cap") is not None:
        overrides["rul_cap"] = settings["cap"]
    return overrides


def _input_paths(settings) -> dict:
    dataset = settings.get("dataset")
    if dataset is not None:
        if dataset not in model.PRESETS:
            raise ValidationError(f"unknown dataset '{dataset}' (expected FD001..FD004)")
        base = Path(settings["data_dir"])
        return {
            "train": base / f"train_{dataset}.txt",
            "test": base / f"test_{dataset}.txt",
            "rul": base / f"RUL_{dataset}.txt",
        }
    paths = {}
    for key, name in (("train_file", "train"), ("test_file", "test"), ("rul_file", "rul")):
        if settings.get(key):
            paths[name] = Path(settings[key])
    if "train" not in paths:
        raise ValidationError("either --dataset or --train-file is required")
    return paths


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise ValidationError(f"{what} not found: {path}")
    return Path(path)


def _out_dir(settings) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----- subcommands -------------------------------------------------------------


def cmd_preprocess(args) -> int:
    settings = _resolve(args)
    paths = _input_paths(settings)
    out = _out_dir(settings)
    spec = ingest.FeatureSpec(
        sensor_indices=tuple(settings["sensor_indices"]),
        include_settings=settings["include_settings"],
    )
    window_length = settings.get("window_length")
    if window_length is None:
        raise ValidationError("window length is required (preset, config file, or --window)")
    cap = settings["cap"]

    with open(_require(paths["train"], "training file")) as fh:
        train_series = ingest.parse_cmapss(fh, run_to_failure=True)
    train_ds = ingest.build_dataset(
        train_series, "train", window_length, spec,
        ingest.fit_minmax(train_series, spec), cap,
    )
    ingest.save_dataset(train_ds, out / "train_windows.json")
    print(f"train: {len(train_ds.units)} units, {len(train_ds.all_windows())} windows")

    if "test" in paths:
        if "rul" not in paths:
            raise ValidationError(f"RUL file required for test set (expected {paths.get('rul', '--rul-file')})")
        with open(_require(paths["test"], "test file")) as fh:
            test_series = ingest.parse_cmapss(fh, run_to_failure=False)
        with open(_require(paths["rul"], "RUL file")) as fh:
            ingest.attach_truth_rul(test_series, fh)
        test_ds = ingest.build_dataset(
            test_series, "test", window_length, spec, train_ds.stats, cap
        )
        ingest.save_dataset(test_ds, out / "test_windows.json")
        print(f"test: {len(test_ds.units)} units, {len(test_ds.all_windows())} windows")
    return EXIT_OK


def cmd_train(args) -> int:
    settings = _resolve(args)
    out = _out_dir(settings)
    windows_path = Path(args.windows) if args.windows else out / "train_windows.json"
    dataset = ingest.load_dataset(_require(windows_path, "training windows"))
    overrides = _model_overrides(settings)
    overrides.setdefault("window_length", dataset.window_length)
    if overrides["window_length"] != dataset.window_length:
        raise ValidationError(
            f"window length {overrides['window_length']} does not match "
            f"preprocessed windows ({dataset.window_length})"
        )
    config = model.make_config(
        settings.get("dataset"), dataset.feature_spec.n_features, overrides
    )
    trained = model.train(
        dataset.all_windows(), config, dataset.feature_spec, dataset.stats,
        progress=lambda e: print(f"epoch {e['epoch']}: loss {e['loss']:.6f}"),
    )
    trained.save(out / "model.json")
    lines = ["epoch,loss,task,codebook,commitment"]
    lines += [
        f"{e['epoch']},{e['loss']!r},{e['task']!r},{e['codebook']!r},{e['commitment']!r}"
        for e in trained.train_log
    ]
    (out / "training_log.csv").write_text("\n".join(lines) + "\n")
    print(f"model written to {out / 'model.json'}")
    return EXIT_OK


def _check_windows_compatible(trained: model.TrainedModel, dataset: ingest.WindowedDataset):
    if dataset.window_length != trained.config.window_length:
        raise ValidationError(
            f"windows have length {dataset.window_length}, model expects "
            f"{trained.config.window_length}"
        )
    if dataset.feature_spec != trained.feature_spec:
        raise ValidationError("feature spec of windows does not match the model")
    if not (
        np.array_equal(dataset.stats.minimum, trained.stats.minimum)
        and np.array_equal(dataset.stats.maximum, trained.stats.maximum)
    ):
        raise ValidationError("normalization stats of windows do not match the model")


def cmd_build_library(args) -> int:
    settings = _resolve(args)
    out = _out_dir(settings)
    model_path = Path(args.model) if args.model else out / "model.json"
    windows_path = Path(args.windows) if args.windows else out / "train_windows.json"
    trained = model.TrainedModel.load(_require(model_path, "model file"))
    dataset = ingest.load_dataset(_require(windows_path, "training windows"))
    _check_windows_compatible(trained, dataset)

    lam = settings["ema_lambda"] if settings["ema_lambda"] is not None else EMA_LAMBDA_DEFAULT
    eps = settings["epsilon"] if settings["epsilon"] is not None else EPSILON_DEFAULT
    library = similarity.PriorLibrary(
        n_states=trained.config.codebook_size,
        config_digest=trained.config_digest(),
        ema_lambda=lam,
        epsilon=eps,
    )
    for unit in dataset.units:
        folded = priors.priors_for_system(
            unit.windows, trained, lam, eps, settings["tol"], settings["max_iter"]
        )
        for window, (window_id, ss) in zip(unit.windows, folded):
            library.add(unit.unit_id, window_id, ss.pi, window.rul_target)
    library.save(out / "library.json")
    print(f"library written: {len(library)} entries, {library.n_states} states")
    return EXIT_OK


def cmd_predict(args) -> int:
    settings = _resolve(args)
    out = _out_dir(settings)
    model_path = Path(args.model) if args.model else out / "model.json"
    library_path = Path(args.library) if args.library else out / "library.json"
    windows_path = Path(args.windows) if args.windows else out / "test_windows.json"
    trained = model.TrainedModel.load(_require(model_path, "model file"))
    library = similarity.PriorLibrary.load(_require(library_path, "library file"))
    dataset = ingest.load_dataset(_require(windows_path, "test windows"))
    _check_windows_compatible(trained, dataset)
    if library.n_states != trained.config.codebook_size:
        raise ValidationError(
            f"library has {library.n_states} states, model codebook has "
            f"{trained.config.codebook_size}"
        )
    if library.config_digest and library.config_digest != trained.config_digest():
        raise ValidationError("library was built from a different model (digest mismatch)")

    lam = settings["ema_lambda"] if settings["ema_lambda"] is not None else library.ema_lambda
    eps = settings["epsilon"] if settings["epsilon"] is not None else library.epsilon
    k = settings["k"]
    rows = []
    trajectory_rows = []
    for unit in dataset.units:
        folded = priors.priors_for_system(
            unit.windows, trained, lam, eps, settings["tol"], settings["max_iter"]
        )
        if args.intermediate_predictions:
            for window_id, ss in folded:
                neighbors = similarity.nearest(ss.pi, library, k)
                trajectory_rows.append(
                    (unit.unit_id, window_id, similarity.predict_rul(neighbors))
                )
        final_pi = folded[-1][1].pi
        neighbors = similarity.nearest(final_pi, library, k)
        rows.append((unit.unit_id, similarity.predict_rul(neighbors)))

    lines = ["unit_id,predicted_rul"] + [f"{u},{p!r}" for u, p in rows]
    (out / "predictions.csv").write_text("\n".join(lines) + "\n")
    print(f"predictions written for {len(rows)} units")
    if args.intermediate_predictions:
        lines = ["unit_id,window_id,predicted_rul"]
        lines += [f"{u},{w},{p!r}" for u, w, p in trajectory_rows]
        (out / "trajectories.csv").write_text("\n".join(lines) + "\n")
        print(f"per-window trajectories written for {len(trajectory_rows)} windows")
    return EXIT_OK


def _read_predictions(path) -> dict:
    rows = {}
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "unit_id,predicted_rul":
        raise ValidationError(f"{path}: not a predictions file")
    for line in lines[1:]:
        unit, value = line.split(",")
        rows[int(unit)] = float(value)
    return rows


def cmd_evaluate(args) -> int:
    settings = _resolve(args)
    out = _out_dir(settings)
    predictions_path = Path(args.predictions) if args.predictions else out / "predictions.csv"
    windows_path = Path(args.windows) if args.windows else out / "test_windows.json"
    predicted = _read_predictions(_require(predictions_path, "predictions file"))
    dataset = ingest.load_dataset(_require(windows_path, "test windows"))
    truth = {
        u.unit_id: u.truth_rul for u in dataset.units if u.truth_rul is not None
    }
    if set(predicted) != set(truth):
        missing = sorted(set(predicted) ^ set(truth))
        raise ValidationError(f"unit ids differ between predictions and truth: {missing}")
    unit_ids = sorted(predicted)
    report = metrics.EvaluationReport.build(
        unit_ids, [predicted[u] for u in unit_ids], [truth[u] for u in unit_ids]
    )
    report.to_csv(out / "evaluation.csv")
    report.to_json(out / "evaluation.json")
    print(f"rmse {report.rmse:.4f}  score {report.score:.4f}  ({report.n_units} units)")
    return EXIT_OK


# ----- argument parsing -----------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--dataset", choices=sorted(model.PRESETS))


def _add_model_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--window", type=int, dest="window_length")
    p.add_argument("--codebook", type=int, dest="codebook_size")


def _add_prior_flags(p):
    p.add_argument("--lambda", type=float, dest="ema_lambda")
    p.add_argument("--epsilon", type=float)


def build_parser() -> _Parser:
    parser = _Parser(prog="latentrul", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse raw files and emit windowed datasets")
    _add_common(p)
    p.add_argument("--data-dir", dest="data_dir", help="directory of the raw dataset files")
    p.add_argument("--train-file", dest="train_file")
    p.add_argument("--test-file", dest="test_file")
    p.add_argument("--rul-file", dest="rul_file")
    _add_model_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the encoder/quantizer/decoder")
    _add_common(p)
    p.add_argument("--windows", help="training windows file (default: OUT/train_windows.json)")
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-library", help="compute per-window priors of the training fleet")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--windows", help="training windows file")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_build_library)

    p = sub.add_parser("predict", help="JS-kNN RUL predictions for test units")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--library")
    p.add_argument("--windows", help="test windows file")
    p.add_argument("--k", type=int)
    p.add_argument("--intermediate-predictions", action="store_true",
                   help="also emit per-window prediction trajectories")
    _add_prior_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against the truth")
    _add_common(p)
    p.add_argument("--predictions")
    p.add_argument("--windows", help="test windows file carrying true RULs")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
