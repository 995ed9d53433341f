"""Command line interface.

Subcommands: train, evaluate, predict, upsample. A run is configured
by an optional JSON file (sections "structure", "training",
"pipeline") plus command line overrides; the merged effective config
is echoed so runs are reproducible, and stored inside the model file.

Exit codes: 0 success, 2 invalid input/config, 3 I/O failure,
4 numerical failure, 5 capacity exceeded. Failures print
"ERROR <category>: <detail>" as the first stderr line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .circuit import (
    StructureConfig,
    TREE_ENUM_CAP,
    build,
    build_sumgp,
    count_induced_trees,
    validate,
)
from .data_pipeline import (
    Dataset,
    PipelineTransforms,
    apply_pca,
    fit_pca,
    load_csv,
    split,
    standardize,
)
from .errors import (
    CapacityError,
    MomogpError,
    NotFittedError,
    NumericalError,
    SchemaError,
)
from .images import (
    bilinear_upsample,
    dataset_to_image,
    grid_coordinates,
    image_rmse,
    image_to_dataset,
    nearest_upsample,
    read_ppm,
    write_ppm,
)
from .inference import NLPD_MODES, predict_batch
from .metrics import EvalResult, mae, mean_nlpd, per_output_rmse, rmse
from .serialize import (
    dumps_canonical,
    load_model,
    save_model,
    write_json_atomic,
    write_text_atomic,
)
from .training import TrainConfig, train

CONFIG_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_CAPACITY = 5

_STRUCTURE_KEYS = (
    "k_sum",
    "k_prod_x",
    "k_prod_y",
    "leaf_threshold",
    "rng_seed",
    "quantile_mode",
)
_TRAINING_KEYS = (
    "learning_rate",
    "max_epochs",
    "adam_beta1",
    "adam_beta2",
    "adam_epsilon",
    "early_stop_rel_tol",
    "early_stop_patience",
    "init_gamma_shape",
    "init_gamma_rate",
    "gamma_parameterization",
    "init_signal_variance",
    "init_noise_variance",
    "rng_seed",
)
_PIPELINE_KEYS = (
    "n_outputs",
    "structure_kind",
    "standardize",
    "pca_dims",
    "test_fraction",
    "split_seed",
    "nlpd_mode",
    "threads",
)


@dataclass
class RunConfig:
    """Everything a run needs: structure, training and pipeline settings."""

    structure: StructureConfig = field(default_factory=StructureConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    n_outputs: Optional[int] = None
    structure_kind: str = "momogp"
    standardize: bool = True
    pca_dims: Optional[int] = None
    test_fraction: float = 0.0
    split_seed: int = 0
    nlpd_mode: str = "moment_matched"
    threads: Optional[int] = None

    def validate(self):
        self.structure.validate()
        self.training.validate()
        if self.structure_kind not in ("momogp", "sumgp"):
            raise SchemaError(
                f"structure_kind must be momogp or sumgp, got {self.structure_kind!r}"
            )
        if self.nlpd_mode not in NLPD_MODES + ("both",):
            raise SchemaError(f"nlpd_mode must be one of {NLPD_MODES + ('both',)}")
        if self.n_outputs is not None and self.n_outputs < 1:
            raise SchemaError("n_outputs must be >= 1")
        if self.pca_dims is not None and self.pca_dims < 1:
            raise SchemaError("pca_dims must be >= 1")
        if not 0.0 <= self.test_fraction < 1.0:
            raise SchemaError("test_fraction must lie in [0, 1)")
        if self.threads is not None and self.threads < 1:
            raise SchemaError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "structure": {key: getattr(self.structure, key) for key in _STRUCTURE_KEYS},
            "training": {key: getattr(self.training, key) for key in _TRAINING_KEYS},
            "pipeline": {key: getattr(self, key) for key in _PIPELINE_KEYS},
        }


def _apply_section(target, section: dict, allowed: tuple, label: str):
    for key, value in section.items():
        if key not in allowed:
            raise SchemaError(f"unknown config key {label}.{key}")
        setattr(target, key, value)


def load_run_config(path: Optional[str]) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: config root must be an object")
    version = obj.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported config schema_version {version!r}")
    for section in obj:
        if section not in ("schema_version", "structure", "training", "pipeline"):
            raise SchemaError(f"{path}: unknown config section {section!r}")
    _apply_section(cfg.structure, obj.get("structure", {}), _STRUCTURE_KEYS, "structure")
    _apply_section(cfg.training, obj.get("training", {}), _TRAINING_KEYS, "training")
    _apply_section(cfg, obj.get("pipeline", {}), _PIPELINE_KEYS, "pipeline")
    return cfg


def _merge_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.structure.rng_seed = args.seed
        cfg.training.rng_seed = args.seed
        cfg.split_seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    if getattr(args, "structure_kind", None) is not None:
        cfg.structure_kind = args.structure_kind
    if getattr(args, "nlpd_mode", None) is not None:
        cfg.nlpd_mode = args.nlpd_mode
    if getattr(args, "n_outputs", None) is not None:
        cfg.n_outputs = args.n_outputs
    if getattr(args, "leaf_threshold", None) is not None:
        cfg.structure.leaf_threshold = args.leaf_threshold
    if getattr(args, "max_epochs", None) is not None:
        cfg.training.max_epochs = args.max_epochs
    if getattr(args, "test_fraction", None) is not None:
        cfg.test_fraction = args.test_fraction
    if getattr(args, "pca_dims", None) is not None:
        cfg.pca_dims = args.pca_dims
    if getattr(args, "no_standardize", False):
        cfg.standardize = False
    cfg.validate()
    return cfg


def _echo_config(cfg: RunConfig):
    print("effective config:")
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))


def _fit_pipeline(data: Dataset, cfg: RunConfig) -> tuple[Dataset, PipelineTransforms]:
    transforms = PipelineTransforms()
    work = data
    if cfg.standardize:
        work, stats = standardize(work)
        transforms.standardization = stats
    if cfg.pca_dims is not None:
        if cfg.pca_dims > work.n_dims:
            raise SchemaError(
                f"pca_dims {cfg.pca_dims} exceeds the {work.n_dims} covariate columns"
            )
        transforms.pca = fit_pca(work.x, cfg.pca_dims)
        work = Dataset(apply_pca(work.x, transforms.pca), work.y, work.column_names)
    return work, transforms


def _expected_input_columns(bundle) -> int:
    transforms = bundle.transforms
    if transforms.pca is not None:
        return transforms.pca.mean.shape[0]
    if transforms.standardization is not None:
        return transforms.standardization.x_mean.shape[0]
    return bundle.circuit.n_dims


def _write_csv_atomic(path, header: list[str], rows: np.ndarray):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) for v in row])
    write_text_atomic(path, buffer.getvalue())


def cmd_train(args) -> int:
    cfg = _merge_overrides(load_run_config(args.config), args)
    if cfg.n_outputs is None:
        raise SchemaError("n_outputs is required (flag --n-outputs or pipeline.n_outputs)")
    data = load_csv(args.train_csv, cfg.n_outputs)
    holdout = None
    if cfg.test_fraction > 0.0:
        data, holdout = split(data, cfg.test_fraction, cfg.split_seed)
    work, transforms = _fit_pipeline(data, cfg)
    builder = build_sumgp if cfg.structure_kind == "sumgp" else build
    circuit = builder(work, cfg.structure)
    problems = validate(circuit)
    if problems:
        raise NumericalError(f"built circuit failed validation: {problems[0]}")
    _echo_config(cfg)
    print(f"structure: {json.dumps(circuit.describe(), sort_keys=True)}")
    circuit, report = train(circuit, work, cfg.training, threads=cfg.threads)
    persisted_config = cfg.to_dict()
    # thread count is an execution detail; results are thread-invariant
    persisted_config["pipeline"]["threads"] = None
    extras = {
        "effective_config": persisted_config,
        "root_log_evidence": report.final_root_log_evidence,
    }
    save_model(args.out, circuit, transforms, work.x, work.y, extras)
    print(f"training report: {json.dumps(report.to_dict(), sort_keys=True)}")
    print(f"wrote model to {args.out}")
    if holdout is not None:
        holdout_path = args.out + ".test.csv"
        names = holdout.column_names or [
            f"x_{i}" for i in range(holdout.n_dims)
        ] + [f"y_{i}" for i in range(holdout.n_outputs)]
        _write_csv_atomic(
            holdout_path, names, np.hstack([holdout.x, holdout.y])
        )
        print(f"wrote held-out rows to {holdout_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _merge_overrides(load_run_config(args.config), args)
    bundle = load_model(args.model)
    circuit = bundle.circuit
    expected = _expected_input_columns(bundle)
    data = load_csv(args.test_csv, circuit.n_outputs)
    if data.n_dims != expected:
        raise SchemaError(
            f"test data has {data.n_dims} covariate columns, model expects {expected}"
        )
    x = bundle.transforms.transform_x(data.x)
    y_model_space = bundle.transforms.transform_y(data.y)
    means, _ = predict_batch(circuit, x)

    mode = cfg.nlpd_mode
    exact_extra = None
    if mode == "both":
        mode = "moment_matched"
        if count_induced_trees(circuit) > TREE_ENUM_CAP:
            raise CapacityError(
                "exact NLPD requested but the circuit exceeds the induced-tree cap"
            )
        exact_extra = "exact_mixture"

    if args.unstandardized_metrics and bundle.transforms.standardization is not None:
        y_std = bundle.transforms.standardization.y_std
        y_ref = data.y
        means_ref = bundle.transforms.inverse_y_mean(means)
        # densities pick up the log-Jacobian of the linear rescaling
        log_jacobian = float(np.sum(np.log(y_std)))
    else:
        y_ref = y_model_space
        means_ref = means
        log_jacobian = 0.0

    nlpd = mean_nlpd(circuit, x, y_model_space, mode=mode) + log_jacobian
    result = EvalResult(
        n_test=data.n_rows,
        rmse=rmse(y_ref, means_ref),
        mae=mae(y_ref, means_ref),
        mean_nlpd=nlpd,
        nlpd_mode=mode,
        per_output_rmse=[float(v) for v in per_output_rmse(y_ref, means_ref)],
    )
    if exact_extra is not None:
        result.mean_nlpd_exact = (
            mean_nlpd(circuit, x, y_model_space, mode=exact_extra) + log_jacobian
        )
    print(result.format_text())
    out_path = args.out or (args.model + ".eval.json")
    write_json_atomic(out_path, result.to_dict())
    print(f"wrote evaluation to {out_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    circuit = bundle.circuit
    expected = _expected_input_columns(bundle)
    data = load_csv(args.input_csv, 0)
    if data.n_dims != expected:
        raise SchemaError(
            f"input has {data.n_dims} covariate columns, model expects {expected}"
        )
    x = bundle.transforms.transform_x(data.x)
    means, covs = predict_batch(circuit, x, include_noise=not args.latent)
    means = bundle.transforms.inverse_y_mean(means)
    covs = np.stack([bundle.transforms.inverse_y_cov(c) for c in covs])
    p = circuit.n_outputs
    header = [f"mean_{i}" for i in range(p)]
    header += [f"cov_{i}_{j}" for i in range(p) for j in range(i, p)]
    upper = [(i, j) for i in range(p) for j in range(i, p)]
    rows = np.hstack(
        [means, np.stack([[c[i, j] for (i, j) in upper] for c in covs])]
    )
    _write_csv_atomic(args.out, header, rows)
    print(f"wrote {data.n_rows} predictions to {args.out}")
    return EXIT_OK


def _upsample_default_config() -> RunConfig:
    cfg = RunConfig()
    cfg.structure.leaf_threshold = 256
    return cfg


def cmd_upsample(args) -> int:
    base = _upsample_default_config()
    if args.config is not None:
        file_cfg = load_run_config(args.config)
        # the file wins over the upsample defaults wherever it spoke
        base = file_cfg
    cfg = _merge_overrides(base, args)
    if args.factor < 2:
        raise SchemaError("--factor must be >= 2")
    img = read_ppm(args.in_ppm)
    data = image_to_dataset(img)
    work, transforms = _fit_pipeline(data, cfg)
    builder = build_sumgp if cfg.structure_kind == "sumgp" else build
    circuit = builder(work, cfg.structure)
    _echo_config(cfg)
    circuit, report = train(circuit, work, cfg.training, threads=cfg.threads)
    print(f"training report: {json.dumps(report.to_dict(), sort_keys=True)}")

    height, width = img.shape[:2]
    big_h, big_w = height * args.factor, width * args.factor
    target_x = transforms.transform_x(grid_coordinates(big_h, big_w))
    means, _ = predict_batch(circuit, target_x)
    means = transforms.inverse_y_mean(means)
    model_img = dataset_to_image(means, big_h, big_w)
    write_ppm(args.out, model_img)

    stem = args.out[:-4] if args.out.endswith(".ppm") else args.out
    near_img = nearest_upsample(img, args.factor)
    bilin_img = bilinear_upsample(img, args.factor)
    write_ppm(stem + ".nearest.ppm", near_img)
    write_ppm(stem + ".bilinear.ppm", bilin_img)
    print(f"wrote {args.out}, {stem}.nearest.ppm, {stem}.bilinear.ppm")

    if args.ground_truth:
        truth = read_ppm(args.ground_truth)
        if truth.shape != model_img.shape:
            raise SchemaError(
                f"ground truth is {truth.shape[1]}x{truth.shape[0]}, "
                f"expected {big_w}x{big_h}"
            )
        print(f"rmse_model={image_rmse(truth, model_img):.6f}")
        print(f"rmse_bilinear={image_rmse(truth, bilin_img):.6f}")
        print(f"rmse_nearest={image_rmse(truth, near_img):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="momogp",
        description="multi-output mixture-of-GP circuits: train, evaluate, predict, upsample",
    )
    parser.add_argument("--version", action="version", version=f"momogp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override all RNG seeds")
        p.add_argument("--threads", type=int, help="worker threads for leaf fits")
        p.add_argument(
            "--structure",
            dest="structure_kind",
            choices=("momogp", "sumgp"),
            help="structure family",
        )

    p_train = sub.add_parser("train", help="fit a model from a CSV")
    common(p_train)
    p_train.add_argument("train_csv")
    p_train.add_argument("--out", required=True, help="model JSON output path")
    p_train.add_argument("--n-outputs", type=int, dest="n_outputs")
    p_train.add_argument("--leaf-threshold", type=int, dest="leaf_threshold")
    p_train.add_argument("--max-epochs", type=int, dest="max_epochs")
    p_train.add_argument(
        "--test-fraction",
        type=float,
        dest="test_fraction",
        help="hold out this fraction (written to <out>.test.csv)",
    )
    p_train.add_argument("--pca-dims", type=int, dest="pca_dims")
    p_train.add_argument(
        "--no-standardize", action="store_true", help="skip column standardization"
    )
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate", help="score a model on a test CSV")
    common(p_eval)
    p_eval.add_argument("model")
    p_eval.add_argument("test_csv")
    p_eval.add_argument(
        "--nlpd-mode",
        dest="nlpd_mode",
        choices=NLPD_MODES + ("both",),
    )
    p_eval.add_argument("--out", help="evaluation JSON path (default <model>.eval.json)")
    p_eval.add_argument(
        "--unstandardized-metrics",
        action="store_true",
        help="report metrics in original target units",
    )
    p_eval.set_defaults(func=cmd_evaluate)

    p_pred = sub.add_parser("predict", help="predictive moments for covariate rows")
    common(p_pred)
    p_pred.add_argument("model")
    p_pred.add_argument("input_csv")
    p_pred.add_argument("--out", required=True, help="predictions CSV path")
    p_pred.add_argument(
        "--latent",
        action="store_true",
        help="exclude observation noise from the variances",
    )
    p_pred.set_defaults(func=cmd_predict)

    p_up = sub.add_parser("upsample", help="super-resolve a PPM image")
    common(p_up)
    p_up.add_argument("in_ppm")
    p_up.add_argument("--factor", type=int, default=2)
    p_up.add_argument("--out", required=True, help="output PPM path")
    p_up.add_argument("--ground-truth", help="high-res PPM to score against")
    p_up.add_argument("--max-epochs", type=int, dest="max_epochs")
    p_up.add_argument("--leaf-threshold", type=int, dest="leaf_threshold")
    p_up.set_defaults(func=cmd_upsample)

    return parser


def _fail(category: str, exc: BaseException, code: int) -> int:
    print(f"ERROR {category}: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, NotFittedError, ValueError) as exc:
        return _fail("invalid", exc, EXIT_INVALID)
    except CapacityError as exc:
        return _fail("capacity", exc, EXIT_CAPACITY)
    except NumericalError as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except MomogpError as exc:
        return _fail("invalid", exc, EXIT_INVALID)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
