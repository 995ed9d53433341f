"""Model persistence.

A model file is a single JSON document holding the node array (ids are
array positions), the training matrices in pipeline space, the fitted
preprocessing transforms and the structure config. Leaves store kernel
hyperparameters plus the row indices of their training subset, so the
heavy per-leaf state (Cholesky factor, alpha) is reproduced exactly by
refitting on load rather than stored.

Serialisation is byte-deterministic: keys are sorted and floats use
Python's shortest round-trip repr. Writes go to a temp file in the
destination directory and are renamed into place on success, so a
failed write leaves no partial file.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .circuit import (
    Circuit,
    LeafNode,
    ProductXNode,
    ProductYNode,
    Region,
    StructureConfig,
    SumNode,
)
from .data_pipeline import PcaTransform, PipelineTransforms, Standardization
from .errors import SchemaError
from .gp_leaf import GpLeaf, KernelHyperparams

SCHEMA_VERSION = 1
_MODEL_KIND = "momogp_model"


def _bound_list(values: np.ndarray, sign: float) -> list:
    # infinities become JSON null; the field (lower/upper) fixes the sign
    return [None if math.isinf(v) else float(v) for v in values]


def _region_to_json(region: Region) -> dict:
    return {
        "lower": _bound_list(region.lower, -1.0),
        "upper": _bound_list(region.upper, 1.0),
    }


def _region_from_json(obj: dict) -> Region:
    lower = [(-math.inf if v is None else float(v)) for v in obj["lower"]]
    upper = [(math.inf if v is None else float(v)) for v in obj["upper"]]
    return Region(np.asarray(lower), np.asarray(upper))


def _node_to_json(node) -> dict:
    base = {
        "scope": sorted(int(s) for s in node.scope),
        "region": _region_to_json(node.region),
        "n_rows": int(node.n_rows),
    }
    if isinstance(node, SumNode):
        return {
            "type": "sum",
            "children": [int(c) for c in node.children],
            "log_weights": [float(w) for w in node.log_weights],
            **base,
        }
    if isinstance(node, ProductXNode):
        return {
            "type": "product_x",
            "children": [int(c) for c in node.children],
            "split_dim": int(node.split_dim),
            "child_regions": [_region_to_json(r) for r in node.child_regions],
            **base,
        }
    if isinstance(node, ProductYNode):
        return {
            "type": "product_y",
            "children": [int(c) for c in node.children],
            **base,
        }
    if isinstance(node, LeafNode):
        leaf = node.leaf
        if leaf.row_idx is None:
            raise SchemaError(
                "leaf lacks row indices; only circuits built from a dataset serialize"
            )
        return {
            "type": "leaf",
            "output": int(leaf.scope_output),
            "rows": [int(r) for r in leaf.row_idx],
            "hyperparams": {
                "log_lengthscales": [float(v) for v in leaf.hyperparams.log_lengthscales],
                "log_signal_variance": float(leaf.hyperparams.log_signal_variance),
                "log_noise_variance": float(leaf.hyperparams.log_noise_variance),
            },
            **base,
        }
    raise SchemaError(f"cannot serialize node type {type(node).__name__}")


def _node_from_json(obj: dict, x: np.ndarray, y: np.ndarray):
    kind = obj["type"]
    scope = frozenset(int(s) for s in obj["scope"])
    region = _region_from_json(obj["region"])
    n_rows = int(obj["n_rows"])
    if kind == "sum":
        return SumNode(
            [int(c) for c in obj["children"]],
            np.asarray(obj["log_weights"], dtype=float),
            scope,
            region,
            n_rows,
        )
    if kind == "product_x":
        return ProductXNode(
            [int(c) for c in obj["children"]],
            [_region_from_json(r) for r in obj["child_regions"]],
            int(obj["split_dim"]),
            scope,
            region,
            n_rows,
        )
    if kind == "product_y":
        return ProductYNode([int(c) for c in obj["children"]], scope, region, n_rows)
    if kind == "leaf":
        rows = np.asarray(obj["rows"], dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= x.shape[0]):
            raise SchemaError("leaf row indices fall outside the stored data")
        hp = obj["hyperparams"]
        hyper = KernelHyperparams(
            np.asarray(hp["log_lengthscales"], dtype=float),
            float(hp["log_signal_variance"]),
            float(hp["log_noise_variance"]),
        )
        output = int(obj["output"])
        leaf = GpLeaf(
            scope_output=output,
            train_x=x[rows],
            train_y=y[rows, output],
            hyperparams=hyper,
            region=region,
            row_idx=rows,
        )
        return LeafNode(leaf, scope, region, n_rows)
    raise SchemaError(f"unknown node type {kind!r}")


def _transforms_to_json(transforms: Optional[PipelineTransforms]) -> dict:
    if transforms is None:
        return {"standardization": None, "pca": None}
    std = None
    if transforms.standardization is not None:
        s = transforms.standardization
        std = {
            "x_mean": [float(v) for v in s.x_mean],
            "x_std": [float(v) for v in s.x_std],
            "y_mean": [float(v) for v in s.y_mean],
            "y_std": [float(v) for v in s.y_std],
        }
    pca = None
    if transforms.pca is not None:
        t = transforms.pca
        pca = {
            "mean": [float(v) for v in t.mean],
            "components": [[float(v) for v in row] for row in t.components],
            "explained_variance": [float(v) for v in t.explained_variance],
        }
    return {"standardization": std, "pca": pca}


def _transforms_from_json(obj: dict) -> PipelineTransforms:
    std = None
    if obj.get("standardization") is not None:
        s = obj["standardization"]
        std = Standardization(
            np.asarray(s["x_mean"], dtype=float),
            np.asarray(s["x_std"], dtype=float),
            np.asarray(s["y_mean"], dtype=float),
            np.asarray(s["y_std"], dtype=float),
        )
    pca = None
    if obj.get("pca") is not None:
        t = obj["pca"]
        pca = PcaTransform(
            np.asarray(t["mean"], dtype=float),
            np.asarray(t["components"], dtype=float),
            np.asarray(t["explained_variance"], dtype=float),
        )
    return PipelineTransforms(std, pca)


def _structure_config_to_json(cfg: StructureConfig) -> dict:
    return {
        "k_sum": cfg.k_sum,
        "k_prod_x": cfg.k_prod_x,
        "k_prod_y": cfg.k_prod_y,
        "leaf_threshold": cfg.leaf_threshold,
        "rng_seed": cfg.rng_seed,
        "quantile_mode": cfg.quantile_mode,
    }


def _structure_config_from_json(obj: dict) -> StructureConfig:
    return StructureConfig(
        int(obj["k_sum"]),
        int(obj["k_prod_x"]),
        int(obj["k_prod_y"]),
        int(obj["leaf_threshold"]),
        int(obj["rng_seed"]),
        str(obj["quantile_mode"]),
    )


@dataclass
class ModelBundle:
    """A deserialized model: circuit with refitted leaves plus its preprocessing."""

    circuit: Circuit
    transforms: PipelineTransforms
    x: np.ndarray
    y: np.ndarray
    extras: dict = field(default_factory=dict)


def model_to_dict(
    circuit: Circuit,
    transforms: Optional[PipelineTransforms],
    x: np.ndarray,
    y: np.ndarray,
    extras: Optional[dict] = None,
) -> dict:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return {
        "kind": _MODEL_KIND,
        "schema_version": SCHEMA_VERSION,
        "structure_kind": circuit.structure_kind,
        "n_outputs": circuit.n_outputs,
        "n_dims": circuit.n_dims,
        "root": circuit.root,
        "structure_config": _structure_config_to_json(circuit.config),
        "nodes": [_node_to_json(node) for node in circuit.nodes],
        "data": {
            "x": [[float(v) for v in row] for row in x],
            "y": [[float(v) for v in row] for row in y],
        },
        "transforms": _transforms_to_json(transforms),
        "extras": dict(extras or {}),
    }


def model_from_dict(obj: dict) -> ModelBundle:
    if not isinstance(obj, dict) or obj.get("kind") != _MODEL_KIND:
        raise SchemaError("not a model file")
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"unsupported schema_version {obj.get('schema_version')!r}; "
            f"expected {SCHEMA_VERSION}"
        )
    required = ("nodes", "root", "n_outputs", "n_dims", "data", "structure_config")
    missing = [key for key in required if key not in obj]
    if missing:
        raise SchemaError(f"model file missing keys: {missing}")
    try:
        x = np.asarray(obj["data"]["x"], dtype=float)
        y = np.asarray(obj["data"]["y"], dtype=float)
        if x.ndim != 2:
            raise SchemaError("stored x must be a 2-d array")
        if y.ndim == 1:
            y = y.reshape(x.shape[0], -1)
        nodes = [_node_from_json(n, x, y) for n in obj["nodes"]]
        circuit = Circuit(
            nodes=nodes,
            root=int(obj["root"]),
            n_outputs=int(obj["n_outputs"]),
            n_dims=int(obj["n_dims"]),
            config=_structure_config_from_json(obj["structure_config"]),
            structure_kind=str(obj.get("structure_kind", "momogp")),
        )
        transforms = _transforms_from_json(obj.get("transforms") or {})
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model file: {exc}") from None
    # refitting reproduces the cached per-leaf state; stored posterior
    # weights are kept verbatim (renormalizing again would be a no-op
    # only for unchanged data, so it is not done here)
    for _, node in circuit.leaves():
        node.leaf.fit()
    return ModelBundle(circuit, transforms, x, y, dict(obj.get("extras") or {}))


def dumps_canonical(obj: dict) -> str:
    """Deterministic JSON text: sorted keys, compact separators, repr floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def write_text_atomic(path, text: str):
    """Write text to a temp file beside ``path`` and rename on success."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise


def write_json_atomic(path, obj: dict):
    write_text_atomic(path, dumps_canonical(obj))


def save_model(
    path,
    circuit: Circuit,
    transforms: Optional[PipelineTransforms],
    x: np.ndarray,
    y: np.ndarray,
    extras: Optional[dict] = None,
):
    write_json_atomic(path, model_to_dict(circuit, transforms, x, y, extras))


def load_model(path) -> ModelBundle:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(obj)
