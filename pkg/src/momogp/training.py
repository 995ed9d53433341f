"""Hyperparameter optimisation.

Every leaf maximises its own marginal log likelihood independently by
Adam ascent on the log-space kernel parameters. Early stopping watches
the total over all leaves; the best-scoring parameter snapshot is
restored at the end, so the final total never falls below the initial
one. Once the leaves are fitted, the mixture weights are renormalized
to their posterior values.

Initial lengthscales are Gamma draws from a per-leaf seeded stream, so
results do not depend on leaf processing order or thread count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit
from .errors import NumericalError
from .gp_leaf import GpLeaf, KernelHyperparams
from .inference import compute_evidence, renormalize


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    max_epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    early_stop_rel_tol: float = 1e-5
    early_stop_patience: int = 10
    init_gamma_shape: float = 2.0
    init_gamma_rate: float = 3.0
    # "rate" reads init_gamma_rate as a rate (scale = 1/rate); "scale" reads it as the scale
    gamma_parameterization: str = "rate"
    init_signal_variance: float = 1.0
    init_noise_variance: float = 0.1
    rng_seed: int = 0

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if not 0 <= self.adam_beta1 < 1 or not 0 <= self.adam_beta2 < 1:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be > 0")
        if self.early_stop_rel_tol < 0:
            raise ValueError("early_stop_rel_tol must be >= 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.init_gamma_shape <= 0 or self.init_gamma_rate <= 0:
            raise ValueError("gamma init parameters must be > 0")
        if self.gamma_parameterization not in ("rate", "scale"):
            raise ValueError(
                f"gamma_parameterization must be 'rate' or 'scale', "
                f"got {self.gamma_parameterization!r}"
            )
        if self.init_signal_variance <= 0 or self.init_noise_variance <= 0:
            raise ValueError("initial variances must be > 0")


@dataclass
class TrainReport:
    leaf_count: int
    epochs_run: int
    per_leaf_epochs: list[int]
    initial_total_mll: float
    final_total_mll: float
    final_root_log_evidence: float
    stopped_early: bool
    wall_time: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "leaf_count": self.leaf_count,
            "epochs_run": self.epochs_run,
            "initial_total_mll": self.initial_total_mll,
            "final_total_mll": self.final_total_mll,
            "final_root_log_evidence": self.final_root_log_evidence,
            "stopped_early": self.stopped_early,
            "wall_time": dict(self.wall_time),
        }


def init_hyperparams(
    leaf_count: int, n_dims: int, cfg: TrainConfig
) -> list[KernelHyperparams]:
    """Seeded initial kernel parameters, one independent stream per leaf slot."""
    if leaf_count < 0 or n_dims < 1:
        raise ValueError("leaf_count must be >= 0 and n_dims >= 1")
    if cfg.gamma_parameterization == "rate":
        scale = 1.0 / cfg.init_gamma_rate
    else:
        scale = cfg.init_gamma_rate
    log_sf2 = math.log(cfg.init_signal_variance)
    log_noise = math.log(cfg.init_noise_variance)
    out = []
    for i in range(leaf_count):
        # spawn_key (1, i): stream 1 is reserved for training so the
        # structure builder's streams (key 0) never collide with these
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.rng_seed, spawn_key=(1, i))
        )
        lengthscales = rng.gamma(cfg.init_gamma_shape, scale, size=n_dims)
        out.append(KernelHyperparams(np.log(lengthscales), log_sf2, log_noise))
    return out


def _evaluate(leaf: GpLeaf, slot: int) -> tuple[float, np.ndarray]:
    leaf.fit()
    grad = leaf.mll_gradient()
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite gradient at leaf slot {slot}")
    return leaf.cached_mll, grad


def train(
    circuit: Circuit,
    data=None,
    cfg: TrainConfig | None = None,
    threads: int | None = None,
) -> tuple[Circuit, TrainReport]:
    """Fit every leaf, optimise, restore the best snapshot, renormalize.

    ``data`` is accepted for interface symmetry and only sanity-checked:
    the leaves already carry their training subsets. ``threads`` > 1
    fans leaf fits over a thread pool (identical numerical results).
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if data is not None and getattr(data, "n_dims", circuit.n_dims) != circuit.n_dims:
        raise ValueError("data dimensionality disagrees with the circuit")
    leaves = [circuit.nodes[i].leaf for i in circuit.leaf_ids()]
    n_leaves = len(leaves)
    n_params = circuit.n_dims + 2
    times: dict[str, float] = {}

    t0 = time.perf_counter()
    for leaf, hyper in zip(leaves, init_hyperparams(n_leaves, circuit.n_dims, cfg)):
        leaf.hyperparams = hyper

    workers = threads if threads and threads > 0 else min(8, os.cpu_count() or 1)
    workers = min(workers, max(n_leaves, 1))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def evaluate_all() -> tuple[np.ndarray, np.ndarray]:
        mlls = np.empty(n_leaves)
        grads = np.empty((n_leaves, n_params))
        if pool is not None:
            results = list(pool.map(_evaluate, leaves, range(n_leaves)))
        else:
            results = [_evaluate(leaf, i) for i, leaf in enumerate(leaves)]
        for i, (mll, grad) in enumerate(results):
            mlls[i] = mll
            grads[i] = grad
        return mlls, grads

    try:
        mlls, grads = evaluate_all()
        times["init"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        theta = np.stack([leaf.hyperparams.to_vector() for leaf in leaves]) if n_leaves else np.zeros((0, n_params))
        initial_total = float(np.sum(mlls))
        best_total = initial_total
        best_theta = theta.copy()
        adam_m = np.zeros_like(theta)
        adam_v = np.zeros_like(theta)
        prev_total = initial_total
        epochs = 0
        streak = 0
        stopped_early = False
        for epoch in range(cfg.max_epochs):
            step = epoch + 1
            adam_m = cfg.adam_beta1 * adam_m + (1 - cfg.adam_beta1) * grads
            adam_v = cfg.adam_beta2 * adam_v + (1 - cfg.adam_beta2) * grads**2
            m_hat = adam_m / (1 - cfg.adam_beta1**step)
            v_hat = adam_v / (1 - cfg.adam_beta2**step)
            theta = theta + cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
            for i, leaf in enumerate(leaves):
                leaf.hyperparams = KernelHyperparams.from_vector(
                    theta[i], circuit.n_dims
                )
            mlls, grads = evaluate_all()
            total = float(np.sum(mlls))
            epochs += 1
            if total > best_total:
                best_total = total
                best_theta = theta.copy()
            rel_change = abs(total - prev_total) / max(1.0, abs(prev_total))
            streak = streak + 1 if rel_change < cfg.early_stop_rel_tol else 0
            prev_total = total
            if streak >= cfg.early_stop_patience:
                stopped_early = True
                break
        times["optimize"] = time.perf_counter() - t0

        # restore the best snapshot; refitting reproduces its cached state exactly
        t0 = time.perf_counter()
        for i, leaf in enumerate(leaves):
            leaf.hyperparams = KernelHyperparams.from_vector(
                best_theta[i], circuit.n_dims
            )
        if pool is not None:
            list(pool.map(GpLeaf.fit, leaves))
        else:
            for leaf in leaves:
                leaf.fit()
        times["refit"] = time.perf_counter() - t0
    finally:
        if pool is not None:
            pool.shutdown()

    t0 = time.perf_counter()
    evidence = compute_evidence(circuit)
    root_log_evidence = renormalize(circuit, evidence)
    times["renormalize"] = time.perf_counter() - t0

    report = TrainReport(
        leaf_count=n_leaves,
        epochs_run=epochs,
        per_leaf_epochs=[epochs] * n_leaves,
        initial_total_mll=initial_total,
        final_total_mll=best_total,
        final_root_log_evidence=root_log_evidence,
        stopped_early=stopped_early,
        wall_time=times,
    )
    return circuit, report
