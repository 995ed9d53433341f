"""Evidence propagation, weight renormalization and prediction.

Evidence (the log normalisation constant of the unnormalised circuit)
flows bottom-up: a leaf contributes its cached marginal log
likelihood, a sum log-sum-exps its weighted children and a product
adds its children. Renormalization turns the prior mixture weights
into posterior ones:

    log w'_i = log w_i + log Z_child_i - log Z_sum

after which every sum's weights sum to one and the circuit is a proper
mixture over its induced trees.

Prediction moment-matches that mixture: products concatenate
(output partitions) or route (covariate partitions) their children's
Gaussian moments, and a sum collapses its children to a single
Gaussian with the law-of-total-(co)variance correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .circuit import (
    Circuit,
    LeafNode,
    ProductXNode,
    ProductYNode,
    SumNode,
    TREE_ENUM_CAP,
    count_induced_trees,
)
from .errors import CapacityError, NotFittedError, NumericalError
from .gp_leaf import JITTER_LEVELS

_LOG_2PI = math.log(2.0 * math.pi)

NLPD_MODES = ("moment_matched", "exact_mixture")


def compute_evidence(circuit: Circuit) -> np.ndarray:
    """Per-node log evidence, indexed by node id (NaN for unreachable ids)."""
    z = np.full(len(circuit.nodes), np.nan)
    for node_id in circuit.topo_order():
        node = circuit.nodes[node_id]
        if isinstance(node, LeafNode):
            if node.leaf.cached_mll is None:
                raise NotFittedError(f"leaf node {node_id} has no cached likelihood")
            z[node_id] = node.leaf.cached_mll
        elif isinstance(node, SumNode):
            z[node_id] = logsumexp(node.log_weights + z[node.children])
        else:
            z[node_id] = float(np.sum(z[np.asarray(node.children)]))
    return z


def renormalize(circuit: Circuit, evidence: np.ndarray | None = None) -> float:
    """Rewrite every sum's weights as posterior weights; returns the root log evidence."""
    z = compute_evidence(circuit) if evidence is None else evidence
    for node_id in circuit.topo_order():
        node = circuit.nodes[node_id]
        if isinstance(node, SumNode):
            log_w = node.log_weights + z[node.children] - z[node_id]
            node.log_weights = log_w - logsumexp(log_w)
    return float(z[circuit.root])


@dataclass
class PredictiveMoments:
    """First two moments of the predictive distribution at one point."""

    mean: np.ndarray  # (P,)
    covariance: np.ndarray  # (P, P)

    def is_psd(self, tol: float = 1e-8) -> bool:
        eigvals = np.linalg.eigvalsh(self.covariance)
        scale = max(float(np.trace(self.covariance)), 1.0)
        return bool(eigvals.min() >= -tol * scale)


def _route(node: ProductXNode, x: np.ndarray) -> np.ndarray:
    """Child index per row. Cells are half-open, so a value equal to an
    interior edge routes right; anything at or beyond the last edge goes
    to the last cell."""
    dim = node.split_dim
    interior = np.asarray([r.upper[dim] for r in node.child_regions[:-1]])
    return np.searchsorted(interior, x[:, dim], side="right")


def _moments(
    circuit: Circuit,
    node_id: int,
    x: np.ndarray,
    include_noise: bool,
    cross_covariance: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched (B,P) means and (B,P,P) covariances in full output space.

    Entries outside the node's scope stay zero; parents scatter their
    children's blocks into place.
    """
    node = circuit.nodes[node_id]
    b = x.shape[0]
    p = circuit.n_outputs
    if isinstance(node, LeafNode):
        mean, var = node.leaf.posterior_batch(x, include_noise=include_noise)
        out_mean = np.zeros((b, p))
        out_cov = np.zeros((b, p, p))
        idx = node.leaf.scope_output
        out_mean[:, idx] = mean
        out_cov[:, idx, idx] = var
        return out_mean, out_cov
    if isinstance(node, ProductYNode):
        out_mean = np.zeros((b, p))
        out_cov = np.zeros((b, p, p))
        # children have disjoint scopes: blocks add without overlap, and
        # cross-output covariance between blocks is exactly zero
        for child in node.children:
            c_mean, c_cov = _moments(circuit, child, x, include_noise, cross_covariance)
            out_mean += c_mean
            out_cov += c_cov
        return out_mean, out_cov
    if isinstance(node, ProductXNode):
        out_mean = np.zeros((b, p))
        out_cov = np.zeros((b, p, p))
        assignment = _route(node, x)
        for j, child in enumerate(node.children):
            mask = assignment == j
            if not np.any(mask):
                continue
            c_mean, c_cov = _moments(
                circuit, child, x[mask], include_noise, cross_covariance
            )
            out_mean[mask] = c_mean
            out_cov[mask] = c_cov
        return out_mean, out_cov
    # sum node: moment-match the mixture of the children
    weights = np.exp(node.log_weights)
    child_means = []
    child_covs = []
    for child in node.children:
        c_mean, c_cov = _moments(circuit, child, x, include_noise, cross_covariance)
        child_means.append(c_mean)
        child_covs.append(c_cov)
    stacked_means = np.stack(child_means)  # (K, B, P)
    stacked_covs = np.stack(child_covs)  # (K, B, P, P)
    mix_mean = np.einsum("k,kbp->bp", weights, stacked_means)
    centered = stacked_means - mix_mean[None, :, :]
    spread = np.einsum("kbp,kbq->kbpq", centered, centered)
    mix_cov = np.einsum("k,kbpq->bpq", weights, stacked_covs + spread)
    if not cross_covariance:
        diag = np.einsum("bpp->bp", mix_cov)
        mix_cov = np.zeros_like(mix_cov)
        np.einsum("bpp->bp", mix_cov)[...] = diag
    return mix_mean, mix_cov


def _checked_inputs(circuit: Circuit, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != circuit.n_dims:
        raise ValueError(
            f"x must have shape (B, {circuit.n_dims}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("query points must be finite")
    root_region = circuit.nodes[circuit.root].region
    return root_region.clamp_rows(x)


def predict_batch(
    circuit: Circuit,
    x: np.ndarray,
    include_noise: bool = True,
    cross_covariance: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Moment-matched predictive means (B,P) and covariances (B,P,P).

    ``include_noise`` adds each leaf's noise variance, so the moments
    describe observations; pass False for latent-function moments.
    ``cross_covariance=False`` zeroes the off-diagonal covariance
    (ablation used to quantify how much the full matrix helps).
    """
    x = _checked_inputs(circuit, x)
    return _moments(circuit, circuit.root, x, include_noise, cross_covariance)


def predict(
    circuit: Circuit,
    x_star: np.ndarray,
    include_noise: bool = True,
    cross_covariance: bool = True,
) -> PredictiveMoments:
    """Predictive moments at a single point."""
    x_star = np.asarray(x_star, dtype=float).ravel()
    means, covs = predict_batch(
        circuit, x_star[None, :], include_noise, cross_covariance
    )
    return PredictiveMoments(means[0], covs[0])


def _gaussian_logpdf_rows(y: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """Multivariate normal log density per row, with jitter escalation on each P x P solve."""
    b, p = y.shape
    out = np.empty(b)
    eye = np.eye(p)
    for i in range(b):
        cov = covs[i]
        mean_diag = float(np.mean(np.diag(cov)))
        chol = None
        attempted = []
        for level in JITTER_LEVELS:
            attempted.append(level)
            try:
                chol = np.linalg.cholesky(cov + level * mean_diag * eye if level else cov)
                break
            except np.linalg.LinAlgError:
                continue
        if chol is None:
            raise NumericalError(
                f"predictive covariance at row {i} is not positive definite "
                f"after jitter levels {attempted}",
                jitter_levels=attempted,
            )
        v = solve_triangular(chol, y[i] - means[i], lower=True)
        out[i] = -0.5 * (v @ v) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * p * _LOG_2PI
    return out


def _log_density_exact(
    circuit: Circuit, node_id: int, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Exact mixture log density, computed by circuit recursion.

    Equal to enumerating every induced tree, weighting each tree's
    product of leaf densities by its posterior prior; the recursion is
    the same quantity computed in linear time.
    """
    node = circuit.nodes[node_id]
    if isinstance(node, LeafNode):
        mean, var = node.leaf.posterior_batch(x, include_noise=True)
        target = y[:, node.leaf.scope_output]
        return -0.5 * ((target - mean) ** 2 / var + np.log(var) + _LOG_2PI)
    if isinstance(node, ProductYNode):
        total = np.zeros(x.shape[0])
        for child in node.children:
            total += _log_density_exact(circuit, child, x, y)
        return total
    if isinstance(node, ProductXNode):
        out = np.empty(x.shape[0])
        assignment = _route(node, x)
        for j, child in enumerate(node.children):
            mask = assignment == j
            if not np.any(mask):
                continue
            out[mask] = _log_density_exact(circuit, child, x[mask], y[mask])
        return out
    stacked = np.stack(
        [
            node.log_weights[k] + _log_density_exact(circuit, child, x, y)
            for k, child in enumerate(node.children)
        ]
    )
    return logsumexp(stacked, axis=0)


def log_predictive_density_batch(
    circuit: Circuit,
    x: np.ndarray,
    y: np.ndarray,
    mode: str = "moment_matched",
    cross_covariance: bool = True,
    tree_cap: int = TREE_ENUM_CAP,
) -> np.ndarray:
    """Log density of each observed target row under the predictive distribution.

    "moment_matched" scores a Gaussian with the matched moments
    (observation noise included). "exact_mixture" scores the true
    mixture; it refuses to run when the circuit induces more trees than
    ``tree_cap``.
    """
    if mode not in NLPD_MODES:
        raise ValueError(f"mode must be one of {NLPD_MODES}, got {mode!r}")
    x = _checked_inputs(circuit, x)
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape != (x.shape[0], circuit.n_outputs):
        raise ValueError(
            f"y must have shape ({x.shape[0]}, {circuit.n_outputs}), got {y.shape}"
        )
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    if mode == "moment_matched":
        means, covs = _moments(circuit, circuit.root, x, True, cross_covariance)
        return _gaussian_logpdf_rows(y, means, covs)
    n_trees = count_induced_trees(circuit)
    if n_trees > tree_cap:
        raise CapacityError(
            f"exact mixture density over {n_trees} induced trees exceeds the cap {tree_cap}"
        )
    return _log_density_exact(circuit, circuit.root, x, y)


def log_predictive_density(
    circuit: Circuit,
    x_star: np.ndarray,
    y_star: np.ndarray,
    mode: str = "moment_matched",
    cross_covariance: bool = True,
) -> float:
    """Log predictive density of a single (x, y) pair."""
    x_star = np.asarray(x_star, dtype=float).ravel()
    y_star = np.asarray(y_star, dtype=float).ravel()
    values = log_predictive_density_batch(
        circuit, x_star[None, :], y_star[None, :], mode, cross_covariance
    )
    return float(values[0])
