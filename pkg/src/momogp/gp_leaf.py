"""Exact single-output Gaussian process experts.

Each expert owns a Matern-3/2 kernel with per-dimension lengthscales
(automatic relevance determination), a signal variance and a noise
variance, all kept in log space so gradient ascent stays unconstrained.
Fitting caches a Cholesky factorisation of the noisy Gram matrix; the
posterior moments, the marginal log likelihood and its gradient then
follow in closed form:

    C = K + sigma_n^2 I
    mll = -1/2 (y^T C^-1 y + log|C| + N log 2pi)
    m(x*) = k(x*, X) C^-1 y
    v(x*) = k(x*, x*) - k(x*, X) C^-1 k(X, x*)

Gradients are taken with respect to the log parameters, so e.g.
d mll / d log sigma_f^2 = 1/2 tr((alpha alpha^T - C^-1) K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .errors import NotFittedError, NumericalError

if TYPE_CHECKING:  # pragma: no cover
    from .circuit import Region

_SQRT3 = math.sqrt(3.0)
_LOG_2PI = math.log(2.0 * math.pi)

# Jitter escalation ladder, as fractions of mean(diag(C)). The first
# attempt adds nothing; afterwards each step multiplies by ten.
JITTER_LEVELS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


@dataclass
class KernelHyperparams:
    """Log-space kernel hyperparameters.

    Parameters
    ----------
    log_lengthscales : np.ndarray
        One value per covariate dimension (ARD).
    log_signal_variance : float
        Log of sigma_f^2, the kernel output scale.
    log_noise_variance : float
        Log of sigma_n^2, the observation noise variance.
    """

    log_lengthscales: np.ndarray
    log_signal_variance: float
    log_noise_variance: float

    def __post_init__(self):
        self.log_lengthscales = np.atleast_1d(
            np.asarray(self.log_lengthscales, dtype=float)
        )
        if self.log_lengthscales.ndim != 1:
            raise ValueError("log_lengthscales must be a 1-d vector")
        self.log_signal_variance = float(self.log_signal_variance)
        self.log_noise_variance = float(self.log_noise_variance)
        if not (
            np.all(np.isfinite(self.log_lengthscales))
            and math.isfinite(self.log_signal_variance)
            and math.isfinite(self.log_noise_variance)
        ):
            raise ValueError("kernel hyperparameters must be finite")

    @property
    def n_dims(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def to_vector(self) -> np.ndarray:
        """Pack into [log_lengthscales..., log_signal_variance, log_noise_variance]."""
        return np.concatenate(
            [
                self.log_lengthscales,
                [self.log_signal_variance, self.log_noise_variance],
            ]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_dims: int) -> "KernelHyperparams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n_dims + 2,):
            raise ValueError(
                f"expected a vector of length {n_dims + 2}, got shape {vec.shape}"
            )
        return cls(vec[:n_dims].copy(), float(vec[n_dims]), float(vec[n_dims + 1]))

    def copy(self) -> "KernelHyperparams":
        return KernelHyperparams(
            self.log_lengthscales.copy(),
            self.log_signal_variance,
            self.log_noise_variance,
        )


def _scaled(x: np.ndarray, hyper: KernelHyperparams) -> np.ndarray:
    return np.ascontiguousarray(x / hyper.lengthscales, dtype=float)


def matern32(x: np.ndarray, x2: np.ndarray, hyper: KernelHyperparams) -> float:
    """Matern-3/2 kernel between two points.

    k(x, x') = sigma_f^2 (1 + sqrt(3) r) exp(-sqrt(3) r) with
    r the Euclidean distance after dividing each dimension by its
    lengthscale.
    """
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape or x.shape[0] != hyper.n_dims:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, x2 {x2.shape}, "
            f"hyperparams expect {hyper.n_dims} dims"
        )
    r = math.sqrt(float(np.sum(((x - x2) / hyper.lengthscales) ** 2)))
    return hyper.signal_variance * (1.0 + _SQRT3 * r) * math.exp(-_SQRT3 * r)


def _check_matrix(x: np.ndarray, hyper: KernelHyperparams, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {x.shape}")
    if x.shape[1] != hyper.n_dims:
        raise ValueError(
            f"{name} has {x.shape[1]} columns but hyperparams expect {hyper.n_dims}"
        )
    return x


def gram_matrix(x: np.ndarray, hyper: KernelHyperparams) -> np.ndarray:
    """Noise-free kernel matrix K(X, X); exactly symmetric with sigma_f^2 on the diagonal."""
    x = _check_matrix(x, hyper, "x")
    xs = _scaled(x, hyper)
    r = cdist(xs, xs)
    return hyper.signal_variance * (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)


def cross_gram(
    x1: np.ndarray, x2: np.ndarray, hyper: KernelHyperparams
) -> np.ndarray:
    """Rectangular kernel matrix K(X1, X2)."""
    x1 = _check_matrix(x1, hyper, "x1")
    x2 = _check_matrix(x2, hyper, "x2")
    r = cdist(_scaled(x1, hyper), _scaled(x2, hyper))
    return hyper.signal_variance * (1.0 + _SQRT3 * r) * np.exp(-_SQRT3 * r)


@dataclass
class GpLeaf:
    """A single-output GP expert over a rectangular covariate region.

    The leaf keeps its own training subset (rows of the circuit's
    training data) plus the cached fit state. ``row_idx`` records which
    rows of the full training matrix the subset came from, which keeps
    serialized models small.
    """

    scope_output: int
    train_x: np.ndarray
    train_y: np.ndarray
    hyperparams: KernelHyperparams
    region: Optional["Region"] = None
    row_idx: Optional[np.ndarray] = None
    chol_factor: Optional[np.ndarray] = field(default=None, repr=False)
    alpha: Optional[np.ndarray] = field(default=None, repr=False)
    cached_mll: Optional[float] = None
    jitter: float = 0.0

    def __post_init__(self):
        self.train_x = np.asarray(self.train_x, dtype=float)
        self.train_y = np.asarray(self.train_y, dtype=float).ravel()
        if self.train_x.ndim != 2:
            raise ValueError("train_x must be 2-d")
        if self.train_x.shape[0] != self.train_y.shape[0]:
            raise ValueError("train_x and train_y disagree on row count")
        if self.train_x.shape[0] < 1:
            raise ValueError("a leaf needs at least one training point")
        if self.row_idx is not None:
            self.row_idx = np.asarray(self.row_idx, dtype=np.int64)

    @property
    def n_train(self) -> int:
        return self.train_x.shape[0]

    @property
    def n_dims(self) -> int:
        return self.train_x.shape[1]

    def is_fitted(self) -> bool:
        return self.chol_factor is not None

    def fit(self) -> "GpLeaf":
        """Factorise C = K + sigma_n^2 I and cache alpha = C^-1 y and the MLL.

        If the plain factorisation fails, a jitter proportional to the
        mean diagonal of C is added and escalated tenfold per retry; a
        NumericalError listing the attempted levels is raised when the
        ladder is exhausted.
        """
        n = self.n_train
        k = gram_matrix(self.train_x, self.hyperparams)
        c = k + self.hyperparams.noise_variance * np.eye(n)
        mean_diag = float(np.mean(np.diag(c)))
        attempted = []
        chol = None
        jitter = 0.0
        for level in JITTER_LEVELS:
            attempted.append(level)
            jitter = level * mean_diag
            try:
                chol = np.linalg.cholesky(c + jitter * np.eye(n) if level else c)
                break
            except np.linalg.LinAlgError:
                continue
        if chol is None:
            raise NumericalError(
                f"Cholesky factorisation failed for a {n}x{n} system after "
                f"jitter levels {attempted}",
                jitter_levels=attempted,
            )
        self.chol_factor = chol
        self.jitter = jitter
        self.alpha = cho_solve((chol, True), self.train_y)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self.cached_mll = -0.5 * (
            float(self.train_y @ self.alpha) + log_det + n * _LOG_2PI
        )
        return self

    def _require_fit(self):
        if not self.is_fitted():
            raise NotFittedError("leaf has no cached factorisation; call fit() first")

    def posterior_batch(
        self, x: np.ndarray, include_noise: bool = False
    ) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at each row of ``x``.

        With ``include_noise`` the noise variance is added, giving the
        predictive variance of an observation rather than of the latent
        function value.
        """
        self._require_fit()
        x = _check_matrix(x, self.hyperparams, "x")
        k_star = cross_gram(x, self.train_x, self.hyperparams)
        mean = k_star @ self.alpha
        v = solve_triangular(self.chol_factor, k_star.T, lower=True)
        var = self.hyperparams.signal_variance - np.sum(v * v, axis=0)
        # tiny negative values are roundoff; anything larger is a real failure
        if np.any(var < -1e-8 * self.hyperparams.signal_variance):
            raise NumericalError(
                f"posterior variance went negative ({float(var.min())})"
            )
        var = np.maximum(var, 0.0)
        if include_noise:
            var = var + self.hyperparams.noise_variance
        return mean, var

    def posterior(
        self, x_star: np.ndarray, include_noise: bool = False
    ) -> tuple[float, float]:
        """Posterior mean and variance at a single point."""
        x_star = np.asarray(x_star, dtype=float).ravel()
        mean, var = self.posterior_batch(x_star[None, :], include_noise=include_noise)
        return float(mean[0]), float(var[0])

    def mll_gradient(self) -> np.ndarray:
        """Gradient of the cached MLL w.r.t. the packed log parameters.

        Uses the trace identity d mll / d theta = 1/2 tr((alpha alpha^T
        - C^-1) dC/dtheta). For the Matern-3/2 ARD kernel,
        dK/d log l_d = 3 sigma_f^2 exp(-sqrt(3) r) D_d with
        D_d = (x_id - x_jd)^2 / l_d^2; the apparent 1/r singularity
        cancels. Jitter is treated as a constant shift.
        """
        self._require_fit()
        n = self.n_train
        d = self.n_dims
        c_inv = cho_solve((self.chol_factor, True), np.eye(n))
        a = np.outer(self.alpha, self.alpha) - c_inv
        hyper = self.hyperparams
        ls = hyper.lengthscales
        sf2 = hyper.signal_variance
        xs = _scaled(self.train_x, hyper)
        r = cdist(xs, xs)
        decay = np.exp(-_SQRT3 * r)
        k = sf2 * (1.0 + _SQRT3 * r) * decay
        grad = np.empty(d + 2)
        b = 1.5 * sf2 * (a * decay)
        for j in range(d):
            diff = (self.train_x[:, j, None] - self.train_x[None, :, j]) / ls[j]
            grad[j] = float(np.sum(b * diff * diff))
        grad[d] = 0.5 * float(np.sum(a * k))
        grad[d + 1] = 0.5 * hyper.noise_variance * float(np.trace(a))
        return grad

    def refit(self, hyperparams: KernelHyperparams) -> "GpLeaf":
        """Swap hyperparameters and re-fit."""
        if hyperparams.n_dims != self.n_dims:
            raise ValueError(
                f"hyperparams expect {hyperparams.n_dims} dims, leaf has {self.n_dims}"
            )
        self.hyperparams = hyperparams
        return self.fit()
