"""Analytic differentiable generative models.

Three families are provided: a diagonal Gaussian (optionally mean-only with
unit variances), a diagonal-covariance Gaussian mixture fitted by EM, and
probabilistic PCA fitted in closed form. Every model exposes its parameters
as an unconstrained flat vector (positives through logs, mixture weights
through logits) together with vectorised ``log_density`` and
``grad_log_density`` with respect to that vector.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import InfeasibleError, InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)

CLOSED_FORM_VAR_FLOOR = 1e-8
EM_VAR_FLOOR = 1e-6


class Block(NamedTuple):
    name: str
    offset: int
    length: int


def make_layout(blocks):
    """Build an immutable layout from ``(name, length)`` pairs."""
    out = []
    offset = 0
    for name, length in blocks:
        out.append(Block(name, offset, int(length)))
        offset += int(length)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ParameterVector:
    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != sum(b.length for b in self.layout):
            raise ValidationError(
                f"parameter vector has {values.size} entries, layout declares "
                f"{sum(b.length for b in self.layout)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("parameter vector contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def block(self, name):
        for b in self.layout:
            if b.name == name:
                return self.values[b.offset:b.offset + b.length]
        raise KeyError(name)


def check_data(data, min_rows=1, dim=None):
    """Validate and return a float64 ``(N, D)`` data matrix."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValidationError(f"expected an (N, D) data matrix, got shape {x.shape}")
    if x.shape[0] < min_rows:
        raise InsufficientDataError(f"need at least {min_rows} rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("data matrix contains non-finite entries")
    if dim is not None and x.shape[1] != dim:
        raise ValidationError(f"dimension mismatch: model has D={dim}, data has D={x.shape[1]}")
    return x


def _as_batch(model, x):
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    return check_data(arr, dim=model.dim), single


class GenerativeModel:
    """Common interface: subclasses implement ``_log_density`` and ``_grad``."""

    family = None

    @property
    def dim(self):
        raise NotImplementedError

    @property
    def params(self) -> ParameterVector:
        raise NotImplementedError

    def with_params(self, theta):
        """Return a new model of the same family/shape built from ``theta``."""
        raise NotImplementedError

    def log_density(self, x):
        """Log-density in nats. ``x`` may be one point or an ``(N, D)`` batch."""
        batch, single = _as_batch(self, x)
        out = self._log_density(batch)
        return float(out[0]) if single else out

    def grad_log_density(self, x):
        """Gradient of the log-density wrt the flat parameter vector.

        Returns shape ``(P,)`` for a single point or ``(N, P)`` for a batch.
        """
        batch, single = _as_batch(self, x)
        out = self._grad(batch)
        return out[0] if single else out

    def sample(self, n, rng):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class DiagonalGaussianModel(GenerativeModel):
    mean: np.ndarray
    log_var: np.ndarray
    mean_only: bool = False

    family = "gaussian"

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).ravel()
        log_var = np.array(self.log_var, dtype=np.float64).ravel()
        if self.mean_only:
            log_var = np.zeros_like(mean)
        if mean.shape != log_var.shape:
            raise ValidationError("mean and log-variance lengths differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise ValidationError("non-finite Gaussian parameters")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_var", log_var)

    @classmethod
    def standard(cls, dim, mean_only=True):
        return cls(np.zeros(dim), np.zeros(dim), mean_only=mean_only)

    @property
    def dim(self):
        return self.mean.size

    @property
    def var(self):
        return np.exp(self.log_var)

    @property
    def layout(self):
        if self.mean_only:
            return make_layout([("mean", self.dim)])
        return make_layout([("mean", self.dim), ("log_var", self.dim)])

    @property
    def params(self):
        if self.mean_only:
            return ParameterVector(self.mean, self.layout)
        return ParameterVector(np.concatenate([self.mean, self.log_var]), self.layout)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        d = self.dim
        if self.mean_only:
            return DiagonalGaussianModel(theta[:d], np.zeros(d), mean_only=True)
        return DiagonalGaussianModel(theta[:d], theta[d:2 * d])

    def _log_density(self, x):
        z2 = (x - self.mean) ** 2 / self.var
        return -0.5 * (z2.sum(axis=1) + self.log_var.sum() + self.dim * LOG_2PI)

    def _grad(self, x):
        resid = x - self.mean
        g_mean = resid / self.var
        if self.mean_only:
            return g_mean
        g_logvar = 0.5 * (resid * g_mean - 1.0)
        return np.hstack([g_mean, g_logvar])

    def sample(self, n, rng):
        return self.mean + np.sqrt(self.var) * rng.standard_normal((n, self.dim))


@dataclass(frozen=True, eq=False)
class GmmModel(GenerativeModel):
    """Mixture of diagonal-covariance Gaussians.

    ``weights`` has shape (K,), ``means`` and ``variances`` shape (K, D).
    Parameter layout is ``[logit-weights | means | log-variances]`` with the
    logits stored as log-weights (softmax is invariant to the additive shift).
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood_trace: tuple = field(default=(), compare=False, repr=False)

    family = "gmm"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        mu = np.atleast_2d(np.array(self.means, dtype=np.float64))
        var = np.atleast_2d(np.array(self.variances, dtype=np.float64))
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise ValidationError("inconsistent GMM parameter shapes")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("GMM weights must be finite and non-negative")
        if np.any(var <= 0) or not np.all(np.isfinite(var)) or not np.all(np.isfinite(mu)):
            raise ValidationError("GMM variances must be finite and positive")
        w = w / w.sum()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def k(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def layout(self):
        kd = self.k * self.dim
        return make_layout([("logit_weights", self.k), ("means", kd), ("log_var", kd)])

    @property
    def params(self):
        with np.errstate(divide="ignore"):
            logits = np.log(self.weights)
        logits = np.maximum(logits, -745.0)
        theta = np.concatenate([logits, self.means.ravel(), np.log(self.variances).ravel()])
        return ParameterVector(theta, self.layout)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        k, d = self.k, self.dim
        return GmmModel(
            softmax(theta[:k]),
            theta[k:k + k * d].reshape(k, d),
            np.exp(theta[k + k * d:]).reshape(k, d),
        )

    def component_log_densities(self, x):
        """``(N, K)`` matrix of log N(x | mu_k, diag var_k)."""
        prec = 1.0 / self.variances
        quad = (x ** 2) @ prec.T - 2.0 * x @ (self.means * prec).T
        quad += np.sum(self.means ** 2 * prec, axis=1)
        return -0.5 * (quad + np.log(self.variances).sum(axis=1) + self.dim * LOG_2PI)

    def _joint(self, x):
        with np.errstate(divide="ignore"):
            return self.component_log_densities(x) + np.log(self.weights)

    def _log_density(self, x):
        return logsumexp(self._joint(x), axis=1)

    def responsibilities(self, x):
        joint = self._joint(x)
        return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))

    def _grad(self, x):
        n = x.shape[0]
        r = self.responsibilities(x)
        g_logits = r - self.weights
        # (N, K, D) blocks; fine for the sizes this family targets
        resid = x[:, None, :] - self.means[None, :, :]
        scaled = resid / self.variances[None, :, :]
        g_means = r[:, :, None] * scaled
        g_logvar = 0.5 * r[:, :, None] * (resid * scaled - 1.0)
        return np.hstack([g_logits, g_means.reshape(n, -1), g_logvar.reshape(n, -1)])

    def sample(self, n, rng):
        comp = rng.choice(self.k, size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal((n, self.dim))


@dataclass(frozen=True, eq=False)
class PpcaModel(GenerativeModel):
    """Probabilistic PCA: x ~ N(mean, W W^T + noise_var I)."""

    mean: np.ndarray
    loading: np.ndarray
    noise_var: float
    degenerate: bool = field(default=False, compare=False)

    family = "ppca"

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).ravel()
        w = np.atleast_2d(np.array(self.loading, dtype=np.float64))
        if w.shape[0] != mean.size:
            raise ValidationError("loading matrix rows must equal data dimension")
        if not (self.noise_var > 0 and np.isfinite(self.noise_var)):
            raise ValidationError("noise variance must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "loading", w)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def dim(self):
        return self.mean.size

    @property
    def q(self):
        return self.loading.shape[1]

    @property
    def layout(self):
        return make_layout([("mean", self.dim), ("loading", self.dim * self.q), ("log_noise_var", 1)])

    @property
    def params(self):
        theta = np.concatenate([self.mean, self.loading.ravel(), [np.log(self.noise_var)]])
        return ParameterVector(theta, self.layout)

    def with_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        d, q = self.dim, self.q
        return PpcaModel(theta[:d], theta[d:d + d * q].reshape(d, q), float(np.exp(theta[-1])))

    @property
    def covariance(self):
        return self.loading @ self.loading.T + self.noise_var * np.eye(self.dim)

    def _inner(self):
        # M = W^T W + s2 I_q; C^{-1} = (I - W M^{-1} W^T) / s2
        m = self.loading.T @ self.loading + self.noise_var * np.eye(self.q)
        chol = np.linalg.cholesky(m)
        m_inv = np.linalg.inv(m)
        logdet_c = (self.dim - self.q) * np.log(self.noise_var) + 2.0 * np.log(np.diag(chol)).sum()
        return m_inv, logdet_c

    def _precision_times(self, resid, m_inv):
        proj = resid @ self.loading
        return (resid - proj @ m_inv @ self.loading.T) / self.noise_var

    def _log_density(self, x):
        m_inv, logdet_c = self._inner()
        resid = x - self.mean
        maha = np.sum(resid * self._precision_times(resid, m_inv), axis=1)
        return -0.5 * (self.dim * LOG_2PI + logdet_c + maha)

    def _grad(self, x):
        m_inv, _ = self._inner()
        resid = x - self.mean
        a = self._precision_times(resid, m_inv)  # C^{-1}(x - mean), (N, D)
        w = self.loading
        # d/dW = C^{-1} r r^T C^{-1} W - C^{-1} W, and C^{-1} W = W M^{-1}
        g_w = a[:, :, None] * (a @ w)[:, None, :] - (w @ m_inv)[None, :, :]
        trace_prec = (self.dim - self.q + self.noise_var * np.trace(m_inv)) / self.noise_var
        g_logs2 = 0.5 * self.noise_var * (np.sum(a * a, axis=1) - trace_prec)
        n = x.shape[0]
        return np.hstack([a, g_w.reshape(n, -1), g_logs2[:, None]])

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.q))
        eps = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.loading.T + np.sqrt(self.noise_var) * eps


def log_density(model, x):
    return model.log_density(x)


def grad_log_density(model, x):
    return model.grad_log_density(x)


def fit_gaussian(data, mean_only=False) -> DiagonalGaussianModel:
    """Maximum-likelihood diagonal Gaussian (variances divide by N)."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 2 and x.shape[0] < 2:
        raise InsufficientDataError("fit_gaussian needs at least 2 rows")
    x = check_data(x, min_rows=2)
    mean = x.mean(axis=0)
    if mean_only:
        return DiagonalGaussianModel(mean, np.zeros_like(mean), mean_only=True)
    var = np.maximum(x.var(axis=0), CLOSED_FORM_VAR_FLOOR)
    return DiagonalGaussianModel(mean, np.log(var))


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _m_step(x, r, var_floor):
    nk = r.sum(axis=0)
    means = (r.T @ x) / nk[:, None]
    sq = (r.T @ (x ** 2)) / nk[:, None]
    var = np.maximum(sq - means ** 2, var_floor)
    return nk / x.shape[0], means, var


def fit_gmm(data, k, seed=0, max_iter=500, tol=1e-6, var_floor=EM_VAR_FLOOR) -> GmmModel:
    """EM for a diagonal-covariance GMM initialised by k-means++.

    Stops once the relative log-likelihood improvement drops below ``tol`` or
    after ``max_iter`` iterations. The per-iteration total log-likelihood is
    kept in ``log_likelihood_trace`` of the returned model.
    """
    x = check_data(data)
    n, d = x.shape
    if k < 1:
        raise ValidationError("k must be >= 1")
    if k > n:
        raise InfeasibleError(f"cannot fit {k} components to {n} points")
    rng = np.random.default_rng(seed)

    centers = _kmeans_pp(x, k, rng)
    d2 = (x ** 2).sum(1)[:, None] - 2 * x @ centers.T + (centers ** 2).sum(1)[None, :]
    hard = np.zeros((n, k))
    hard[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    hard[hard.sum(axis=1) == 0, 0] = 1.0
    empty = hard.sum(axis=0) == 0
    hard[:, empty] = 1.0 / n
    weights, means, var = _m_step(x, hard, var_floor)
    global_var = np.maximum(x.var(axis=0), var_floor)
    var = np.where(hard.sum(axis=0)[:, None] > 1, var, global_var)
    model = GmmModel(weights, means, var)

    trace = []
    prev = -np.inf
    for it in range(max_iter):
        joint = model._joint(x)
        ll_rows = logsumexp(joint, axis=1)
        total = float(ll_rows.sum())
        trace.append(total)
        if np.isfinite(prev) and abs(total - prev) <= tol * abs(total):
            break
        prev = total
        r = np.exp(joint - ll_rows[:, None])
        nk = r.sum(axis=0)
        dead = nk < 1e-10
        if np.any(dead):
            worst = np.argsort(ll_rows)
            for j, comp in enumerate(np.flatnonzero(dead)):
                idx = worst[j % n]
                logger.info("EM iteration %d: component %d empty, re-initialised at point %d", it, comp, idx)
                r[:, comp] = 0.0
                r[idx, :] = 0.0
                r[idx, comp] = 1.0
        weights, means, var = _m_step(x, r, var_floor)
        if np.any(dead):
            var[dead] = global_var
        model = GmmModel(weights, means, var)
    return GmmModel(model.weights, model.means, model.variances, log_likelihood_trace=tuple(trace))


def fit_ppca(data, q) -> PpcaModel:
    """Closed-form maximum-likelihood probabilistic PCA."""
    x = check_data(data)
    n, d = x.shape
    if not 1 <= q < d:
        raise ValidationError(f"need 1 <= q < D, got q={q}, D={d}")
    if n <= q:
        raise InsufficientDataError(f"need N > q, got N={n}, q={q}")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.maximum(evals[order], 0.0), evecs[:, order]
    noise_var = max(float(evals[q:].mean()), CLOSED_FORM_VAR_FLOOR)
    excess = evals[:q] - noise_var
    degenerate = bool(np.any(excess < 0))
    if degenerate:
        logger.warning("PPCA: top eigenvalues below noise variance, clamping loading scales at 0")
    loading = evecs[:, :q] * np.sqrt(np.maximum(excess, 0.0))
    return PpcaModel(mean, loading, noise_var, degenerate=degenerate)


def sample_truncated_normal(d, n, seed=None):
    """Product of standard normals truncated to the positive orthant."""
    if d < 1 or n < 1:
        raise ValidationError("d and n must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.abs(rng.standard_normal((n, d)))
    # |N(0,1)| can return exactly 0.0; support is strictly positive
    out[out == 0.0] = np.finfo(float).tiny
    return out


def sample_dirac_zero(d, n):
    if d < 1 or n < 1:
        raise ValidationError("d and n must be >= 1")
    return np.zeros((n, d))


HALF_NORMAL_MEAN = float(np.sqrt(2.0 / np.pi))


def fit_model(family, data, *, k=None, q=None, seed=0, mean_only=False):
    """Dispatch to the fitter of ``family`` in {gaussian, gmm, ppca}."""
    if family == "gaussian":
        return fit_gaussian(data, mean_only=mean_only)
    if family == "gmm":
        return fit_gmm(data, k if k is not None else 1, seed=seed)
    if family == "ppca":
        return fit_ppca(data, q if q is not None else 1)
    raise ValidationError(f"unknown model family {family!r}")


MODEL_FAMILIES: Sequence[str] = ("gaussian", "gmm", "ppca")
