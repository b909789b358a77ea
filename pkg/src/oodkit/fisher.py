"""Diagonal Fisher-information proxy estimated from training gradients.

The diagonal is the mean of elementwise squared per-example gradients,
regularised as ``(D + epsilon) ** xi``. Moments are accumulated online so a
record stream of any length is consumed in a single pass.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyAccumulatorError, ValidationError

DEFAULT_EPSILON = 1e-8
DEFAULT_XI = 1.0


@dataclass(frozen=True, eq=False)
class RunningMoments:
    count: int
    mean_gradient: np.ndarray
    mean_sq_gradient: np.ndarray
    mean_log_density: float = 0.0

    @classmethod
    def empty(cls, n_params):
        return cls(0, np.zeros(n_params), np.zeros(n_params), 0.0)

    @property
    def n_params(self):
        return self.mean_gradient.size

    def accumulate(self, record):
        """Fold one :class:`~oodkit.statistics.GradientRecord` into the moments."""
        if record.gradient is None:
            raise ValidationError("record carries no gradient")
        g = np.asarray(record.gradient, dtype=np.float64)
        if g.shape != (self.n_params,):
            raise ValidationError(f"gradient length {g.size} != layout length {self.n_params}")
        n = self.count + 1
        return RunningMoments(
            n,
            self.mean_gradient + (g - self.mean_gradient) / n,
            self.mean_sq_gradient + (g * g - self.mean_sq_gradient) / n,
            self.mean_log_density + (float(record.log_density) - self.mean_log_density) / n,
        )

    def accumulate_batch(self, log_density, gradients):
        """Fold a block of records (arrays) in one step."""
        g = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
        ld = np.atleast_1d(np.asarray(log_density, dtype=np.float64))
        if g.shape[1] != self.n_params or g.shape[0] != ld.size:
            raise ValidationError("batch shape does not match accumulator layout")
        if ld.size == 0:
            return self
        batch = RunningMoments(ld.size, g.mean(axis=0), (g * g).mean(axis=0), float(ld.mean()))
        return self.merge(batch)

    def merge(self, other):
        """Combine two independently accumulated instances."""
        if other.n_params != self.n_params:
            raise ValidationError("cannot merge moments with different layouts")
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        n = self.count + other.count
        w = other.count / n
        return RunningMoments(
            n,
            self.mean_gradient + (other.mean_gradient - self.mean_gradient) * w,
            self.mean_sq_gradient + (other.mean_sq_gradient - self.mean_sq_gradient) * w,
            self.mean_log_density + (other.mean_log_density - self.mean_log_density) * w,
        )


def accumulate(moments, record):
    return moments.accumulate(record)


@dataclass(frozen=True, eq=False)
class DiagonalFim:
    diag: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    xi: float = DEFAULT_XI
    mode: str = "diagonal"

    def __post_init__(self):
        diag = np.array(self.diag, dtype=np.float64).ravel()
        if self.mode not in ("diagonal", "identity"):
            raise ValidationError(f"unknown FIM mode {self.mode!r}")
        if not np.all(np.isfinite(diag)) or np.any(diag <= 0):
            raise ValidationError("FIM diagonal must be finite and strictly positive")
        diag.setflags(write=False)
        object.__setattr__(self, "diag", diag)

    @classmethod
    def identity(cls, n_params):
        return cls(np.ones(n_params), epsilon=0.0, xi=0.0, mode="identity")

    def __len__(self):
        return self.diag.size

    def whiten(self, g):
        return whiten(self, g)


def finalize_fim(moments, epsilon=DEFAULT_EPSILON, xi=DEFAULT_XI) -> DiagonalFim:
    if moments.count == 0:
        raise EmptyAccumulatorError("cannot estimate the FIM from zero records")
    if epsilon < 0:
        raise ValidationError("epsilon must be non-negative")
    diag = np.power(moments.mean_sq_gradient + epsilon, xi)
    return DiagonalFim(diag, epsilon=epsilon, xi=xi, mode="diagonal")


def whiten(fim, g):
    """Apply ``I^{-1/2}`` elementwise; ``g`` may be (P,) or (N, P)."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1] != fim.diag.size:
        raise ValidationError(f"gradient length {g.shape[-1]} != FIM length {fim.diag.size}")
    if fim.mode == "identity":
        return g
    return g / np.sqrt(fim.diag)
