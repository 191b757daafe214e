"""Ridge covariance accumulation and capped elliptical bonuses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DRIFT_TOL = 1e-8
BONUS_CAP = 2.0


class CovarianceAccumulator:
    """``Sigma = lambda I + sum phi phi^T`` with a Sherman-Morrison inverse.

    The inverse is refactorized from scratch whenever
    ``max |Sigma Sigma^{-1} - I|`` exceeds ``drift_tol``.
    """

    def __init__(self, dim: int, ridge: float, drift_tol: float = DRIFT_TOL):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        if not ridge > 0:
            raise ValueError("ridge must be positive")
        self.dim = dim
        self.ridge = float(ridge)
        self.drift_tol = drift_tol
        self.sigma = self.ridge * np.eye(dim)
        self.inverse = np.eye(dim) / self.ridge
        self.count = 0
        self.refactorizations = 0

    def accumulate(self, phi: np.ndarray) -> "CovarianceAccumulator":
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise ValueError(f"expected a {self.dim}-vector, got shape {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("feature vector is not finite")
        self.count += 1
        if not np.any(phi):
            return self
        self.sigma += np.outer(phi, phi)
        u = self.inverse @ phi
        self.inverse -= np.outer(u, u) / (1.0 + phi @ u)
        self.inverse = 0.5 * (self.inverse + self.inverse.T)
        if np.max(np.abs(self.sigma @ self.inverse - np.eye(self.dim))) > self.drift_tol:
            self.inverse = np.linalg.inv(self.sigma)
            self.refactorizations += 1
        return self

    def extend(self, phis) -> "CovarianceAccumulator":
        for phi in phis:
            self.accumulate(phi)
        return self

    def quadratic(self, phi: np.ndarray) -> float:
        """``phi^T Sigma^{-1} phi``, clipped at zero against round-off."""
        return max(float(phi @ self.inverse @ phi), 0.0)

    def quadratic_batch(self, phis: np.ndarray) -> np.ndarray:
        q = np.einsum("...i,ij,...j->...", phis, self.inverse, phis)
        return np.clip(q, 0.0, None)

    def logdet(self) -> float:
        sign, val = np.linalg.slogdet(self.sigma)
        return float(val)


def bonus(phi: np.ndarray, acc: CovarianceAccumulator, alpha: float, cap: float = BONUS_CAP) -> float:
    """``min(alpha * sqrt(phi^T Sigma^{-1} phi), cap)``."""
    phi = np.asarray(phi, dtype=float)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not np.all(np.isfinite(phi)):
        raise ValueError("feature vector is not finite")
    return min(alpha * math.sqrt(acc.quadratic(phi)), cap)


def bonus_table(phis: np.ndarray, acc: CovarianceAccumulator, alpha: float, cap: float = BONUS_CAP) -> np.ndarray:
    """Vectorized :func:`bonus` over any leading shape of ``phis``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return np.minimum(alpha * np.sqrt(acc.quadratic_batch(phis)), cap)


@dataclass(frozen=True)
class ScheduleConfig:
    """Constants for the bonus/ridge schedule.

    ``mode="theory"`` scales the order-level formulas by ``c_lambda``,
    ``c_zeta`` and ``beta``; ``mode="constant"`` uses ``alpha = beta`` and
    ``lambda = ridge`` at every iteration.
    """

    mode: str = "constant"
    beta: float = 1.0
    ridge: float = 1.0
    c_lambda: float = 1.0
    c_zeta: float = 1.0
    delta: float = 0.1
    observable: bool = False
    cap: float = BONUS_CAP

    def __post_init__(self):
        if self.mode not in ("theory", "constant"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.beta < 0 or not self.ridge > 0 or not 0 < self.delta < 1:
            raise ValueError("need beta >= 0, ridge > 0 and 0 < delta < 1")


def alpha_lambda_schedule(k: int, d: int, log_class_size: float, A: int, L: int,
                          delta: float, cfg: ScheduleConfig) -> tuple[float, float]:
    """``(alpha_k, lambda_k)`` for iteration ``k >= 1``.

    Theory mode: ``lambda_k = c_l d log(max(|F| k / delta, e))``,
    ``zeta_k = c_z log(|F| k / delta) / k`` and
    ``alpha_k = beta sqrt(k A^L zeta_k + lambda_k d + k zeta_k)``; the
    observable variant drops the trailing ``k zeta_k`` term.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if cfg.mode == "constant":
        return cfg.beta, cfg.ridge
    log_term = log_class_size + math.log(k) - math.log(delta)
    lam = cfg.c_lambda * d * max(log_term, 1.0)
    zeta = cfg.c_zeta * log_term / k
    inner = k * A**L * zeta + lam * d
    if not cfg.observable:
        inner += k * zeta
    return cfg.beta * math.sqrt(inner), lam
