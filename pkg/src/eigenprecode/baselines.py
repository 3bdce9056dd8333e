"""Reference precoders: regularized zero-forcing, SLNR, and statistical beam selection."""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .channel import sampling_matrix
from .errors import (
    AllZeroChannels,
    RequiresCriticalSampling,
    RequiresStatisticalOnly,
    ValidationError,
)


@dataclass
class Precoder:
    """K unit directions with per-user powers.

    Rows of `directions` are unit 2-norm except for pruned users, whose
    rows (and powers) are exactly zero.  `gammas` carries the per-user
    SINR targets when the precoder came out of structure recovery.
    """

    directions: np.ndarray           # (K, M_t)
    powers: np.ndarray               # (K,)
    gammas: np.ndarray | None = None

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.complex128)
        self.powers = np.asarray(self.powers, dtype=np.float64)
        if self.gammas is not None:
            self.gammas = np.asarray(self.gammas, dtype=np.float64)
        if self.directions.ndim != 2 or self.powers.shape != (self.directions.shape[0],):
            raise ValidationError("inconsistent precoder shapes")
        if np.any(self.powers < 0):
            raise ValidationError("powers must be nonnegative")

    @property
    def k(self):
        return self.directions.shape[0]

    def vectors(self):
        """Full precoding vectors p_k = sqrt(rho_k) * direction_k, shape (K, M_t)."""
        return np.sqrt(self.powers)[:, None] * self.directions

    def total_power(self):
        return float(self.powers.sum())


def rzf(state, cfg):
    """Regularized zero-forcing with the power budget split by the regularized inverse."""
    hbar = state.h_bar
    if not np.any(hbar):
        raise AllZeroChannels("all estimated channels are zero")
    gram = cfg.k * cfg.sigma2 * np.eye(cfg.m_t) + hbar.T @ hbar.conj()
    unnorm = np.linalg.solve(gram, hbar.T)  # columns W h_bar_k
    norms2 = np.sum(np.abs(unnorm) ** 2, axis=0)
    xi2 = cfg.p / norms2.sum()
    powers = xi2 * norms2
    directions = np.zeros((cfg.k, cfg.m_t), dtype=np.complex128)
    for k in range(cfg.k):
        if norms2[k] > 0:
            directions[k] = unnorm[:, k] / np.sqrt(norms2[k])
    return Precoder(directions=directions, powers=powers)


def slnr(covs, cfg, tol=1e-10):
    """Max-SLNR directions (unit multipliers) with equal power split."""
    directions = np.zeros((cfg.k, cfg.m_t), dtype=np.complex128)
    for k in range(cfg.k):
        noise = cfg.sigma2 * np.eye(cfg.m_t, dtype=np.complex128)
        for i in range(cfg.k):
            if i != k:
                noise = noise + covs[i]
        pair = linalg.max_generalized_eigenpair(covs[k], noise, tol=tol)
        directions[k] = pair.vector
    powers = np.full(cfg.k, cfg.p / cfg.k)
    return Precoder(directions=directions, powers=powers)


def bdma_select(state, cfg, mu):
    """Statistical beam selection: each user gets one DFT column.

    Valid only in the statistical-only, critically-sampled regime where
    the generalized eigenproblem diagonalizes in the beam domain; the
    selected index maximizes the per-beam gain-to-leakage ratio and
    powers follow from the closed-form power control.
    """
    from . import structure  # deferred: structure returns Precoder from this module

    if cfg.n_v != 1 or cfg.n_h != 1:
        raise RequiresCriticalSampling("bdma_select needs n_v = n_h = 1")
    if np.any(state.beta != 0):
        raise RequiresStatisticalOnly("bdma_select needs beta = 0 for all users")
    mu = np.asarray(mu, dtype=np.float64)
    v = sampling_matrix(cfg)
    directions = np.zeros((cfg.k, cfg.m_t), dtype=np.complex128)
    gammas = np.empty(cfg.k)
    for k in range(cfg.k):
        denom = np.full(cfg.n_beams, cfg.sigma2)
        for i in range(cfg.k):
            if i != k:
                denom = denom + mu[i] * state.omega[i]
        xi = mu[k] * state.omega[k] / denom
        m_k = int(np.argmax(xi))  # ties break to the lowest index
        directions[k] = v[:, m_k]
        gammas[k] = xi[m_k]
    from .channel import covariance

    covs = covariance(state, cfg)
    powers = structure.power_control(directions, gammas, covs, cfg)
    return Precoder(directions=directions, powers=powers, gammas=gammas)
