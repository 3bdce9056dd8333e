"""Low-complexity framework: weighted decomposition into CSI extremes.

Multipliers and powers are computed separately for the two extremes
(instantaneous CSI via closed-form RZF, statistical CSI via the trained
statistical net) and blended per user with weights (beta^2, 1 - beta^2).
Directions then come from the generalized eigenproblem at the combined
multipliers with matrix-free (inner CG) solves, and the blended powers
are used as-is; the closed-form power solve is deliberately skipped.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg, structure
from .baselines import Precoder
from .channel import ChannelState, covariance
from .errors import (
    AllZeroChannels,
    NegativeMultiplier,
    NegativePower,
    ShapeMismatch,
    SingularT,
    SingularTh,
    SingularTw,
)
from .neural import slmnn_input

MU_CLAMP = 1e-9


@dataclass
class WeightedParts:
    mu_h: np.ndarray
    rho_h: np.ndarray
    mu_w: np.ndarray
    rho_w: np.ndarray


def instantaneous_parts(state, cfg):
    """RZF-derived multipliers and powers for the instantaneous extreme."""
    hbar = state.h_bar
    if not np.any(hbar):
        raise AllZeroChannels("all estimated channels are zero")
    gram = cfg.k * cfg.sigma2 * np.eye(cfg.m_t) + hbar.T @ hbar.conj()
    unnorm = np.linalg.solve(gram, hbar.T)  # columns W h_k
    norms2 = np.sum(np.abs(unnorm) ** 2, axis=0)
    xi2 = cfg.p / norms2.sum()
    rho_h = xi2 * norms2
    cross = hbar.conj() @ unnorm  # cross[k, i] = h_k^H W h_i
    cross2 = np.abs(cross) ** 2
    r = cfg.sigma2 + xi2 * (cross2.sum(axis=1) - np.diag(cross2))
    gammas = xi2 * np.diag(cross2) / r
    # T built from |h_k^H p_i|^2 = |cross[k, i]|^2 / ||W h_i||^2
    quads = cross2 / norms2[None, :]
    t_h = -quads
    np.fill_diagonal(t_h, np.diag(quads) / gammas)
    try:
        mu_h = np.linalg.solve(t_h.conj().T, np.full(cfg.k, cfg.sigma2))
    except np.linalg.LinAlgError as exc:
        raise SingularTh(f"instantaneous T solve failed: {exc}") from exc
    if not np.all(np.isfinite(mu_h)):
        raise SingularTh("instantaneous T solve produced non-finite values")
    if np.any(mu_h < -MU_CLAMP):
        raise NegativeMultiplier(
            f"instantaneous multipliers negative (min {mu_h.min():.3e})"
        )
    return np.clip(mu_h, 0.0, None), rho_h


def statistical_parts(state, cfg, slmnn):
    """Statistical-extreme multipliers from the trained net, powers from the
    closed-form solve with every beta forced to zero."""
    x = slmnn_input(state, cfg)
    if (slmnn.spec.input_h, slmnn.spec.input_w) != x.shape:
        raise ShapeMismatch(
            f"statistical net expects {(slmnn.spec.input_h, slmnn.spec.input_w)}, "
            f"scenario gives {x.shape}"
        )
    nu = 10.0 * np.log10(cfg.p / cfg.sigma2)
    mu_w = np.asarray(slmnn.predict(x, nu, p_budget=cfg.p), dtype=np.float64)
    state0 = ChannelState(h_bar=state.h_bar, omega=state.omega,
                          beta=np.zeros(cfg.k))
    covs0 = covariance(state0, cfg)
    rho_w = np.zeros(cfg.k)
    active = mu_w > 1e-12 * cfg.p
    if np.any(active):
        idx = np.flatnonzero(active)
        mu_eff = np.where(active, mu_w, 0.0)
        sub_covs = [covs0[i] for i in idx]
        total = sum(mu_eff[i] * covs0[i] for i in range(cfg.k))
        eye = cfg.sigma2 * np.eye(cfg.m_t, dtype=np.complex128)
        s_stack = np.stack([mu_eff[k] * covs0[k] for k in idx])
        n_stack = np.stack([eye + total - mu_eff[k] * covs0[k] for k in idx])
        pairs = linalg.max_generalized_eigenpairs_batch(s_stack, n_stack, tol=1e-8,
                                                        mode="dense")
        dirs = np.stack([p.vector for p in pairs])
        gammas = np.array([p.value for p in pairs])
        try:
            rho_w[idx] = structure.power_control(dirs, gammas, sub_covs, cfg)
        except (SingularT, NegativePower) as exc:
            raise SingularTw(f"statistical power solve failed: {exc}") from exc
    return mu_w, rho_w


def combine(parts, betas):
    """Per-user convex blend with weights (beta^2, 1 - beta^2)."""
    betas = np.asarray(betas, dtype=np.float64)
    w = betas * betas
    mu = w * parts.mu_h + (1.0 - w) * parts.mu_w
    rho = w * parts.rho_h + (1.0 - w) * parts.rho_w
    return mu, rho


def run(state, cfg, slmnn, eps=None, covs=None):
    """Full low-complexity precoder: blend, prune, matrix-free directions."""
    if eps is None:
        eps = structure.default_eps(cfg)
    mu_h, rho_h = instantaneous_parts(state, cfg)
    mu_w, rho_w = statistical_parts(state, cfg, slmnn)
    parts = WeightedParts(mu_h=mu_h, rho_h=rho_h, mu_w=mu_w, rho_w=rho_w)
    mu, rho = combine(parts, state.beta)
    if covs is None:
        covs = covariance(state, cfg)
    active = mu > eps
    mu_eff = np.where(active, mu, 0.0)
    directions = np.zeros((cfg.k, cfg.m_t), dtype=np.complex128)
    gammas = np.zeros(cfg.k)
    powers = np.where(active, rho, 0.0)
    idx = np.flatnonzero(active)
    if idx.size:
        total = sum(mu_eff[i] * covs[i] for i in range(cfg.k))
        eye = cfg.sigma2 * np.eye(cfg.m_t, dtype=np.complex128)
        s_stack = np.stack([mu_eff[k] * covs[k] for k in idx])
        n_stack = np.stack([eye + total - mu_eff[k] * covs[k] for k in idx])
        pairs = linalg.max_generalized_eigenpairs_batch(s_stack, n_stack, tol=1e-8)
        for j, k in enumerate(idx):
            directions[k] = pairs[j].vector
            gammas[k] = pairs[j].value
    return Precoder(directions=directions, powers=powers, gammas=gammas)
