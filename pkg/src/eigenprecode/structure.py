"""Precoder recovery from Lagrange multipliers, and its inverse.

Given nonnegative multipliers mu (one per user, summing to at most the
power budget), each user's direction is the maximum generalized
eigenvector of the pencil

    S_k = mu_k R_k,      N_k = sigma2 I + sum_{i != k} mu_i R_i,

its SINR target gamma_k the matching eigenvalue, and the powers solve
the K x K system T rho = sigma2 1 that makes every SINR constraint
tight.  The reverse map recovers mu from a precoder that carries its
gammas via the adjoint system T^H mu = sigma2 1.
"""

import numpy as np

from . import linalg
from .baselines import Precoder
from .errors import (
    NegativeMultiplier,
    NegativePower,
    SingularT,
    ValidationError,
)

MU_CLAMP = 1e-9  # negative multiplier entries above this are rounding, below an error


def default_eps(cfg):
    """Pruning threshold for near-zero multipliers: scale-aware default."""
    return 1e-3 * cfg.p / cfg.k


def check_multipliers(mu, p, budget_tol=1e-6):
    mu = np.asarray(mu, dtype=np.float64)
    if mu.ndim != 1:
        raise ValidationError("multipliers must be a vector")
    if np.any(mu < 0):
        raise ValidationError("multipliers must be nonnegative")
    if mu.sum() > p * (1.0 + budget_tol):
        raise ValidationError(
            f"multipliers exceed the power budget: sum={mu.sum():.6g} > P={p:.6g}"
        )
    return mu


def assemble_sn(k, mu, covs, cfg):
    """Pencil (S_k, N_k) for user k at the given multipliers."""
    mu = np.asarray(mu, dtype=np.float64)
    s = mu[k] * covs[k]
    n = cfg.sigma2 * np.eye(cfg.m_t, dtype=np.complex128)
    for i in range(len(covs)):
        if i != k and mu[i] != 0.0:
            n = n + mu[i] * covs[i]
    return s, n


def directions_from_mu(mu, covs, cfg, tol=1e-10, strategy="auto"):
    """Unit directions and SINR targets for every user, shape ((K, M_t), (K,))."""
    k_users = len(covs)
    directions = np.zeros((k_users, cfg.m_t), dtype=np.complex128)
    gammas = np.zeros(k_users)
    for k in range(k_users):
        s, n = assemble_sn(k, mu, covs, cfg)
        pair = linalg.max_generalized_eigenpair(s, n, tol=tol, strategy=strategy,
                                                validate=False)
        directions[k] = pair.vector
        gammas[k] = pair.value
    return directions, gammas


def build_t(directions, gammas, covs):
    """Coupling matrix T: t_kk = (1/gamma_k) p_k^H R_k p_k, t_ki = -p_i^H R_k p_i."""
    k_users = len(covs)
    t = np.empty((k_users, k_users))
    for k in range(k_users):
        g = directions.conj() @ covs[k]  # rows p_i^H R_k
        quads = np.real(np.einsum("im,im->i", g, directions))
        t[k] = -quads
        t[k, k] = quads[k] / gammas[k]
    return t


def power_control(directions, gammas, covs, cfg):
    """Powers making every SINR constraint tight: solve T rho = sigma2 1."""
    gammas = np.asarray(gammas, dtype=np.float64)
    if np.any(gammas <= 0):
        raise ValidationError("power control requires strictly positive gammas")
    t = build_t(directions, gammas, covs)
    k_users = t.shape[0]
    rhs = np.full(k_users, cfg.sigma2)
    try:
        rho = np.linalg.solve(t, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularT(f"T solve failed: {exc}") from exc
    if not np.all(np.isfinite(rho)) or np.linalg.norm(t @ rho - rhs) > 1e-8 * np.linalg.norm(rhs):
        raise SingularT("T is numerically singular")
    neg_tol = 1e-9 * max(float(np.abs(rho).max()), cfg.sigma2)
    if np.any(rho < -neg_tol):
        raise NegativePower(
            f"power solve produced negative entries (min {rho.min():.3e}); "
            "the gamma targets are not jointly achievable"
        )
    return np.clip(rho, 0.0, None)


def mu_from_precoder(precoder, covs, cfg):
    """Multipliers consistent with a precoder carrying gammas: T^H mu = sigma2 1.

    Users with zero power (pruned) are excluded from the solve and get
    mu = 0.  Entries in [-1e-9, 0] are rounding and clamp to zero; more
    negative values mean the precoder is not KKT-consistent.
    """
    if precoder.gammas is None:
        raise ValidationError("precoder must carry gammas to recover multipliers")
    k_users = precoder.k
    active = (precoder.powers > 0) & (precoder.gammas > 0)
    mu = np.zeros(k_users)
    if not np.any(active):
        return mu
    idx = np.flatnonzero(active)
    sub_covs = [covs[i] for i in idx]
    t = build_t(precoder.directions[idx], precoder.gammas[idx], sub_covs)
    rhs = np.full(len(idx), cfg.sigma2)
    try:
        mu_active = np.linalg.solve(t.conj().T, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularT(f"adjoint T solve failed: {exc}") from exc
    if not np.all(np.isfinite(mu_active)):
        raise SingularT("adjoint T solve produced non-finite values")
    if np.any(mu_active < -MU_CLAMP):
        raise NegativeMultiplier(
            f"recovered multipliers have negative entries (min {mu_active.min():.3e}); "
            "precoder is not KKT-consistent"
        )
    mu[idx] = np.clip(mu_active, 0.0, None)
    return mu


def recover_precoder(mu, covs, cfg, eps=None, tol=1e-10, strategy="auto"):
    """Full precoder from multipliers: prune, eigen directions, closed-form powers."""
    mu = check_multipliers(mu, cfg.p)
    if eps is None:
        eps = default_eps(cfg)
    k_users = len(covs)
    active = mu > eps
    mu_eff = np.where(active, mu, 0.0)
    directions = np.zeros((k_users, cfg.m_t), dtype=np.complex128)
    powers = np.zeros(k_users)
    gammas = np.zeros(k_users)
    if not np.any(active):
        return Precoder(directions=directions, powers=powers, gammas=gammas)
    idx = np.flatnonzero(active)
    sub_covs = [covs[i] for i in idx]
    sub_cfg_mu = mu_eff[idx]
    dirs_a, gammas_a = directions_from_mu(sub_cfg_mu, sub_covs, cfg, tol=tol, strategy=strategy)
    rho_a = power_control(dirs_a, gammas_a, sub_covs, cfg)
    directions[idx] = dirs_a
    powers[idx] = rho_a
    gammas[idx] = gammas_a
    return Precoder(directions=directions, powers=powers, gammas=gammas)


def _kkt_parts(precoder, mu, covs, cfg):
    """(stationarity residual, complementary-slackness violation), each max over users."""
    mu = np.asarray(mu, dtype=np.float64)
    vecs = precoder.vectors()
    stationarity = 0.0
    slackness = 0.0
    for k in range(precoder.k):
        if mu[k] == 0.0 and precoder.powers[k] == 0.0:
            continue
        s, n = assemble_sn(k, mu, covs, cfg)
        d = precoder.directions[k]
        gamma = precoder.gammas[k]
        if precoder.powers[k] > 0:
            nv = n @ d
            stat = np.linalg.norm(s @ d - gamma * nv) / np.linalg.norm(nv)
            stationarity = max(stationarity, float(stat))
        if mu[k] > 0.0:
            interference = 0.0
            for i in range(precoder.k):
                if i != k:
                    interference += float(np.real(vecs[i].conj() @ covs[k] @ vecs[i]))
            signal = float(np.real(vecs[k].conj() @ covs[k] @ vecs[k]))
            c_k = 1.0 + interference / cfg.sigma2 - signal / (cfg.sigma2 * gamma)
            slackness = max(slackness, abs(mu[k] * c_k))
    return stationarity, slackness


def kkt_residual(precoder, mu, covs, cfg):
    """Max stationarity residual plus max complementary-slackness violation."""
    stationarity, slackness = _kkt_parts(precoder, mu, covs, cfg)
    return stationarity + slackness
