"""Oracle solver: weighted sum of rate upper bounds, maximized by fixed-point iteration.

The update alternates a closed-form step parameter with a per-user
matrix solve and renormalizes the total power to the budget after each
sweep.  Multi-start (one RZF, one SLNR, the rest random unit
directions) guards against bad local optima; the best start by weighted
upper-bound sum wins, ties to the lowest start index.
"""

from dataclasses import dataclass

import numpy as np

from .baselines import Precoder, rzf, slnr
from .channel import covariance
from .errors import SingularSystem, ValidationError
from .rng import complex_normal, substream


@dataclass
class IterativeOptions:
    max_iters: int = 20
    n_starts: int = 10
    weights: np.ndarray | None = None  # per-user rate weights, default all ones
    tol: float = 1e-7                  # relative objective change for early stop

    def __post_init__(self):
        if self.max_iters < 1 or self.n_starts < 1:
            raise ValidationError("max_iters and n_starts must be >= 1")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64)
            if np.any(self.weights < 0):
                raise ValidationError("weights must be nonnegative")


def _quad_matrix(covs, vecs):
    """Q[k, i] = Re(p_i^H R_k p_i) for all users."""
    k_users = len(covs)
    q = np.empty((k_users, k_users))
    for k in range(k_users):
        g = vecs.conj() @ covs[k]
        q[k] = np.real(np.einsum("im,im->i", g, vecs))
    return q


def upper_bound_rates(precoder, covs, cfg):
    """Jensen upper bounds on the per-user ergodic rates, bit/s/Hz."""
    q = _quad_matrix(covs, precoder.vectors())
    full = cfg.sigma2 + q.sum(axis=1)
    interf = full - np.diag(q)
    return np.log2(full) - np.log2(interf)


def sinr(precoder, covs, cfg):
    """Per-user SINR of the covariance-averaged model."""
    q = _quad_matrix(covs, precoder.vectors())
    full = cfg.sigma2 + q.sum(axis=1)
    sig = np.diag(q).copy()
    return sig / (full - sig)


def iterate_once(precoder, covs, cfg, weights=None):
    """One fixed-point sweep; output rescaled to the full power budget."""
    k_users = len(covs)
    w = np.ones(k_users) if weights is None else np.asarray(weights, dtype=np.float64)
    vecs = precoder.vectors()
    if not np.any(vecs):
        raise ValidationError("iterate_once requires a nonzero precoder")
    q = _quad_matrix(covs, vecs)
    full = cfg.sigma2 + q.sum(axis=1)
    interf = full - np.diag(q)
    a_scale = w / interf
    b_mat = np.zeros((cfg.m_t, cfg.m_t), dtype=np.complex128)
    for k in range(k_users):
        b_mat += (a_scale[k] - w[k] / full[k]) * covs[k]
    rhs = np.empty((cfg.m_t, k_users), dtype=np.complex128)
    mu_t = 0.0
    for k in range(k_users):
        rk_pk = covs[k] @ vecs[k]
        rhs[:, k] = a_scale[k] * rk_pk
        mu_t += a_scale[k] * q[k, k] - float(np.real(vecs[k].conj() @ (b_mat @ vecs[k])))
    # the trace sum equals (multiplier * total power) at stationarity; divide by
    # the budget so KKT points are exact fixed points for any P
    mu_t /= cfg.p
    try:
        new_vecs = np.linalg.solve(b_mat + mu_t * np.eye(cfg.m_t), rhs).T
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"fixed-point solve failed: {exc}") from exc
    if not np.all(np.isfinite(new_vecs)):
        raise SingularSystem("fixed-point solve produced non-finite values")
    total = float(np.sum(np.abs(new_vecs) ** 2))
    if total == 0.0:
        raise SingularSystem("iteration collapsed to the zero precoder")
    new_vecs *= np.sqrt(cfg.p / total)
    powers = np.sum(np.abs(new_vecs) ** 2, axis=1)
    directions = np.zeros_like(new_vecs)
    nz = powers > 0
    directions[nz] = new_vecs[nz] / np.sqrt(powers[nz])[:, None]
    return Precoder(directions=directions, powers=powers)


def _random_start(cfg, rng):
    directions = complex_normal(rng, (cfg.k, cfg.m_t))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    powers = np.full(cfg.k, cfg.p / cfg.k)
    return Precoder(directions=directions, powers=powers)


def solve(state, cfg, opts=None, covs=None):
    """Best-of-starts fixed-point solve; returns the precoder with gammas = SINR."""
    opts = opts or IterativeOptions()
    if covs is None:
        covs = covariance(state, cfg)
    w = np.ones(cfg.k) if opts.weights is None else opts.weights

    starts = [rzf(state, cfg), slnr(covs, cfg)][: opts.n_starts]
    for j in range(opts.n_starts - len(starts)):
        starts.append(_random_start(cfg, substream(cfg.seed, "iterative", j)))

    best = None
    best_obj = -np.inf
    for prec in starts:
        obj = float(w @ upper_bound_rates(prec, covs, cfg))
        for _ in range(opts.max_iters):
            try:
                nxt = iterate_once(prec, covs, cfg, w)
            except SingularSystem:
                break
            nxt_obj = float(w @ upper_bound_rates(nxt, covs, cfg))
            done = abs(nxt_obj - obj) <= opts.tol * max(1.0, abs(obj))
            prec, obj = nxt, nxt_obj
            if done:
                break
        if obj > best_obj:
            best, best_obj = prec, obj
    gammas = sinr(best, covs, cfg)
    return Precoder(directions=best.directions, powers=best.powers, gammas=gammas)
