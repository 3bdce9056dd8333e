"""Monte-Carlo ergodic-rate evaluation and method comparison.

Rates are estimated by averaging the instantaneous log terms over
posteriori channel draws (common random numbers across methods so
orderings are cheap to resolve), reported next to the covariance-based
upper bound and the wall-clock cost of computing the precoder alone.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import iterative, lowcx, structure
from .baselines import rzf, slnr
from .channel import covariance, posterior_sample_block
from .errors import MissingWeights, ValidationError
from .neural import lmnn_input
from .rng import substream

METHODS = ("rzf", "slnr", "iterative", "lmnn", "lowcx")


@dataclass
class EvalReport:
    method: str
    sum_rate_mc: float
    stderr: float
    sum_rate_ub: float
    per_user_rates: np.ndarray
    per_user_stderr: np.ndarray
    wall_clock_us: float
    mc_samples: int


def _rate_draws(precoder, state, cfg, n_samples, seed):
    """Per-user per-draw instantaneous rate terms, shape (K, n)."""
    rng = substream(seed, "mc")
    draws = posterior_sample_block(state, cfg, n_samples, rng)
    vecs = precoder.vectors()
    out = np.empty((cfg.k, n_samples))
    for k in range(cfg.k):
        amps = vecs.conj() @ draws[k]          # (K, n): h_k^H p_i per draw
        powers = np.abs(amps) ** 2
        total = cfg.sigma2 + powers.sum(axis=0)
        interf = total - powers[k]
        out[k] = np.log2(total) - np.log2(interf)
    return out


def ergodic_rates_mc(precoder, state, cfg, n_samples, seed=0):
    """Monte-Carlo per-user ergodic rates and their standard errors."""
    if n_samples < 100:
        raise ValidationError("n_samples must be at least 100")
    d = _rate_draws(precoder, state, cfg, n_samples, seed)
    rates = d.mean(axis=1)
    stderr = d.std(axis=1, ddof=1) / np.sqrt(n_samples)
    return rates, stderr


def sum_rate_mc(precoder, state, cfg, n_samples, seed=0):
    """(sum rate, stderr of the sum) over common draws."""
    d = _rate_draws(precoder, state, cfg, n_samples, seed)
    per_draw = d.sum(axis=0)
    return float(per_draw.mean()), float(per_draw.std(ddof=1) / np.sqrt(n_samples))


def build_precoder(method, state, cfg, covs, nets=None, opts=None, eps=None):
    """Precoder for the named method; nets maps 'lmnn'/'slmnn' to TrainedNet."""
    nets = nets or {}
    if method == "rzf":
        return rzf(state, cfg)
    if method == "slnr":
        return slnr(covs, cfg)
    if method == "iterative":
        return iterative.solve(state, cfg, opts, covs=covs)
    if method == "lmnn":
        net = nets.get("lmnn")
        if net is None:
            raise MissingWeights("method 'lmnn' needs trained LMNN weights")
        nu = 10.0 * np.log10(cfg.p / cfg.sigma2)
        mu = net.predict(lmnn_input(state, cfg), nu, p_budget=cfg.p)
        return structure.recover_precoder(mu, covs, cfg, eps=eps)
    if method == "lowcx":
        net = nets.get("slmnn")
        if net is None:
            raise MissingWeights("method 'lowcx' needs trained SLMNN weights")
        return lowcx.run(state, cfg, net, eps=eps, covs=covs)
    raise ValidationError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")


def compare(state, cfg, methods, nets=None, n_samples=2000, seed=0, opts=None):
    """Evaluate every requested method on identical channel draws.

    Wall clock covers precoder computation only (covariances are
    precomputed once and shared, channel synthesis and the MC average
    are excluded).
    """
    covs = covariance(state, cfg)
    reports = []
    for method in methods:
        t0 = time.perf_counter()
        prec = build_precoder(method, state, cfg, covs, nets=nets, opts=opts)
        wall_us = (time.perf_counter() - t0) * 1e6
        d = _rate_draws(prec, state, cfg, n_samples, seed)
        per_draw_sum = d.sum(axis=0)
        reports.append(
            EvalReport(
                method=method,
                sum_rate_mc=float(per_draw_sum.mean()),
                stderr=float(per_draw_sum.std(ddof=1) / np.sqrt(n_samples)),
                sum_rate_ub=float(iterative.upper_bound_rates(prec, covs, cfg).sum()),
                per_user_rates=d.mean(axis=1),
                per_user_stderr=d.std(axis=1, ddof=1) / np.sqrt(n_samples),
                wall_clock_us=wall_us,
                mc_samples=n_samples,
            )
        )
    return reports
