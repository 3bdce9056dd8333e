"""Beam-domain channel model and scenario synthesis.

A scenario is a set of K single-antenna users served by an
M_v x M_h planar array.  Per user we carry an estimated instantaneous
channel h_bar, a nonnegative beam coupling vector omega over the
columns of an oversampled-DFT spatial sampling matrix, and a time
correlation coefficient beta in [0, 1].  A channel realization blends
the estimate with a random beam-domain term:

    h = beta * h_bar + sqrt(1 - beta^2) * V (sqrt(omega) o w),   w ~ CN(0, I)

so beta = 1 is the quasi-static (instantaneous CSI) extreme and
beta = 0 the statistical-only extreme.
"""

import json
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import j0

from .errors import ValidationError
from .rng import complex_normal, substream

SPEED_OF_LIGHT = 299792458.0


@dataclass(frozen=True)
class ScenarioConfig:
    m_v: int
    m_h: int
    n_v: int
    n_h: int
    k: int
    p: float
    sigma2: float
    seed: int = 0

    def __post_init__(self):
        for name in ("m_v", "m_h", "n_v", "n_h", "k"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"config field {name} must be >= 1")
        if not self.p > 0:
            raise ValidationError("config field p must be > 0")
        if not self.sigma2 > 0:
            raise ValidationError("config field sigma2 must be > 0")

    @property
    def m_t(self):
        return self.m_v * self.m_h

    @property
    def n_os(self):
        return self.n_v * self.n_h

    @property
    def n_beams(self):
        return self.n_os * self.m_t


@dataclass
class ChannelState:
    h_bar: np.ndarray  # (K, M_t) complex
    omega: np.ndarray  # (K, N*M_t) nonnegative real
    beta: np.ndarray   # (K,) in [0, 1]

    def __post_init__(self):
        self.h_bar = np.asarray(self.h_bar, dtype=np.complex128)
        self.omega = np.asarray(self.omega, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if np.any(self.omega < 0):
            raise ValidationError("omega must be entrywise nonnegative")
        if np.any(self.beta < 0) or np.any(self.beta > 1):
            raise ValidationError("beta must lie in [0, 1]")


@dataclass(frozen=True)
class JakesBeta:
    """Time correlation from mobility: beta = J0(2 pi f_d tau), clipped to [0, 1]."""

    speed_kmph: float
    carrier_hz: float = 4.8e9
    block_s: float = 0.5e-3

    def value(self):
        f_d = self.speed_kmph / 3.6 * self.carrier_hz / SPEED_OF_LIGHT
        return float(np.clip(j0(2.0 * np.pi * f_d * self.block_s), 0.0, 1.0))


def _resolve_beta(beta_model):
    if isinstance(beta_model, JakesBeta):
        return beta_model.value()
    b = float(beta_model)
    if not 0.0 <= b <= 1.0:
        raise ValidationError(f"fixed beta must lie in [0, 1], got {b}")
    return b


def oversampled_dft(m, n_f):
    """M x (N_f * M) oversampled DFT matrix, entry (1/sqrt(M)) e^{-j2pi mn/(N_f M)}."""
    if m < 1 or n_f < 1:
        raise ValidationError("oversampled_dft requires m >= 1 and n_f >= 1")
    rows = np.arange(m)[:, None]
    cols = np.arange(n_f * m)[None, :]
    return np.exp(-2j * np.pi * rows * cols / (n_f * m)) / np.sqrt(m)


def sampling_matrix(cfg):
    """Spatial sampling matrix V = V_horizontal kron V_vertical, M_t x N*M_t."""
    return np.kron(oversampled_dft(cfg.m_h, cfg.n_h), oversampled_dft(cfg.m_v, cfg.n_v))


def synth_scenario(cfg, sparsity, beta_model, rng=None):
    """Draw a synthetic scenario with sparse beam-domain coupling.

    Each user's omega gets a contiguous-plus-random support of
    ceil(sparsity * N * M_t) beams with log-normal powers, normalized to
    sum(omega) = M_t so the average per-antenna gain is one; h_bar is
    drawn consistently as V (sqrt(omega) o g) with g ~ CN(0, I).
    Deterministic given (cfg, cfg.seed).
    """
    if not 0.0 < sparsity <= 1.0:
        raise ValidationError("sparsity must lie in (0, 1]")
    if rng is None:
        rng = substream(cfg.seed, "scenario")
    beta_value = _resolve_beta(beta_model)
    v = sampling_matrix(cfg)
    n_beams = cfg.n_beams
    n_support = int(np.ceil(sparsity * n_beams))

    h_bar = np.empty((cfg.k, cfg.m_t), dtype=np.complex128)
    omega = np.zeros((cfg.k, n_beams), dtype=np.float64)
    for k in range(cfg.k):
        n_contig = (n_support + 1) // 2
        start = int(rng.integers(n_beams))
        support = (start + np.arange(n_contig)) % n_beams
        if n_support > n_contig:
            rest = np.setdiff1d(np.arange(n_beams), support)
            extra = rng.choice(rest, size=n_support - n_contig, replace=False)
            support = np.concatenate([support, extra])
        powers = np.exp(rng.normal(0.0, 1.0, size=n_support))
        omega[k, support] = powers
        omega[k] *= cfg.m_t / omega[k].sum()
        g = complex_normal(rng, n_beams)
        h_bar[k] = v @ (np.sqrt(omega[k]) * g)
    beta = np.full(cfg.k, beta_value)
    return ChannelState(h_bar=h_bar, omega=omega, beta=beta)


def posterior_sample_block(state, cfg, n, rng):
    """n posteriori channel draws per user, shape (K, M_t, n)."""
    v = sampling_matrix(cfg)
    out = np.empty((cfg.k, cfg.m_t, n), dtype=np.complex128)
    for k in range(cfg.k):
        w = complex_normal(rng, (cfg.n_beams, n))
        scaled = np.sqrt(state.omega[k])[:, None] * w
        b = state.beta[k]
        out[k] = b * state.h_bar[k][:, None] + np.sqrt(1.0 - b * b) * (v @ scaled)
    return out


def posterior_sample(state, cfg, rng):
    """One posteriori channel realization per user (list of K vectors)."""
    block = posterior_sample_block(state, cfg, 1, rng)
    return [block[k, :, 0] for k in range(cfg.k)]


def covariance(state, cfg):
    """Per-user channel covariances R_k = b^2 h h^H + (1-b^2) V diag(omega) V^H."""
    v = sampling_matrix(cfg)
    covs = []
    for k in range(cfg.k):
        b = state.beta[k]
        r = b * b * np.outer(state.h_bar[k], state.h_bar[k].conj())
        r = r + (1.0 - b * b) * ((v * state.omega[k][None, :]) @ v.conj().T)
        covs.append(0.5 * (r + r.conj().T))
    return covs


# ---------------------------------------------------------------------------
# serialization: one scenario per JSON line

_CONFIG_FIELDS = ("m_v", "m_h", "n_v", "n_h", "k", "p", "sigma2", "seed")


def config_to_dict(cfg):
    return {name: getattr(cfg, name) for name in _CONFIG_FIELDS}


def config_from_dict(d):
    unknown = set(d) - set(_CONFIG_FIELDS)
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    missing = set(_CONFIG_FIELDS) - set(d) - {"seed"}
    if missing:
        raise ValidationError(f"missing config fields: {sorted(missing)}")
    return ScenarioConfig(**{k: d[k] for k in _CONFIG_FIELDS if k in d})


def scenario_to_dict(cfg, state):
    users = []
    for k in range(cfg.k):
        users.append(
            {
                "h_bar_re": state.h_bar[k].real.tolist(),
                "h_bar_im": state.h_bar[k].imag.tolist(),
                "omega": state.omega[k].tolist(),
                "beta": float(state.beta[k]),
            }
        )
    return {"config": config_to_dict(cfg), "users": users}


def scenario_from_dict(d):
    cfg = config_from_dict(d["config"])
    users = d["users"]
    if len(users) != cfg.k:
        raise ValidationError(f"expected {cfg.k} users, found {len(users)}")
    h_bar = np.array(
        [np.asarray(u["h_bar_re"]) + 1j * np.asarray(u["h_bar_im"]) for u in users]
    )
    omega = np.array([u["omega"] for u in users], dtype=np.float64)
    beta = np.array([u["beta"] for u in users], dtype=np.float64)
    return cfg, ChannelState(h_bar=h_bar, omega=omega, beta=beta)


def write_scenarios(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for cfg, state in items:
            fh.write(json.dumps(scenario_to_dict(cfg, state)) + "\n")


def read_scenarios(path):
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(scenario_from_dict(json.loads(line)))
    return items


def child_config(cfg, top_seed, index):
    """Config for the index-th scenario of a batch, with a derived seed."""
    child_seed = int(substream(top_seed, "scenario", index).integers(2**63))
    return replace(cfg, seed=child_seed)
