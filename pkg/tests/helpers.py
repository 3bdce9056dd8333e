"""Shared test utilities: random Hermitian systems, desk-scale scenarios, oracles."""

import numpy as np

from eigenprecode.channel import ScenarioConfig, covariance, synth_scenario


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def rand_hpd(rng, n, shift=0.5):
    """Random Hermitian positive-definite matrix with moderate conditioning."""
    g = crandn(rng, n, n)
    return g @ g.conj().T + shift * np.eye(n)


def rand_hpsd(rng, n, rank=None):
    """Random Hermitian PSD matrix (rank-deficient if rank < n)."""
    rank = n if rank is None else rank
    g = crandn(rng, n, rank)
    return g @ g.conj().T


def dense_gen_eig(s, n_mat):
    """All generalized eigenvalues/vectors of (S, N) by explicit whitening.

    Independent of the library's power-iteration path: diagonalizes
    N^{-1/2} S N^{-1/2} with numpy's dense Hermitian eigensolver.
    """
    w, u = np.linalg.eigh(n_mat)
    n_isqrt = (u / np.sqrt(w)) @ u.conj().T
    m = n_isqrt @ s @ n_isqrt
    m = 0.5 * (m + m.conj().T)
    vals, vecs = np.linalg.eigh(m)
    return vals, n_isqrt @ vecs


def desk_config(k=4, p=10.0, sigma2=1.0, seed=0, m_v=4, m_h=4, n_v=2, n_h=2):
    return ScenarioConfig(
        m_v=m_v, m_h=m_h, n_v=n_v, n_h=n_h, k=k, p=p, sigma2=sigma2, seed=seed
    )


def desk_state(cfg, beta=0.6, sparsity=0.25):
    return synth_scenario(cfg, sparsity=sparsity, beta_model=beta)


def desk_instance(seed=0, k=4, p=10.0, beta=0.6, sparsity=0.25):
    cfg = desk_config(k=k, p=p, seed=seed)
    state = desk_state(cfg, beta=beta, sparsity=sparsity)
    return cfg, state, covariance(state, cfg)
