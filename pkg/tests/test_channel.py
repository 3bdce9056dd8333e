import numpy as np
import pytest

from eigenprecode import channel
from eigenprecode.channel import (
    JakesBeta,
    ScenarioConfig,
    config_from_dict,
    covariance,
    oversampled_dft,
    posterior_sample,
    posterior_sample_block,
    sampling_matrix,
    scenario_from_dict,
    scenario_to_dict,
    synth_scenario,
)
from eigenprecode.errors import ValidationError
from helpers import desk_config


class TestOversampledDft:
    def test_scalar(self):
        np.testing.assert_array_equal(oversampled_dft(1, 1), [[1.0]])

    def test_two_point(self):
        expected = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        np.testing.assert_allclose(oversampled_dft(2, 1), expected, atol=1e-15)

    def test_oversampled_two_by_four(self):
        v = oversampled_dft(2, 2)
        assert v.shape == (2, 4)
        np.testing.assert_allclose(v[:, 0], np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-15)
        np.testing.assert_allclose(v[:, 2], np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-15)
        # direct exponent evaluation for every entry
        for m in range(2):
            for n in range(4):
                want = np.exp(-2j * np.pi * m * n / 4) / np.sqrt(2)
                assert v[m, n] == pytest.approx(want, abs=1e-15)

    def test_row_norms(self):
        v = oversampled_dft(4, 3)
        np.testing.assert_allclose(
            np.linalg.norm(v, axis=1), np.sqrt(3.0) * np.ones(4), atol=1e-12
        )


class TestSamplingMatrix:
    def test_scalar_config(self):
        cfg = ScenarioConfig(m_v=1, m_h=1, n_v=1, n_h=1, k=1, p=1.0, sigma2=1.0)
        np.testing.assert_array_equal(sampling_matrix(cfg), [[1.0]])

    def test_kron_with_scalar(self):
        cfg = ScenarioConfig(m_v=2, m_h=1, n_v=1, n_h=1, k=1, p=1.0, sigma2=1.0)
        np.testing.assert_allclose(sampling_matrix(cfg), oversampled_dft(2, 1), atol=1e-15)

    def test_critically_sampled_unitary(self):
        cfg = ScenarioConfig(m_v=2, m_h=2, n_v=1, n_h=1, k=1, p=1.0, sigma2=1.0)
        v = sampling_matrix(cfg)
        np.testing.assert_allclose(v @ v.conj().T, np.eye(4), atol=1e-12)

    def test_desk_shape(self):
        cfg = desk_config()
        assert sampling_matrix(cfg).shape == (16, 64)


class TestSynthScenario:
    def test_full_support_normalization(self):
        cfg = desk_config(k=1, seed=3)
        state = synth_scenario(cfg, sparsity=1.0, beta_model=0.5)
        assert np.all(state.omega[0] > 0)
        assert state.omega[0].sum() == pytest.approx(cfg.m_t, rel=1e-12)

    def test_fixed_beta(self):
        cfg = desk_config(seed=4)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=1.0)
        np.testing.assert_array_equal(state.beta, np.ones(cfg.k))

    def test_seed_determinism(self):
        cfg = desk_config(seed=11)
        s1 = synth_scenario(cfg, sparsity=0.25, beta_model=0.6)
        s2 = synth_scenario(cfg, sparsity=0.25, beta_model=0.6)
        assert np.array_equal(s1.h_bar, s2.h_bar)
        assert np.array_equal(s1.omega, s2.omega)
        assert np.array_equal(s1.beta, s2.beta)

    def test_support_size(self):
        cfg = desk_config(k=2, seed=5)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=0.0)
        for k in range(cfg.k):
            assert np.count_nonzero(state.omega[k]) == int(np.ceil(0.25 * cfg.n_beams))

    def test_bad_sparsity(self):
        with pytest.raises(ValidationError):
            synth_scenario(desk_config(), sparsity=0.0, beta_model=0.5)

    def test_jakes_beta(self):
        assert JakesBeta(speed_kmph=0.0).value() == pytest.approx(1.0)
        b = JakesBeta(speed_kmph=80.0).value()
        assert 0.0 <= b <= 1.0
        cfg = desk_config(seed=6)
        state = synth_scenario(cfg, sparsity=0.5, beta_model=JakesBeta(speed_kmph=80.0))
        np.testing.assert_allclose(state.beta, b)


class TestPosteriorSample:
    def test_beta_one_is_estimate(self):
        cfg = desk_config(k=2, seed=7)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=1.0)
        draws = posterior_sample(state, cfg, np.random.default_rng(0))
        for k in range(cfg.k):
            np.testing.assert_allclose(draws[k], state.h_bar[k], atol=1e-14)

    def test_zero_beta_zero_omega(self):
        cfg = desk_config(k=1, seed=8)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=0.0)
        state.omega[:] = 0.0
        draws = posterior_sample(state, cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(draws[0], np.zeros(cfg.m_t))

    def test_sample_covariance_matches_model(self):
        cfg = ScenarioConfig(m_v=2, m_h=2, n_v=1, n_h=1, k=1, p=1.0, sigma2=1.0, seed=9)
        state = synth_scenario(cfg, sparsity=1.0, beta_model=0.6)
        r_model = covariance(state, cfg)[0]
        n = 200_000
        block = posterior_sample_block(state, cfg, n, np.random.default_rng(12))[0]
        r_hat = (block @ block.conj().T) / n
        se = np.sqrt(
            np.outer(np.diag(r_model).real, np.diag(r_model).real) / n
        )
        assert np.all(np.abs(r_hat - r_model) <= 3.0 * se + 1e-12)

    def test_sample_mean_matches_beta_hbar(self):
        cfg = ScenarioConfig(m_v=2, m_h=2, n_v=1, n_h=1, k=1, p=1.0, sigma2=1.0, seed=10)
        state = synth_scenario(cfg, sparsity=1.0, beta_model=0.5)
        n = 100_000
        block = posterior_sample_block(state, cfg, n, np.random.default_rng(13))[0]
        mean = block.mean(axis=1)
        r_model = covariance(state, cfg)[0]
        se = np.sqrt(np.diag(r_model).real / n)
        assert np.all(np.abs(mean - 0.5 * state.h_bar[0]) <= 4.0 * se)


class TestCovariance:
    def test_beta_one_rank_one(self):
        cfg = desk_config(k=1, seed=14)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=1.0)
        r = covariance(state, cfg)[0]
        want = np.outer(state.h_bar[0], state.h_bar[0].conj())
        np.testing.assert_allclose(r, want, atol=1e-12)
        assert np.linalg.matrix_rank(r, tol=1e-9 * np.trace(r).real) == 1

    def test_statistical_identity(self):
        # beta = 0, critical sampling, flat omega: R = V I V^H = I
        cfg = ScenarioConfig(m_v=2, m_h=2, n_v=1, n_h=1, k=1, p=1.0, sigma2=1.0, seed=15)
        state = synth_scenario(cfg, sparsity=1.0, beta_model=0.0)
        state.omega[0, :] = 1.0
        r = covariance(state, cfg)[0]
        np.testing.assert_allclose(r, np.eye(4), atol=1e-12)

    def test_trace_identity(self):
        cfg = desk_config(seed=16)
        state = synth_scenario(cfg, sparsity=0.4, beta_model=0.7)
        covs = covariance(state, cfg)
        for k in range(cfg.k):
            b = state.beta[k]
            want = b * b * np.linalg.norm(state.h_bar[k]) ** 2 + (1 - b * b) * state.omega[k].sum()
            assert np.trace(covs[k]).real == pytest.approx(want, rel=1e-12)

    @pytest.mark.parametrize("beta", [0.0, 0.5, 1.0])
    def test_quadratic_in_beta(self, beta):
        # R(beta) = beta^2 A + (1 - beta^2) B entrywise
        cfg = desk_config(k=1, seed=17)
        state = synth_scenario(cfg, sparsity=0.3, beta_model=beta)
        a_state = synth_scenario(cfg, sparsity=0.3, beta_model=1.0)
        # same draws: reuse h_bar/omega, only beta differs
        state.h_bar, state.omega = a_state.h_bar, a_state.omega
        r = covariance(state, cfg)[0]
        hh = np.outer(state.h_bar[0], state.h_bar[0].conj())
        v = sampling_matrix(cfg)
        stat = (v * state.omega[0][None, :]) @ v.conj().T
        np.testing.assert_allclose(r, beta**2 * hh + (1 - beta**2) * stat, atol=1e-12)

    def test_hermitian_psd(self):
        cfg = desk_config(seed=18)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=0.6)
        for r in covariance(state, cfg):
            np.testing.assert_allclose(r, r.conj().T, atol=1e-12)
            evals = np.linalg.eigvalsh(r)
            assert evals.min() >= -1e-10 * np.trace(r).real


class TestSerialization:
    def test_round_trip(self):
        cfg = desk_config(seed=19)
        state = synth_scenario(cfg, sparsity=0.25, beta_model=0.6)
        cfg2, state2 = scenario_from_dict(scenario_to_dict(cfg, state))
        assert cfg2 == cfg
        np.testing.assert_array_equal(state2.h_bar, state.h_bar)
        np.testing.assert_array_equal(state2.omega, state.omega)
        np.testing.assert_array_equal(state2.beta, state.beta)

    def test_unknown_config_key_rejected(self):
        with pytest.raises(ValidationError):
            config_from_dict({"m_v": 2, "m_h": 2, "n_v": 1, "n_h": 1, "k": 1,
                              "p": 1.0, "sigma2": 1.0, "bogus": 3})

    def test_missing_config_key_rejected(self):
        with pytest.raises(ValidationError):
            config_from_dict({"m_v": 2})

    def test_file_round_trip(self, tmp_path):
        cfg = desk_config(seed=20)
        items = [
            (cfg, synth_scenario(channel.child_config(cfg, 20, i), 0.25, 0.5))
            for i in range(3)
        ]
        path = tmp_path / "scenarios.jsonl"
        channel.write_scenarios(path, items)
        loaded = channel.read_scenarios(path)
        assert len(loaded) == 3
        for (c1, s1), (c2, s2) in zip(items, loaded):
            np.testing.assert_array_equal(s1.h_bar, s2.h_bar)
