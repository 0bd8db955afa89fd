import math

import numpy as np
import pytest

from labelsift import mixfit
from labelsift.uncertainty import CONFIDENCE, UNCERTAINTY, ScoreVector


def confidence_vector(values):
    return ScoreVector(np.asarray(values, dtype=np.float64), CONFIDENCE, "mean_max_softmax")


def bimodal_sample(rng, n_noisy=2000, n_clean=3000):
    """Scores from 0.4*Beta(2,8) + 0.6*Beta(8,2); noisy half first."""
    return np.concatenate([rng.beta(2, 8, n_noisy), rng.beta(8, 2, n_clean)])


class TestBetaLogPdf:
    def test_uniform_density(self):
        assert mixfit.beta_log_pdf(0.5, 1.0, 1.0) == pytest.approx(0.0)

    def test_beta22_closed_form(self):
        # density 6 x (1 - x) at x = 0.5 is 1.5
        assert mixfit.beta_log_pdf(0.5, 2.0, 2.0) == pytest.approx(math.log(1.5))

    def test_symmetry_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = float(rng.uniform(0.01, 0.99))
            a, b = rng.uniform(0.5, 10, 2)
            assert mixfit.beta_log_pdf(x, a, b) == pytest.approx(
                mixfit.beta_log_pdf(1.0 - x, b, a), abs=1e-10)

    def test_domain_violations(self):
        with pytest.raises(mixfit.MixtureError):
            mixfit.beta_log_pdf(0.0, 2.0, 2.0)
        with pytest.raises(mixfit.MixtureError):
            mixfit.beta_log_pdf(0.5, -1.0, 2.0)


class TestMomentInversion:
    def test_roundtrip(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = rng.uniform(0.5, 50, 2)
            mean, var = mixfit.beta_moments(a, b)
            a2, b2 = mixfit.moments_to_beta(mean, var)
            assert a2 == pytest.approx(a, rel=1e-9)
            assert b2 == pytest.approx(b, rel=1e-9)


class TestFit:
    def test_recovers_known_mixture(self):
        rng = np.random.default_rng(0)
        fit = mixfit.fit_beta_mixture(confidence_vector(bimodal_sample(rng)))
        assert fit.weight_noisy == pytest.approx(0.4, abs=0.05)
        assert fit.component_mean(fit.noisy_component) == pytest.approx(0.2, abs=0.03)
        assert fit.component_mean(fit.clean_component) == pytest.approx(0.8, abs=0.03)

    def test_noisy_component_is_low_mean(self):
        rng = np.random.default_rng(2)
        x = np.concatenate([np.full(50, 0.02) + rng.normal(0, 0.005, 50),
                            np.full(50, 0.98) + rng.normal(0, 0.005, 50)])
        fit = mixfit.fit_beta_mixture(confidence_vector(np.clip(x, 0, 1)))
        assert fit.component_mean(fit.noisy_component) < fit.component_mean(fit.clean_component)

    def test_log_likelihood_monotone(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            x = np.random.default_rng(seed).beta(2, 5, 500) * 0.5 + rng.random(500) * 0.5
            fit = mixfit.fit_beta_mixture(confidence_vector(x))
            assert (np.diff(fit.log_likelihood) >= -1e-9).all()

    def test_deterministic_and_order_invariant(self):
        rng = np.random.default_rng(4)
        x = bimodal_sample(rng, 300, 400)
        a = mixfit.fit_beta_mixture(confidence_vector(x))
        b = mixfit.fit_beta_mixture(confidence_vector(x))
        shuffled = mixfit.fit_beta_mixture(confidence_vector(rng.permutation(x)))
        assert a == b
        assert shuffled.alphas == pytest.approx(a.alphas, rel=1e-9)
        assert shuffled.weight_noisy == pytest.approx(a.weight_noisy, rel=1e-9)

    def test_rejects_uncertainty_orientation(self):
        v = ScoreVector(np.linspace(0.1, 0.9, 20), UNCERTAINTY, "bald")
        with pytest.raises(mixfit.MixtureError):
            mixfit.fit_beta_mixture(v)

    def test_degenerate_scores_rejected(self):
        with pytest.raises(mixfit.MixtureError, match="degenerate"):
            mixfit.fit_beta_mixture(confidence_vector(np.full(100, 0.5)))

    def test_too_few_scores_rejected(self):
        with pytest.raises(mixfit.MixtureError):
            mixfit.fit_beta_mixture(confidence_vector(np.linspace(0.1, 0.9, 5)))


class TestPosterior:
    def _separated_fit(self):
        rng = np.random.default_rng(5)
        return mixfit.fit_beta_mixture(confidence_vector(bimodal_sample(rng)))

    def test_extreme_low_score_is_noisy(self):
        fit = self._separated_fit()
        assert mixfit.posterior_noisy(fit, fit.clamp_eps) > 0.99

    def test_identical_components_give_weight(self):
        fit = mixfit.BetaMixtureFit(alphas=(2.0, 2.0), betas=(5.0, 5.0),
                                    weight_noisy=0.4, noisy_component=0)
        for x in (0.1, 0.5, 0.9):
            assert mixfit.posterior_noisy(fit, x) == pytest.approx(0.4)

    def test_monotone_non_increasing_on_grid(self):
        fit = self._separated_fit()
        grid = np.linspace(0.01, 0.99, 200)
        post = mixfit.posterior_noisy(fit, grid)
        assert (np.diff(post) <= 1e-9).all()

    def test_responsibilities_sum_to_one(self):
        fit = self._separated_fit()
        grid = np.linspace(0.01, 0.99, 50)
        j, k = fit.noisy_component, fit.clean_component
        log_n = np.log(fit.weight_noisy) + mixfit.beta_log_pdf(grid, fit.alphas[j], fit.betas[j])
        log_c = np.log1p(-fit.weight_noisy) + mixfit.beta_log_pdf(grid, fit.alphas[k], fit.betas[k])
        total = np.exp(log_n - np.logaddexp(log_n, log_c)) + np.exp(log_c - np.logaddexp(log_n, log_c))
        assert np.allclose(total, 1.0, atol=1e-12)


class TestContaminationThreshold:
    def test_vacuous_target_detects_all(self):
        rng = np.random.default_rng(6)
        x = bimodal_sample(rng, 500, 500)
        fit = mixfit.fit_beta_mixture(confidence_vector(x))
        _, detected = mixfit.threshold_for_contamination(fit, confidence_vector(x), 1.0)
        assert len(detected) == len(x)

    def test_separated_mixture_controls_clean_fraction(self):
        rng = np.random.default_rng(7)
        x = bimodal_sample(rng)
        fit = mixfit.fit_beta_mixture(confidence_vector(x))
        _, detected = mixfit.threshold_for_contamination(fit, confidence_vector(x), 0.05)
        assert len(detected) > 0
        true_clean_fraction = (detected >= 2000).mean()
        assert true_clean_fraction <= 0.10

    def test_identical_components_all_or_nothing(self):
        fit = mixfit.BetaMixtureFit(alphas=(2.0, 2.0), betas=(5.0, 5.0),
                                    weight_noisy=0.4, noisy_component=0)
        x = confidence_vector(np.linspace(0.05, 0.95, 100))
        _, strict = mixfit.threshold_for_contamination(fit, x, 0.5)
        assert len(strict) == 0          # estimated clean fraction 0.6 everywhere
        _, loose = mixfit.threshold_for_contamination(fit, x, 0.7)
        assert len(loose) == 100


class TestFitIo:
    def test_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        fit = mixfit.fit_beta_mixture(confidence_vector(bimodal_sample(rng, 300, 300)))
        path = tmp_path / "fit.json"
        mixfit.save_fit(fit, path)
        back = mixfit.load_fit(path)
        assert back.alphas == pytest.approx(fit.alphas)
        assert back.betas == pytest.approx(fit.betas)
        assert back.weight_noisy == pytest.approx(fit.weight_noisy)
        assert back.noisy_component == fit.noisy_component
