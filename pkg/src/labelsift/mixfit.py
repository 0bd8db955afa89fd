"""Two-component beta-mixture EM over per-image confidence scores."""

import json
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy.special import betaln

from .uncertainty import CONFIDENCE, ScoreVector


class MixtureError(ValueError):
    pass


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 200
    tol: float = 1e-6
    clamp_eps: float = 1e-4
    init: str = "median_split"

    def __post_init__(self):
        if not 0.0 < self.clamp_eps < 0.5:
            raise MixtureError("clamp eps must be in (0, 0.5)")
        if self.max_iters < 1:
            raise MixtureError("max_iters must be >= 1")


@dataclass(frozen=True)
class BetaMixtureFit:
    """Two beta components with a mixing weight for the noisy component."""

    alphas: Tuple[float, float]
    betas: Tuple[float, float]
    weight_noisy: float
    noisy_component: int
    log_likelihood: Tuple[float, ...] = field(default=())
    clamp_eps: float = 1e-4

    @property
    def clean_component(self) -> int:
        return 1 - self.noisy_component

    def component_mean(self, j: int) -> float:
        return self.alphas[j] / (self.alphas[j] + self.betas[j])


def beta_log_pdf(x, alpha: float, beta: float):
    """Log beta density via log-gamma; x strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if alpha <= 0 or beta <= 0:
        raise MixtureError("beta parameters must be positive")
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise MixtureError("x must lie strictly inside (0, 1)")
    return (alpha - 1.0) * np.log(x) + (beta - 1.0) * np.log1p(-x) - betaln(alpha, beta)


def moments_to_beta(mean: float, var: float) -> Tuple[float, float]:
    """Method-of-moments inversion (mean, variance) -> (alpha, beta)."""
    if var <= 1e-12:
        raise MixtureError("component collapsed")
    common = mean * (1.0 - mean) / var - 1.0
    if common <= 0.0:
        raise MixtureError("component collapsed")
    return mean * common, (1.0 - mean) * common


def beta_moments(alpha: float, beta: float) -> Tuple[float, float]:
    s = alpha + beta
    mean = alpha / s
    return mean, alpha * beta / (s * s * (s + 1.0))


def _clamp(x: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(x, eps, 1.0 - eps)


def fit_beta_mixture(scores: ScoreVector, config: EmConfig = EmConfig()) -> BetaMixtureFit:
    """EM fit of a two-beta mixture to confidence scores.

    E-step: responsibilities from the two beta densities. M-step: weighted
    method-of-moments per component. Init: median split with per-half moment
    matching. The noisy component is the one with the smaller mean.
    """
    if scores.orientation != CONFIDENCE:
        raise MixtureError("mixture fit expects confidence-oriented scores")
    x = _clamp(np.asarray(scores.scores, dtype=np.float64), config.clamp_eps)
    if len(x) < 10:
        raise MixtureError("need at least 10 scores")
    if np.ptp(x) < 1e-12:
        raise MixtureError("degenerate scores")

    median = np.median(x)
    lo, hi = x[x <= median], x[x > median]
    if len(hi) == 0:
        lo, hi = x[x < median], x[x >= median]
    params = []
    for half in (lo, hi):
        mean = float(half.mean())
        var = float(half.var())
        if var <= 1e-12:
            var = 1e-6
        params.append(moments_to_beta(mean, var))
    (a0, b0), (a1, b1) = params
    alphas = np.array([a0, a1])
    betas = np.array([b0, b1])
    weights = np.array([len(lo), len(hi)], dtype=np.float64)
    weights /= weights.sum()

    ll_trace: List[float] = []
    for _ in range(config.max_iters):
        log_dens = np.stack([
            np.log(weights[j]) + beta_log_pdf(x, alphas[j], betas[j])
            for j in range(2)
        ])
        log_norm = np.logaddexp(log_dens[0], log_dens[1])
        ll = float(log_norm.sum())
        resp = np.exp(log_dens - log_norm)
        if ll_trace and ll < ll_trace[-1]:
            # moment-matching updates are not exact maximizers; a decrease
            # means we are past the usable optimum, so revert and stop
            alphas, betas, weights = prev_params
            break
        ll_trace.append(ll)
        if len(ll_trace) > 1 and abs(ll_trace[-1] - ll_trace[-2]) < config.tol:
            break
        prev_params = (alphas.copy(), betas.copy(), weights.copy())
        for j in range(2):
            r = resp[j]
            total = r.sum()
            if total <= 0.0:
                raise MixtureError("component collapsed")
            mean = float((r * x).sum() / total)
            var = float((r * (x - mean) ** 2).sum() / total)
            if var <= 1e-12:
                raise MixtureError("component collapsed")
            alphas[j], betas[j] = moments_to_beta(mean, var)
        weights = resp.sum(axis=1) / len(x)

    means = alphas / (alphas + betas)
    noisy = int(np.argmin(means))
    return BetaMixtureFit(
        alphas=(float(alphas[0]), float(alphas[1])),
        betas=(float(betas[0]), float(betas[1])),
        weight_noisy=float(weights[noisy]),
        noisy_component=noisy,
        log_likelihood=tuple(ll_trace),
        clamp_eps=config.clamp_eps,
    )


def posterior_noisy(fit: BetaMixtureFit, score) -> np.ndarray:
    """P(noisy | score) under the fitted mixture; scores clamped into support."""
    x = _clamp(np.asarray(score, dtype=np.float64), fit.clamp_eps)
    j = fit.noisy_component
    k = fit.clean_component
    log_noisy = np.log(fit.weight_noisy) + beta_log_pdf(x, fit.alphas[j], fit.betas[j])
    log_clean = np.log1p(-fit.weight_noisy) + beta_log_pdf(x, fit.alphas[k], fit.betas[k])
    return np.exp(log_noisy - np.logaddexp(log_noisy, log_clean))


def threshold_for_contamination(fit: BetaMixtureFit, scores: ScoreVector,
                                max_clean_fraction: float):
    """Largest threshold whose detected set (score <= threshold) keeps the
    model-estimated clean fraction at or below the target.

    Returns (threshold, detected index array); threshold is None and the set
    empty when no threshold qualifies.
    """
    if not 0.0 < max_clean_fraction <= 1.0:
        raise MixtureError("target clean fraction must be in (0, 1]")
    x = np.asarray(scores.scores, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    post = posterior_noisy(fit, x[order])
    clean_prob = 1.0 - post
    cum_clean = np.cumsum(clean_prob) / np.arange(1, len(x) + 1)
    best = None
    sorted_x = x[order]
    for k in range(len(x) - 1, -1, -1):
        # candidate threshold must include all ties at its value
        if k + 1 < len(x) and sorted_x[k + 1] == sorted_x[k]:
            continue
        if cum_clean[k] <= max_clean_fraction + 1e-12:
            best = k
            break
    if best is None:
        return None, np.array([], dtype=np.int64)
    threshold = float(sorted_x[best])
    detected = np.nonzero(x <= threshold)[0].astype(np.int64)
    return threshold, detected


def fit_to_json(fit: BetaMixtureFit) -> dict:
    return {
        "components": [
            {"alpha": fit.alphas[j], "beta": fit.betas[j]} for j in range(2)
        ],
        "weight_noisy": fit.weight_noisy,
        "noisy_component": fit.noisy_component,
        "iterations": len(fit.log_likelihood),
        "final_log_likelihood": fit.log_likelihood[-1] if fit.log_likelihood else None,
        "clamp_eps": fit.clamp_eps,
    }


def save_fit(fit: BetaMixtureFit, path) -> None:
    with open(path, "w") as fh:
        json.dump(fit_to_json(fit), fh, indent=2)


def load_fit(path) -> BetaMixtureFit:
    with open(path) as fh:
        obj = json.load(fh)
    return BetaMixtureFit(
        alphas=tuple(c["alpha"] for c in obj["components"]),
        betas=tuple(c["beta"] for c in obj["components"]),
        weight_noisy=obj["weight_noisy"],
        noisy_component=obj["noisy_component"],
        log_likelihood=(obj["final_log_likelihood"],) if obj.get("final_log_likelihood") is not None else (),
        clamp_eps=obj.get("clamp_eps", 1e-4),
    )
