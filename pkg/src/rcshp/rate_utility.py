"""Achievable rates through the estimate-then-precode pipeline, and utilities.

Rates are log2 (bits per channel use).  The SINR always uses the *true*
channel; only the digital precoder depends on the (possibly estimated)
effective CSI, which is exactly how estimation error enters the performance.

Utility conventions: sum rate, proportional fairness sum(ln(r + eps)), and the
alpha-fair family sum(((r + eps)^(1-alpha) - 1) / (1 - alpha)) with the sum-rate
form at alpha = 0 and the PFS form at alpha = 1 (natural log inside the
fairness utilities, epsilon guard shared so gradients stay Lipschitz at r = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSample, ChannelStats, stack_samples, sample_channels
from .errors import ConfigurationError
from .estimation import PilotMatrix, apply_filters, lmmse_filters
from .precoding import ControlPolicy, ControlVariable, analog_from_phases, duality_core, \
    normalize_columns, rzf_core
from .seeding import Seed

LN2 = np.log(2.0)

CSI_MODES = ("estimated", "perfect")
PRECODERS = ("duality", "rzf")


@dataclass(frozen=True)
class UtilitySpec:
    """Network utility selector: ``sum_rate``, ``proportional_fairness`` or
    ``alpha_fair`` (epsilon guards the singularity at zero rate)."""

    kind: str
    epsilon: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sum_rate", "proportional_fairness", "alpha_fair"):
            raise ConfigurationError(f"unknown utility kind {self.kind!r}")
        if self.kind == "proportional_fairness" and not self.epsilon > 0:
            raise ConfigurationError("proportional fairness requires epsilon > 0")
        if self.kind == "alpha_fair":
            if self.alpha < 0:
                raise ConfigurationError("alpha must be >= 0")
            if self.epsilon < 0:
                raise ConfigurationError("epsilon must be >= 0")

    @classmethod
    def sum_rate(cls) -> "UtilitySpec":
        return cls(kind="sum_rate")

    @classmethod
    def proportional_fairness(cls, epsilon: float = 1e-2) -> "UtilitySpec":
        return cls(kind="proportional_fairness", epsilon=epsilon)

    @classmethod
    def alpha_fair(cls, alpha: float, epsilon: float = 1e-2) -> "UtilitySpec":
        return cls(kind="alpha_fair", epsilon=epsilon, alpha=alpha)


def _check_rates(r_bar: np.ndarray) -> np.ndarray:
    r = np.asarray(r_bar, dtype=float)
    if r.min() < 0 or not np.isfinite(r).all():
        raise ConfigurationError("rates must be nonnegative and finite")
    return r


def utility_value(r_bar: np.ndarray, spec: UtilitySpec) -> float:
    """Scalar utility of an average-rate vector (concave, nondecreasing)."""
    r = _check_rates(r_bar)
    if spec.kind == "sum_rate":
        return float(np.sum(r))
    if spec.kind == "proportional_fairness":
        return float(np.sum(np.log(r + spec.epsilon)))
    a = spec.alpha
    if a == 0.0:
        return float(np.sum(r + spec.epsilon))
    if a == 1.0:
        return float(np.sum(np.log(r + spec.epsilon)))
    return float(np.sum(((r + spec.epsilon) ** (1.0 - a) - 1.0) / (1.0 - a)))


def utility_gradient(r_bar: np.ndarray, spec: UtilitySpec) -> np.ndarray:
    """Elementwise derivative of :func:`utility_value`."""
    r = _check_rates(r_bar)
    if spec.kind == "sum_rate":
        return np.ones_like(r)
    if spec.kind == "proportional_fairness":
        return 1.0 / (r + spec.epsilon)
    return (r + spec.epsilon) ** (-spec.alpha)


def utility_curvature(r_bar: np.ndarray, spec: UtilitySpec) -> np.ndarray:
    """Elementwise second derivative of :func:`utility_value` (always <= 0)."""
    r = _check_rates(r_bar)
    if spec.kind == "sum_rate":
        return np.zeros_like(r)
    if spec.kind == "proportional_fairness":
        return -1.0 / (r + spec.epsilon) ** 2
    return -spec.alpha * (r + spec.epsilon) ** (-spec.alpha - 1.0)


def _estimate_batch(H_b: np.ndarray, N_b: np.ndarray, F: np.ndarray, stats: ChannelStats,
                    pilots: PilotMatrix, noise_var: float) -> np.ndarray:
    """LMMSE effective-channel estimates for a batch of samples, (B, K, S)."""
    Y = H_b @ F @ pilots.psi.T + N_b
    W = lmmse_filters(stats, F, pilots, noise_var)
    return apply_filters(W, Y)


def _pipeline_rates(H_b: np.ndarray, N_b: np.ndarray, gamma: ControlVariable,
                    stats: ChannelStats, pilots: PilotMatrix, csi_mode: str,
                    noise_var: float, precoder: str, rzf_alpha: float | None) -> np.ndarray:
    """Per-sample user rates (B, K) for one control state.

    The single code path used by both the per-sample and Monte-Carlo entry
    points, so sample means match instantaneous evaluations exactly.
    """
    if csi_mode not in CSI_MODES:
        raise ConfigurationError(f"csi_mode must be one of {CSI_MODES}")
    if precoder not in PRECODERS:
        raise ConfigurationError(f"precoder must be one of {PRECODERS}")
    dims = stats.dims
    gamma.validate_budget(dims.P_max)
    F = analog_from_phases(gamma.theta, dims.M, dims.S)
    H_true = H_b @ F  # (B, K, S)
    if csi_mode == "estimated":
        H_hat = _estimate_batch(H_b, N_b, F, stats, pilots, noise_var)
    else:
        H_hat = H_true
    if precoder == "duality":
        core = duality_core(H_hat, gamma.p)
    else:
        if rzf_alpha is None:
            rzf_alpha = dims.K / dims.P_max
        core = rzf_core(H_hat, rzf_alpha)
    G, _ = normalize_columns(core, F)
    T = H_true @ G  # (B, K, K); [b, k, i] = h_k^H F g_i
    sig = np.abs(T) ** 2
    own = gamma.p * np.einsum("...kk->...k", sig)
    interference = sig @ gamma.p - own
    return np.log2(1.0 + own / (interference + 1.0))


def instantaneous_rates(gamma: ControlVariable, sample: ChannelSample, stats: ChannelStats,
                        pilots: PilotMatrix, csi_mode: str = "estimated",
                        noise_var: float = 1.0, precoder: str = "duality",
                        rzf_alpha: float | None = None) -> np.ndarray:
    """User rates (K,) for one channel/noise realization and one control state."""
    r = _pipeline_rates(sample.H[None], sample.N[None], gamma, stats, pilots,
                        csi_mode, noise_var, precoder, rzf_alpha)
    return r[0]


def rates_for_samples(gamma: ControlVariable, samples: list[ChannelSample], stats: ChannelStats,
                      pilots: PilotMatrix, csi_mode: str = "estimated", noise_var: float = 1.0,
                      precoder: str = "duality", rzf_alpha: float | None = None) -> np.ndarray:
    """Per-sample user rates (B, K) for a fixed control state."""
    H_b, N_b = stack_samples(samples)
    return _pipeline_rates(H_b, N_b, gamma, stats, pilots, csi_mode, noise_var,
                           precoder, rzf_alpha)


def policy_rates_per_sample(policy: ControlPolicy, samples: list[ChannelSample],
                            stats: ChannelStats, pilots: PilotMatrix,
                            csi_mode: str = "estimated", noise_var: float = 1.0,
                            precoder: str = "duality",
                            rzf_alpha: float | None = None) -> np.ndarray:
    """Per-sample policy-mixed rates (B, K): sum_l q_l r_k(Gamma(l)) with the
    same samples reused across states (common random numbers)."""
    H_b, N_b = stack_samples(samples)
    out = np.zeros((H_b.shape[0], stats.dims.K))
    for ql, gamma in zip(policy.q, policy.gammas):
        if ql == 0.0:
            continue
        out += ql * _pipeline_rates(H_b, N_b, gamma, stats, pilots, csi_mode,
                                    noise_var, precoder, rzf_alpha)
    return out


def monte_carlo_average_rates(policy: ControlPolicy, stats: ChannelStats, pilots: PilotMatrix,
                              n_samples: int, seed: Seed, csi_mode: str = "estimated",
                              noise_var: float = 1.0, precoder: str = "duality",
                              rzf_alpha: float | None = None,
                              return_per_sample: bool = False):
    """Monte-Carlo average rate vector r_bar (K,) under a randomized policy.

    Linear in q at fixed states and samples.  With ``return_per_sample`` the
    (B, K) per-sample policy rates are returned too (for standard errors).
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    samples = sample_channels(stats, n_samples, seed)
    per_sample = policy_rates_per_sample(policy, samples, stats, pilots, csi_mode,
                                         noise_var, precoder, rzf_alpha)
    r_bar = per_sample.mean(axis=0)
    if return_per_sample:
        return r_bar, per_sample
    return r_bar
