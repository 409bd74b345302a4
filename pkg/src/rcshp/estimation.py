"""Common downlink pilots and LMMSE estimation of the effective channel.

The base station sends ``T_p`` pilot symbols through the S analog-precoder
inputs; each user feeds back its (noiseless-feedback) observation
``y_k = Psi h_eff_k^* + n_k`` and the BS forms the per-user Wiener estimate of
the S-dimensional effective channel ``h_eff_k = F^H h_k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSample, ChannelStats
from .errors import ConfigurationError, NumericalError
from .seeding import Seed, complex_normal, rng_from

ROW_POWER_RTOL = 1e-9


@dataclass
class PilotMatrix:
    """Aggregated pilot block Psi (T_p x S); every row carries
    ``per_symbol_power`` so training always runs at the configured budget."""

    psi: np.ndarray
    per_symbol_power: float

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.ndim != 2:
            raise ConfigurationError("psi must be a T_p x S matrix")
        row_power = np.sum(np.abs(self.psi) ** 2, axis=1)
        if not np.allclose(row_power, self.per_symbol_power,
                           rtol=ROW_POWER_RTOL, atol=ROW_POWER_RTOL * self.per_symbol_power):
            raise ConfigurationError("pilot rows must all carry per_symbol_power")

    @property
    def T_p(self) -> int:
        return self.psi.shape[0]

    @property
    def S(self) -> int:
        return self.psi.shape[1]


@dataclass
class EffectiveChannelEstimate:
    """Aggregated estimate matrix (K x S, rows in the ``h_eff_k^H`` orientation
    matching ``H @ F``) plus the per-user posterior MSE trace."""

    h_eff_hat: np.ndarray
    error_cov_diag: np.ndarray | None = None

    def __post_init__(self):
        self.h_eff_hat = np.asarray(self.h_eff_hat, dtype=complex)
        if not np.isfinite(self.h_eff_hat).all():
            raise NumericalError("effective-channel estimate has non-finite entries")


def generate_pilots(T_p: int, S: int, P_max: float, seed: Seed) -> PilotMatrix:
    """Deterministic pilot block with full column rank when T_p >= S.

    T_p >= S: orthonormal columns from the QR of a seeded complex Gaussian,
    rows rescaled to power P_max.  T_p < S: the first T_p rows of the S x S
    unitary DFT, scaled to the same row power.
    """
    if T_p < 1 or S < 1:
        raise ConfigurationError("T_p and S must be >= 1")
    if not P_max > 0:
        raise ConfigurationError("P_max must be > 0")
    if T_p >= S:
        rng = rng_from(seed)
        q, _ = np.linalg.qr(complex_normal(rng, (T_p, S)))
        row_norm = np.linalg.norm(q, axis=1)
        if row_norm.min() < 1e-12:
            raise NumericalError("degenerate pilot row from QR construction")
        psi = q * (np.sqrt(P_max) / row_norm)[:, None]
    else:
        grid = np.arange(S)
        dft = np.exp(-2j * np.pi * np.outer(grid, grid) / S)
        psi = dft[:T_p] * np.sqrt(P_max / S)
    return PilotMatrix(psi=psi, per_symbol_power=float(P_max))


def observe_pilots(sample: ChannelSample, F: np.ndarray, pilots: PilotMatrix) -> np.ndarray:
    """Per-user pilot observations, row k = (Psi (F^H h_k)^* + n_k)^T.

    With ``H`` rows in the h_k^H orientation this is ``H F Psi^T + N``.
    """
    F = np.asarray(F, dtype=complex)
    if F.ndim != 2 or F.shape[1] != pilots.S:
        raise ValueError(f"analog precoder shape {F.shape} incompatible with pilots "
                         f"(S = {pilots.S})")
    if sample.H.shape[1] != F.shape[0]:
        raise ValueError(f"H shape {sample.H.shape} incompatible with F shape {F.shape}")
    if sample.N.shape[1] != pilots.T_p:
        raise ValueError(f"noise shape {sample.N.shape} incompatible with T_p = {pilots.T_p}")
    return sample.H @ F @ pilots.psi.T + sample.N


def lmmse_filters(stats: ChannelStats, F: np.ndarray, pilots: PilotMatrix,
                  noise_var: float = 1.0) -> np.ndarray:
    """Per-user Wiener filters W_k (S x T_p) with estimate = W_k y_k^*.

    W_k = R_k Psi^T (Psi^* R_k Psi^T + noise_var I)^{-1}, R_k = F^H C_k F.
    """
    if noise_var < 0:
        raise ConfigurationError("noise_var must be >= 0")
    F = np.asarray(F, dtype=complex)
    psi = pilots.psi
    T_p = pilots.T_p
    K, S = stats.dims.K, F.shape[1]
    W = np.empty((K, S, T_p), dtype=complex)
    for k in range(K):
        R = F.conj().T @ stats.covariances[k] @ F
        cross = R @ psi.T                      # S x T_p
        inner = psi.conj() @ cross + noise_var * np.eye(T_p)
        try:
            sol = np.linalg.solve(inner, cross.conj().T)  # T_p x S, inner^{-1} (R Psi^T)^H
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular pilot Gram matrix for user {k} "
                                 f"at noise_var={noise_var}") from exc
        if noise_var == 0.0:
            resid = np.linalg.norm(inner @ sol - cross.conj().T)
            if resid > 1e-6 * max(np.linalg.norm(cross), 1e-30):
                raise NumericalError(f"noiseless inner matrix numerically singular for user {k} "
                                     f"(solve residual {resid:.3e})")
        W[k] = sol.conj().T
    return W


def apply_filters(filters: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Estimates for a batch of observations.

    ``Y`` is (..., K, T_p); returns (..., K, S) rows in the h_eff_k^H
    orientation:  row k = (W_k conj(y_k))^H.
    """
    est = np.einsum("kst,...kt->...ks", filters, np.conj(Y))
    return np.conj(est)


def lmmse_estimate(stats: ChannelStats, F: np.ndarray, pilots: PilotMatrix,
                   Y: np.ndarray, noise_var: float = 1.0) -> EffectiveChannelEstimate:
    """LMMSE estimate of every user's effective channel from pilot observations.

    Linear in ``Y``; with unit noise_var this is the standard normalized-noise
    Wiener estimator, and as noise_var -> 0 (with full-column-rank pilots and a
    full-rank effective covariance) the estimate converges to the truth.
    """
    W = lmmse_filters(stats, F, pilots, noise_var)
    h_hat = apply_filters(W, np.asarray(Y, dtype=complex))
    # posterior MSE trace per user: tr(R) - tr(W Psi^* R)
    mse = np.empty(stats.dims.K)
    F = np.asarray(F, dtype=complex)
    for k in range(stats.dims.K):
        R = F.conj().T @ stats.covariances[k] @ F
        mse[k] = np.real(np.trace(R) - np.trace(W[k] @ pilots.psi.conj() @ R))
    return EffectiveChannelEstimate(h_eff_hat=h_hat, error_cov_diag=mse)


def least_squares_estimate(pilots: PilotMatrix, Y: np.ndarray) -> np.ndarray:
    """Pseudo-inverse baseline estimator (prior-free); used as an MSE
    comparison point for the Wiener estimator."""
    pinv = np.linalg.pinv(pilots.psi.conj())
    est = np.einsum("st,...kt->...ks", pinv, np.conj(Y))
    return np.conj(est)
