"""Analog phase-shifter precoder and digital precoders (duality rule + RZF).

The analog stage is a constant-modulus M x S matrix built from a phase vector;
the digital stage is obtained from the MMSE receiver of the virtual uplink at
the given power allocation (a smooth function of the powers), or from the
regularized zero-forcing rule as a baseline.  Both are column-normalized so
every transmit vector F g_k has unit norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

FEASIBILITY_SLACK = 1e-9
NORM_FLOOR = 1e-30  # guards 1/||g|| for zero-power users

TWO_PI = 2.0 * np.pi


@dataclass
class ControlVariable:
    """One control state: analog phases ``theta`` (length M*S, Fortran order
    over the M x S grid) and per-user powers ``p`` with sum(p) <= P_max."""

    theta: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.theta.ndim != 1 or self.p.ndim != 1:
            raise ConfigurationError("theta and p must be 1-D vectors")
        if self.theta.size and (self.theta.min() < -FEASIBILITY_SLACK
                                or self.theta.max() > TWO_PI + FEASIBILITY_SLACK):
            raise ConfigurationError("phases must lie in [0, 2*pi]")
        if self.p.size and self.p.min() < -FEASIBILITY_SLACK:
            raise ConfigurationError("powers must be nonnegative")

    def feasibility_residual(self, p_max: float) -> float:
        """Max constraint violation (0 for a feasible state)."""
        viol = [max(0.0, -self.theta.min()) if self.theta.size else 0.0,
                max(0.0, self.theta.max() - TWO_PI) if self.theta.size else 0.0,
                max(0.0, -self.p.min()) if self.p.size else 0.0,
                max(0.0, self.p.sum() - p_max)]
        return float(max(viol))

    def validate_budget(self, p_max: float):
        if self.p.sum() > p_max + FEASIBILITY_SLACK:
            raise ConfigurationError(f"sum(p) = {self.p.sum():.6g} exceeds P_max = {p_max:.6g}")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta, self.p])


@dataclass
class ControlPolicy:
    """Randomized policy: L control states time-shared with probabilities q."""

    gammas: list[ControlVariable]
    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.ndim != 1 or len(self.gammas) != self.q.size:
            raise ConfigurationError("q must have one entry per control state")
        if self.q.min() < -FEASIBILITY_SLACK or abs(self.q.sum() - 1.0) > FEASIBILITY_SLACK:
            raise ConfigurationError("q must lie on the probability simplex")

    @property
    def L(self) -> int:
        return len(self.gammas)

    def feasibility_residual(self, p_max: float) -> float:
        res = max(max(0.0, -self.q.min()), abs(self.q.sum() - 1.0))
        for g in self.gammas:
            res = max(res, g.feasibility_residual(p_max))
        return float(res)

    def flat_gamma(self) -> np.ndarray:
        return np.concatenate([g.flat() for g in self.gammas])


@dataclass
class DigitalPrecoder:
    """Normalized digital precoder G (S x K) and the per-user normalization
    factors 1/||F g_k|| (0 for zero-power users)."""

    G: np.ndarray
    norm_factors: np.ndarray


def analog_from_phases(theta: np.ndarray, M: int, S: int) -> np.ndarray:
    """Constant-modulus analog precoder: [F]_ij = exp(j theta[(j-1)M+i]) / sqrt(M)."""
    theta = np.asarray(theta, dtype=float)
    if theta.size != M * S:
        raise ValueError(f"theta must have length M*S = {M * S}, got {theta.size}")
    return np.exp(1j * theta.reshape(M, S, order="F")) / np.sqrt(M)


def duality_core(H_eff: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Unnormalized duality precoder (H^H P H + I)^{-1} H^H P (S x K).

    Accepts a batch dimension in front of H_eff.  The inner matrix is
    Hermitian positive definite for any feasible p, so the solve always
    succeeds.
    """
    H_eff = np.asarray(H_eff, dtype=complex)
    p = np.asarray(p, dtype=float)
    S = H_eff.shape[-1]
    gram = np.einsum("...ks,k,...kt->...st", H_eff.conj(), p, H_eff)
    A = gram + np.eye(S)
    rhs = np.swapaxes(H_eff.conj(), -1, -2) * p  # H^H P
    return np.linalg.solve(A, rhs)


def rzf_core(H_eff: np.ndarray, alpha: float) -> np.ndarray:
    """Unnormalized RZF precoder H^H (H H^H + alpha I)^{-1} (S x K), batched."""
    if not alpha > 0:
        raise ConfigurationError("alpha must be > 0")
    H_eff = np.asarray(H_eff, dtype=complex)
    K = H_eff.shape[-2]
    A = np.einsum("...ks,...ts->...kt", H_eff, H_eff.conj()) + alpha * np.eye(K)
    # H^H A^{-1} = (A^{-1} H)^H since A is Hermitian
    return np.swapaxes(np.linalg.solve(A, H_eff).conj(), -1, -2)


def normalize_columns(core: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale columns of ``core`` so every F @ core column has unit norm.

    Zero columns (zero-power users) are left at zero with norm factor 0.
    Batched over leading dimensions of ``core``.
    """
    bar = np.einsum("ms,...sk->...mk", F, core)
    norms = np.linalg.norm(bar, axis=-2)
    active = norms > NORM_FLOOR
    inv = np.where(active, 1.0 / np.where(active, norms, 1.0), 0.0)
    return core * inv[..., None, :], inv


def duality_digital_precoder(H_eff: np.ndarray, p: np.ndarray, F: np.ndarray) -> DigitalPrecoder:
    """Column-normalized duality-based digital precoder for one effective channel."""
    p = np.asarray(p, dtype=float)
    if p.min() < -FEASIBILITY_SLACK:
        raise ConfigurationError("powers must be nonnegative")
    core = duality_core(H_eff, p)
    G, inv = normalize_columns(core, F)
    return DigitalPrecoder(G=G, norm_factors=inv)


def rzf_digital_precoder(H_eff: np.ndarray, alpha: float, F: np.ndarray) -> DigitalPrecoder:
    """Column-normalized RZF digital precoder."""
    core = rzf_core(H_eff, alpha)
    G, inv = normalize_columns(core, F)
    return DigitalPrecoder(G=G, norm_factors=inv)
