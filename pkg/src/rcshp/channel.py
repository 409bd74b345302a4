"""Channel statistics synthesis and seeded channel/noise sampling.

Two covariance models for a half-wavelength ULA:

* a geometry-based model (finite scattering paths with Laplacian-spread
  departure angles), and
* a COST-2100-style model (per-user angular scattering function supported on a
  few clusters in the normalized angle xi = sin(theta), integrated on a grid).

Conventions: user channels are rows of ``H`` in the ``h_k^H`` orientation, so
the effective channel seen through an analog precoder ``F`` is simply ``H @ F``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError
from .seeding import Seed, complex_normal, rng_from

HERMITIAN_RTOL = 1e-10
PSD_RTOL = 1e-8
RANK_RTOL = 1e-6  # numerical rank: eigenvalues above RANK_RTOL * lambda_max


@dataclass(frozen=True)
class SystemDims:
    """Array/user/pilot dimensions and the transmit power budget.

    Every matrix shape in the pipeline is governed by these counts:
    ``M`` antennas, ``S`` RF chains, ``K`` users, ``T_p`` pilot symbols,
    ``L`` control states, ``T`` symbols per slot, ``P_max`` total power
    (linear scale).
    """

    M: int
    S: int
    K: int
    T_p: int
    L: int
    T: int
    P_max: float

    def __post_init__(self):
        counts = {"M": self.M, "S": self.S, "K": self.K, "T_p": self.T_p,
                  "L": self.L, "T": self.T}
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.S > self.M:
            raise ConfigurationError(f"need S <= M, got S={self.S}, M={self.M}")
        if not self.P_max > 0:
            raise ConfigurationError(f"P_max must be > 0, got {self.P_max!r}")

    def with_pilots(self, t_p: int) -> "SystemDims":
        return replace(self, T_p=int(t_p))

    def with_power(self, p_max: float) -> "SystemDims":
        return replace(self, P_max=float(p_max))


@dataclass(frozen=True)
class GeometryModelParams:
    """Finite-scatterer model: ``n_paths`` departure angles per user drawn
    around a uniform center with a Laplacian spread of ``sigma_as_deg``
    degrees; per-path variances renormalized to a path gain drawn uniformly
    (in dB) from ``gain_db_range``."""

    n_paths: int = 8
    sigma_as_deg: float = 10.0
    gain_db_range: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be >= 1")
        if not self.sigma_as_deg > 0:
            raise ConfigurationError("sigma_as_deg must be > 0")
        lo, hi = self.gain_db_range
        if lo > hi:
            raise ConfigurationError("gain_db_range must satisfy low <= high")


@dataclass(frozen=True)
class Cost2100ModelParams:
    """Cluster model in normalized angle xi = sin(theta) over [-1, 1).

    ``n_clusters`` intervals of width ``cluster_width`` are placed uniformly;
    each user's scattering function is the indicator of ``clusters_per_user``
    of them, integrated on a ``grid_points`` midpoint grid.

    ``cluster_width`` is measured in xi; the default 0.4 is one fifth of the
    normalized range [-1, 1) and reproduces rich-scattering covariances of
    numerical rank about 36 at M = 64.
    """

    n_clusters: int = 3
    clusters_per_user: int = 2
    cluster_width: float = 0.4
    grid_points: int = 2048

    def __post_init__(self):
        if self.clusters_per_user < 1 or self.clusters_per_user > self.n_clusters:
            raise ConfigurationError("need 1 <= clusters_per_user <= n_clusters")
        if not (0.0 < self.cluster_width <= 2.0):
            raise ConfigurationError("cluster_width must lie in (0, 2]")
        if self.grid_points < 64:
            raise ConfigurationError("grid_points must be >= 64")


@dataclass
class ChannelStats:
    """Per-user Hermitian PSD channel covariances; the only channel knowledge
    the policy optimizer sees."""

    dims: SystemDims
    covariances: np.ndarray  # (K, M, M) complex
    gains: np.ndarray = field(default=None, repr=False)  # (K,) linear path gains, diagnostic

    def __post_init__(self):
        cov = np.asarray(self.covariances, dtype=complex)
        if cov.shape != (self.dims.K, self.dims.M, self.dims.M):
            raise DataError(f"covariances must have shape (K, M, M) = "
                            f"{(self.dims.K, self.dims.M, self.dims.M)}, got {cov.shape}")
        self.covariances = cov
        if self.gains is None:
            self.gains = np.real(np.trace(cov, axis1=1, axis2=2)) / self.dims.M
        for k, c in enumerate(cov):
            herm_err = np.linalg.norm(c - c.conj().T)
            scale = max(np.linalg.norm(c), 1.0)
            if herm_err > HERMITIAN_RTOL * scale:
                raise DataError(f"covariance {k} is not Hermitian "
                                f"(||C - C^H|| = {herm_err:.3e})")
            w = np.linalg.eigvalsh(c)
            floor = -PSD_RTOL * max(np.real(np.trace(c)), 0.0) / self.dims.M
            if w.min() < floor:
                raise DataError(f"covariance {k} is not PSD within tolerance "
                                f"(min eigenvalue {w.min():.3e})")


@dataclass
class ChannelSample:
    """One fading realization: ``H`` holds user rows ``h_k^H`` (K x M) and
    ``N`` the pilot-phase estimation-noise rows (K x T_p)."""

    H: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=complex)
        self.N = np.asarray(self.N, dtype=complex)
        if self.H.ndim != 2 or self.N.ndim != 2 or self.H.shape[0] != self.N.shape[0]:
            raise DataError(f"inconsistent sample shapes {self.H.shape} / {self.N.shape}")
        if not (np.isfinite(self.H).all() and np.isfinite(self.N).all()):
            raise DataError("channel sample contains non-finite entries")


def steering_vector(phi: float, M: int) -> np.ndarray:
    """ULA array response at departure angle ``phi`` (radians): entry m is
    exp(j*pi*m*sin(phi)) for half-wavelength spacing."""
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    return np.exp(1j * np.pi * np.arange(M) * np.sin(phi))


def _reflect_angles(phi: np.ndarray, lo: float = -np.pi / 2, hi: float = np.pi / 2) -> np.ndarray:
    """Fold angles into [lo, hi] by reflection at the boundaries."""
    width = hi - lo
    x = np.mod(phi - lo, 2.0 * width)
    return lo + np.where(x < width, x, 2.0 * width - x)


def build_geometry_stats(dims: SystemDims, params: GeometryModelParams, seed: Seed) -> ChannelStats:
    """Synthesize geometry-model covariances C_k = sum_i sigma_i^2 a(phi_i) a(phi_i)^H.

    Per user: a Laplacian AoD cluster centered uniformly in [-pi/2, pi/2) with
    scale set so the angular standard deviation equals ``sigma_as_deg``;
    exponential per-path variances renormalized so they sum to the user's
    linear path gain.  rank(C_k) <= n_paths by construction.
    """
    if not isinstance(params, GeometryModelParams):
        raise ConfigurationError("params must be GeometryModelParams")
    rng = rng_from(seed)
    m_idx = np.arange(dims.M)
    scale = np.deg2rad(params.sigma_as_deg) / np.sqrt(2.0)  # Laplace scale for the target std
    covs = np.empty((dims.K, dims.M, dims.M), dtype=complex)
    gains = np.empty(dims.K)
    for k in range(dims.K):
        center = rng.uniform(-np.pi / 2, np.pi / 2)
        phi = _reflect_angles(center + rng.laplace(0.0, scale, size=params.n_paths))
        sig2 = rng.exponential(1.0, size=params.n_paths)
        gain_db = rng.uniform(*params.gain_db_range)
        gains[k] = 10.0 ** (gain_db / 10.0)
        sig2 *= gains[k] / sig2.sum()
        A = np.exp(1j * np.pi * np.outer(m_idx, np.sin(phi)))  # (M, n_paths)
        covs[k] = (A * sig2) @ A.conj().T
    return ChannelStats(dims=dims, covariances=covs, gains=gains)


def build_cost2100_stats(dims: SystemDims, params: Cost2100ModelParams, seed: Seed) -> ChannelStats:
    """Synthesize COST-2100-style covariances by quadrature over the angular
    scattering function in xi = sin(theta), normalized to trace M * g_k."""
    if not isinstance(params, Cost2100ModelParams):
        raise ConfigurationError("params must be Cost2100ModelParams")
    rng = rng_from(seed)
    width = params.cluster_width
    starts = rng.uniform(-1.0, 1.0 - width, size=params.n_clusters)
    G = params.grid_points
    xi = -1.0 + (np.arange(G) + 0.5) * (2.0 / G)
    dxi = 2.0 / G
    A = np.exp(1j * np.pi * np.outer(np.arange(dims.M), xi))  # (M, G)
    covs = np.empty((dims.K, dims.M, dims.M), dtype=complex)
    gains = np.empty(dims.K)
    for k in range(dims.K):
        chosen = rng.choice(params.n_clusters, size=params.clusters_per_user, replace=False)
        gain_db = rng.uniform(-10.0, 10.0)
        gains[k] = 10.0 ** (gain_db / 10.0)
        mask = np.zeros(G, dtype=bool)
        for c in chosen:
            mask |= (xi >= starts[c]) & (xi < starts[c] + width)
        if not mask.any():
            raise ConfigurationError("no grid point falls inside the selected clusters; "
                                     "increase grid_points or cluster_width")
        Ac = A[:, mask]
        C = (Ac * dxi) @ Ac.conj().T
        covs[k] = C * (dims.M * gains[k] / np.real(np.trace(C)))
    return ChannelStats(dims=dims, covariances=covs, gains=gains)


def numerical_rank(matrix: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Count of eigenvalues above rtol * lambda_max (Hermitian input)."""
    w = np.linalg.eigvalsh(matrix)
    top = w.max()
    if top <= 0:
        return 0
    return int(np.count_nonzero(w > rtol * top))


def _sampling_factors(stats: ChannelStats) -> np.ndarray:
    """Per-user factors L_k with L_k L_k^H = C_k (negative eigenvalues clamped)."""
    K, M = stats.dims.K, stats.dims.M
    factors = np.empty((K, M, M), dtype=complex)
    for k, c in enumerate(stats.covariances):
        w, U = np.linalg.eigh(c)
        floor = -PSD_RTOL * max(np.real(np.trace(c)), 0.0) / M
        if w.min() < floor:
            raise DataError(f"covariance {k} is not PSD within tolerance")
        factors[k] = U * np.sqrt(np.clip(w, 0.0, None))
    return factors


def sample_channels(stats: ChannelStats, count: int, seed: Seed) -> list[ChannelSample]:
    """Draw ``count`` CN(0, C_k) channel realizations plus CN(0, I) pilot noise.

    Sample i uses the derived stream (seed, i), so the list is identical for a
    given seed no matter how the work is split.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    factors = _sampling_factors(stats)
    K, M, T_p = stats.dims.K, stats.dims.M, stats.dims.T_p
    samples = []
    for i in range(count):
        rng = rng_from(seed, i)
        w = complex_normal(rng, (K, M))
        H = np.einsum("kmn,kn->km", factors, w).conj()  # rows h_k^H
        N = complex_normal(rng, (K, T_p))
        samples.append(ChannelSample(H=H, N=N))
    return samples


def stack_samples(samples: list[ChannelSample]) -> tuple[np.ndarray, np.ndarray]:
    """(B, K, M) and (B, K, T_p) arrays from a sample list."""
    H = np.stack([s.H for s in samples])
    N = np.stack([s.N for s in samples])
    return H, N
