"""Analytic gradients of the instantaneous rates w.r.t. phases and powers.

The rate of user k at one (H, N) realization is a smooth function of the
control state through three coupled stages: the analog precoder F(theta), the
LMMSE effective-channel estimate (which depends on F both through the prior
F^H C_k F and through the observation), and the normalized duality precoder.
This module differentiates the whole chain in closed form.

Derivatives are computed forward-mode, batched over parameters: because each
dF/dtheta_mn has a single nonzero entry, every stage's derivative reduces to
rank-one updates that are stacked with einsum instead of materializing dense
Kronecker factors.  A plain per-parameter loop implementation is kept as a
reference (`_rate_derivs_loop`); the central test of this module is agreement
of both with central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSample, ChannelStats
from .errors import ConfigurationError
from .estimation import PilotMatrix
from .precoding import ControlPolicy, ControlVariable, NORM_FLOOR, analog_from_phases
from .rate_utility import CSI_MODES, LN2


@dataclass
class RateJacobian:
    """Per-sample rate Jacobian: d_theta[l] is (M*S, K) with column k equal to
    the phase gradient of r_k at state l; d_p[l] is (K, K); ``matrix`` stacks
    the L blocks scaled by the time-sharing factors."""

    d_theta: np.ndarray  # (L, M*S, K)
    d_p: np.ndarray      # (L, K, K)
    q: np.ndarray        # (L,)

    @property
    def matrix(self) -> np.ndarray:
        blocks = [self.q[l] * np.vstack([self.d_theta[l], self.d_p[l]])
                  for l in range(len(self.q))]
        return np.vstack(blocks)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _forward(theta, p, H, Nmat, stats, pilots, csi_mode, noise_var):
    """Shared pipeline intermediates for one sample at one control state."""
    dims = stats.dims
    M, S, K, T_p = dims.M, dims.S, dims.K, pilots.T_p
    F = analog_from_phases(theta, M, S)
    Ht = H @ F
    fw = {"F": F, "Ht": Ht, "H": H, "p": np.asarray(p, float), "M": M, "S": S, "K": K}
    if csi_mode == "estimated":
        psi = pilots.psi
        Y = Ht @ psi.T + Nmat
        Hhat = np.empty((K, S), dtype=complex)
        Bsolve_a, u, sc, W, Q, Z, T_cov = [], [], [], [], [], [], []
        for k in range(K):
            Tk = stats.covariances[k] @ F                  # C_k F, (M, S)
            Rk = F.conj().T @ Tk                           # F^H C_k F
            cross = Rk @ psi.T                             # (S, T_p)
            Bk = psi.conj() @ cross + noise_var * np.eye(T_p)
            y_star = np.conj(Y[k])
            ak = np.linalg.solve(Bk, y_star)
            Wk = np.linalg.solve(Bk, cross.conj().T).conj().T  # R psi^T B^{-1}
            uk = psi.T @ ak
            Qk = Wk @ psi.conj()
            Hhat[k] = np.conj(Wk @ y_star)
            Bsolve_a.append(ak); u.append(uk); sc.append(Tk @ uk)
            W.append(Wk); Q.append(Qk); Z.append(np.eye(S) - Qk); T_cov.append(Tk)
        fw.update(Hhat=Hhat, u=np.array(u), sc=np.array(sc), Q=np.array(Q),
                  Z=np.array(Z), T_cov=np.array(T_cov), W=np.array(W),
                  a=np.array(Bsolve_a), Y=Y)
    else:
        fw["Hhat"] = Ht
    # duality precoder at the (estimated or true) effective channel
    Hhat = fw["Hhat"]
    V = np.eye(S) + np.einsum("ks,k,kt->st", Hhat.conj(), fw["p"], Hhat)
    Gt = np.linalg.solve(V, Hhat.conj().T * fw["p"])
    bar = F @ Gt
    norms = np.linalg.norm(bar, axis=0)
    active = norms > NORM_FLOOR
    lam = np.where(active, 1.0 / np.where(active, norms, 1.0), 0.0)
    G = Gt * lam
    T = Ht @ G
    sig = np.abs(T) ** 2
    gam = sig @ fw["p"] + 1.0
    gam_m = gam - fw["p"] * np.diagonal(sig)
    fw.update(V=V, Gt=Gt, bar=bar, norms=norms, active=active, lam=lam, G=G,
              T=T, sig=sig, gam=gam, gam_m=gam_m)
    return fw


def _dhhat_theta(fw, csi_mode):
    """d Hhat[k, s] / d theta_mn stacked as (M, S, K, S)."""
    F, H = fw["F"], fw["H"]
    if csi_mode == "perfect":
        S = fw["S"]
        return 1j * F[:, :, None, None] * H.T[:, None, :, None] * np.eye(S)[None, :, None, :]
    sc, u, Z, Q, T_cov = fw["sc"], fw["u"], fw["Z"], fw["Q"], fw["T_cov"]
    P2 = np.einsum("kms,kts->kmt", T_cov.conj(), Z)  # row m: Z_k conj(T_k[m, :])
    d_est = (-1j) * np.einsum("mn,km,ksn->mnks", F.conj(), sc, Z) \
        + 1j * np.einsum("mn,kn,kms->mnks", F, u, P2) \
        + (-1j) * np.einsum("mn,km,ksn->mnks", F.conj(), H.conj(), Q)
    return np.conj(d_est)


# ---------------------------------------------------------------------------
# precoder + SINR tail (shared by theta and power parameters)
# ---------------------------------------------------------------------------

def _normalized_precoder_derivs(F, Gt, bar, norms, active, lam, dGt, dnorm_extra=None):
    """d(normalized G) (P, S, K) from core derivatives, through the column
    normalization (zero-power columns stay frozen at zero)."""
    dbar = np.einsum("ms,psk->pmk", F, dGt)
    re_ip = np.real(np.einsum("mk,pmk->pk", bar.conj(), dbar))
    if dnorm_extra is not None:
        re_ip = re_ip + dnorm_extra
    dnorm = np.where(active, re_ip / np.where(active, norms, 1.0), 0.0)
    dlam = -dnorm * lam**2
    return dGt * lam + Gt[None] * dlam[:, None, :]


def _tail(fw, dGt, dnorm_extra=None, dT_extra=None, power_direct=False):
    """Rate derivatives (P, K) from precoder-core derivatives dGt (P, S, K)."""
    Ht, Gt = fw["Ht"], fw["Gt"]
    T, sig, p, gam, gam_m = fw["T"], fw["sig"], fw["p"], fw["gam"], fw["gam_m"]
    K = fw["K"]

    dG = _normalized_precoder_derivs(fw["F"], Gt, fw["bar"], fw["norms"], fw["active"],
                                     fw["lam"], dGt, dnorm_extra)
    dT = np.einsum("ks,psi->pki", Ht, dG)
    if dT_extra is not None:
        dT = dT + dT_extra
    dsig = 2.0 * np.real(T.conj()[None] * dT)
    dgam = np.einsum("pki,i->pk", dsig, p)
    dgam_m = dgam - p[None, :] * np.einsum("pkk->pk", dsig)
    if power_direct:
        # power appearing directly in the SINR: d(p_i sig_ki)/dp_j picks up sig_kj
        dgam = dgam + sig.T
        dgam_m = dgam_m + sig.T * (1.0 - np.eye(K))
    return (dgam / gam[None] - dgam_m / gam_m[None]) / LN2


def _rate_derivs(theta, p, H, Nmat, stats, pilots, csi_mode, noise_var):
    """(d_theta (M*S, K), d_p (K, K)) for one sample at one control state."""
    fw = _forward(theta, p, H, Nmat, stats, pilots, csi_mode, noise_var)
    M, S, K = fw["M"], fw["S"], fw["K"]
    F, Hhat, Gt, V, G = fw["F"], fw["Hhat"], fw["Gt"], fw["V"], fw["G"]
    pv = fw["p"]

    # --- theta block ------------------------------------------------------
    dHh = _dhhat_theta(fw, csi_mode)
    dHh = dHh.transpose(1, 0, 2, 3).reshape(S * M, K, S)  # param index q = n*M + m
    dV = np.einsum("pks,k,kt->pst", dHh.conj(), pv, Hhat)
    dV = dV + np.swapaxes(dV.conj(), -1, -2)
    rhs = np.swapaxes(dHh.conj(), -1, -2) * pv            # d(Hhat^H) P
    dGt = np.linalg.solve(V, rhs - dV @ Gt)
    # F appears directly in bar = F Gt and in T = H F G
    dnorm_extra = np.real(1j * fw["bar"].conj()[:, None, :] * F[:, :, None] * Gt[None, :, :])
    dnorm_extra = dnorm_extra.transpose(1, 0, 2).reshape(S * M, K)
    dT_extra = 1j * np.einsum("mn,km,ni->mnki", F, fw["H"], G)
    dT_extra = dT_extra.transpose(1, 0, 2, 3).reshape(S * M, K, K)
    d_theta = _tail(fw, dGt, dnorm_extra=dnorm_extra, dT_extra=dT_extra)

    # --- power block ------------------------------------------------------
    # the estimate does not depend on p, so only the precoder stage moves
    dV_p = np.einsum("js,jt->jst", Hhat.conj(), Hhat)
    rhs_p = np.zeros((K, S, K), dtype=complex)
    rhs_p[np.arange(K), :, np.arange(K)] = Hhat.conj()
    dGt_p = np.linalg.solve(V, rhs_p - dV_p @ Gt)
    d_p = _tail(fw, dGt_p, power_direct=True)
    return d_theta, d_p


# ---------------------------------------------------------------------------
# reference implementation: one parameter at a time
# ---------------------------------------------------------------------------

def _rate_derivs_loop(theta, p, H, Nmat, stats, pilots, csi_mode, noise_var):
    """Per-parameter chain rule with dense intermediates; reference only."""
    fw = _forward(theta, p, H, Nmat, stats, pilots, csi_mode, noise_var)
    M, S, K = fw["M"], fw["S"], fw["K"]
    F, Hhat, Gt, V = fw["F"], fw["Hhat"], fw["Gt"], fw["V"]
    pv = fw["p"]
    psi = pilots.psi

    def tail_single(dGt, dbar_extra=None, dT_extra=None, direct_user=None):
        dbar = F @ dGt
        if dbar_extra is not None:
            dbar = dbar + dbar_extra
        re_ip = np.real(np.einsum("mk,mk->k", fw["bar"].conj(), dbar))
        dnorm = np.where(fw["active"], re_ip / np.where(fw["active"], fw["norms"], 1.0), 0.0)
        dlam = -dnorm * fw["lam"]**2
        dG = dGt * fw["lam"] + Gt * dlam
        dT = fw["Ht"] @ dG
        if dT_extra is not None:
            dT = dT + dT_extra
        dsig = 2.0 * np.real(fw["T"].conj() * dT)
        dgam = dsig @ pv
        dgam_m = dgam - pv * np.diagonal(dsig)
        if direct_user is not None:
            j = direct_user
            dgam = dgam + fw["sig"][:, j]
            dgam_m = dgam_m + fw["sig"][:, j] * (np.arange(K) != j)
        return (dgam / fw["gam"] - dgam_m / fw["gam_m"]) / LN2

    d_theta = np.empty((M * S, K))
    for q in range(M * S):
        m, n = q % M, q // M
        dF = np.zeros((M, S), dtype=complex)
        dF[m, n] = 1j * F[m, n]
        if csi_mode == "estimated":
            dHhat = np.empty((K, S), dtype=complex)
            for k in range(K):
                Ck = stats.covariances[k]
                dR = dF.conj().T @ Ck @ F + F.conj().T @ Ck @ dF
                dB = psi.conj() @ dR @ psi.T
                h_k = np.conj(H[k])
                dy = psi.conj() @ dF.conj().T @ h_k
                d_est = dR @ fw["u"][k] + fw["W"][k] @ (dy - dB @ fw["a"][k])
                dHhat[k] = np.conj(d_est)
        else:
            dHhat = H @ dF
        dVq = dHhat.conj().T @ (pv[:, None] * Hhat) + Hhat.conj().T @ (pv[:, None] * dHhat)
        dGtq = np.linalg.solve(V, dHhat.conj().T * pv - dVq @ Gt)
        d_theta[q] = tail_single(dGtq, dbar_extra=dF @ Gt, dT_extra=H @ dF @ fw["G"])

    d_p = np.empty((K, K))
    for j in range(K):
        hhat_j = np.conj(Hhat[j])
        dVj = np.outer(hhat_j, hhat_j.conj())
        rhs = np.zeros((S, K), dtype=complex)
        rhs[:, j] = hhat_j
        dGtj = np.linalg.solve(V, rhs - dVj @ Gt)
        d_p[j] = tail_single(dGtj, direct_user=j)
    return d_theta, d_p


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def _check_inputs(gamma, sample, csi_mode):
    if csi_mode not in CSI_MODES:
        raise ConfigurationError(f"csi_mode must be one of {CSI_MODES}")
    return gamma.theta, gamma.p, sample.H, sample.N


def rate_gradient_theta(gamma: ControlVariable, sample: ChannelSample, stats: ChannelStats,
                        pilots: PilotMatrix, csi_mode: str = "estimated",
                        noise_var: float = 1.0) -> np.ndarray:
    """(M*S, K) matrix; column k is the phase gradient of r_k."""
    theta, p, H, N = _check_inputs(gamma, sample, csi_mode)
    d_theta, _ = _rate_derivs(theta, p, H, N, stats, pilots, csi_mode, noise_var)
    return d_theta


def rate_gradient_power(gamma: ControlVariable, sample: ChannelSample, stats: ChannelStats,
                        pilots: PilotMatrix, csi_mode: str = "estimated",
                        noise_var: float = 1.0) -> np.ndarray:
    """(K, K) matrix; column k is the power gradient of r_k."""
    theta, p, H, N = _check_inputs(gamma, sample, csi_mode)
    _, d_p = _rate_derivs(theta, p, H, N, stats, pilots, csi_mode, noise_var)
    return d_p


def rate_jacobian_single(gamma: ControlVariable, sample: ChannelSample, stats: ChannelStats,
                         pilots: PilotMatrix, csi_mode: str = "estimated",
                         noise_var: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Both gradients in one forward pass."""
    theta, p, H, N = _check_inputs(gamma, sample, csi_mode)
    return _rate_derivs(theta, p, H, N, stats, pilots, csi_mode, noise_var)


def policy_jacobian(policy: ControlPolicy, samples: list[ChannelSample], stats: ChannelStats,
                    pilots: PilotMatrix, csi_mode: str = "estimated",
                    noise_var: float = 1.0) -> list[RateJacobian]:
    """Per-sample Jacobians of the q-weighted rate vector w.r.t. all control
    variables, in the stacked [theta(1); p(1); ...; theta(L); p(L)] layout."""
    L, K = policy.L, stats.dims.K
    MS = stats.dims.M * stats.dims.S
    out = []
    for sample in samples:
        d_theta = np.zeros((L, MS, K))
        d_p = np.zeros((L, K, K))
        for l, gamma in enumerate(policy.gammas):
            if policy.q[l] == 0.0:
                continue  # scaled block is exactly zero
            d_theta[l], d_p[l] = rate_jacobian_single(gamma, sample, stats, pilots,
                                                      csi_mode, noise_var)
        out.append(RateJacobian(d_theta=d_theta, d_p=d_p, q=np.asarray(policy.q, float)))
    return out


def duality_precoder_power_jacobian(H_eff: np.ndarray, p: np.ndarray,
                                    F: np.ndarray) -> np.ndarray:
    """d(normalized duality precoder)/dp_j, stacked as (K, S, K).

    The same derivative chain the rate Jacobian uses; the precoder is a smooth
    function of the power allocation, and this matches central finite
    differences of the precoder entries.
    """
    from .precoding import duality_core
    H_eff = np.asarray(H_eff, dtype=complex)
    p = np.asarray(p, dtype=float)
    S, K = F.shape[1], H_eff.shape[0]
    V = np.eye(S) + np.einsum("ks,k,kt->st", H_eff.conj(), p, H_eff)
    Gt = duality_core(H_eff, p)
    bar = F @ Gt
    norms = np.linalg.norm(bar, axis=0)
    active = norms > NORM_FLOOR
    lam = np.where(active, 1.0 / np.where(active, norms, 1.0), 0.0)
    dV = np.einsum("js,jt->jst", H_eff.conj(), H_eff)
    rhs = np.zeros((K, S, K), dtype=complex)
    rhs[np.arange(K), :, np.arange(K)] = H_eff.conj()
    dGt = np.linalg.solve(V, rhs - dV @ Gt)
    return _normalized_precoder_derivs(F, Gt, bar, norms, active, lam, dGt)


def finite_difference_jacobian(fn, point, step: float) -> np.ndarray:
    """Central-difference Jacobian of a vector function, rows = coordinates.

    The caller is responsible for freezing any randomness inside ``fn`` (a
    fixed (H, N) sample) so both sides of each difference see the same state.
    """
    if not step > 0:
        raise ConfigurationError("step must be > 0")
    point = np.atleast_1d(np.asarray(point, dtype=float))
    f0 = np.atleast_1d(np.asarray(fn(point), dtype=float))
    J = np.empty((point.size, f0.size))
    for i in range(point.size):
        e = np.zeros_like(point)
        e[i] = step
        fp = np.atleast_1d(np.asarray(fn(point + e), dtype=float))
        fm = np.atleast_1d(np.asarray(fn(point - e), dtype=float))
        J[i] = (fp - fm) / (2.0 * step)
    return J
