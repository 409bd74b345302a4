"""Stochastic successive convex approximation over randomized control policies.

Each iteration draws a fresh mini-batch of channel/noise realizations, updates
recursive surrogates of the per-state rates and of the utility gradient, solves
one convex subproblem for the time-sharing vector q (projected gradient on the
simplex) and L independent proximal subproblems for the control states (closed
form: a projected gradient step), then averages iterates with a diminishing
step.  Step-size exponents are validated against the standard stochastic
approximation conditions (square-summable rho, summable-squares gamma with
gamma/rho -> 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelStats, sample_channels
from .errors import ConfigurationError, OptimizerError
from .estimation import PilotMatrix
from .jacobian import policy_jacobian
from .precoding import ControlPolicy, ControlVariable, TWO_PI
from .rate_utility import (UtilitySpec, monte_carlo_average_rates, rates_for_samples,
                           utility_curvature, utility_gradient, utility_value)
from .seeding import Seed, derive, rng_from

_BATCH_KEY = 1      # spawn-key tags for the optimizer's derived streams
_HOLDOUT_KEY = 2


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing step sizes rho_t = (t+1)^-rho_exponent (surrogate averaging)
    and gamma_t = (t+1)^-gamma_exponent (iterate averaging), plus the proximal
    weights of the two subproblems."""

    rho_exponent: float = 0.6
    gamma_exponent: float = 0.7
    tau_q: float = 1.0
    tau_gamma: float = 0.1

    def __post_init__(self):
        if not (0.5 < self.rho_exponent < 1.0):
            raise ConfigurationError("rho_exponent must lie in (0.5, 1) so that "
                                     "sum rho_t^2 < inf and sum rho_t/sqrt(t) < inf")
        if not (self.rho_exponent < self.gamma_exponent <= 1.0):
            raise ConfigurationError("need rho_exponent < gamma_exponent <= 1 so that "
                                     "gamma_t/rho_t -> 0 with sum gamma_t = inf")
        if not (self.tau_q > 0 and self.tau_gamma > 0):
            raise ConfigurationError("tau_q and tau_gamma must be > 0")

    def rho(self, t: int) -> float:
        return float((t + 1) ** (-self.rho_exponent))

    def gamma(self, t: int) -> float:
        return float((t + 1) ** (-self.gamma_exponent))


@dataclass
class SurrogateState:
    """Recursive estimates: per-state user rates r_hat (K, L) and the flat
    gradient estimate f_gamma of length L*(M*S + K)."""

    r_hat: np.ndarray
    f_gamma: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, K: int, L: int, n_gamma: int) -> "SurrogateState":
        return cls(r_hat=np.zeros((K, L)), f_gamma=np.zeros(L * n_gamma), t=0)


@dataclass
class OptimizerTrace:
    """Per-iteration diagnostics (iteration numbers are 1-based)."""

    iters: list = field(default_factory=list)
    surrogate_utility: list = field(default_factory=list)
    mc_utility: list = field(default_factory=list)          # NaN when not evaluated
    step_norm_gamma: list = field(default_factory=list)
    step_norm_q: list = field(default_factory=list)
    feasibility: list = field(default_factory=list)

    def as_columns(self) -> dict:
        return {"iter": list(self.iters),
                "surrogate_utility": list(self.surrogate_utility),
                "mc_utility": list(self.mc_utility),
                "step_norm_gamma": list(self.step_norm_gamma),
                "step_norm_q": list(self.step_norm_q)}


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = total} (sort-based, exact)."""
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise ConfigurationError("cannot project a non-finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def project_power(v: np.ndarray, p_max: float) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum p <= p_max}."""
    w = np.maximum(np.asarray(v, dtype=float), 0.0)
    if w.sum() <= p_max:
        return w
    return project_simplex(v, total=p_max)


# ---------------------------------------------------------------------------
# surrogate updates
# ---------------------------------------------------------------------------

def update_rate_surrogate(state: SurrogateState, policy: ControlPolicy, batch,
                          stats: ChannelStats, pilots: PilotMatrix, rho_t: float,
                          csi_mode: str = "estimated", noise_var: float = 1.0) -> np.ndarray:
    """New r_hat: (1 - rho_t) * old + rho_t * batch mean, per user and state."""
    if not (0.0 < rho_t <= 1.0):
        raise ConfigurationError("rho_t must lie in (0, 1]")
    batch_mean = np.empty_like(state.r_hat)
    for l, gamma in enumerate(policy.gammas):
        r = rates_for_samples(gamma, batch, stats, pilots, csi_mode, noise_var)
        batch_mean[:, l] = r.mean(axis=0)
    return (1.0 - rho_t) * state.r_hat + rho_t * batch_mean


def update_gradient_surrogate(state: SurrogateState, policy: ControlPolicy, batch,
                              stats: ChannelStats, pilots: PilotMatrix, rho_t: float,
                              utility: UtilitySpec, csi_mode: str = "estimated",
                              noise_var: float = 1.0) -> np.ndarray:
    """New f_gamma from the batch mean of per-sample Jacobian * utility gradient.

    The utility gradient is evaluated at the *current* surrogate rates
    r_hat @ q, so :func:`update_rate_surrogate` must run first.
    """
    if not (0.0 < rho_t <= 1.0):
        raise ConfigurationError("rho_t must lie in (0, 1]")
    grad_u = utility_gradient(state.r_hat @ policy.q, utility)
    jacs = policy_jacobian(policy, batch, stats, pilots, csi_mode, noise_var)
    term = np.zeros_like(state.f_gamma)
    for jac in jacs:
        term += jac.matrix @ grad_u
    term /= len(jacs)
    return (1.0 - rho_t) * state.f_gamma + rho_t * term


# ---------------------------------------------------------------------------
# convex subproblems
# ---------------------------------------------------------------------------

def _q_residual(q, g):
    return float(np.linalg.norm(q - project_simplex(q + g)))


def _newton_face_polish(q, grad, hess, tol, rounds=40):
    """Equality-constrained Newton steps on the current support of q.

    Converges quadratically once the optimal face is identified; shrinks the
    face through fraction-to-boundary steps.  Returns (q, converged).
    """
    n = q.size
    for _ in range(rounds):
        g = grad(q)
        if _q_residual(q, g) <= tol:
            return q, True
        support = q > 1e-14
        ns = int(support.sum())
        if ns <= 1:
            return q, _q_residual(q, g) <= tol
        H = hess(q)[np.ix_(support, support)]
        kkt = np.zeros((ns + 1, ns + 1))
        kkt[:ns, :ns] = H
        kkt[:ns, ns] = 1.0
        kkt[ns, :ns] = 1.0
        rhs = np.concatenate([-g[support], [0.0]])
        try:
            d = np.linalg.solve(kkt, rhs)[:ns]
        except np.linalg.LinAlgError:
            return q, False
        qs = q[support]
        step = 1.0
        neg = d < 0
        if neg.any():
            step = min(1.0, float(np.min(qs[neg] / -d[neg])))
        q = q.copy()
        q[support] = np.maximum(qs + step * d, 0.0)
        q /= q.sum()
    g = grad(q)
    return q, _q_residual(q, g) <= tol


def solve_q_subproblem(r_hat: np.ndarray, q_t: np.ndarray, utility: UtilitySpec,
                       tau_q: float, tol: float = 1e-8, max_iters: int = 10000) -> np.ndarray:
    """Maximize U(r_hat @ q) - tau_q ||q - q_t||^2 over the simplex.

    Projected gradient ascent (globally convergent on this strongly concave
    problem) plus a Newton polish on the active face, which reaches the 1e-8
    unit-step projected-gradient residual that plain value-based line search
    cannot resolve in float64.
    """
    if not tau_q > 0:
        raise ConfigurationError("tau_q must be > 0")
    q_t = np.asarray(q_t, dtype=float)
    if q_t.size == 1:
        return np.ones(1)

    def value(q):
        return utility_value(r_hat @ q, utility) - tau_q * np.sum((q - q_t) ** 2)

    def grad(q):
        return r_hat.T @ utility_gradient(r_hat @ q, utility) - 2.0 * tau_q * (q - q_t)

    def hess(q):
        curv = utility_curvature(r_hat @ q, utility)
        return (r_hat * curv[:, None]).T @ r_hat - 2.0 * tau_q * np.eye(q.size)

    q = q_t.copy()
    val = value(q)
    step = 1.0
    residual = np.inf
    outer = max(1, max_iters // 200)
    for _ in range(outer):
        for _ in range(200):
            g = grad(q)
            residual = _q_residual(q, g)
            if residual <= tol:
                return q
            noise = 1e-12 * (1.0 + abs(val))
            while True:
                q_new = project_simplex(q + step * g)
                val_new = value(q_new)
                if val_new >= val - noise:
                    break
                step *= 0.5
                if step < 1e-14:
                    break
            q, val = q_new, val_new
            step = min(step * 1.5, 1e3)
        q, done = _newton_face_polish(q, grad, hess, tol)
        val = value(q)
        if done:
            return q
    residual = _q_residual(q, grad(q))
    if residual <= tol:
        return q
    raise OptimizerError(f"q-subproblem did not reach residual {tol:g} in {max_iters} "
                         f"iterations (residual {residual:.3e})", residual=float(residual))


def solve_gamma_subproblems(f_gamma: np.ndarray, gammas: list[ControlVariable],
                            tau_gamma: float, p_max: float) -> list[ControlVariable]:
    """Closed-form per-state maximizers of the linearized proximal subproblem:
    project Gamma(l) + f(l) / (2 tau) onto the feasible set (box for phases,
    capped-sum orthant for powers)."""
    if not tau_gamma > 0:
        raise ConfigurationError("tau_gamma must be > 0")
    out = []
    offset = 0
    for gamma in gammas:
        n_theta, n_p = gamma.theta.size, gamma.p.size
        block = f_gamma[offset:offset + n_theta + n_p]
        offset += n_theta + n_p
        theta_cand = gamma.theta + block[:n_theta] / (2.0 * tau_gamma)
        p_cand = gamma.p + block[n_theta:] / (2.0 * tau_gamma)
        out.append(ControlVariable(theta=np.clip(theta_cand, 0.0, TWO_PI),
                                   p=project_power(p_cand, p_max)))
    return out


def average_iterates(current: ControlPolicy, q_bar: np.ndarray,
                     gamma_bar: list[ControlVariable], gamma_t: float) -> ControlPolicy:
    """Convex combination (1 - gamma_t) * current + gamma_t * solution; both
    feasible sets are convex so feasibility is preserved exactly."""
    if not (0.0 < gamma_t <= 1.0):
        raise ConfigurationError("gamma_t must lie in (0, 1]")
    q = (1.0 - gamma_t) * current.q + gamma_t * np.asarray(q_bar, float)
    gammas = [ControlVariable(theta=(1.0 - gamma_t) * g.theta + gamma_t * gb.theta,
                              p=(1.0 - gamma_t) * g.p + gamma_t * gb.p)
              for g, gb in zip(current.gammas, gamma_bar)]
    return ControlPolicy(gammas=gammas, q=q)


# ---------------------------------------------------------------------------
# initialization and the main loop
# ---------------------------------------------------------------------------

def initialize_policy(dims, stats: ChannelStats, seed: Seed) -> ControlPolicy:
    """Deterministic starting policy: uniform q; per state, phases from the
    top-S eigenvectors of a random user subset's covariance sum (distinct
    subsets break the symmetry between states), and equal power P_max/K on a
    round-robin user subset so every user is served somewhere."""
    rng = rng_from(seed)
    K, S, L = dims.K, dims.S, dims.L
    perm = rng.permutation(K)
    n_active = min(S, K)
    gammas = []
    for l in range(L):
        theta_idx = rng.choice(K, size=n_active, replace=False)
        c_sum = stats.covariances[theta_idx].sum(axis=0)
        w, U = np.linalg.eigh(c_sum)
        top = U[:, np.argsort(w)[::-1][:S]]
        theta = np.angle(top).reshape(-1, order="F")
        # per-state jitter: with K <= S every subset is the full user set, so
        # the eigen phases alone would make all L states identical
        theta = np.mod(theta + rng.uniform(-1.0, 1.0, size=theta.size), TWO_PI)
        power_idx = np.array([perm[(l * n_active + j) % K] for j in range(n_active)])
        p = np.zeros(K)
        p[np.unique(power_idx)] = dims.P_max / K
        gammas.append(ControlVariable(theta=theta, p=p))
    return ControlPolicy(gammas=gammas, q=np.full(L, 1.0 / L))


def ssca_optimize(stats: ChannelStats, pilots: PilotMatrix, dims, utility: UtilitySpec,
                  schedule: StepSchedule, init: ControlPolicy, n_iters: int, batch_size: int,
                  seed: Seed, csi_mode: str = "estimated", noise_var: float = 1.0,
                  mc_eval_every: int = 10, mc_eval_samples: int = 500
                  ) -> tuple[ControlPolicy, OptimizerTrace]:
    """Run the full optimizer loop and return (final policy, trace).

    Per iteration: draw ``batch_size`` fresh realizations, update both
    surrogates, solve + average the q subproblem, solve + average the L state
    subproblems.  Every intermediate iterate stays feasible; the trace records
    a held-out Monte-Carlo utility every ``mc_eval_every`` iterations.
    """
    if n_iters < 0 or batch_size < 1:
        raise ConfigurationError("need n_iters >= 0 and batch_size >= 1")
    policy = init
    MS = dims.M * dims.S
    state = SurrogateState.zeros(dims.K, dims.L, MS + dims.K)
    trace = OptimizerTrace()
    holdout = derive(seed, _HOLDOUT_KEY)
    for t in range(n_iters):
        rho_t = schedule.rho(t)
        gamma_t = schedule.gamma(t)
        batch = sample_channels(stats, batch_size, derive(seed, _BATCH_KEY, t))

        r_hat = update_rate_surrogate(state, policy, batch, stats, pilots, rho_t,
                                      csi_mode, noise_var)
        state = SurrogateState(r_hat=r_hat, f_gamma=state.f_gamma, t=t)
        f_gamma = update_gradient_surrogate(state, policy, batch, stats, pilots, rho_t,
                                            utility, csi_mode, noise_var)
        state = SurrogateState(r_hat=r_hat, f_gamma=f_gamma, t=t)

        surrogate_u = utility_value(np.maximum(r_hat @ policy.q, 0.0), utility)

        try:
            q_bar = solve_q_subproblem(r_hat, policy.q, utility, schedule.tau_q)
            gamma_bar = solve_gamma_subproblems(f_gamma, policy.gammas,
                                                schedule.tau_gamma, dims.P_max)
        except OptimizerError as exc:
            exc.trace = trace  # diagnostics up to the failing iteration
            raise
        step_q = float(np.linalg.norm(q_bar - policy.q))
        step_gamma = float(np.linalg.norm(
            np.concatenate([gb.flat() - g.flat() for g, gb in zip(policy.gammas, gamma_bar)])))
        policy = average_iterates(policy, q_bar, gamma_bar, gamma_t)

        mc_u = np.nan
        if mc_eval_every and ((t + 1) % mc_eval_every == 0 or t == n_iters - 1):
            r_bar = monte_carlo_average_rates(policy, stats, pilots, mc_eval_samples,
                                              holdout, csi_mode, noise_var)
            mc_u = utility_value(r_bar, utility)

        trace.iters.append(t + 1)
        trace.surrogate_utility.append(surrogate_u)
        trace.mc_utility.append(mc_u)
        trace.step_norm_gamma.append(step_gamma)
        trace.step_norm_q.append(step_q)
        trace.feasibility.append(policy.feasibility_residual(dims.P_max))
    return policy, trace
