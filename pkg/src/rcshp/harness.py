"""Experiment orchestration: seeded sweeps, baselines, metrics, CSV/JSON output.

A run is fully determined by (config, seeds): channel statistics, pilot
blocks, optimizer batches and the evaluation sample set all come from derived
streams, and every scheme at a sweep point is scored on the identical
evaluation samples.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .channel import (ChannelStats, Cost2100ModelParams, GeometryModelParams, SystemDims,
                      build_cost2100_stats, build_geometry_stats, sample_channels)
from .errors import ConfigurationError
from .estimation import PilotMatrix, generate_pilots
from .precoding import ControlPolicy, ControlVariable, TWO_PI
from .rate_utility import (UtilitySpec, monte_carlo_average_rates, rates_for_samples,
                           utility_gradient, utility_value)
from .seeding import Seed, derive, rng_from
from .ssca import OptimizerTrace, StepSchedule, initialize_policy, ssca_optimize

SCHEMES = ("rcshp", "duality_equal_power", "rzf_equal_power", "perfect_csi_rcshp")
SWEEP_AXES = ("none", "pilots", "snr")

_PILOT_KEY = 21
_INIT_KEY = 22
_SLOT_STATE_KEY = 23
_SLOT_SAMPLE_KEY = 24


@dataclass
class PowerModel:
    """Base-station power budget in mW: per-phase-shifter, per-LNA, per-RF
    chain and per-ADC device powers, baseband scaling/static terms, and the
    transmit power."""

    p_ps_mw: float = 6.6
    p_lna_mw: float = 20.0
    p_rf_mw: float = 120.0
    p_adc_mw: float = 240.0
    xi_mw: float = 10.0        # baseband power per RF chain
    varsigma_mw: float = 136.0  # static baseband power
    p_tx_mw: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def total_power_mw(self, M: int, S: int) -> float:
        baseband = S * self.xi_mw + self.varsigma_mw
        return M * S * self.p_ps_mw + S * (self.p_lna_mw + self.p_rf_mw + self.p_adc_mw) \
            + baseband + self.p_tx_mw


def energy_efficiency(sum_rate: float, dims: SystemDims, power_model: PowerModel) -> float:
    """Sum rate per watt of total BS power."""
    if sum_rate < 0:
        raise ConfigurationError("sum_rate must be >= 0")
    return sum_rate / (power_model.total_power_mw(dims.M, dims.S) / 1000.0)


@dataclass
class ChannelSpec:
    model: str = "geometry"
    geometry: GeometryModelParams = field(default_factory=GeometryModelParams)
    cost2100: Cost2100ModelParams = field(default_factory=Cost2100ModelParams)

    def __post_init__(self):
        if self.model not in ("geometry", "cost2100"):
            raise ConfigurationError(f"unknown channel model {self.model!r}")

    def build(self, dims: SystemDims, seed: Seed) -> ChannelStats:
        if self.model == "geometry":
            return build_geometry_stats(dims, self.geometry, seed)
        return build_cost2100_stats(dims, self.cost2100, seed)


@dataclass
class SweepSpec:
    axis: str = "none"
    values: list = field(default_factory=list)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}")
        if self.axis != "none" and any(v <= 0 for v in self.values) and self.axis == "pilots":
            raise ConfigurationError("pilot sweep values must be positive")


@dataclass
class SeedSpec:
    stats: int = 1
    optimizer: int = 2
    evaluation: int = 3


@dataclass
class RunSettings:
    n_iters: int = 50
    batch_size: int = 9          # channel/noise realizations per iteration
    n_eval_samples: int = 2000
    slots_per_block: int = 200
    noise_var: float = 1.0
    apply_pilot_overhead: bool = False
    pmax_to_mw: float = 1.0      # linear power units -> mW for the EE transmit term
    pilot_row_power: str = "P_max"  # metadata: training always runs at the budget
    mc_eval_every: int = 10
    mc_eval_samples: int = 500


@dataclass
class ExperimentConfig:
    dims: SystemDims
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    utility: UtilitySpec = field(default_factory=UtilitySpec.sum_rate)
    schedule: StepSchedule = field(default_factory=StepSchedule)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    csi_mode: str = "estimated"
    schemes: list = field(default_factory=lambda: ["rcshp", "duality_equal_power",
                                                   "rzf_equal_power"])
    seeds: SeedSpec = field(default_factory=SeedSpec)
    run: RunSettings = field(default_factory=RunSettings)
    power_model: PowerModel = field(default_factory=PowerModel)

    def __post_init__(self):
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigurationError(f"unknown scheme {s!r}; valid: {SCHEMES}")
        if self.csi_mode not in ("estimated", "perfect"):
            raise ConfigurationError("csi_mode must be 'estimated' or 'perfect'")

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel"]["geometry"]["gain_db_range"] = list(
            d["channel"]["geometry"]["gain_db_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        geo = dict(d["channel"].get("geometry", {}))
        if "gain_db_range" in geo:
            geo["gain_db_range"] = tuple(geo["gain_db_range"])
        return cls(
            dims=SystemDims(**d["dims"]),
            channel=ChannelSpec(model=d["channel"].get("model", "geometry"),
                                geometry=GeometryModelParams(**geo),
                                cost2100=Cost2100ModelParams(**d["channel"].get("cost2100", {}))),
            utility=UtilitySpec(**d.get("utility", {"kind": "sum_rate"})),
            schedule=StepSchedule(**d.get("schedule", {})),
            sweep=SweepSpec(**d.get("sweep", {})),
            csi_mode=d.get("csi_mode", "estimated"),
            schemes=list(d.get("schemes", ["rcshp"])),
            seeds=SeedSpec(**d.get("seeds", {})),
            run=RunSettings(**d.get("run", {})),
            power_model=PowerModel(**d.get("power_model", {})),
        )

    def to_yaml(self, path: str):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    @classmethod
    def from_yaml(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def desk_profile(**overrides) -> ExperimentConfig:
    """Small profile that runs in minutes; suitable for CI."""
    cfg = ExperimentConfig(dims=SystemDims(M=16, S=4, K=4, T_p=4, L=2, T=20, P_max=10.0))
    return _apply_overrides(cfg, overrides)


def paper_profile(**overrides) -> ExperimentConfig:
    """Full-scale profile: 64 antennas, 8 RF chains, 4 time-sharing states."""
    cfg = ExperimentConfig(dims=SystemDims(M=64, S=8, K=8, T_p=8, L=4, T=20, P_max=10.0))
    cfg.run.n_iters = 100
    return _apply_overrides(cfg, overrides)


PROFILES = {"desk": desk_profile, "paper": paper_profile}


def _apply_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigurationError(f"unknown config field {key!r}")
        setattr(cfg, key, value)
    return cfg


@dataclass
class ExperimentRecord:
    """One (sweep value, scheme) result; reproducible from (config, seeds)."""

    config_hash: str
    sweep_axis: str
    sweep_value: float | None
    scheme: str
    seed: int
    user_rates: list
    utility: float
    sum_rate: float
    sum_rate_stderr: float
    utility_stderr: float
    ee: float
    wall_time_s: float
    trace_ref: str | None = None
    trace: OptimizerTrace | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "trace"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(trace=None, **d)


# ---------------------------------------------------------------------------
# scheme construction and evaluation
# ---------------------------------------------------------------------------

def equal_power_policy(dims: SystemDims, stats: ChannelStats) -> ControlPolicy:
    """Single-state baseline: phases from the top-S eigenvectors of the summed
    covariance, equal power P_max/K for every user."""
    c_sum = stats.covariances.sum(axis=0)
    w, U = np.linalg.eigh(c_sum)
    top = U[:, np.argsort(w)[::-1][:dims.S]]
    theta = np.mod(np.angle(top), TWO_PI).reshape(-1, order="F")
    p = np.full(dims.K, dims.P_max / dims.K)
    return ControlPolicy(gammas=[ControlVariable(theta=theta, p=p)], q=np.ones(1))


def _dims_for_sweep(config: ExperimentConfig, value) -> SystemDims:
    if config.sweep.axis == "pilots":
        return config.dims.with_pilots(int(value))
    if config.sweep.axis == "snr":
        return config.dims.with_power(10.0 ** (float(value) / 10.0))  # N_0 normalized to 1
    return config.dims


def _scheme_policy(scheme: str, config: ExperimentConfig, dims: SystemDims,
                   stats: ChannelStats, pilots: PilotMatrix
                   ) -> tuple[ControlPolicy, OptimizerTrace | None, str, str]:
    """Returns (policy, trace, eval_csi_mode, precoder)."""
    run = config.run
    if scheme in ("rcshp", "perfect_csi_rcshp"):
        csi = "perfect" if scheme == "perfect_csi_rcshp" else config.csi_mode
        init = initialize_policy(dims, stats, derive(config.seeds.optimizer, _INIT_KEY))
        policy, trace = ssca_optimize(stats, pilots, dims, config.utility, config.schedule,
                                      init, run.n_iters, run.batch_size,
                                      config.seeds.optimizer, csi_mode=csi,
                                      noise_var=run.noise_var,
                                      mc_eval_every=run.mc_eval_every,
                                      mc_eval_samples=run.mc_eval_samples)
        return policy, trace, csi, "duality"
    policy = equal_power_policy(dims, stats)
    precoder = "rzf" if scheme == "rzf_equal_power" else "duality"
    return policy, None, config.csi_mode, precoder


def run_experiment(config: ExperimentConfig, progress: bool = False) -> list[ExperimentRecord]:
    """Execute the configured sweep; one record per (sweep value, scheme)."""
    sweep_values = config.sweep.values if config.sweep.axis != "none" else [None]
    if not sweep_values:
        raise ConfigurationError("sweep axis set but no sweep values given")
    chash = config.config_hash()
    records = []
    for value in sweep_values:
        dims = _dims_for_sweep(config, value)
        if config.run.apply_pilot_overhead and dims.T_p > dims.T:
            raise ConfigurationError(f"T_p = {dims.T_p} exceeds slot length T = {dims.T}")
        stats = config.channel.build(dims, config.seeds.stats)
        pilots = generate_pilots(dims.T_p, dims.S, dims.P_max,
                                 derive(config.seeds.stats, _PILOT_KEY))
        for scheme in config.schemes:
            t0 = time.perf_counter()
            try:
                policy, trace, csi, precoder = _scheme_policy(scheme, config, dims, stats,
                                                              pilots)
                r_bar, per_sample = monte_carlo_average_rates(
                    policy, stats, pilots, config.run.n_eval_samples,
                    config.seeds.evaluation, csi_mode=csi, noise_var=config.run.noise_var,
                    precoder=precoder, rzf_alpha=dims.K / dims.P_max,
                    return_per_sample=True)
            except Exception as exc:  # abort this sweep point, keep the sweep alive
                print(f"[{config.sweep.axis}={value}] {scheme} failed: {exc}",
                      file=sys.stderr)
                records.append(ExperimentRecord(
                    config_hash=chash, sweep_axis=config.sweep.axis,
                    sweep_value=None if value is None else float(value), scheme=scheme,
                    seed=config.seeds.optimizer, user_rates=[float("nan")] * dims.K,
                    utility=float("nan"), sum_rate=float("nan"),
                    sum_rate_stderr=float("nan"), utility_stderr=float("nan"),
                    ee=float("nan"), wall_time_s=time.perf_counter() - t0))
                continue
            factor = (dims.T - dims.T_p) / dims.T if config.run.apply_pilot_overhead else 1.0
            r_eff = factor * r_bar
            per_eff = factor * per_sample
            n = per_eff.shape[0]
            sum_se = float(per_eff.sum(axis=1).std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            grad = utility_gradient(r_eff, config.utility)
            cov = np.cov(per_eff.T) if n > 1 else np.zeros((dims.K, dims.K))
            cov = np.atleast_2d(cov)
            util_se = float(np.sqrt(max(grad @ cov @ grad, 0.0) / n)) if n > 1 else 0.0
            wall = time.perf_counter() - t0
            records.append(ExperimentRecord(
                config_hash=chash,
                sweep_axis=config.sweep.axis,
                sweep_value=None if value is None else float(value),
                scheme=scheme,
                seed=config.seeds.optimizer,
                user_rates=[float(x) for x in r_eff],
                utility=utility_value(r_eff, config.utility),
                sum_rate=float(r_eff.sum()),
                sum_rate_stderr=sum_se,
                utility_stderr=util_se,
                ee=energy_efficiency(float(r_eff.sum()), dims,
                                     _power_model_with_tx(config, dims)),
                wall_time_s=wall,
                trace=trace,
            ))
            if progress:
                print(f"[{config.sweep.axis}={value}] {scheme}: "
                      f"utility={records[-1].utility:.4f} sum_rate={records[-1].sum_rate:.4f} "
                      f"({wall:.1f}s)")
    return records


def _power_model_with_tx(config: ExperimentConfig, dims: SystemDims) -> PowerModel:
    pm = config.power_model
    return PowerModel(p_ps_mw=pm.p_ps_mw, p_lna_mw=pm.p_lna_mw, p_rf_mw=pm.p_rf_mw,
                      p_adc_mw=pm.p_adc_mw, xi_mw=pm.xi_mw, varsigma_mw=pm.varsigma_mw,
                      p_tx_mw=dims.P_max * config.run.pmax_to_mw)


def apply_policy(policy: ControlPolicy, stats: ChannelStats, pilots: PilotMatrix,
                 n_slots: int, seed: Seed, csi_mode: str = "estimated",
                 noise_var: float = 1.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slot-level application: per slot draw a state l ~ Categorical(q) and a
    fresh realization, run the pipeline, log rates.

    Returns (mean rates (K,), states (n_slots,), per-slot rates (n_slots, K)).
    """
    if n_slots < 1:
        raise ConfigurationError("n_slots must be >= 1")
    rng = rng_from(seed, _SLOT_STATE_KEY)
    states = rng.choice(policy.L, size=n_slots, p=policy.q)
    samples = sample_channels(stats, n_slots, derive(seed, _SLOT_SAMPLE_KEY))
    rates = np.zeros((n_slots, stats.dims.K))
    for l in np.unique(states):
        idx = np.nonzero(states == l)[0]
        batch = [samples[i] for i in idx]
        rates[idx] = rates_for_samples(policy.gammas[l], batch, stats, pilots,
                                       csi_mode, noise_var)
    return rates.mean(axis=0), states, rates


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

RESULT_PREFIX_COLS = ["sweep_axis", "sweep_value", "scheme", "seed", "utility",
                      "sum_rate", "ee"]
RESULT_SUFFIX_COLS = ["sum_rate_stderr", "utility_stderr", "config_hash", "trace_ref",
                      "wall_time_s"]
TRACE_COLS = ["iter", "surrogate_utility", "mc_utility", "step_norm_gamma", "step_norm_q"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if np.isnan(value) else repr(value)
    return str(value)


def emit_results(records: list[ExperimentRecord], out_dir, formats=("csv", "json"),
                 config: ExperimentConfig | None = None) -> dict:
    """Write results.csv / results.json plus one trace CSV per optimized run.

    Column order is stable; wall-clock time sits in the last column so
    determinism checks can strip it.  Returns the written paths.
    """
    import os
    os.makedirs(out_dir, exist_ok=True)
    written = {}
    for rec in records:
        if rec.trace is not None and rec.trace_ref is None:
            tag = "single" if rec.sweep_value is None else f"{rec.sweep_axis}{rec.sweep_value:g}"
            rec.trace_ref = f"trace_{rec.scheme}_{tag}.csv"
            tpath = os.path.join(out_dir, rec.trace_ref)
            write_trace_csv(rec.trace, tpath)
            written.setdefault("traces", []).append(tpath)
    if "csv" in formats:
        path = os.path.join(out_dir, "results.csv")
        n_users = len(records[0].user_rates) if records else 0
        header = RESULT_PREFIX_COLS + [f"user_rate_{k + 1}" for k in range(n_users)] \
            + RESULT_SUFFIX_COLS
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for rec in records:
                d = rec.to_dict()
                row = [_fmt(d[c]) for c in RESULT_PREFIX_COLS]
                row += [_fmt(r) for r in rec.user_rates]
                row += [_fmt(d[c]) for c in RESULT_SUFFIX_COLS]
                writer.writerow(row)
        written["csv"] = path
    if "json" in formats:
        path = os.path.join(out_dir, "results.json")
        payload = {"config": config.to_dict() if config is not None else None,
                   "records": [r.to_dict() for r in records]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
        written["json"] = path
    return written


def load_records(json_path) -> list[ExperimentRecord]:
    with open(json_path) as fh:
        payload = json.load(fh)
    return [ExperimentRecord.from_dict(d) for d in payload["records"]]


def write_trace_csv(trace: OptimizerTrace, path):
    cols = trace.as_columns()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLS)
        for i in range(len(cols["iter"])):
            writer.writerow([_fmt(cols[c][i]) for c in TRACE_COLS])
