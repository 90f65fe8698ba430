"""Ensembles over initial conditions and the statistics of extensive observables.

Each ensemble member is an independent MD run whose initial condition is
drawn with seed ``base_seed + member``. Observables are sampled at fixed
times and reduced to cumulants (k-statistics with jackknife errors),
block cross-correlations, variance-additivity checks and log-log scaling
fits across body sizes.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .coords import BodyConfig, PhaseState
from .errors import ConfigurationError, EstimatorError, PartitionError
from .mdsim import (
    DEFAULT_DT_FRACTION,
    IntegratorParams,
    ScenarioSpec,
    cm_energy,
    choose_dt,
    prepare_scenario,
    run,
    total_energy,
)

logger = logging.getLogger(__name__)

OBSERVABLES = ("P", "R", "E_CM", "E_total", "rel_kinetic", "block_R", "block_P", "block_kinetic")


@dataclass(frozen=True)
class EnsembleSpec:
    n_members: int
    temperature: float
    base_seed: int
    body: BodyConfig
    scenario: ScenarioSpec
    pair: object
    external: object
    sample_times: tuple = (0.0,)
    n_blocks: int = 4
    cm_thermal: bool = True
    dt_fraction: float = DEFAULT_DT_FRACTION

    def __post_init__(self):
        if self.n_members < 2:
            raise EstimatorError(f"an ensemble needs n_members >= 2, got {self.n_members}")
        if any(t < 0 for t in self.sample_times) or list(self.sample_times) != sorted(self.sample_times):
            raise ConfigurationError("sample_times must be non-negative and increasing")

    def member_seed(self, member: int) -> int:
        return self.base_seed + member


@dataclass(frozen=True)
class BlockPartition:
    n_blocks: int
    bounds: tuple
    masses: tuple
    counts: tuple


def make_partition(cfg: BodyConfig, n_blocks: int) -> BlockPartition:
    """Contiguous equal blocks; the remainder atoms go to the last block."""
    if n_blocks < 1 or n_blocks > cfg.n_atoms:
        raise PartitionError(f"cannot split {cfg.n_atoms} atoms into {n_blocks} non-empty blocks")
    size = cfg.n_atoms // n_blocks
    bounds = [(s * size, (s + 1) * size) for s in range(n_blocks)]
    bounds[-1] = (bounds[-1][0], cfg.n_atoms)
    counts = tuple(b - a for a, b in bounds)
    return BlockPartition(n_blocks, tuple(bounds), tuple(c * cfg.atom_mass for c in counts), counts)


def block_cm_variables(state: PhaseState, partition: BlockPartition, cfg: BodyConfig):
    """Per-block CM positions (mass-weighted means) and total momenta."""
    state.validate(cfg)
    if sum(partition.counts) != cfg.n_atoms or partition.bounds[-1][1] != cfg.n_atoms:
        raise PartitionError("partition does not cover the body")
    R = np.empty((partition.n_blocks, cfg.dim))
    P = np.empty((partition.n_blocks, cfg.dim))
    for s, (a, b) in enumerate(partition.bounds):
        if b <= a:
            raise PartitionError(f"block {s} is empty")
        R[s] = state.positions[a:b].mean(axis=0)
        P[s] = state.momenta[a:b].sum(axis=0)
    return R, P


def reconstruct_cm(block_R, block_P, partition: BlockPartition):
    """``R = sum M_s R_s / sum M_s`` and ``P = sum P_s``."""
    masses = np.asarray(partition.masses)[:, None]
    return (masses * block_R).sum(axis=0) / masses.sum(), np.asarray(block_P).sum(axis=0)


# --------------------------------------------------------------------------
# running


@dataclass
class EnsembleSamples:
    """Observables indexed ``[member, time, ...]``."""

    spec: EnsembleSpec
    times: np.ndarray
    data: dict
    dt: float

    def __getitem__(self, name):
        return self.data[name]


def _member_observables(state, spec, partition, cfg):
    block_R, block_P = block_cm_variables(state, partition, cfg)
    m = cfg.atom_mass
    block_kin = np.array([np.sum(state.momenta[a:b] ** 2) / (2.0 * m) for a, b in partition.bounds])
    P = state.momenta.sum(axis=0)
    return {
        "P": P,
        "R": state.positions.mean(axis=0),
        "E_CM": cm_energy(state, cfg, spec.external),
        "E_total": total_energy(state, cfg, spec.pair, spec.external),
        "rel_kinetic": float(np.sum((state.momenta - P / cfg.n_atoms) ** 2)) / (2.0 * m),
        "block_R": block_R,
        "block_P": block_P,
        "block_kinetic": block_kin,
    }


def ensemble_dt(spec: EnsembleSpec) -> float:
    # one dt for every member, taken from the deterministic T=0 preparation
    ref = prepare_scenario(replace(spec.scenario, temperature=0.0), spec.body, spec.pair, spec.external)
    return choose_dt(spec.body, spec.pair, spec.external, ref, spec.dt_fraction)


def run_member(spec: EnsembleSpec, member: int, dt: float):
    cfg = spec.body
    scenario = replace(spec.scenario, temperature=spec.temperature, seed=spec.member_seed(member))
    state = prepare_scenario(scenario, cfg, spec.pair, spec.external, project_cm=not spec.cm_thermal)
    partition = make_partition(cfg, spec.n_blocks)
    steps = [int(round(t / dt)) for t in spec.sample_times]
    out = []
    done = 0
    for target in steps:
        if target > done:
            traj = run(state, cfg, spec.pair, spec.external, IntegratorParams(dt, target - done, target - done))
            state = traj.final_state
            done = target
        out.append(_member_observables(state, spec, partition, cfg))
    return {k: np.array([o[k] for o in out]) for k in OBSERVABLES}


def _run_member_star(args):
    return run_member(*args)


def resolve_workers(workers=None) -> int:
    if workers is None:
        workers = int(os.environ.get("EMERGENCE_LAB_WORKERS", "1"))
    return max(1, int(workers))


def run_ensemble(spec: EnsembleSpec, workers=None) -> EnsembleSamples:
    """Run every member; the result does not depend on the worker count."""
    dt = ensemble_dt(spec)
    jobs = [(spec, m, dt) for m in range(spec.n_members)]
    workers = resolve_workers(workers)
    if workers == 1 or spec.n_members == 1:
        results = [run_member(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_member_star, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    data = {k: np.stack([r[k] for r in results]) for k in OBSERVABLES}
    times = np.array([int(round(t / dt)) * dt for t in spec.sample_times])
    return EnsembleSamples(spec, times, data, dt)


# --------------------------------------------------------------------------
# estimators


@dataclass
class CumulantReport:
    n: int
    mean: float
    variance: float
    cumulant3: float
    cumulant4: float
    se_mean: float
    se_variance: float
    se_cumulant3: float
    se_cumulant4: float

    def as_row(self):
        return [self.mean, self.variance, self.cumulant3, self.cumulant4,
                self.se_mean, self.se_variance, self.se_cumulant3, self.se_cumulant4]


def _kstats(n, s1, s2, s3, s4):
    """k-statistics from power sums (arrays allowed); NaN where undefined."""
    n = np.asarray(n, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        k1 = s1 / n
        k2 = (n * s2 - s1**2) / (n * (n - 1))
        k3 = (2 * s1**3 - 3 * n * s1 * s2 + n**2 * s3) / (n * (n - 1) * (n - 2))
        k4 = (
            -6 * s1**4
            + 12 * n * s1**2 * s2
            - 3 * n * (n - 1) * s2**2
            - 4 * n * (n + 1) * s1 * s3
            + n**2 * (n + 1) * s4
        ) / (n * (n - 1) * (n - 2) * (n - 3))
    return k1, k2, k3, k4


def cumulants(samples, order: int = 4) -> CumulantReport:
    """Unbiased cumulant estimates up to ``order`` with jackknife errors.

    Higher orders than requested are reported as NaN. Data are centered on
    the sample mean first so that the power sums stay well conditioned.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if order < 2 or order > 4:
        raise ValueError("order must be 2, 3 or 4")
    if n < max(2, order):
        raise EstimatorError(f"{n} samples are too few for cumulants of order {order}")
    shift = x.mean()
    y = x - shift
    p = [np.sum(y**r) for r in range(1, 5)]
    k = list(_kstats(n, *p))
    k[0] = k[0] + shift
    # leave-one-out power sums
    loo = [p[r - 1] - y**r for r in range(1, 5)]
    kj = list(_kstats(n - 1, *loo))
    kj[0] = kj[0] + shift
    se = [float(np.sqrt((n - 1) / n * np.sum((kk - kk.mean()) ** 2))) if n > r + 1 else float("nan")
          for r, kk in enumerate(kj)]
    vals = [float(v) for v in k]
    for r in range(order, 4):
        vals[r] = float("nan")
        se[r] = float("nan")
    vals[1] = max(vals[1], 0.0)
    return CumulantReport(n, vals[0], vals[1], vals[2], vals[3], se[0], se[1], se[2], se[3])


def jackknife(samples, estimator):
    """Leave-one-out jackknife: returns ``(estimate, standard_error)``.

    ``samples`` is indexed by member along axis 0.
    """
    samples = np.asarray(samples)
    n = samples.shape[0]
    if n < 2:
        raise EstimatorError("jackknife needs at least 2 members")
    full = estimator(samples)
    idx = np.arange(n)
    reps = np.array([estimator(samples[idx != i]) for i in range(n)])
    se = np.sqrt((n - 1) / n * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
    return full, se


@dataclass
class IndependenceReport:
    correlation: np.ndarray
    max_adjacent: float
    max_nonadjacent: float
    undefined: list = field(default_factory=list)


def independence_test(block_samples, min_members: int = 30) -> IndependenceReport:
    """Normalized cross-covariances between blocks, ``block_samples[member, block]``."""
    x = np.asarray(block_samples, dtype=float)
    m, nb = x.shape
    if nb < 2:
        raise EstimatorError("need at least 2 blocks")
    if m < min_members:
        raise EstimatorError(f"need at least {min_members} members, got {m}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (m - 1)
    sd = np.sqrt(np.diag(cov))
    undefined = [int(s) for s in np.flatnonzero(sd == 0)]
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[undefined, :] = np.nan
    corr[:, undefined] = np.nan
    np.fill_diagonal(corr, 1.0)
    i, j = np.triu_indices(nb, 1)
    vals = np.abs(corr[i, j])
    adj = vals[(j - i) == 1]
    non = vals[(j - i) > 1]

    def _max(v):
        v = v[np.isfinite(v)]
        return float(v.max()) if v.size else float("nan")

    return IndependenceReport(corr, _max(adj), _max(non), undefined)


@dataclass
class AdditivityReport:
    var_of_sum: float
    sum_of_vars: float
    difference: float
    joint_se: float

    @property
    def n_se(self) -> float:
        if self.joint_se == 0:
            return 0.0 if self.difference == 0 else float("inf")
        return abs(self.difference) / self.joint_se

    def holds(self, k: float = 3.0) -> bool:
        return self.n_se <= k


def variance_additivity(block_samples) -> AdditivityReport:
    """Compare Var(sum_s A_s) with sum_s Var(A_s); the error is a jackknife over members."""
    x = np.asarray(block_samples, dtype=float)

    def diff(s):
        return np.var(s.sum(axis=1), ddof=1) - np.sum(np.var(s, axis=0, ddof=1))

    d, se = jackknife(x, diff)
    return AdditivityReport(
        float(np.var(x.sum(axis=1), ddof=1)), float(np.sum(np.var(x, axis=0, ddof=1))), float(d), float(se)
    )


# --------------------------------------------------------------------------
# scaling


@dataclass
class FitResult:
    slope: float
    intercept: float
    slope_se: float
    ci_low: float
    ci_high: float
    n_points: int


def loglog_fit(x, y, sigma_log=None, confidence: float = 0.95) -> FitResult:
    """Weighted least squares of ``log y`` on ``log x``.

    ``sigma_log`` are the standard errors of ``log y``; the parameter
    covariance is rescaled by the reduced chi-square.
    """
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    n = lx.size
    if n < 3:
        raise EstimatorError("a slope with an error needs at least 3 points")
    w = np.ones(n) if sigma_log is None else 1.0 / np.asarray(sigma_log, float) ** 2
    A = np.column_stack([lx, np.ones(n)])
    Aw = A * np.sqrt(w)[:, None]
    yw = ly * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    resid = yw - Aw @ coef
    dof = n - 2
    cov = np.linalg.inv(Aw.T @ Aw) * (resid @ resid) / dof
    se = float(np.sqrt(cov[0, 0]))
    t = stats.t.ppf(0.5 + confidence / 2, dof)
    return FitResult(float(coef[0]), float(coef[1]), se, float(coef[0] - t * se), float(coef[0] + t * se), n)


@dataclass
class ScalingReport:
    n_values: list
    delta_P: list
    delta_E_total: list
    delta_E_cm: list
    se_log: dict
    fits: dict
    excluded: dict = field(default_factory=dict)


def _std_and_log_se(v):
    """Ensemble std (RMS over components) and the jackknife error of its log."""
    v = np.asarray(v, float).reshape(len(v), -1)

    def est(s):
        return np.sqrt(np.mean(np.var(s, axis=0, ddof=1)))

    val, se = jackknife(v, est)
    return float(val), (float(se / val) if val > 0 else float("inf"))


def _rel_std_and_log_se(v):
    v = np.asarray(v, float)

    def est(s):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.std(s, ddof=1) / abs(np.mean(s))

    val, se = jackknife(v, est)
    return float(val), (float(se / val) if val > 0 else float("inf"))


def scaling_study(template: EnsembleSpec, n_values, workers=None, progress=None) -> ScalingReport:
    """Fluctuations of P, E_total and E_CM against body size.

    Uses the last sample time of each ensemble. Absolute spread for P (zero
    mean), relative spread for the energies.
    """
    n_values = sorted(int(n) for n in n_values)
    if len(set(n_values)) < 4:
        raise EstimatorError("scaling fit needs at least 4 distinct N values")
    rows = {"P": [], "E_total": [], "E_CM": []}
    se_log = {"P": [], "E_total": [], "E_CM": []}
    for n in n_values:
        spec = replace(template, body=replace(template.body, n_atoms=n))
        samples = run_ensemble(spec, workers)
        val, se = _std_and_log_se(samples["P"][:, -1])
        rows["P"].append(val)
        se_log["P"].append(se)
        for name in ("E_total", "E_CM"):
            val, se = _rel_std_and_log_se(samples[name][:, -1])
            rows[name].append(val)
            se_log[name].append(se)
        if progress is not None:
            progress(n, rows)
    fits, excluded = {}, {}
    for name, vals in rows.items():
        vals = np.asarray(vals)
        ok = np.isfinite(vals) & (vals > 0) & np.isfinite(se_log[name])
        if not ok.all():
            excluded[name] = [n for n, good in zip(n_values, ok) if not good]
            logger.warning("%s: zero or undefined fluctuations at N=%s excluded", name, excluded[name])
        if ok.sum() >= 4:
            sig = np.asarray(se_log[name])[ok]
            fits[name] = loglog_fit(np.asarray(n_values)[ok], vals[ok], np.where(sig > 0, sig, 1.0))
    return ScalingReport(n_values, rows["P"], rows["E_total"], rows["E_CM"], se_log, fits, excluded)
