"""Classical molecular dynamics of the chain and CM-energy diagnostics.

The integrator is plain velocity Verlet. A trajectory records the CM
variables, the CM energy ``P^2/2Nm + N V(R)``, the total energy, the relative
kinetic energy and the inertia tensor every ``record_stride`` steps.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coords import BodyConfig, PhaseState, lattice_positions
from .errors import BlowUpError, ConfigurationError, DiagnosticError
from .potentials import (
    Gravity,
    Harmonic,
    Quartic,
    eval_external,
    external_gradient,
    external_values,
)

logger = logging.getLogger(__name__)

SCENARIOS = ("harmonic_trap", "quartic_trap", "gravity_floor_drop")
DEFAULT_DT_FRACTION = 0.001


@dataclass(frozen=True)
class IntegratorParams:
    dt: float
    n_steps: int
    record_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if self.n_steps < 0 or self.record_stride < 1:
            raise ConfigurationError("n_steps must be >= 0 and record_stride >= 1")


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    cm_offset: tuple = (0.0,)
    cm_velocity: tuple = (0.0,)
    temperature: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.kind!r}; expected one of {SCENARIOS}")
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")

    def check_external(self, external):
        wanted = {"harmonic_trap": Harmonic, "quartic_trap": Quartic, "gravity_floor_drop": Gravity}[self.kind]
        if not isinstance(external, wanted):
            raise ConfigurationError(
                f"scenario {self.kind} requires a {wanted.__name__} external potential, "
                f"got {type(external).__name__}"
            )


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    cm_position: np.ndarray
    cm_momentum: np.ndarray
    e_cm: np.ndarray
    e_total: np.ndarray
    inertia: np.ndarray
    rel_kinetic: np.ndarray
    e_pair: np.ndarray
    e_external: np.ndarray
    lowest: np.ndarray
    dt: float = 0.0
    final_state: PhaseState | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    def energy_drift(self) -> float:
        """max |E(t) - E(0)| / |E(0)|."""
        return _relative_drift(self.e_total)

    def cm_energy_drift(self) -> float:
        return _relative_drift(self.e_cm)


def _relative_drift(series) -> float:
    series = np.asarray(series)
    ref = abs(series[0])
    dev = float(np.max(np.abs(series - series[0])))
    if ref == 0.0:
        return 0.0 if dev == 0.0 else float("inf")
    return dev / ref


# --------------------------------------------------------------------------
# forces and energies


def total_forces(positions, pair, external, energy=True):
    """Pair plus external forces; returns ``(forces, pair_energy)``.

    The pair energy is ``None`` when ``energy`` is false.
    """
    forces, e_pair = pair.forces_energy(positions, energy)
    forces -= external_gradient(external, positions)
    return forces, e_pair


def cm_energy(state: PhaseState, cfg: BodyConfig, external) -> float:
    n, m = cfg.n_atoms, cfg.atom_mass
    P = state.momenta.sum(axis=0)
    R = state.positions.mean(axis=0)
    return float(P @ P) / (2.0 * n * m) + n * eval_external(external, R).value


def total_energy(state: PhaseState, cfg: BodyConfig, pair, external) -> float:
    kinetic = float(np.sum(state.momenta**2)) / (2.0 * cfg.atom_mass)
    return kinetic + pair.forces_energy(state.positions)[1] + float(np.sum(external_values(external, state.positions)))


def shortest_period(cfg: BodyConfig, pair, external, state: PhaseState | None = None) -> float:
    """Shortest linearized oscillation period of the chain in the potential.

    Chain modes top out at ``2 sqrt(k/m)``; the external curvature is taken at
    the atoms' current positions. For a floor, the curvature is taken at the
    depth where the floor pushes back with twice the largest expected load:
    the weight of the chain plus the impact force ``v sqrt(k m)`` of a chain
    hitting it at speed ``v``.
    """
    m = cfg.atom_mass
    k_bond = float(pair.curvature(cfg.lattice_spacing))
    w2 = 4.0 * max(k_bond, 0.0) / m
    if state is not None:
        pos = state.positions
        dim = pos.shape[1]
        curv = max(float(np.max(external.axis_derivative(pos[:, a], a, 2, dim))) for a in range(dim))
        if isinstance(external, Gravity) and external.floor_strength > 0:
            z = pos[:, -1]
            vz = state.momenta[:, -1] / m
            g = abs(external.g)
            v_impact = float(np.sqrt(np.max(vz**2 + 2.0 * g * np.maximum(z, 0.0))))
            load = 2.0 * (v_impact * np.sqrt(max(k_bond, 0.0) * m) + cfg.n_atoms * m * g)
            depth = (load / (4.0 * external.floor_strength)) ** (1.0 / 3.0)
            curv = max(curv, 12.0 * external.floor_strength * depth**2)
        w2 += max(curv, 0.0) / m
    return 2.0 * np.pi / np.sqrt(w2)


def choose_dt(cfg, pair, external, state=None, fraction: float = DEFAULT_DT_FRACTION) -> float:
    return fraction * shortest_period(cfg, pair, external, state)


# --------------------------------------------------------------------------
# integration


def step(state: PhaseState, cfg: BodyConfig, pair, external, dt: float, step_index: int = 0) -> PhaseState:
    """One velocity-Verlet step; returns a new state."""
    state.validate(cfg)
    m = cfg.atom_mass
    f, _ = total_forces(state.positions, pair, external)
    p = state.momenta + 0.5 * dt * f
    x = state.positions + dt * p / m
    f, _ = total_forces(x, pair, external)
    if not np.all(np.isfinite(f)):
        raise BlowUpError(f"non-finite force at step {step_index}", step=step_index)
    p = p + 0.5 * dt * f
    return PhaseState(x, p, state.time + dt)


def _observe(x, p, e_pair, cfg, external):
    n, m = cfg.n_atoms, cfg.atom_mass
    R = x.mean(axis=0)
    P = p.sum(axis=0)
    u = x - R
    kin = float(np.sum(p**2)) / (2.0 * m)
    cm_kin = float(P @ P) / (2.0 * n * m)
    e_ext = float(np.sum(external_values(external, x)))
    e_cm = cm_kin + n * float(external_values(external, R[None, :])[0])
    return R, P, e_cm, kin + e_pair + e_ext, u.T @ u, float(np.sum((p - P / n) ** 2)) / (2.0 * m), e_ext


def run(initial: PhaseState, cfg: BodyConfig, pair, external, params: IntegratorParams) -> TrajectoryRecord:
    """Integrate ``params.n_steps`` Verlet steps, recording every ``record_stride``."""
    initial.validate(cfg)
    m, dt = cfg.atom_mass, params.dt
    x = initial.positions.copy()
    p = initial.momenta.copy()
    f, e_pair = total_forces(x, pair, external)
    n_rec = params.n_steps // params.record_stride + 1
    dim = cfg.dim
    rec = {
        "times": np.empty(n_rec),
        "cm_position": np.empty((n_rec, dim)),
        "cm_momentum": np.empty((n_rec, dim)),
        "e_cm": np.empty(n_rec),
        "e_total": np.empty(n_rec),
        "inertia": np.empty((n_rec, dim, dim)),
        "rel_kinetic": np.empty(n_rec),
        "e_pair": np.empty(n_rec),
        "e_external": np.empty(n_rec),
        "lowest": np.empty(n_rec),
    }

    def record(slot, t):
        R, P, e_cm, e_tot, inert, rel_kin, e_ext = _observe(x, p, e_pair, cfg, external)
        rec["times"][slot] = t
        rec["cm_position"][slot] = R
        rec["cm_momentum"][slot] = P
        rec["e_cm"][slot] = e_cm
        rec["e_total"][slot] = e_tot
        rec["inertia"][slot] = inert
        rec["rel_kinetic"][slot] = rel_kin
        rec["e_pair"][slot] = e_pair
        rec["e_external"][slot] = e_ext
        rec["lowest"][slot] = float(np.min(x[:, -1]))

    record(0, initial.time)
    half = 0.5 * dt
    inv_m = dt / m
    slot = 1
    # overflow shows up as a non-finite force and is reported as a blow-up
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, params.n_steps + 1):
            p += half * f
            x += inv_m * p
            recording = n % params.record_stride == 0
            f, e_pair = total_forces(x, pair, external, recording)
            if not np.isfinite(f).all():
                raise BlowUpError(f"non-finite force at step {n}", step=n)
            p += half * f
            if recording:
                record(slot, initial.time + n * dt)
                slot += 1
    return TrajectoryRecord(**rec, dt=dt, final_state=PhaseState(x, p, initial.time + params.n_steps * dt))


# --------------------------------------------------------------------------
# initial conditions


def effective_stiffness(cfg: BodyConfig, pair) -> float:
    """On-site stiffness of an interior chain atom: two bonds at the lattice spacing."""
    return 2.0 * float(pair.curvature(cfg.lattice_spacing))


def thermalize_relative(
    cfg: BodyConfig,
    pair,
    temperature: float,
    seed: int,
    center=None,
    project_cm: bool = True,
) -> PhaseState:
    """Lattice with Gaussian displacements (var T/k_eff) and momenta (var m T).

    With ``project_cm`` the total momentum is removed and the CM is moved to
    ``center`` exactly, so only relative degrees of freedom carry the
    temperature. Without it every atom is independent and the CM variables
    fluctuate as well.
    """
    if temperature < 0:
        raise ConfigurationError("temperature must be >= 0")
    n, d, m = cfg.n_atoms, cfg.dim, cfg.atom_mass
    center = np.zeros(d) if center is None else np.asarray(center, dtype=float).reshape(d)
    x = lattice_positions(cfg, center)
    p = np.zeros((n, d))
    if temperature > 0:
        rng = np.random.default_rng(seed)
        k_eff = effective_stiffness(cfg, pair)
        x = x + rng.normal(0.0, np.sqrt(temperature / k_eff), size=(n, d))
        p = rng.normal(0.0, np.sqrt(m * temperature), size=(n, d))
    if project_cm:
        p -= p.mean(axis=0)
        x += center - x.mean(axis=0)
    return PhaseState(x, p, 0.0)


def prepare_scenario(scenario: ScenarioSpec, cfg: BodyConfig, pair, external, project_cm: bool = True) -> PhaseState:
    """Thermalized chain displaced to ``cm_offset`` and boosted to ``cm_velocity``."""
    scenario.check_external(external)
    offset = np.asarray(scenario.cm_offset, dtype=float)
    velocity = np.asarray(scenario.cm_velocity, dtype=float)
    if offset.shape != (cfg.dim,) or velocity.shape != (cfg.dim,):
        raise ConfigurationError(f"cm_offset and cm_velocity need {cfg.dim} components")
    state = thermalize_relative(cfg, pair, scenario.temperature, scenario.seed, offset, project_cm)
    state.momenta += cfg.atom_mass * velocity
    return state


# --------------------------------------------------------------------------
# dissipation


@dataclass
class DissipationDiagnostic:
    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    relative_rms: float


def dissipation_rhs(traj: TrajectoryRecord, external, cfg: BodyConfig) -> np.ndarray:
    """``-I_ab d3V/dR_g dR_a dR_b dR_g/dt / 2`` at every recorded sample."""
    R = traj.cm_position
    dim = R.shape[1]
    # separable potentials: the third-derivative tensor is diagonal
    third = np.stack([external.axis_derivative(R[:, a], a, 3, dim) for a in range(dim)], axis=1)
    velocity = traj.cm_momentum / (cfg.n_atoms * cfg.atom_mass)
    diag = np.diagonal(traj.inertia, axis1=1, axis2=2)
    return -0.5 * np.sum(diag * third * velocity, axis=1)


def dissipation_diagnostic(traj: TrajectoryRecord, external, cfg: BodyConfig) -> DissipationDiagnostic:
    """Compare the measured CM-energy rate with the expansion's prediction."""
    if len(traj) < 3:
        raise DiagnosticError(f"need at least 3 recorded samples, got {len(traj)}")
    t, e = traj.times, traj.e_cm
    lhs = (e[2:] - e[:-2]) / (t[2:] - t[:-2])
    rhs = dissipation_rhs(traj, external, cfg)[1:-1]
    res = lhs - rhs
    rms_lhs = float(np.sqrt(np.mean(lhs**2)))
    rms_res = float(np.sqrt(np.mean(res**2)))
    if rms_lhs > 0:
        rel = rms_res / rms_lhs
    else:
        rel = 0.0 if rms_res == 0 else float("inf")
    return DissipationDiagnostic(t[1:-1], lhs, rhs, res, rel)


def dissipation_sweep(cfg: BodyConfig, pair, epsilons, omega_cm=0.003, temperature=0.01, seed=7,
                      n_steps=100_000, record_stride=5, dt_fraction=DEFAULT_DT_FRACTION):
    """Dissipation residual across relative amplitudes ``eps``.

    ``eps`` is the chain half-length over the CM offset ``R0``. The pure
    quartic coupling is scaled as ``lam = omega_cm^2 / (12 R0^2)`` so that
    the CM curvature at ``R0`` is the same for every ``eps``; only the
    relative size of the body changes.
    """
    half_length = 0.5 * (cfg.n_atoms - 1) * cfg.lattice_spacing
    rows = []
    for eps in epsilons:
        r0 = half_length / eps
        external = Quartic(0.0, omega_cm**2 / (12.0 * r0**2), cfg.atom_mass)
        offset = (r0,) + (0.0,) * (cfg.dim - 1)
        scenario = ScenarioSpec("quartic_trap", offset, (0.0,) * cfg.dim, temperature, seed)
        state = prepare_scenario(scenario, cfg, pair, external)
        dt = choose_dt(cfg, pair, external, state, dt_fraction)
        traj = run(state, cfg, pair, external, IntegratorParams(dt, n_steps, record_stride))
        rows.append((float(eps), dissipation_diagnostic(traj, external, cfg), traj))
    return rows


# --------------------------------------------------------------------------
# floor drop


@dataclass
class BounceReport:
    contact_time: float | None
    e_cm_pre: float
    e_cm_post: float
    rel_kinetic_pre: float
    rel_kinetic_post: float
    energy_drift: float

    @property
    def delta_e_cm(self) -> float:
        return self.e_cm_post - self.e_cm_pre

    @property
    def delta_rel_kinetic(self) -> float:
        return self.rel_kinetic_post - self.rel_kinetic_pre

    @property
    def heated(self) -> bool:
        """CM energy lost and relative kinetic energy gained."""
        return self.delta_e_cm < 0 and self.delta_rel_kinetic > 0


def bounce_report(traj: TrajectoryRecord, floor_height: float = 0.0, window: float = 0.2) -> BounceReport:
    """Compare the free fall before floor contact with the final stretch.

    Pre-contact values are averages over the samples before the lowest atom
    first reaches the floor; post values are averages over the last
    ``window`` fraction of the run.
    """
    if len(traj) < 3:
        raise DiagnosticError("bounce analysis needs at least 3 samples")
    touching = np.flatnonzero(traj.lowest <= floor_height)
    if touching.size == 0 or touching[0] == 0:
        contact, pre = None, slice(0, 1)
    else:
        contact, pre = float(traj.times[touching[0]]), slice(0, touching[0])
    start = min(int(len(traj) * (1.0 - window)), len(traj) - 1)
    if touching.size and start <= touching[0]:
        raise DiagnosticError("run ends before the post-contact window starts")
    post = slice(start, None)
    return BounceReport(
        contact,
        float(np.mean(traj.e_cm[pre])),
        float(np.mean(traj.e_cm[post])),
        float(np.mean(traj.rel_kinetic[pre])),
        float(np.mean(traj.rel_kinetic[post])),
        traj.energy_drift(),
    )
