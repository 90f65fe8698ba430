"""Two particles in one dimension, propagated exactly on a grid.

The wavefunction lives on CM/relative coordinates ``(X, xi)`` with
``x1 = X + xi/2`` and ``x2 = X - xi/2``. The kinetic energy is diagonal in
momentum space (mass 2m for X, m/2 for xi) and the potential is the exact
two-atom sum, so a Strang split-operator step is

    psi <- e^{-iV dt/2} F^-1 e^{-iT dt} F e^{-iV dt/2} psi

Ehrenfest bookkeeping is done at every step: the X step is a free drift and
the V steps are pure kicks, so the expectation values follow velocity
Verlet exactly and ``<P>`` at integer steps is recovered from the
momentum-space amplitudes without an extra transform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConfigurationError, DiagnosticError, GridError
from .potentials import HarmonicSpring

AXES = ("X", "xi")


@dataclass(frozen=True)
class QuantumParams:
    dt: float
    n_steps: int
    n_points: tuple = (256, 256)
    extent: tuple = (16.0, 16.0)
    hbar: float = 1.0
    mass: float = 1.0
    record_stride: int = 10
    boundary_tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "n_points", tuple(int(n) for n in self.n_points))
        object.__setattr__(self, "extent", tuple(float(e) for e in self.extent))
        if len(self.n_points) != 2 or len(self.extent) != 2:
            raise ConfigurationError("n_points and extent need one entry per axis (X, xi)")
        for axis, n in zip(AXES, self.n_points):
            if n < 8 or n & (n - 1):
                raise ConfigurationError(f"grid points on axis {axis} must be a power of two >= 8, got {n}")
        if min(self.extent) <= 0 or not self.dt > 0 or self.n_steps < 0:
            raise ConfigurationError("extent and dt must be positive, n_steps non-negative")
        if self.hbar <= 0 or self.mass <= 0 or self.record_stride < 1:
            raise ConfigurationError("hbar, mass and record_stride must be positive")


@dataclass(frozen=True)
class Grid:
    X: np.ndarray
    xi: np.ndarray
    dX: float
    dxi: float
    kX: np.ndarray
    kxi: np.ndarray

    @classmethod
    def from_params(cls, params: QuantumParams) -> "Grid":
        (nx, nr), (lx, lr) = params.n_points, params.extent
        dX, dxi = lx / nx, lr / nr
        X = (np.arange(nx) - nx // 2) * dX
        xi = (np.arange(nr) - nr // 2) * dxi
        kX = 2 * np.pi * np.fft.fftfreq(nx, dX)
        kxi = 2 * np.pi * np.fft.fftfreq(nr, dxi)
        return cls(X, xi, dX, dxi, kX, kxi)

    @property
    def cell(self) -> float:
        return self.dX * self.dxi


@dataclass
class WaveFunction2P:
    amplitudes: np.ndarray
    grid: Grid

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.cell))

    def normalized(self) -> "WaveFunction2P":
        return WaveFunction2P(self.amplitudes / self.norm(), self.grid)

    def copy(self) -> "WaveFunction2P":
        return WaveFunction2P(self.amplitudes.copy(), self.grid)


@dataclass
class HamiltonianTerms:
    kinetic: np.ndarray
    potential: np.ndarray
    dV_dX: np.ndarray
    v_single: object
    grid: Grid
    params: QuantumParams


def _external_on(external, x, order):
    return external.axis_derivative(x, 0, order, 1)


def build_hamiltonian_terms(external, pair, params: QuantumParams) -> HamiltonianTerms:
    """Kinetic multipliers in momentum space and the potential on the grid.

    ``pair=None`` means no interaction; the pair potential enters as
    ``u(|xi|)``.
    """
    grid = Grid.from_params(params)
    m, hbar = params.mass, params.hbar
    kX, kxi = np.meshgrid(grid.kX, grid.kxi, indexing="ij")
    kinetic = hbar**2 * kX**2 / (2 * (2 * m)) + hbar**2 * kxi**2 / (2 * (m / 2))
    X, xi = np.meshgrid(grid.X, grid.xi, indexing="ij")
    x1, x2 = X + xi / 2, X - xi / 2
    with np.errstate(all="ignore"):
        potential = _external_on(external, x1, 0) + _external_on(external, x2, 0)
        dV = _external_on(external, x1, 1) + _external_on(external, x2, 1)
        if pair is not None:
            potential = potential + pair.u(np.abs(grid.xi))[None, :]
    if not (np.all(np.isfinite(potential)) and np.all(np.isfinite(dV))):
        bad = np.argwhere(~np.isfinite(potential))
        axis = "xi" if bad.size and np.all(~np.isfinite(potential[:, bad[0, 1]])) else "X"
        raise GridError(f"potential is singular on the grid (axis {axis})", axis=axis)

    def v_single(x):
        return _external_on(external, np.asarray(x, dtype=float), 0)

    return HamiltonianTerms(kinetic, potential, dV, v_single, grid, params)


def split_operator_step(psi: WaveFunction2P, terms: HamiltonianTerms, dt: float) -> WaveFunction2P:
    """One Strang step: half potential, full kinetic, half potential."""
    hbar = terms.params.hbar
    half = np.exp(-0.5j * dt / hbar * terms.potential)
    out = np.fft.ifft2(np.exp(-1j * dt / hbar * terms.kinetic) * np.fft.fft2(half * psi.amplitudes))
    out *= half
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite amplitude after split-operator step")
    return WaveFunction2P(out, psi.grid)


# --------------------------------------------------------------------------
# observables


@dataclass
class Expectations:
    mean_X: float
    mean_P: float
    mean_X2: float
    mean_P2: float
    mean_V: float
    energy: float

    @property
    def var_X(self) -> float:
        return self.mean_X2 - self.mean_X**2

    @property
    def var_P(self) -> float:
        return self.mean_P2 - self.mean_P**2


def expectations(psi: WaveFunction2P, terms: HamiltonianTerms) -> Expectations:
    """Position observables by quadrature, momentum observables spectrally."""
    g = psi.grid
    dens = np.abs(psi.amplitudes) ** 2
    w = dens.sum() * g.cell
    marg = dens.sum(axis=1) * g.cell / w
    mX = float(marg @ g.X)
    mX2 = float(marg @ g.X**2)
    phik = np.abs(np.fft.fft2(psi.amplitudes)) ** 2
    phik /= phik.sum()
    kmarg = phik.sum(axis=1)
    hk = terms.params.hbar * g.kX
    mP = float(kmarg @ hk)
    mP2 = float(kmarg @ hk**2)
    mV = float(np.sum(dens * terms.potential) * g.cell / w)
    mT = float(np.sum(phik * terms.kinetic))
    return Expectations(mX, mP, mX2, mP2, mV, mT + mV)


@dataclass
class ReducedCmState:
    rho: np.ndarray
    dX: float

    def trace(self) -> float:
        return float(np.real(np.trace(self.rho)) * self.dX)

    def purity(self) -> float:
        return float(np.sum(np.abs(self.rho) ** 2) * self.dX**2)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.rho * self.dX)


def reduce_cm(psi: WaveFunction2P) -> ReducedCmState:
    """Partial trace over xi: ``rho(X, X') = sum_xi psi(X, xi) psi*(X', xi) dxi``."""
    a = psi.amplitudes
    return ReducedCmState(a @ a.conj().T * psi.grid.dxi, psi.grid.dX)


def purity(psi: WaveFunction2P) -> float:
    """``Tr rho_CM^2`` via the smaller Gram matrix ``psi^H psi``."""
    a = psi.amplitudes
    gram = a.conj().T @ a
    return float(np.sum(np.abs(gram) ** 2) * psi.grid.cell**2)


def check_boundary(psi: WaveFunction2P, tol: float):
    """Raise GridError when the amplitude on the grid border exceeds ``tol``."""
    a = np.abs(psi.amplitudes)
    edges = {"X": max(a[0].max(), a[-1].max()), "xi": max(a[:, 0].max(), a[:, -1].max())}
    for axis, value in edges.items():
        if value >= tol:
            raise GridError(
                f"boundary amplitude {value:.3e} on axis {axis} exceeds {tol:.1e}; enlarge the {axis} extent",
                axis=axis,
            )


# --------------------------------------------------------------------------
# initial states


def gaussian_product(grid: Grid, X0=0.0, sigma_X=0.5, P0=0.0, xi0=0.0, sigma_xi=0.5, p_xi=0.0, hbar=1.0):
    """Normalized product of Gaussians; ``sigma`` is the std of ``|psi|^2``."""
    f = np.exp(-((grid.X - X0) ** 2) / (4 * sigma_X**2) + 1j * P0 * grid.X / hbar)
    g = np.exp(-((grid.xi - xi0) ** 2) / (4 * sigma_xi**2) + 1j * p_xi * grid.xi / hbar)
    return WaveFunction2P(np.outer(f, g), grid).normalized()


def harmonic_widths(omega, stiffness, mass=1.0, hbar=1.0):
    """Ground-state widths ``(sigma_X, sigma_xi)`` for a trap plus zero-length spring."""
    big = np.sqrt(omega**2 + 2 * stiffness / mass)
    return np.sqrt(hbar / (2 * (2 * mass) * omega)), np.sqrt(hbar / (2 * (mass / 2) * big))


def harmonic_ground_energy(omega, stiffness, mass=1.0, hbar=1.0) -> float:
    """``hbar (omega + Omega) / 2`` with ``Omega^2 = omega^2 + 2 k / m``."""
    return 0.5 * hbar * (omega + np.sqrt(omega**2 + 2 * stiffness / mass))


def two_hump_state(grid: Grid, separation=6.0, sigma=0.5):
    """``(f_+ g_+ + f_- g_-)/sqrt 2`` with non-overlapping humps: purity 1/2."""
    s = separation / 2
    fp = np.exp(-((grid.X - s) ** 2) / (4 * sigma**2))
    fm = np.exp(-((grid.X + s) ** 2) / (4 * sigma**2))
    gp = np.exp(-((grid.xi - s) ** 2) / (4 * sigma**2))
    gm = np.exp(-((grid.xi + s) ** 2) / (4 * sigma**2))
    return WaveFunction2P(np.outer(fp, gp) + np.outer(fm, gm), grid).normalized()


# --------------------------------------------------------------------------
# experiments


@dataclass
class PacketSpec:
    X0: float = 1.0
    P0: float = 0.0
    sigma_X: float = 0.5
    sigma_xi: float = 0.5


@dataclass
class FactorizationResult:
    times: np.ndarray
    mean_X: np.ndarray
    mean_P: np.ndarray
    var_X: np.ndarray
    var_P: np.ndarray
    energy: np.ndarray
    purity: np.ndarray
    gap: np.ndarray
    norm: np.ndarray
    step_times: np.ndarray
    step_X: np.ndarray
    step_P: np.ndarray
    step_force: np.ndarray
    residual1: np.ndarray = field(default=None)
    residual2: np.ndarray = field(default=None)
    final: WaveFunction2P | None = field(default=None, repr=False)

    def norm_drift(self) -> float:
        return float(np.max(np.abs(self.norm - self.norm[0])))

    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])) / abs(self.energy[0]))

    def min_purity(self) -> float:
        return float(np.min(self.purity))

    def time_below(self, threshold: float):
        idx = np.flatnonzero(self.purity < threshold)
        return float(self.times[idx[0]]) if idx.size else None

    def gap_at(self, t: float) -> float:
        return float(self.gap[int(np.argmin(np.abs(self.times - t)))])


def ehrenfest_residuals(step_X, step_P, step_force, dt, mass):
    """Central-difference residuals on the per-step series (interior points).

    ``r1 = d<X>/dt - <P>/2m`` and ``r2 = d<P>/dt - <F>`` with
    ``<F> = -<dV/dX>``.
    """
    if len(step_X) < 3:
        raise DiagnosticError("Ehrenfest residuals need at least 3 steps")
    dX = (step_X[2:] - step_X[:-2]) / (2 * dt)
    dP = (step_P[2:] - step_P[:-2]) / (2 * dt)
    return dX - step_P[1:-1] / (2 * mass), dP - step_force[1:-1]


def propagate(psi: WaveFunction2P, terms: HamiltonianTerms, n_steps=None, check=True) -> FactorizationResult:
    """Run the split-operator loop and record observables.

    Cheap first moments are tracked at every step; purity, variances,
    energy and the gap every ``record_stride`` steps. The boundary guard is
    evaluated at every record.
    """
    p = terms.params
    g = terms.grid
    dt, hbar, m = p.dt, p.hbar, p.mass
    n_steps = p.n_steps if n_steps is None else n_steps
    stride = p.record_stride
    half = np.exp(-0.5j * dt / hbar * terms.potential)
    kin = np.exp(-1j * dt / hbar * terms.kinetic)
    hk = hbar * g.kX
    cell = g.cell
    a = psi.amplitudes.astype(complex, copy=True)

    n_rec = n_steps // stride + 1
    rec = {k: np.empty(n_rec) for k in ("times", "mean_X", "mean_P", "var_X", "var_P", "energy", "purity", "gap", "norm")}
    sX = np.empty(n_steps + 1)
    sP = np.empty(n_steps + 1)
    sF = np.empty(n_steps + 1)

    def first_moments(amp):
        dens = (amp.real**2 + amp.imag**2) * cell
        return float(dens.sum(axis=1) @ g.X), -float(np.sum(dens * terms.dV_dX))

    def record(slot, n, amp):
        wf = WaveFunction2P(amp, g)
        if check:
            check_boundary(wf, p.boundary_tol)
        e = expectations(wf, terms)
        dens = (np.abs(amp) ** 2).sum(axis=1) * cell
        rec["times"][slot] = n * dt
        rec["mean_X"][slot] = e.mean_X
        rec["mean_P"][slot] = e.mean_P
        rec["var_X"][slot] = e.var_X
        rec["var_P"][slot] = e.var_P
        rec["energy"][slot] = e.energy
        rec["purity"][slot] = purity(wf)
        rec["gap"][slot] = float(dens @ terms.v_single(g.X) / dens.sum() - terms.v_single(e.mean_X))
        rec["norm"][slot] = wf.norm()

    sX[0], sF[0] = first_moments(a)
    record(0, 0, a)
    slot = 1
    for n in range(n_steps):
        a *= half
        phik = np.fft.fft2(a)
        pk = phik.real**2 + phik.imag**2
        # momentum after the first half kick, then undo the kick
        sP[n] = float(pk.sum(axis=1) @ hk) / float(pk.sum()) - 0.5 * dt * sF[n]
        phik *= kin
        a = np.fft.ifft2(phik)
        a *= half
        sX[n + 1], sF[n + 1] = first_moments(a)
        if not np.isfinite(sX[n + 1]):
            raise BlowUpError(f"non-finite amplitude at step {n + 1}", step=n + 1)
        if (n + 1) % stride == 0:
            record(slot, n + 1, a)
            slot += 1
    pk = np.abs(np.fft.fft2(a)) ** 2
    sP[n_steps] = float(pk.sum(axis=1) @ hk) / float(pk.sum())

    res = FactorizationResult(
        **rec,
        step_times=np.arange(n_steps + 1) * dt,
        step_X=sX,
        step_P=sP,
        step_force=sF,
        final=WaveFunction2P(a, g),
    )
    if n_steps >= 2:
        res.residual1, res.residual2 = ehrenfest_residuals(sX, sP, sF, dt, m)
    return res


def factorization_experiment(external, params: QuantumParams, pair=None, packet: PacketSpec | None = None,
                             initial: WaveFunction2P | None = None) -> FactorizationResult:
    """Propagate a product Gaussian (or ``initial``) and track factorization.

    ``pair`` defaults to a unit zero-length spring, which keeps the
    interaction nonsingular.
    """
    pair = HarmonicSpring(1.0, 0.0) if pair is None else pair
    terms = build_hamiltonian_terms(external, pair, params)
    if initial is None:
        packet = packet or PacketSpec()
        initial = gaussian_product(terms.grid, packet.X0, packet.sigma_X, packet.P0, 0.0, packet.sigma_xi,
                                   hbar=params.hbar)
    return propagate(initial, terms)


def gap_sweep(external, params: QuantumParams, widths, t_fixed: float, pair=None, packet: PacketSpec | None = None):
    """``|<V(X)> - V(<X>)|`` at ``t_fixed`` for each initial CM width."""
    packet = packet or PacketSpec()
    n_steps = int(round(t_fixed / params.dt))
    out = []
    for w in widths:
        prm = QuantumParams(params.dt, n_steps, params.n_points, params.extent, params.hbar, params.mass,
                            n_steps, params.boundary_tol)
        res = factorization_experiment(external, prm, pair, PacketSpec(packet.X0, packet.P0, w, packet.sigma_xi))
        out.append(abs(float(res.gap[-1])))
    return np.array(out)
