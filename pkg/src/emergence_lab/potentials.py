"""External and pair potentials.

External potentials act identically on every atom and are separable per
Cartesian axis, so the Hessian and third-derivative tensors of a single-atom
potential are diagonal. Each variant implements ``axis_derivative(x, axis,
order)`` elementwise on arrays; everything else is built on top of it.

Pair potentials come in two flavours: nearest-neighbour springs along the
chain (the default "solid") and a truncated-and-shifted Lennard-Jones
interaction between all pairs inside the cutoff.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .coords import BodyConfig, PhaseState
from .errors import ConfigurationError, DomainError, SingularityError

__all__ = [
    "Gravity",
    "Harmonic",
    "Quartic",
    "Polynomial",
    "HarmonicSpring",
    "LennardJonesTruncated",
    "DerivativeBundle",
    "eval_external",
    "external_values",
    "external_gradient",
    "total_external",
    "effective_expansion",
    "effective_cm_force",
    "pair_forces",
    "pair_energy",
]


# --------------------------------------------------------------------------
# external potentials


@dataclass(frozen=True)
class Gravity:
    """``m g z`` along the last axis, plus an optional floor ``A z^4`` for z < 0."""

    g: float
    floor_strength: float = 0.0
    mass: float = 1.0

    def __post_init__(self):
        if self.floor_strength < 0:
            raise ConfigurationError("floor_strength must be >= 0")

    def axis_derivative(self, x, axis, order, dim):
        x = np.asarray(x, dtype=float)
        if axis != dim - 1:
            return np.zeros_like(x)
        mg = self.mass * self.g
        lin = mg * x if order == 0 else (np.full_like(x, mg) if order == 1 else np.zeros_like(x))
        a = self.floor_strength
        if a == 0.0:
            return lin
        z = np.minimum(x, 0.0)
        if order == 0:
            return lin + a * z**4
        if order == 1:
            return lin + (4.0 * a) * (z * z * z)
        if order == 2:
            return 12.0 * a * z**2
        return 24.0 * a * z


@dataclass(frozen=True)
class Harmonic:
    omega: float
    mass: float = 1.0

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigurationError("harmonic omega must be > 0")

    def axis_derivative(self, x, axis, order, dim):
        x = np.asarray(x, dtype=float)
        k = self.mass * self.omega**2
        if order == 0:
            return 0.5 * k * x**2
        if order == 1:
            return k * x
        return np.full_like(x, k) if order == 2 else np.zeros_like(x)


@dataclass(frozen=True)
class Quartic:
    """``m w^2 x^2 / 2 + lam x^4`` on every axis."""

    omega: float
    lam: float
    mass: float = 1.0

    def __post_init__(self):
        if self.omega < 0 or self.lam < 0 or (self.omega == 0 and self.lam == 0):
            raise ConfigurationError("quartic trap needs omega >= 0, lam >= 0 and not both zero")

    def axis_derivative(self, x, axis, order, dim):
        x = np.asarray(x, dtype=float)
        k, lam = self.mass * self.omega**2, self.lam
        if order == 0:
            return 0.5 * k * x**2 + lam * x**4
        if order == 1:
            return k * x + (4.0 * lam) * (x * x * x)
        if order == 2:
            return k + 12 * lam * x**2
        return 24 * lam * x


@dataclass(frozen=True)
class Polynomial:
    """Per-axis polynomial ``sum_k c[axis][k] x^k`` on the box ``|x| <= domain``."""

    coeffs: tuple
    domain: float = 1.0e3
    mass: float = 1.0

    def __post_init__(self):
        # any polynomial is bounded below on the finite box
        object.__setattr__(self, "coeffs", tuple(tuple(float(c) for c in row) for row in self.coeffs))
        if not self.coeffs or not self.domain > 0:
            raise ConfigurationError("polynomial needs coefficients and a positive domain")

    def axis_derivative(self, x, axis, order, dim):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.domain):
            raise DomainError(f"point outside polynomial domain |x| <= {self.domain}")
        row = self.coeffs[axis] if len(self.coeffs) > 1 else self.coeffs[0]
        poly = np.polynomial.Polynomial(row)
        return poly.deriv(order)(x) if order else poly(x)


ExternalPotentialSpec = Union[Gravity, Harmonic, Quartic, Polynomial]


@dataclass
class DerivativeBundle:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    third: np.ndarray


def _as_points(spec, positions):
    positions = np.asarray(positions, dtype=float)
    if positions.ndim == 1:
        positions = positions[None, :]
    return positions


def external_values(spec, positions) -> np.ndarray:
    """Per-atom potential energies for an (N, dim) array."""
    positions = _as_points(spec, positions)
    dim = positions.shape[1]
    return sum(spec.axis_derivative(positions[:, a], a, 0, dim) for a in range(dim))


def external_gradient(spec, positions) -> np.ndarray:
    positions = _as_points(spec, positions)
    dim = positions.shape[1]
    out = np.empty_like(positions)
    for a in range(dim):
        out[:, a] = spec.axis_derivative(positions[:, a], a, 1, dim)
    return out


def eval_external(spec, point) -> DerivativeBundle:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    dim = point.shape[0]
    d = [np.array([spec.axis_derivative(point[a], a, k, dim) for a in range(dim)], dtype=float) for k in range(4)]
    hessian = np.diag(d[2])
    third = np.zeros((dim, dim, dim))
    third[np.arange(dim), np.arange(dim), np.arange(dim)] = d[3]
    return DerivativeBundle(float(d[0].sum()), d[1], hessian, third)


def total_external(spec, state: PhaseState) -> float:
    return float(np.sum(external_values(spec, state.positions)))


def effective_expansion(spec, R, inertia, cfg: BodyConfig) -> float:
    """``N V(R) + I_ab d2V/dR_a dR_b / 2``: the potential expanded about the CM."""
    b = eval_external(spec, R)
    return cfg.n_atoms * b.value + 0.5 * float(np.sum(np.asarray(inertia) * b.hessian))


def effective_cm_force(spec, R, inertia, cfg: BodyConfig) -> np.ndarray:
    """Force on the CM: ``-N grad V(R) - I_ab d3V/dR_g dR_a dR_b / 2``."""
    b = eval_external(spec, R)
    coupling = 0.5 * np.einsum("ab,gab->g", np.asarray(inertia, dtype=float), b.third)
    return -cfg.n_atoms * b.gradient - coupling


# --------------------------------------------------------------------------
# pair potentials


@dataclass(frozen=True)
class HarmonicSpring:
    """Springs between chain neighbours, ``u(d) = k (d - d0)^2 / 2``."""

    stiffness: float
    rest_length: float = 1.0

    def __post_init__(self):
        if not self.stiffness > 0 or self.rest_length < 0:
            raise ConfigurationError("spring needs stiffness > 0 and rest_length >= 0")

    def u(self, d):
        return 0.5 * self.stiffness * (np.asarray(d, dtype=float) - self.rest_length) ** 2

    def curvature(self, d=None) -> float:
        return self.stiffness

    def forces_energy(self, positions, energy=True):
        bond = positions[:-1] - positions[1:]
        if positions.shape[1] == 1:
            b = bond[:, 0]
            if self.rest_length > 0.0:
                sign = np.sign(b)
                if not sign.all():
                    i = int(np.argmin(np.abs(sign)))
                    raise SingularityError(f"atoms {i} and {i + 1} coincide")
                stretch = b - self.rest_length * sign
            else:
                stretch = b
            f = (-self.stiffness * stretch)[:, None]
            if energy:
                e_stretch = stretch
        else:
            d = np.sqrt(np.sum(bond**2, axis=1))
            if self.rest_length > 0 and np.any(d == 0.0):
                i = int(np.argmax(d == 0.0))
                raise SingularityError(f"atoms {i} and {i + 1} coincide")
            stretch = d - self.rest_length
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(d[:, None] > 0, bond / d[:, None], 0.0)
            f = -self.stiffness * stretch[:, None] * unit
            e_stretch = stretch
        forces = np.zeros_like(positions)
        forces[:-1] += f
        forces[1:] -= f
        if not energy:
            return forces, None
        return forces, 0.5 * self.stiffness * float(e_stretch @ e_stretch)


@dataclass(frozen=True)
class LennardJonesTruncated:
    """All-pairs Lennard-Jones, truncated and shifted to zero at the cutoff."""

    epsilon: float
    sigma: float
    cutoff: float
    chunk: int = 1024

    def __post_init__(self):
        if not (self.epsilon > 0 and self.sigma > 0):
            raise ConfigurationError("Lennard-Jones needs epsilon > 0 and sigma > 0")
        if self.cutoff < self.sigma:
            raise ConfigurationError("cutoff must be >= sigma")

    def _raw(self, r):
        s6 = (self.sigma / r) ** 6
        return 4.0 * self.epsilon * (s6 * s6 - s6)

    def u(self, d):
        d = np.asarray(d, dtype=float)
        return np.where(d < self.cutoff, self._raw(d) - self._raw(self.cutoff), 0.0)

    def curvature(self, d) -> float:
        s6 = (self.sigma / d) ** 6
        return 4.0 * self.epsilon * (156.0 * s6 * s6 - 42.0 * s6) / d**2

    def forces_energy(self, positions, energy=True):
        n = positions.shape[0]
        forces = np.zeros_like(positions)
        energy = 0.0
        rc2 = self.cutoff**2
        shift = self._raw(self.cutoff)
        for start in range(0, n, self.chunk):
            stop = min(start + self.chunk, n)
            diff = positions[start:stop, None, :] - positions[None, :, :]
            r2 = np.sum(diff**2, axis=2)
            rows = np.arange(start, stop)[:, None]
            cols = np.arange(n)[None, :]
            mask = (r2 < rc2) & (cols != rows)
            if np.any(mask & (r2 == 0.0)):
                i, j = np.argwhere(mask & (r2 == 0.0))[0]
                raise SingularityError(f"atoms {start + i} and {j} coincide")
            safe = np.where(mask, r2, 1.0)
            s6 = (self.sigma**2 / safe) ** 3
            # -du/dr / r
            coef = np.where(mask, 24.0 * self.epsilon * (2.0 * s6 * s6 - s6) / safe, 0.0)
            forces[start:stop] += np.einsum("ij,ijk->ik", coef, diff)
            upper = mask & (cols > rows)
            energy += float(np.sum(np.where(upper, 4.0 * self.epsilon * (s6 * s6 - s6) - shift, 0.0)))
        return forces, energy


PairPotentialSpec = Union[HarmonicSpring, LennardJonesTruncated]


def pair_forces(spec, state: PhaseState, cfg: BodyConfig):
    """Pair forces on every atom and the total pair energy."""
    state.validate(cfg)
    return spec.forces_energy(state.positions)


def pair_energy(spec, positions) -> float:
    return spec.forces_energy(np.asarray(positions, dtype=float))[1]
