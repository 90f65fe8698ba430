"""Center-of-mass / relative coordinates of an N-atom chain.

Relative coordinates are the sequential differences ``r_j - r_{j+1}``. The
inverse map is ``r_i = R + sum_k a(k, i) r_k`` with the closed form
``a(k, i) = [k >= i] - k/N``, and the canonically conjugate relative momenta
are ``p_rel_j = sum_i a(j, i) p_i``. Indices in the public accessors are
1-based to match the usual physics notation; arrays are 0-based.

All transforms are O(N) (prefix/suffix sums) and never build the N x N
coefficient matrix unless explicitly asked for.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "BodyConfig",
    "PhaseState",
    "CmDecomposition",
    "TransformCoefficients",
    "forward_transform",
    "inverse_transform",
    "inverse_coefficients",
    "gram_matrix",
    "k_matrix",
    "apply_k",
    "inertia_tensor",
    "kinetic_decomposition",
    "bracket_matrix",
    "lattice_positions",
]


@dataclass(frozen=True)
class BodyConfig:
    n_atoms: int
    atom_mass: float = 1.0
    dim: int = 1
    lattice_spacing: float = 1.0

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 2:
            raise ConfigurationError(f"n_atoms must be an integer >= 2, got {self.n_atoms}")
        if not self.atom_mass > 0:
            raise ConfigurationError(f"atom_mass must be positive, got {self.atom_mass}")
        if self.dim not in (1, 3):
            raise ConfigurationError(f"dim must be 1 or 3, got {self.dim}")
        if not self.lattice_spacing > 0:
            raise ConfigurationError(f"lattice_spacing must be positive, got {self.lattice_spacing}")

    @property
    def total_mass(self) -> float:
        return self.n_atoms * self.atom_mass


@dataclass
class PhaseState:
    positions: np.ndarray
    momenta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.momenta = np.asarray(self.momenta, dtype=float)
        if self.positions.ndim == 1:
            self.positions = self.positions[:, None]
        if self.momenta.ndim == 1:
            self.momenta = self.momenta[:, None]

    def validate(self, cfg: BodyConfig) -> "PhaseState":
        shape = (cfg.n_atoms, cfg.dim)
        if self.positions.shape != shape or self.momenta.shape != shape:
            raise ConfigurationError(
                f"state shapes {self.positions.shape}/{self.momenta.shape} do not match {shape}"
            )
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.momenta))):
            raise ConfigurationError("state contains non-finite entries")
        return self

    def copy(self) -> "PhaseState":
        return PhaseState(self.positions.copy(), self.momenta.copy(), self.time)


@dataclass
class CmDecomposition:
    cm_position: np.ndarray
    cm_momentum: np.ndarray
    rel_positions: np.ndarray
    rel_momenta: np.ndarray

    def __post_init__(self):
        self.cm_position = np.atleast_1d(np.asarray(self.cm_position, dtype=float))
        self.cm_momentum = np.atleast_1d(np.asarray(self.cm_momentum, dtype=float))
        self.rel_positions = np.asarray(self.rel_positions, dtype=float)
        self.rel_momenta = np.asarray(self.rel_momenta, dtype=float)
        if self.rel_positions.ndim == 1:
            self.rel_positions = self.rel_positions[:, None]
        if self.rel_momenta.ndim == 1:
            self.rel_momenta = self.rel_momenta[:, None]


@dataclass(frozen=True)
class TransformCoefficients:
    """Lazy accessor for the inverse-transform coefficients ``a(k, i)``."""

    n_atoms: int

    def __call__(self, k: int, i: int) -> float:
        n = self.n_atoms
        if not (1 <= k <= n - 1 and 1 <= i <= n):
            raise IndexError(f"a({k}, {i}) out of range for N={n}")
        return (1.0 if k >= i else 0.0) - k / n

    def exact(self, k: int, i: int) -> Fraction:
        return Fraction(int(k >= i)) - Fraction(k, self.n_atoms)

    def row(self, k: int) -> np.ndarray:
        """All ``a(k, i)`` for i = 1..N."""
        i = np.arange(1, self.n_atoms + 1)
        return (k >= i).astype(float) - k / self.n_atoms

    def matrix(self) -> np.ndarray:
        """Dense (N-1) x N array; O(N^2) memory, use only when needed."""
        n = self.n_atoms
        k = np.arange(1, n)[:, None]
        i = np.arange(1, n + 1)[None, :]
        return (k >= i).astype(float) - k / n


def _check(state: PhaseState, cfg: BodyConfig) -> PhaseState:
    return state.validate(cfg)


def forward_transform(state: PhaseState, cfg: BodyConfig) -> CmDecomposition:
    state = _check(state, cfg)
    n = cfg.n_atoms
    r, p = state.positions, state.momenta
    R = r.mean(axis=0)
    P = p.sum(axis=0)
    rel_q = r[:-1] - r[1:]
    # sum_i a(j, i) p_i = (p_1 + ... + p_j) - (j/N) P
    # prefix sums in extended precision keep the round-off independent of N
    j = np.arange(1, n)[:, None]
    rel_p = (np.cumsum(p.astype(np.longdouble), axis=0)[:-1] - j * P.astype(np.longdouble) / n).astype(float)
    return CmDecomposition(R, P, rel_q, rel_p)


def inverse_transform(cm: CmDecomposition, cfg: BodyConfig, time: float = 0.0) -> PhaseState:
    n, d = cfg.n_atoms, cfg.dim
    if (
        cm.cm_position.shape != (d,)
        or cm.cm_momentum.shape != (d,)
        or cm.rel_positions.shape != (n - 1, d)
        or cm.rel_momenta.shape != (n - 1, d)
    ):
        raise ConfigurationError(f"decomposition shapes do not match N={n}, dim={d}")
    R, P, q, pr = cm.cm_position, cm.cm_momentum, cm.rel_positions, cm.rel_momenta
    # r_i = R + sum_{k>=i} q_k - (1/N) sum_k k q_k; the last term is the mean suffix sum
    suffix = np.zeros((n, d), dtype=np.longdouble)
    suffix[:-1] = np.cumsum(q[::-1].astype(np.longdouble), axis=0)[::-1]
    r = R + (suffix - suffix.mean(axis=0)).astype(float)
    # p = M^T (P, p_rel): p_i = P/N + p_rel_i - p_rel_{i-1}
    padded = np.zeros((n + 1, d))
    padded[1:n] = pr
    p = P / n + padded[1:] - padded[:-1]
    return PhaseState(r, p, time)


def inverse_coefficients(cfg: BodyConfig) -> TransformCoefficients:
    return TransformCoefficients(cfg.n_atoms)


def gram_matrix(cfg: BodyConfig) -> np.ndarray:
    """Literal Gram sum ``G_jk = sum_i a(j, i) a(k, i)``."""
    a = inverse_coefficients(cfg).matrix()
    return a @ a.T


def k_matrix(cfg: BodyConfig) -> np.ndarray:
    """Tridiagonal ``K = 2 delta_jk - delta_{j,k-1} - delta_{j,k+1}`` of size N-1."""
    m = cfg.n_atoms - 1
    return 2.0 * np.eye(m) - np.eye(m, k=1) - np.eye(m, k=-1)


def apply_k(matrix: np.ndarray) -> np.ndarray:
    """Right-multiply by K without forming it: O(n^2) instead of O(n^3)."""
    matrix = np.atleast_2d(matrix)
    out = 2.0 * matrix
    out[:, 1:] -= matrix[:, :-1]
    out[:, :-1] -= matrix[:, 1:]
    return out


def inertia_tensor(state: PhaseState, cfg: BodyConfig, method: str = "direct") -> np.ndarray:
    """Second moment of the positions about the CM, ``sum_i (r_i-R)_a (r_i-R)_b``.

    ``method="gram"`` evaluates the same tensor as ``q^T G q`` from the relative
    coordinates; it exists as an independent cross-check and costs O(N^2).
    """
    state = _check(state, cfg)
    if method == "direct":
        u = state.positions - state.positions.mean(axis=0)
        return u.T @ u
    if method == "gram":
        q = state.positions[:-1] - state.positions[1:]
        return q.T @ gram_matrix(cfg) @ q
    raise ValueError(f"unknown method {method!r}")


def kinetic_decomposition(state: PhaseState, cfg: BodyConfig, method: str = "direct"):
    """Split the kinetic energy into CM and relative parts.

    Returns ``(cm_kinetic, rel_kinetic)``. ``method="relative"`` computes the
    relative part as ``p_rel^T K p_rel / 2m`` from the canonical relative
    momenta (K being the inverse of the Gram matrix).
    """
    state = _check(state, cfg)
    m, n = cfg.atom_mass, cfg.n_atoms
    P = state.momenta.sum(axis=0)
    cm = float(P @ P) / (2.0 * n * m)
    if method == "direct":
        # centered form is non-negative by construction
        rel = float(np.sum((state.momenta - P / n) ** 2)) / (2.0 * m)
        return cm, rel
    if method == "relative":
        pr = forward_transform(state, cfg).rel_momenta
        kp = apply_k(pr.T).T
        return cm, float(np.sum(pr * kp)) / (2.0 * m)
    raise ValueError(f"unknown method {method!r}")


def bracket_matrix(cfg: BodyConfig, exact: bool = False) -> np.ndarray:
    """Poisson brackets ``{Q_a, Pi_b}`` of the transformed variables (per axis).

    With ``Q = M x`` and ``Pi = W p`` the bracket matrix is ``M W^T``; rows and
    columns are ordered (CM, rel_1, ..., rel_{N-1}). Canonical means identity.
    ``exact=True`` uses rational arithmetic.
    """
    n = cfg.n_atoms
    coeff = inverse_coefficients(cfg)
    if exact:
        zero, one = Fraction(0), Fraction(1)
        M = [[Fraction(1, n)] * n]
        W = [[one] * n]
        for j in range(1, n):
            M.append([one if i == j else (-one if i == j + 1 else zero) for i in range(1, n + 1)])
            W.append([coeff.exact(j, i) for i in range(1, n + 1)])
        out = np.empty((n, n), dtype=object)
        for a in range(n):
            for b in range(n):
                out[a, b] = sum((M[a][i] * W[b][i] for i in range(n)), zero)
        return out
    M = np.zeros((n, n))
    M[0] = 1.0 / n
    M[1:, :-1] += np.eye(n - 1)
    M[1:, 1:] -= np.eye(n - 1)
    W = np.vstack([np.ones(n), coeff.matrix()])
    return M @ W.T


def lattice_positions(cfg: BodyConfig, center=None) -> np.ndarray:
    """Equally spaced chain along axis 0, centered on ``center``."""
    n, d = cfg.n_atoms, cfg.dim
    r = np.zeros((n, d))
    r[:, 0] = (np.arange(n) - (n - 1) / 2.0) * cfg.lattice_spacing
    if center is not None:
        r += np.asarray(center, dtype=float).reshape(d)
    return r
