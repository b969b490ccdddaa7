"""Quadrature-space Gaussian states.

Conventions: q = a + a^dagger, p = -i(a - a^dagger), so the vacuum covariance is
the identity. Quadratures are ordered position block first,
x = (q_1, ..., q_N, p_1, ..., p_N).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedStateError

SYMMETRY_RTOL = 1e-10
PHYSICALITY_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class QuadratureLayout:
    n_modes: int

    def __post_init__(self):
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError(f"n_modes must be a positive integer, got {self.n_modes!r}")

    @property
    def dim(self) -> int:
        return 2 * self.n_modes

    def labels(self) -> list[str]:
        n = self.n_modes
        return [f"q{j + 1}" for j in range(n)] + [f"p{j + 1}" for j in range(n)]


@dataclass(frozen=True)
class GaussianState:
    """Amplitude vector ``mu`` and covariance ``V`` of a Gaussian state.

    Build through :func:`make_gaussian_state`, which validates and freezes the
    arrays.
    """

    layout: QuadratureLayout
    mu: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)

    @property
    def n_modes(self) -> int:
        return self.layout.n_modes


@dataclass(frozen=True)
class PhysicalityReport:
    physical: bool
    min_eigenvalue: float
    scale: float
    tol: float

    def __bool__(self):
        return self.physical


def symplectic_form(layout: QuadratureLayout | int) -> np.ndarray:
    """Return Omega = [[0, I], [-I, 0]] for the (q..., p...) ordering."""
    n = layout.n_modes if isinstance(layout, QuadratureLayout) else int(layout)
    if n < 1:
        raise ValueError("n_modes must be >= 1")
    eye, zero = np.eye(n), np.zeros((n, n))
    return np.block([[zero, eye], [-eye, zero]])


def vacuum(layout: QuadratureLayout) -> GaussianState:
    return make_gaussian_state(np.zeros(layout.dim), np.eye(layout.dim), layout)


def coherent(mu, layout: QuadratureLayout) -> GaussianState:
    return make_gaussian_state(mu, np.eye(layout.dim), layout)


def _asymmetry(V: np.ndarray) -> float:
    norm = np.linalg.norm(V)
    if norm == 0.0:
        return 0.0
    return float(np.linalg.norm(V - V.T) / norm)


def make_gaussian_state(mu, V, layout: QuadratureLayout) -> GaussianState:
    """Validate dimensions and symmetry, then return an immutable state.

    The stored covariance is the symmetric part of ``V``; asymmetry beyond a
    relative Frobenius tolerance of 1e-10 is rejected rather than projected
    away.
    """
    mu = np.asarray(mu, dtype=float)
    V = np.asarray(V, dtype=float)
    d = layout.dim
    if mu.shape != (d,):
        raise MalformedStateError(f"mu has shape {mu.shape}, expected ({d},)")
    if V.shape != (d, d):
        raise MalformedStateError(f"V has shape {V.shape}, expected ({d}, {d})")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(V))):
        raise MalformedStateError("state contains non-finite entries")
    asym = _asymmetry(V)
    if asym > SYMMETRY_RTOL:
        raise MalformedStateError(f"covariance is not symmetric (relative asymmetry {asym:.2e})")
    return GaussianState(layout, _frozen(mu), _frozen(0.5 * (V + V.T)))


def physicality_check(state: GaussianState, tol: float = PHYSICALITY_TOL) -> PhysicalityReport:
    """Check the uncertainty relation V + i*Omega >= 0.

    The tolerance is applied relative to max(1, ||V||_2): double-precision
    eigenvalues of a matrix with norm s carry absolute errors of order
    eps * s, and near an exceptional point ||V|| reaches 1e12 and beyond.
    For vacuum-scale states this is the plain absolute tolerance.
    """
    V = np.asarray(state.V)
    if _asymmetry(V) > SYMMETRY_RTOL:
        raise MalformedStateError("covariance is not symmetric")
    omega = symplectic_form(state.layout)
    eigs = np.linalg.eigvalsh(V + 1j * omega)
    scale = max(1.0, float(np.linalg.norm(V, 2)))
    lam = float(eigs[0])
    return PhysicalityReport(lam >= -tol * scale, lam, scale, tol)
