"""Complex operator algebra for small quantum systems.

Operators are plain complex numpy arrays (dimensionless units, hbar = 1).
This module provides the Pauli constants, structural validators, unitary
propagators for static Hamiltonians, the rotating-frame noise coupling,
commutators, and observable expectations.

All functions are pure; returned arrays are freshly allocated.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvalidOperatorError,
    NumericalConsistencyError,
)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
TRACE_IMAG_TOL = 1e-12
UNITARY_TOL = 1e-10
EXPECTATION_IMAG_TOL = 1e-10
POSITIVITY_TOL = -1e-9

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

for _m in (SIGMA_X, SIGMA_Y, SIGMA_Z, IDENTITY):
    _m.setflags(write=False)


def as_operator(a) -> np.ndarray:
    """Coerce to a square complex matrix."""
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidOperatorError(f"operator must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidOperatorError("operator has non-finite entries")
    return a


def check_hermitian(a, tol: float = HERMITIAN_TOL) -> np.ndarray:
    a = as_operator(a)
    dev = np.max(np.abs(a - a.conj().T))
    if dev > tol:
        raise InvalidOperatorError(f"operator not Hermitian: max deviation {dev:.3e} > {tol:.1e}")
    return a


def check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dimension mismatch: {a.shape} vs {b.shape}")


def validate_density_matrix(rho, trace_tol: float = TRACE_TOL,
                            herm_tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Check trace one, Hermiticity, and (diagnostically) positivity.

    Positivity is a diagnostic: eigenvalues below -1e-9 raise, tiny negative
    values from roundoff pass.  PCE-propagated means are validated elsewhere
    with looser tolerances since the truncated hierarchy does not guarantee
    positivity.
    """
    rho = check_hermitian(rho, herm_tol)
    tr = np.trace(rho)
    if abs(tr.real - 1.0) > trace_tol:
        raise InvalidOperatorError(f"density matrix trace {tr.real!r} not 1 within {trace_tol:.1e}")
    if abs(tr.imag) > TRACE_IMAG_TOL:
        raise InvalidOperatorError(f"density matrix trace has imaginary part {tr.imag:.3e}")
    eigs = np.linalg.eigvalsh(rho)
    if eigs.min() < POSITIVITY_TOL:
        raise InvalidOperatorError(f"density matrix has negative eigenvalue {eigs.min():.3e}")
    return rho


@dataclass(frozen=True)
class StochasticModel:
    """A driven system: static drift h0, noise coupling v, noise kernel, horizon.

    The generator is H(t) = h0 + Omega(t) v with Omega a stationary Gaussian
    process of the given correlation kernel, evolved over [0, horizon].
    """

    h0: np.ndarray
    v: np.ndarray
    kernel: object
    horizon: float
    _eig: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        h0 = check_hermitian(self.h0)
        v = check_hermitian(self.v)
        check_same_dim(h0, v)
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidOperatorError(f"horizon must be positive, got {self.horizon}")
        h0.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "v", v)
        energies, states = np.linalg.eigh(h0)
        energies.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "_eig", (energies, states))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def h0_eigensystem(self):
        """Cached (energies, eigenvector columns) of h0."""
        return self._eig


def static_propagator(h0, t: float) -> np.ndarray:
    """U0(t) = exp(-i h0 t) for a static Hermitian h0, via eigendecomposition."""
    h0 = check_hermitian(h0)
    if not np.isfinite(t):
        raise InvalidOperatorError(f"time must be finite, got {t}")
    energies, states = np.linalg.eigh(h0)
    phases = np.exp(-1j * energies * t)
    return (states * phases) @ states.conj().T


def propagator_from_eigensystem(energies: np.ndarray, states: np.ndarray,
                                t: float) -> np.ndarray:
    """U0(t) from a precomputed eigendecomposition of h0."""
    phases = np.exp(-1j * energies * t)
    return (states * phases) @ states.conj().T


def rotating_frame_potential(model: StochasticModel, t: float) -> np.ndarray:
    """V(t) = U0(t)^dag v U0(t): the noise coupling in the h0 rotating frame."""
    energies, states = model.h0_eigensystem()
    u0 = propagator_from_eigensystem(energies, states, t)
    out = u0.conj().T @ model.v @ u0
    return 0.5 * (out + out.conj().T)


def commutator_action(a, rho) -> np.ndarray:
    """[a, rho]."""
    a = as_operator(a)
    rho = as_operator(rho)
    check_same_dim(a, rho)
    return a @ rho - rho @ a


def expectation(obs, rho) -> float:
    """tr(obs rho) for Hermitian obs; the imaginary part must vanish."""
    obs = check_hermitian(obs)
    rho = as_operator(rho)
    check_same_dim(obs, rho)
    val = np.trace(obs @ rho)
    if abs(val.imag) > EXPECTATION_IMAG_TOL:
        raise NumericalConsistencyError(
            f"expectation value has imaginary part {val.imag:.3e}")
    return float(val.real)
