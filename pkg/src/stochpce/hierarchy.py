"""Hermite polynomial chaos hierarchy for the stochastically driven system.

The density matrix is expanded in multivariate probabilists' Hermite
polynomials of the S Karhunen-Loeve variables, truncated at total degree P.
Galerkin projection of the rotating-frame evolution turns the stochastic
equation into N = (S+P)!/(S!P!) coupled deterministic operator ODEs

    d phi_m / dt = -i sum_n sqrt(lambda_n) g_n(t) sum_l G_{m,n,l} [V(t), phi_l]

where the coupling tensor G has the closed form
G_{m,n,l} = ((m_n + 1) delta_{m_n+1, l_n} + delta_{m_n-1, l_n}) prod_{j != n} delta_{m_j, l_j},
so each coefficient couples to at most 2 S partners.

The stochastic mean is exactly phi_0 (all higher Hermite polynomials have
zero mean); observable variance falls out of orthogonality for free.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import (
    CapacityError,
    CorruptedStateError,
    DimensionMismatchError,
    PropagationDivergedError,
)
from .kle import TruncatedKLE, scaled_modes_matrix
from .operators import (
    StochasticModel,
    check_hermitian,
    propagator_from_eigensystem,
    validate_density_matrix,
)

MAX_BASIS_SIZE = 10_000_000
TRACE_CONSERVATION_TOL = 1e-8
HERMITICITY_TOL = 1e-8
DIVERGENCE_FACTOR = 100.0
MEAN_TRACE_TOL = 1e-6
DEFAULT_SUBSTEP_FRACTION = 2000


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Truncated multi-index set {m in Z_{>=0}^S : |m|_1 <= P}, graded-lex ordered.

    Position 0 is always the zero index; within each total degree the indices
    ascend lexicographically.
    """

    s: int
    p: int
    indices: tuple
    lookup: dict

    @property
    def size(self) -> int:
        return len(self.indices)

    def weight_norms(self) -> np.ndarray:
        """E[Phi_m^2] = prod_j m_j! for each basis polynomial."""
        return np.array([float(math.prod(math.factorial(mj) for mj in m))
                         for m in self.indices])


def _compositions(parts: int, total: int):
    """All tuples of `parts` nonnegative ints summing to `total`, lex ascending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(parts - 1, total - first):
            yield (first,) + rest


def enumerate_indices(s: int, p: int) -> MultiIndexSet:
    """Build the graded-lex multi-index set for stochastic dimension s, order p."""
    if s < 1:
        raise ValueError(f"stochastic dimension must be >= 1, got {s}")
    if p < 0:
        raise ValueError(f"PCE order must be >= 0, got {p}")
    count = math.comb(s + p, p)
    if count > MAX_BASIS_SIZE:
        raise CapacityError(
            f"basis size {count} exceeds the supported maximum {MAX_BASIS_SIZE}")
    indices = []
    for total in range(p + 1):
        indices.extend(_compositions(s, total))
    indices = tuple(indices)
    assert len(indices) == count
    lookup = {m: pos for pos, m in enumerate(indices)}
    return MultiIndexSet(s=s, p=p, indices=indices, lookup=lookup)


@dataclass(frozen=True, eq=False)
class CouplingEntry:
    """G_{m,n,l} != 0: coefficient l feeds d phi_m/dt through mode n."""

    m_pos: int
    mode: int  # 1-based stochastic mode number
    l_pos: int
    weight: float


@dataclass(frozen=True, eq=False)
class GalerkinCouplings:
    """Sparse coupling tensor, both as entry list and as per-mode matrices.

    mode_matrices[n-1][m, l] = G_{m,n,l}, a CSR matrix per stochastic mode,
    is the layout the integrator consumes.
    """

    basis: MultiIndexSet
    entries: tuple
    mode_matrices: tuple


def build_couplings(basis: MultiIndexSet) -> GalerkinCouplings:
    """Emit raising (weight m_n + 1) and lowering (weight 1) partners per mode.

    Raised indices that leave the truncated set are dropped (boundary
    truncation); lowered indices always stay inside.
    """
    entries = []
    rows = [[] for _ in range(basis.s)]
    cols = [[] for _ in range(basis.s)]
    data = [[] for _ in range(basis.s)]
    for m_pos, m in enumerate(basis.indices):
        degree = sum(m)
        for n in range(basis.s):
            if m[n] >= 1:
                lowered = m[:n] + (m[n] - 1,) + m[n + 1:]
                l_pos = basis.lookup[lowered]
                entries.append(CouplingEntry(m_pos, n + 1, l_pos, 1.0))
                rows[n].append(m_pos); cols[n].append(l_pos); data[n].append(1.0)
            if degree < basis.p:
                raised = m[:n] + (m[n] + 1,) + m[n + 1:]
                l_pos = basis.lookup[raised]
                weight = float(m[n] + 1)
                entries.append(CouplingEntry(m_pos, n + 1, l_pos, weight))
                rows[n].append(m_pos); cols[n].append(l_pos); data[n].append(weight)
    n_basis = basis.size
    matrices = tuple(
        sparse.csr_matrix((data[n], (rows[n], cols[n])), shape=(n_basis, n_basis))
        for n in range(basis.s))
    return GalerkinCouplings(basis=basis, entries=tuple(entries),
                             mode_matrices=matrices)


@dataclass(frozen=True, eq=False)
class PCEState:
    """The N operator-valued coefficients phi_m at one instant, rotating frame."""

    coefficients: np.ndarray  # (N, d, d) complex
    t: float
    basis: MultiIndexSet

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=complex)
        if coeffs.ndim != 3 or coeffs.shape[1] != coeffs.shape[2]:
            raise DimensionMismatchError(
                f"coefficients must be (N, d, d), got {coeffs.shape}")
        if coeffs.shape[0] != self.basis.size:
            raise DimensionMismatchError(
                f"{coeffs.shape[0]} coefficients for a basis of {self.basis.size}")
        coeffs = coeffs.copy(); coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]


def initial_pce_state(rho0, basis: MultiIndexSet) -> PCEState:
    """phi_0 = rho0, all other coefficients zero (deterministic initial state)."""
    rho0 = validate_density_matrix(rho0)
    coeffs = np.zeros((basis.size, rho0.shape[0], rho0.shape[1]), dtype=complex)
    coeffs[0] = rho0
    return PCEState(coefficients=coeffs, t=0.0, basis=basis)


def trace_error(state: PCEState) -> float:
    """max_m |tr phi_m - delta_{m,0}| (every trace is conserved by the flow)."""
    traces = np.trace(state.coefficients, axis1=1, axis2=2)
    expected = np.zeros(state.basis.size, dtype=complex)
    expected[0] = 1.0
    return float(np.max(np.abs(traces - expected)))


def hermiticity_error(state: PCEState) -> float:
    """max_m Frobenius norm of phi_m - phi_m^dag."""
    dev = state.coefficients - state.coefficients.conj().transpose(0, 2, 1)
    return float(np.max(np.sqrt(np.sum(np.abs(dev) ** 2, axis=(1, 2)))))


def _rhs(v_t: np.ndarray, s_vec: np.ndarray, coeffs: np.ndarray,
         mode_matrices) -> np.ndarray:
    """-i sum_n s_n [V, (M_n phi)_m], vectorized over the basis."""
    n_basis, d = coeffs.shape[0], coeffs.shape[1]
    flat = coeffs.reshape(n_basis, d * d)
    mixed = np.zeros_like(flat)
    for s_n, matrix in zip(s_vec, mode_matrices):
        if s_n != 0.0:
            mixed += s_n * (matrix @ flat)
    mixed = mixed.reshape(n_basis, d, d)
    return -1j * (v_t @ mixed - mixed @ v_t)


def hierarchy_rhs(state: PCEState, t: float, kle: TruncatedKLE,
                  model: StochasticModel, couplings: GalerkinCouplings) -> np.ndarray:
    """Time derivative of every coefficient at time t.

    Returns an (N, d, d) array; each entry is a commutator and therefore
    traceless.
    """
    if couplings.basis is not state.basis and couplings.basis.indices != state.basis.indices:
        raise DimensionMismatchError("state and couplings use different bases")
    if kle.stochastic_dim != state.basis.s:
        raise DimensionMismatchError(
            f"KLE has {kle.stochastic_dim} modes, basis expects {state.basis.s}")
    if model.dim != state.dim:
        raise DimensionMismatchError("model and state dimensions differ")
    from .operators import rotating_frame_potential

    v_t = rotating_frame_potential(model, t)
    s_vec = scaled_modes_matrix(kle.modes, model.kernel, np.array([t]))[:, 0]
    return _rhs(v_t, s_vec, state.coefficients, couplings.mode_matrices)


def _stage_data(model: StochasticModel, kle: TruncatedKLE, times: np.ndarray):
    """Rotating-frame couplings V(t) and sqrt(lambda) g(t) on the stage grid."""
    energies, states = model.h0_eigensystem()
    phases = np.exp(-1j * np.outer(times, energies))
    u0 = (states[None, :, :] * phases[:, None, :]) @ states.conj().T
    u0h = u0.conj().transpose(0, 2, 1)
    v_stage = u0h @ model.v @ u0
    v_stage = 0.5 * (v_stage + v_stage.conj().transpose(0, 2, 1))
    s_stage = scaled_modes_matrix(kle.modes, model.kernel, times)
    return v_stage, s_stage


def _check_invariants(state: PCEState) -> None:
    t_err = trace_error(state)
    h_err = hermiticity_error(state)
    if t_err > DIVERGENCE_FACTOR * TRACE_CONSERVATION_TOL:
        raise PropagationDivergedError(
            f"trace error {t_err:.3e} at t = {state.t!r}; reduce dt_max")
    if h_err > DIVERGENCE_FACTOR * HERMITICITY_TOL:
        raise PropagationDivergedError(
            f"hermiticity error {h_err:.3e} at t = {state.t!r}; reduce dt_max")


def propagate(state: PCEState, model: StochasticModel, kle: TruncatedKLE,
              couplings: GalerkinCouplings, t_grid, dt_max: float | None = None):
    """Integrate the hierarchy with fixed-step classic RK4.

    Records a PCEState at every t_grid point (the first must equal state.t).
    Within each output interval the step is the largest uniform step not
    exceeding dt_max (default horizon / 2000).  Stage values of V(t) and
    sqrt(lambda_n) g_n(t) are evaluated once per interval on the half-step
    grid, so the integrator itself does no quadrature.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1:
        raise ValueError("t_grid must be a nonempty 1-D array")
    if abs(t_grid[0] - state.t) > 1e-12:
        raise ValueError(f"t_grid starts at {t_grid[0]!r}, state is at {state.t!r}")
    if t_grid.size > 1 and np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if dt_max is None:
        dt_max = model.horizon / DEFAULT_SUBSTEP_FRACTION
    if dt_max <= 0:
        raise ValueError(f"dt_max must be positive, got {dt_max}")

    matrices = couplings.mode_matrices
    y = state.coefficients.astype(complex)
    out = [PCEState(coefficients=y, t=float(t_grid[0]), basis=state.basis)]
    _check_invariants(out[0])
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        span = t1 - t0
        steps = max(1, int(np.ceil(span / dt_max - 1e-12)))
        h = span / steps
        stage_times = t0 + (h / 2) * np.arange(2 * steps + 1)
        v_stage, s_stage = _stage_data(model, kle, stage_times)
        for j in range(steps):
            i0 = 2 * j
            k1 = _rhs(v_stage[i0], s_stage[:, i0], y, matrices)
            k2 = _rhs(v_stage[i0 + 1], s_stage[:, i0 + 1], y + (h / 2) * k1, matrices)
            k3 = _rhs(v_stage[i0 + 1], s_stage[:, i0 + 1], y + (h / 2) * k2, matrices)
            k4 = _rhs(v_stage[i0 + 2], s_stage[:, i0 + 2], y + h * k3, matrices)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        recorded = PCEState(coefficients=y, t=float(t1), basis=state.basis)
        _check_invariants(recorded)
        out.append(recorded)
    return out


def mean_state(state: PCEState, model: StochasticModel) -> np.ndarray:
    """The stochastic-mean density matrix in the Schrodinger frame.

    E[Phi_m] vanishes for m != 0, so the mean is phi_0 conjugated back by
    U0(t).  Positivity is not enforced (the truncated hierarchy does not
    guarantee it); use min_eigenvalue to monitor it.
    """
    energies, states = model.h0_eigensystem()
    u0 = propagator_from_eigensystem(energies, states, state.t)
    rho = u0 @ state.coefficients[0] @ u0.conj().T
    tr = np.trace(rho)
    if abs(tr - 1.0) > MEAN_TRACE_TOL:
        raise CorruptedStateError(
            f"mean state trace {tr!r} deviates from 1 beyond {MEAN_TRACE_TOL:.1e}")
    return 0.5 * (rho + rho.conj().T)


def min_eigenvalue(rho) -> float:
    """Smallest eigenvalue of a (near-)Hermitian matrix; positivity monitor."""
    rho = np.asarray(rho, dtype=complex)
    return float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())


def observable_mean(state: PCEState, obs, model: StochasticModel) -> float:
    """tr(obs * mean_state), reported in the Schrodinger frame."""
    from .operators import expectation

    return expectation(obs, mean_state(state, model))


def observable_variance(state: PCEState, obs, model: StochasticModel) -> float:
    """Noise-induced variance of tr(obs rho(xi)) across realizations.

    Orthogonality of the Hermite basis gives
    Var = sum_{m != 0} (prod_j m_j!) tr(obs_rot phi_m)^2 with obs rotated into
    the propagation frame; no sampling involved.
    """
    obs = check_hermitian(obs)
    if obs.shape[0] != state.dim:
        raise DimensionMismatchError("observable dimension mismatch")
    energies, states = model.h0_eigensystem()
    u0 = propagator_from_eigensystem(energies, states, state.t)
    obs_rot = u0.conj().T @ obs @ u0
    values = np.einsum("ij,mji->m", obs_rot, state.coefficients).real
    norms = state.basis.weight_norms()
    return float(np.sum(norms[1:] * values[1:] ** 2))
