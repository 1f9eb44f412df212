"""Monte Carlo reference solver for the stochastically driven system.

Samples noise realizations (exact discrete Ornstein-Uhlenbeck or a truncated
Karhunen-Loeve surrogate), propagates each trajectory with exact piecewise
unitaries in the rotating frame, and averages with running standard-error
estimates on a tracked observable.

Determinism contract: trajectory k draws from a counter-based substream
keyed by (seed, k), so results are bit-identical for a given (seed, config)
regardless of execution order or worker count.  Accumulation reduces each
batch in a single fixed-order pairwise sum and then folds batches in index
order.
"""

import concurrent.futures
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import DimensionMismatchError
from .kle import OrnsteinUhlenbeckKernel, TruncatedKLE, scaled_modes_matrix
from .operators import (
    SIGMA_X,
    StochasticModel,
    check_hermitian,
    propagator_from_eigensystem,
    validate_density_matrix,
)

DEFAULT_STDERR_TARGET = 5e-3
MAX_STEP_FRACTION = 100  # dt must not exceed horizon / 100
GRID_UNIFORMITY_TOL = 1e-9


@dataclass(frozen=True)
class MCConfig:
    """Monte Carlo run parameters.

    sampler is "exact_ou" (exact AR(1) Ornstein-Uhlenbeck recursion) or
    "kle" (truncated Karhunen-Loeve surrogate, which reproduces the
    truncated covariance and so exposes truncation error directly).
    batch is the number of trajectories between convergence checks; the run
    stops once the max-over-time stderr of the tracked observable drops to
    stderr_target, or when n_traj is exhausted (then flagged unconverged).
    """

    n_traj: int
    dt: float
    seed: int
    sampler: str = "exact_ou"
    batch: int = 500
    stderr_target: float = DEFAULT_STDERR_TARGET
    workers: int = 1

    def __post_init__(self):
        if self.n_traj < 2:
            raise ValueError(f"n_traj must be >= 2, got {self.n_traj}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.sampler not in ("exact_ou", "kle"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.stderr_target <= 0:
            raise ValueError(f"stderr_target must be positive, got {self.stderr_target}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True, eq=False)
class MCEnsemble:
    """Trajectory average: Schrodinger-frame mean state per output time,
    standard error of the tracked observable, and the trajectory budget used."""

    times: np.ndarray
    mean_rho: np.ndarray  # (n_times, d, d)
    stderr_obs: np.ndarray  # (n_times,)
    n_used: int
    converged: bool


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream for one trajectory; pure in (seed, index)."""
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def _require_uniform(t_grid: np.ndarray) -> float:
    steps = np.diff(t_grid)
    if steps.size == 0:
        raise ValueError("grid needs at least two points")
    dt = float(steps[0])
    if np.any(np.abs(steps - dt) > GRID_UNIFORMITY_TOL * max(abs(dt), 1.0)):
        raise ValueError("grid must be uniform")
    return dt


def sample_ou_path(kernel: OrnsteinUhlenbeckKernel, t_grid, rng) -> np.ndarray:
    """Exact stationary OU samples at the grid times.

    Omega(t_0) ~ N(0, alpha^2); Omega(t_{k+1}) = r Omega(t_k)
    + alpha sqrt(1 - r^2) z_k with r = exp(-dt / tau_c).  The discrete path
    has exactly the continuous process's marginals and covariance at grid
    times, so Monte Carlo carries no SDE discretization bias.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dt = _require_uniform(t_grid)
    alpha = kernel.alpha
    n = t_grid.size
    x0 = alpha * rng.standard_normal()
    if n == 1:
        return np.array([x0])
    r = np.exp(-dt / kernel.tau_c)
    innovations = alpha * np.sqrt(1.0 - r * r) * rng.standard_normal(n - 1)
    # AR(1) recursion as a linear filter with the stationary start as state
    tail, _ = lfilter([1.0], [1.0, -r], innovations, zi=np.array([r * x0]))
    return np.concatenate(([x0], tail))


class _TrajectoryStepper:
    """Shared per-run precomputation for exact piecewise-unitary stepping.

    The step unitary exp(-i theta V(t_mid)) shares V's eigenvalues at every
    time (unitary conjugation preserves spectra), so one eigendecomposition
    of v plus the frame rotation gives every step's eigenbasis:
    exp(-i theta V(t)) = (U0(t)^dag Q) exp(-i theta D) (U0(t)^dag Q)^dag.
    """

    def __init__(self, model: StochasticModel, t_grid: np.ndarray):
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.dt = _require_uniform(self.t_grid)
        self.d = model.dim
        v_eigvals, v_eigvecs = np.linalg.eigh(model.v)
        energies, states = model.h0_eigensystem()
        mids = 0.5 * (self.t_grid[:-1] + self.t_grid[1:])
        phases = np.exp(-1j * np.outer(mids, energies))
        u0_mid = (states[None, :, :] * phases[:, None, :]) @ states.conj().T
        # columns of q_mid[k] are the eigenvectors of V(t_mid_k)
        self.q_mid = u0_mid.conj().transpose(0, 2, 1) @ v_eigvecs
        self.q_mid_h = self.q_mid.conj().transpose(0, 2, 1)
        self.v_eigvals = v_eigvals

    def step_unitary(self, k: int, omega_mid: float) -> np.ndarray:
        theta = omega_mid * self.dt
        phase = np.exp(-1j * theta * self.v_eigvals)
        return (self.q_mid[k] * phase) @ self.q_mid_h[k]


def propagate_trajectory(model: StochasticModel, path, rho0) -> np.ndarray:
    """Rotating-frame density matrix at every grid time for one noise path.

    The path is taken as samples on the uniform propagation grid
    linspace(0, horizon, len(path)).  Each step applies the exact unitary of
    the piecewise-constant generator Omega_mid V(t_mid) with Omega linearly
    interpolated to the midpoint, so trace and positivity are preserved
    exactly.  Returns an (n_times, d, d) array; index 0 is rho0.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 1 or path.size < 2:
        raise ValueError("path must be a 1-D array of >= 2 samples")
    rho0 = validate_density_matrix(rho0)
    if rho0.shape[0] != model.dim:
        raise DimensionMismatchError("rho0 dimension does not match the model")
    t_grid = np.linspace(0.0, model.horizon, path.size)
    stepper = _TrajectoryStepper(model, t_grid)
    return _propagate_with_stepper(stepper, path, rho0, np.arange(path.size))


def _propagate_with_stepper(stepper: _TrajectoryStepper, path: np.ndarray,
                            rho0: np.ndarray, record_idx: np.ndarray) -> np.ndarray:
    out = np.empty((record_idx.size, stepper.d, stepper.d), dtype=complex)
    record_pos = 0
    if record_idx[0] == 0:
        out[0] = rho0
        record_pos = 1
    rho = rho0
    omega_mid = 0.5 * (path[:-1] + path[1:])
    for k in range(path.size - 1):
        u = stepper.step_unitary(k, omega_mid[k])
        rho = u @ rho @ u.conj().T
        if record_pos < record_idx.size and record_idx[record_pos] == k + 1:
            out[record_pos] = rho
            record_pos += 1
    return out


def _resolve_step_grid(model: StochasticModel, config: MCConfig,
                       t_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Uniform propagation grid with step <= config.dt, aligned to the output times."""
    out_dt = _require_uniform(t_out)
    if abs(t_out[0]) > 1e-12:
        raise ValueError("output grid must start at t = 0")
    if config.dt > model.horizon / MAX_STEP_FRACTION * (1 + 1e-12):
        raise ValueError(
            f"dt = {config.dt!r} exceeds horizon/{MAX_STEP_FRACTION}")
    per_interval = max(1, int(np.ceil(out_dt / config.dt - 1e-12)))
    n_steps = per_interval * (t_out.size - 1)
    t_grid = np.linspace(t_out[0], t_out[-1], n_steps + 1)
    record_idx = np.arange(0, n_steps + 1, per_interval)
    return t_grid, record_idx


def _trajectory_observables(engine, index: int):
    """One trajectory's recorded states and tracked-observable samples."""
    rng = trajectory_rng(engine.seed, index)
    if engine.scaled_modes is None:
        path = sample_ou_path(engine.kernel, engine.t_grid, rng)
    else:
        xi = rng.standard_normal(engine.scaled_modes.shape[0])
        path = xi @ engine.scaled_modes
    rhos = _propagate_with_stepper(engine.stepper, path, engine.rho0,
                                   engine.record_idx)
    obs_vals = np.einsum("tij,tji->t", engine.obs_rot, rhos).real
    return rhos, obs_vals


class _EnsembleEngine:
    """Everything shared across trajectories for one mc_average run."""

    def __init__(self, model: StochasticModel, rho0: np.ndarray,
                 config: MCConfig, t_out: np.ndarray, observable: np.ndarray,
                 kle: TruncatedKLE | None):
        self.kernel = model.kernel
        self.seed = config.seed
        self.rho0 = rho0
        self.t_grid, self.record_idx = _resolve_step_grid(model, config, t_out)
        self.stepper = _TrajectoryStepper(model, self.t_grid)
        energies, states = model.h0_eigensystem()
        rec_times = self.t_grid[self.record_idx]
        # rotated observable per output time: tr(A U0 rho U0^dag) = tr(A_rot rho)
        self.obs_rot = np.empty((rec_times.size, model.dim, model.dim), dtype=complex)
        self.u0_out = np.empty_like(self.obs_rot)
        for pos, t in enumerate(rec_times):
            u0 = propagator_from_eigensystem(energies, states, t)
            self.u0_out[pos] = u0
            self.obs_rot[pos] = u0.conj().T @ observable @ u0
        if config.sampler == "kle":
            if kle is None:
                raise ValueError("sampler 'kle' needs a TruncatedKLE")
            self.scaled_modes = scaled_modes_matrix(kle.modes, model.kernel,
                                                    self.t_grid)
        else:
            self.scaled_modes = None


def mc_average(model: StochasticModel, rho0, config: MCConfig, t_grid,
               observable=SIGMA_X, kle: TruncatedKLE | None = None) -> MCEnsemble:
    """Trajectory-averaged density matrix with stderr of the tracked observable.

    Runs trajectories in batches of config.batch; after each batch the
    max-over-time standard error of the observable is tested against
    config.stderr_target and the run stops early once it is met.  Reported
    mean states are back-transformed to the Schrodinger frame.  The result is
    a pure function of (model, rho0, config, t_grid, observable): worker
    threads only split a batch, never reorder the reduction.
    """
    rho0 = validate_density_matrix(rho0)
    observable = check_hermitian(observable)
    if observable.shape[0] != model.dim or rho0.shape[0] != model.dim:
        raise DimensionMismatchError("observable/rho0 dimension mismatch")
    t_out = np.asarray(t_grid, dtype=float)
    engine = _EnsembleEngine(model, rho0, config, t_out, observable, kle)

    n_out = engine.record_idx.size
    d = model.dim
    sum_rho = np.zeros((n_out, d, d), dtype=complex)
    sum_obs = np.zeros(n_out)
    sum_obs_sq = np.zeros(n_out)
    n_used = 0
    converged = False

    executor = None
    if config.workers > 1:
        executor = concurrent.futures.ThreadPoolExecutor(max_workers=config.workers)
    try:
        while n_used < config.n_traj and not converged:
            batch_n = min(config.batch, config.n_traj - n_used)
            indices = range(n_used, n_used + batch_n)
            batch_rho = np.empty((batch_n, n_out, d, d), dtype=complex)
            batch_obs = np.empty((batch_n, n_out))

            def run_one(pos_index):
                pos, index = pos_index
                batch_rho[pos], batch_obs[pos] = _trajectory_observables(engine, index)

            work = list(enumerate(indices))
            if executor is None:
                for item in work:
                    run_one(item)
            else:
                list(executor.map(run_one, work))

            # fixed-order pairwise reduction over the batch axis
            sum_rho += np.sum(batch_rho, axis=0)
            sum_obs += np.sum(batch_obs, axis=0)
            sum_obs_sq += np.sum(batch_obs**2, axis=0)
            n_used += batch_n

            if n_used >= 2:
                stderr = _stderr(sum_obs, sum_obs_sq, n_used)
                converged = bool(np.max(stderr) <= config.stderr_target)
    finally:
        if executor is not None:
            executor.shutdown()

    mean_rot = sum_rho / n_used
    mean_rho = engine.u0_out @ mean_rot @ engine.u0_out.conj().transpose(0, 2, 1)
    stderr = _stderr(sum_obs, sum_obs_sq, n_used) if n_used >= 2 else np.zeros(n_out)
    return MCEnsemble(times=engine.t_grid[engine.record_idx], mean_rho=mean_rho,
                      stderr_obs=stderr, n_used=n_used, converged=converged)


def _stderr(sum_obs: np.ndarray, sum_obs_sq: np.ndarray, n: int) -> np.ndarray:
    variance = (sum_obs_sq - sum_obs**2 / n) / (n - 1)
    return np.sqrt(np.maximum(variance, 0.0) / n)
