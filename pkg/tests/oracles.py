"""Independent closed-form and quadrature oracles used by the test suite.

Everything here is implemented from first principles with numpy/scipy only —
no imports from the package under test — so agreement between the two is
meaningful evidence of correctness.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq
from scipy.special import roots_hermitenorm


# ---------------------------------------------------------------------------
# Exponential-kernel (Ornstein-Uhlenbeck) Karhunen-Loeve eigenvalues
# ---------------------------------------------------------------------------

def ou_kle_eigenvalues(alpha: float, tau_c: float, tau: float,
                       n_modes: int) -> np.ndarray:
    """Leading KL eigenvalues of C(s,t) = alpha^2 exp(-|s-t|/tau_c) on [0, tau].

    Centering the interval to [-a, a] with a = tau/2 and c = 1/tau_c, the
    eigenfunctions split by parity.  Even modes cos(w t) satisfy
    c - w tan(w a) = 0; odd modes sin(w t) satisfy w + c tan(w a) = 0.  Every
    root w maps to the eigenvalue lambda = 2 c alpha^2 / (w^2 + c^2), which
    decreases with w, so sorting the merged roots ascending in w yields the
    eigenvalues in descending order.
    """
    c = 1.0 / tau_c
    a = 0.5 * tau
    roots: list[float] = []
    n_each = n_modes + 2  # a little slack before the merge

    def even_fn(w):
        return c - w * np.tan(w * a)

    def odd_fn(w):
        return w + c * np.tan(w * a)

    eps = 1e-12
    for k in range(n_each):
        lo = (k * np.pi) / a + eps
        hi = (k * np.pi + np.pi / 2.0) / a - eps
        roots.append(brentq(even_fn, lo, hi, xtol=1e-15, rtol=8.9e-16))
    for k in range(1, n_each + 1):
        lo = (k * np.pi - np.pi / 2.0) / a + eps
        hi = (k * np.pi) / a - eps
        roots.append(brentq(odd_fn, lo, hi, xtol=1e-15, rtol=8.9e-16))
    w = np.sort(np.array(roots))[:n_modes]
    return 2.0 * c * alpha**2 / (w**2 + c**2)


# ---------------------------------------------------------------------------
# Pure-dephasing closed form
# ---------------------------------------------------------------------------

def dephasing_coherence(alpha: float, tau_c: float, t) -> np.ndarray:
    """<sigma_x(t)> for H = Omega(t) sigma_z, OU noise, initial |+x>.

    The accumulated phase theta(t) = int_0^t Omega is Gaussian with
    Var[theta] = 2 alpha^2 tau_c [t - tau_c (1 - e^{-t/tau_c})], and
    E[cos(2 theta)] = exp(-2 Var[theta]).
    """
    t = np.asarray(t, dtype=float)
    var = 2.0 * alpha**2 * tau_c * (t - tau_c * (1.0 - np.exp(-t / tau_c)))
    return np.exp(-2.0 * var)


def dephasing_sx_variance(alpha: float, tau_c: float, t) -> np.ndarray:
    """Var[<sigma_x(t)>_Omega] across noise realizations, pure dephasing.

    With V = Var[theta(t)] as above, E[cos(k theta)] = exp(-k^2 V / 2), so
    Var[cos(2 theta)] = (1 + e^{-8V})/2 - e^{-4V}.
    """
    t = np.asarray(t, dtype=float)
    v = 2.0 * alpha**2 * tau_c * (t - tau_c * (1.0 - np.exp(-t / tau_c)))
    return 0.5 * (1.0 + np.exp(-8.0 * v)) - np.exp(-4.0 * v)


def dephasing_phase_variance_quadrature(alpha: float, tau_c: float,
                                        t: float, n: int = 2000) -> float:
    """Var[int_0^t Omega] by direct 2-D trapezoid quadrature of the kernel."""
    s = np.linspace(0.0, t, n)
    cov = alpha**2 * np.exp(-np.abs(s[:, None] - s[None, :]) / tau_c)
    w = np.full(n, t / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return float(w @ cov @ w)


# ---------------------------------------------------------------------------
# Static (frozen) noise: Rabi drive plus a Gaussian random detuning
# ---------------------------------------------------------------------------

def static_realization_sx(omega: float, t) -> np.ndarray:
    """<sigma_x(t)> for constant H = sigma_x + omega sigma_z, initial |+x>.

    Bloch precession about n = (1, 0, omega)/|h| with |h| = sqrt(1 + omega^2)
    at angular rate 2|h| gives
        <sigma_x(t)> = [1 + omega^2 cos(2 sqrt(1+omega^2) t)] / (1 + omega^2).
    """
    t = np.asarray(t, dtype=float)
    w2 = omega * omega
    return (1.0 + w2 * np.cos(2.0 * np.sqrt(1.0 + w2) * t)) / (1.0 + w2)


def static_ensemble_sx(a: float, t, n_nodes: int = 400) -> np.ndarray:
    """E_xi[<sigma_x(t)>] for H = sigma_x + a xi sigma_z, xi ~ N(0,1) frozen.

    Gauss-Hermite quadrature (physicists'-normalized via roots_hermitenorm)
    over the closed form of static_realization_sx.  This is the tau_c -> inf
    limit of the OU-driven model and exercises the full rotating-frame
    machinery of any solver under test.
    """
    t = np.asarray(t, dtype=float)
    nodes, weights = roots_hermitenorm(n_nodes)
    weights = weights / weights.sum()
    w2 = (a * nodes) ** 2
    freq = 2.0 * np.sqrt(1.0 + w2)
    curves = (1.0 + w2[:, None] * np.cos(freq[:, None] * t[None, :])) / (
        1.0 + w2[:, None])
    return weights @ curves


class ConstantKernel:
    """C(lag) = a^2: one frozen Gaussian amplitude (rank-one covariance).

    The tau_c -> infinity limit of the OU kernel; its single KL mode is the
    constant function, so a solver driven by it must reproduce the static
    ensemble averages above exactly.
    """

    def __init__(self, a: float):
        self.a = float(a)

    def at_lag(self, lag):
        return np.full_like(np.asarray(lag, dtype=float), self.a**2)

    @property
    def variance(self) -> float:
        return self.a**2


# ---------------------------------------------------------------------------
# Hermite triple products for the Galerkin coupling weights
# ---------------------------------------------------------------------------

def hermite_moment_tables(p_max: int, n_nodes: int = 40):
    """Q0[a,b] = E[He_a He_b]/E[He_a^2] and Q1[a,b] = E[He_a xi He_b]/E[He_a^2].

    Probabilists' Hermite polynomials under the standard normal weight,
    integrated by Gauss-Hermite quadrature exact for the polynomial degrees
    involved (degree <= 2 p_max + 1 << 2 n_nodes - 1).
    """
    nodes, weights = roots_hermitenorm(n_nodes)
    weights = weights / weights.sum()
    vals = np.empty((p_max + 1, n_nodes))
    for deg in range(p_max + 1):
        coef = np.zeros(deg + 1)
        coef[deg] = 1.0
        vals[deg] = np.polynomial.hermite_e.hermeval(nodes, coef)
    norms = np.array([float(math.factorial(deg))
                      for deg in range(p_max + 1)])
    q0 = (vals * weights) @ vals.T / norms[:, None]
    q1 = (vals * (weights * nodes)) @ vals.T / norms[:, None]
    return q0, q1


def galerkin_weight_quadrature(m, mode_j: int, l, q0, q1) -> float:
    """E[Phi_m xi_j Phi_l] / E[Phi_m^2] for multivariate Hermite products.

    Independence factorizes the expectation into one 1-D moment per variable.
    """
    out = 1.0
    for j, (mj, lj) in enumerate(zip(m, l)):
        table = q1 if j == mode_j else q0
        out *= table[mj, lj]
        if out == 0.0:
            return 0.0
    return float(out)
