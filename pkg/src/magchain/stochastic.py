"""Stochastic surrogate of the forced chain and its closed covariance dynamics.

The limiting dynamics rotates every momentum by an independent Brownian angle,

    dq = p dt,   dp = (Laplacian - omega0^2) q dt + sqrt(2 gamma) J p o dw_x,

so second moments obey a closed linear ODE.  With ``K = omega0^2 - Laplacian``
and the pair sums ``S^q_xy = <q_x . q_y>``, ``S^qp_xy = <q_x . p_y>``,
``S^p_xy = <p_x . p_y>``:

    dS^q  = S^qp + S^qp^T
    dS^qp = S^p - S^q K - gamma S^qp
    dS^p  = -K S^qp - S^qp^T K - 2 gamma S^p + 2 gamma Diag(S^p)

which is ``-A S - S A^T + 2 gamma Sigma(S)`` in block form with
``A = [[0, -I], [K, gamma I]]``.

Noise strength convention
-------------------------
An angle that receives ``eps^{1/2} b(theta_k)`` per eps-interval has variance
``gamma_GK t`` after time ``t``, whereas the Stratonovich rotation above has
variance ``2 gamma t``.  The generator noise matching the deterministic chain
is therefore ``gamma_GK / 2`` (see :func:`generator_gamma`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .spectral import dft, harmonic_flow_arrays, mode_eigenvalues, periodic_green_function

__all__ = [
    "CovMatrix",
    "GeneratorParams",
    "generator_drift",
    "generator_drift_dense",
    "residuals",
    "evolve_covariance",
    "evolve_covariance_snapshots",
    "gibbs_covariance",
    "kinetic_covariance",
    "energy_profile_from_cov",
    "covariance_energy",
    "phi_tilde",
    "assemble_B",
    "sde_trajectory",
    "sde_ensemble",
    "generator_gamma",
    "stability_norm",
    "default_dt",
]


@dataclass
class CovMatrix:
    """Second-moment blocks ``S^q``, ``S^qp`` and ``S^p`` of a ring of N sites.

    ``S^pq`` is not stored; it equals ``S^qp`` transposed.
    """

    q: np.ndarray
    qp: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        self.qp = np.array(self.qp, dtype=float)
        self.p = np.array(self.p, dtype=float)
        N = self.q.shape[0]
        for blk in (self.q, self.qp, self.p):
            if blk.shape != (N, N):
                raise ValueError("all covariance blocks must be N x N")

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def pq(self) -> np.ndarray:
        return self.qp.T

    @classmethod
    def zeros(cls, N: int) -> "CovMatrix":
        z = np.zeros((N, N))
        return cls(z, z, z)

    def block(self) -> np.ndarray:
        """Full ``2N x 2N`` matrix ``[[S^q, S^qp], [S^pq, S^p]]``."""
        return np.block([[self.q, self.qp], [self.qp.T, self.p]])

    @classmethod
    def from_block(cls, S: np.ndarray) -> "CovMatrix":
        N = S.shape[0] // 2
        return cls(S[:N, :N], S[:N, N:], S[N:, N:])

    def copy(self) -> "CovMatrix":
        return CovMatrix(self.q, self.qp, self.p)

    def symmetrized(self) -> "CovMatrix":
        return CovMatrix(0.5 * (self.q + self.q.T), self.qp, 0.5 * (self.p + self.p.T))

    def __add__(self, other):
        return CovMatrix(self.q + other.q, self.qp + other.qp, self.p + other.p)

    def __sub__(self, other):
        return CovMatrix(self.q - other.q, self.qp - other.qp, self.p - other.p)

    def __mul__(self, c: float):
        return CovMatrix(c * self.q, c * self.qp, c * self.p)

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return float(max(np.abs(self.q).max(), np.abs(self.qp).max(), np.abs(self.p).max()))

    def validate(self, tol: float = 1e-9, sym_tol: float = 1e-12) -> None:
        """Check symmetry and positive semidefiniteness of the full matrix."""
        scale = max(1.0, self.max_abs())
        if np.abs(self.q - self.q.T).max() > sym_tol * scale or np.abs(self.p - self.p.T).max() > sym_tol * scale:
            raise ValueError("covariance blocks are not symmetric")
        S = self.block()
        trace = np.trace(S)
        lam = np.linalg.eigvalsh(0.5 * (S + S.T)).min()
        if lam < -tol * max(trace, 1e-300) / self.N:
            raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {lam:.3e})")

    def to_csv(self, path) -> None:
        """Dump blocks as rows ``block, x, y, value``."""
        with open(path, "w") as fh:
            fh.write("block,x,y,value\n")
            for name, blk in (("q", self.q), ("qp", self.qp), ("p", self.p)):
                for x in range(self.N):
                    for y in range(self.N):
                        fh.write(f"{name},{x},{y},{blk[x, y]!r}\n")

    def save(self, path) -> None:
        np.savez(path, q=self.q, qp=self.qp, p=self.p)

    @classmethod
    def load(cls, path) -> "CovMatrix":
        with np.load(path) as f:
            return cls(f["q"], f["qp"], f["p"])


@dataclass(frozen=True)
class GeneratorParams:
    """Ring size, pinning frequency and generator noise strength ``gamma``."""

    N: int
    omega0: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")


def generator_gamma(gamma_green_kubo: float) -> float:
    """Generator noise reproducing a field with Green-Kubo coefficient ``gamma_green_kubo``."""
    return 0.5 * gamma_green_kubo


def _lap(M, axis):
    return np.roll(M, 1, axis) + np.roll(M, -1, axis) - 2.0 * M


def _K_left(M, w2):
    return w2 * M - _lap(M, 0)


def _K_right(M, w2):
    return w2 * M - _lap(M, 1)


def _drift(Sq, Sqp, Sp, w2, g):
    KSqp = _K_left(Sqp, w2)
    dq = Sqp + Sqp.T
    dqp = Sp - _K_right(Sq, w2) - g * Sqp
    dp = -KSqp - KSqp.T - 2.0 * g * Sp
    idx = np.diag_indices_from(Sp)
    dp[idx] += 2.0 * g * Sp[idx]
    return dq, dqp, dp


def _check_dims(S: CovMatrix, params: GeneratorParams):
    if S.N != params.N:
        raise ValueError(f"covariance has N={S.N}, parameters have N={params.N}")


def generator_drift(S: CovMatrix, params: GeneratorParams) -> CovMatrix:
    """Time derivative of the second moments under the generator."""
    _check_dims(S, params)
    return CovMatrix(*_drift(S.q, S.qp, S.p, params.omega0**2, params.gamma))


def _lattice_operator(N, omega0):
    K = (omega0**2 + 2.0) * np.eye(N)
    idx = np.arange(N)
    K[idx, (idx + 1) % N] -= 1.0
    K[idx, (idx - 1) % N] -= 1.0
    return K


def generator_drift_dense(S: CovMatrix, params: GeneratorParams) -> CovMatrix:
    """Reference drift ``-A S - S A^T + 2 gamma Sigma(S)`` built from dense matrices."""
    _check_dims(S, params)
    N, g = params.N, params.gamma
    I = np.eye(N)
    A = np.block([[np.zeros((N, N)), -I], [_lattice_operator(N, params.omega0), g * I]])
    full = S.block()
    Sigma = np.zeros_like(full)
    Sigma[N:, N:] = np.diag(np.diag(S.p))
    return CovMatrix.from_block(-A @ full - full @ A.T + 2.0 * g * Sigma)


def residuals(S: CovMatrix, params: GeneratorParams) -> CovMatrix:
    """Stationarity residual ``A S + S A^T - 2 gamma Sigma(S)`` (the negated drift)."""
    return generator_drift(S, params) * -1.0


def energy_profile_from_cov(S: CovMatrix, omega0: float) -> np.ndarray:
    """Expected site energies ``e_x`` implied by the second moments."""
    N = S.N
    x = np.arange(N)
    xm = (x - 1) % N
    grad = S.q[x, x] - 2.0 * S.q[x, xm] + S.q[xm, xm]
    return 0.5 * S.p[x, x] + 0.5 * grad + 0.5 * omega0**2 * S.q[x, x]


def covariance_energy(S: CovMatrix, omega0: float) -> float:
    return float(energy_profile_from_cov(S, omega0).sum())


def gibbs_covariance(params: GeneratorParams, T: float) -> CovMatrix:
    """Equilibrium second moments at temperature ``T`` (two components per site)."""
    if T < 0:
        raise ValueError("temperature must be non-negative")
    N = params.N
    return CovMatrix(2.0 * T * periodic_green_function(N, params.omega0), np.zeros((N, N)), 2.0 * T * np.eye(N))


def kinetic_covariance(temperatures: Sequence[float]) -> CovMatrix:
    """Positions at rest and ``<|p_x|^2> = 2 T_x``, so that ``e_x = T_x``."""
    t = np.asarray(temperatures, dtype=float)
    N = t.size
    z = np.zeros((N, N))
    return CovMatrix(z, z, np.diag(2.0 * t))


def stability_norm(omega0: float, gamma: float) -> float:
    """Bound ``3 (omega0^2 + 2) + gamma`` on the drift matrix norm."""
    return 3.0 * (omega0**2 + 2.0) + gamma


def default_dt(omega0: float, gamma: float) -> float:
    return 0.1 / stability_norm(omega0, gamma)


def _rk4_plan(t, dt, params):
    if t < 0:
        raise ValueError("t must be non-negative")
    if dt is None:
        dt = default_dt(params.omega0, params.gamma)
    if dt * stability_norm(params.omega0, params.gamma) > 0.5:
        raise ValueError(
            f"dt={dt} exceeds the stability bound {0.5 / stability_norm(params.omega0, params.gamma):.4g}"
        )
    n = int(math.ceil(t / dt - 1e-9)) if t > 0 else 0
    return n, (t / n if n else 0.0)


class _CovarianceFlow:
    """Fixed-step RK4 for the covariance ODE with optional time integral."""

    def __init__(self, params, energy_tol=1e-8, check_every=100):
        self.w2 = params.omega0**2
        self.g = params.gamma
        self.omega0 = params.omega0
        self.energy_tol = energy_tol
        self.check_every = check_every
        self.steps = 0

    def f(self, y):
        return _drift(y[0], y[1], y[2], self.w2, self.g)

    def step(self, y, h, integral=None):
        k1 = self.f(y)
        y2 = [a + 0.5 * h * b for a, b in zip(y, k1)]
        k2 = self.f(y2)
        y3 = [a + 0.5 * h * b for a, b in zip(y, k2)]
        k3 = self.f(y3)
        y4 = [a + h * b for a, b in zip(y, k3)]
        k4 = self.f(y4)
        if integral is not None:
            # RK4 on the augmented system I' = S
            for I, a, b, c, d in zip(integral, y, y2, y3, y4):
                I += (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
        out = [a + (h / 6.0) * (b + 2.0 * c + 2.0 * d + e) for a, b, c, d, e in zip(y, k1, k2, k3, k4)]
        out[0] = 0.5 * (out[0] + out[0].T)
        out[2] = 0.5 * (out[2] + out[2].T)
        self.steps += 1
        return out

    def energy(self, y):
        return covariance_energy(CovMatrix(*y), self.omega0)

    def check(self, y, E0):
        E = self.energy(y)
        if abs(E - E0) > self.energy_tol * max(abs(E0), 1e-300):
            raise RuntimeError(
                f"covariance energy drifted from {E0!r} to {E!r}; reduce dt"
            )
        CovMatrix(*y).validate()

    def advance(self, y, n, h, E0, integral=None):
        for _ in range(n):
            y = self.step(y, h, integral)
            if self.steps % self.check_every == 0:
                self.check(y, E0)
        return y


def evolve_covariance(
    S0: CovMatrix,
    params: GeneratorParams,
    t_micro: float,
    dt: Optional[float] = None,
    *,
    integrate: bool = False,
    energy_tol: float = 1e-8,
):
    """Integrate the covariance ODE to microscopic time ``t_micro`` with RK4.

    The step is shrunk so that an integer number of steps lands on ``t_micro``.
    Symmetry is restored every step; energy and positive semidefiniteness are
    checked every 100 steps and at the end.

    Returns
    -------
    CovMatrix, or ``(CovMatrix, CovMatrix)`` with ``int_0^t S ds`` when ``integrate``.
    """
    _check_dims(S0, params)
    n, h = _rk4_plan(t_micro, dt, params)
    flow = _CovarianceFlow(params, energy_tol)
    y = [S0.q.copy(), S0.qp.copy(), S0.p.copy()]
    E0 = flow.energy(y)
    integral = [np.zeros_like(a) for a in y] if integrate else None
    y = flow.advance(y, n, h, E0, integral)
    if n:
        flow.check(y, E0)
    S = CovMatrix(*y)
    if integrate:
        return S, CovMatrix(*integral)
    return S


def evolve_covariance_snapshots(
    S0: CovMatrix,
    params: GeneratorParams,
    times: Sequence[float],
    dt: Optional[float] = None,
    *,
    integrate: bool = False,
    energy_tol: float = 1e-8,
):
    """Covariance at each microscopic time in ``times`` (non-decreasing).

    Each segment between consecutive outputs uses its own shrunk step, so the
    outputs agree with separate :func:`evolve_covariance` calls up to the
    integrator error.  With ``integrate`` a second list of running time
    integrals is returned.
    """
    _check_dims(S0, params)
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be non-negative and non-decreasing")
    flow = _CovarianceFlow(params, energy_tol)
    y = [S0.q.copy(), S0.qp.copy(), S0.p.copy()]
    E0 = flow.energy(y)
    integral = [np.zeros_like(a) for a in y] if integrate else None
    out, ints = [], []
    t_prev = 0.0
    for t in times:
        n, h = _rk4_plan(t - t_prev, dt, params)
        y = flow.advance(y, n, h, E0, integral)
        if n:
            flow.check(y, E0)
        out.append(CovMatrix(*y))
        if integrate:
            ints.append(CovMatrix(*integral))
        t_prev = t
    return (out, ints) if integrate else out


# ---------------------------------------------------------------- Fourier structure


def phi_tilde(mu1, mu2, gamma: float):
    """``4 g^2 (mu - mu') / (2 g^2 (mu + mu') + (mu - mu')^2)``."""
    if not gamma > 0:
        raise ValueError("phi_tilde is undefined for gamma <= 0")
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    diff = mu1 - mu2
    return 4.0 * gamma**2 * diff / (2.0 * gamma**2 * (mu1 + mu2) + diff * diff)


def assemble_B(sp_diag: Sequence[float], params: GeneratorParams) -> np.ndarray:
    """Leading-order antisymmetric part of ``S^qp`` (times ``2 gamma``).

    ``B_xy = sum_{j,j'} Phi(mu_j, mu_j') F_{j,j'} psi_j(x) psi_j'(y)`` with
    ``F_{j,j'} = N^{-1/2} dft(diag S^p)[j + j']``.
    """
    if not params.gamma > 0:
        raise ValueError("assemble_B requires gamma > 0")
    d = np.asarray(sp_diag, dtype=float)
    N = params.N
    if d.shape != (N,):
        raise ValueError("diagonal length does not match N")
    j = np.arange(N)
    mu = mode_eigenvalues(N, params.omega0, j)
    F = dft(d)[(j[:, None] + j[None, :]) % N] / np.sqrt(N)
    M = phi_tilde(mu[:, None], mu[None, :], params.gamma) * F
    psi = np.exp(2j * np.pi * np.outer(j, j) / N) / np.sqrt(N)  # psi[x, j]
    B = psi @ M @ psi.T
    return B.real


# ---------------------------------------------------------------- pathwise SDE


def _rotate(p, angle):
    c, s = np.cos(angle), np.sin(angle)
    p0, p1 = p[..., 0], p[..., 1]
    return np.stack([c * p0 - s * p1, s * p0 + c * p1], axis=-1)


def _sde_path(params, q, p, n, dt, rng, record_energy=False):
    from .chain import site_energies

    energies = []
    if n == 0:
        return q.copy(), p.copy(), energies
    s2 = math.sqrt(2.0 * params.gamma * dt)
    q, p = harmonic_flow_arrays(q, p, params.omega0, 0.5 * dt)
    for i in range(n):
        if params.gamma > 0:
            p = _rotate(p, s2 * rng.standard_normal(p.shape[:-1]))
        q, p = harmonic_flow_arrays(q, p, params.omega0, 0.5 * dt if i == n - 1 else dt)
        if record_energy:
            # the harmonic flow conserves energy, so the half-step offset is harmless
            energies.append(site_energies(q, p, params.omega0).sum(-1))
    return q, p, energies


def sde_trajectory(params: GeneratorParams, q0, p0, t: float, dt: float, seed: int, path_id: int = 0, record_energy: bool = True):
    """One path of the Stratonovich rotation SDE by Strang splitting.

    Each step is half harmonic flow, an exact momentum rotation by the Gaussian
    angle ``sqrt(2 gamma dt) xi`` per site, and another half harmonic flow;
    adjacent half flows are merged.  Energy is conserved pathwise to roundoff.

    Returns
    -------
    dict with ``q``, ``p`` at time ``n dt`` and ``energy``, the total energy
    after each step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(round(t / dt))
    rng = np.random.default_rng([int(seed), int(path_id)])
    q, p, energies = _sde_path(params, np.array(q0, float), np.array(p0, float), n, dt, rng, record_energy)
    return {"q": q, "p": p, "t": n * dt, "energy": np.array(energies)}


def sde_ensemble(
    params: GeneratorParams,
    temperatures: Sequence[float],
    n_paths: int,
    t: float,
    dt: float,
    seed: int,
    batch_size: int = 1000,
) -> CovMatrix:
    """Empirical second moments at time ``t`` from kinetic-only initial data.

    Batch ``k`` is seeded by ``(seed, k)`` with a fixed batch size, so the
    estimate does not depend on how batches are scheduled.
    """
    temps = np.asarray(temperatures, dtype=float)
    N = temps.size
    if N != params.N:
        raise ValueError("temperature profile length does not match N")
    n = int(round(t / dt))
    acc = np.zeros((3, N, N))
    for k, start in enumerate(range(0, n_paths, batch_size)):
        B = min(batch_size, n_paths - start)
        rng = np.random.default_rng([int(seed), k])
        phi = rng.uniform(0.0, 2 * np.pi, (B, N))
        r = np.sqrt(2.0 * temps)
        p = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
        q = np.zeros_like(p)
        q, p, _ = _sde_path(params, q, p, n, dt, rng)
        acc[0] += np.einsum("bxc,byc->xy", q, q)
        acc[1] += np.einsum("bxc,byc->xy", q, p)
        acc[2] += np.einsum("bxc,byc->xy", p, p)
    acc /= n_paths
    return CovMatrix(acc[0], acc[1], acc[2])
