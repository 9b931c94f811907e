"""Deterministic fast-slow dynamics of the magnetically forced harmonic ring.

Each site carries a position and a momentum in the plane.  Between field
updates the chain follows

    dq/dt = p,    dp/dt = (Laplacian - omega0^2) q + eps^{-1/2} b(theta_x) J p,

with ``J = [[0, 1], [-1, 0]]``, and at every multiple of ``eps`` each phase is
advanced by one application of the circle map.  Both pieces of the Strang
splitting (exact harmonic flow, exact momentum rotation) conserve the total
energy, so conservation holds to roundoff for any step size.

Field clock for linear maps
---------------------------
Iterating ``theta -> d theta mod 1`` in floating point collapses to 0 after
about 53 steps.  For unperturbed maps the phase is therefore held as a window
of ``L`` base-``d`` digits in an ``int64`` (``d^L <= 2^62``).  Applying the map
shifts the window by one digit and a fresh, uniformly distributed digit enters
at the bottom.  This is the exact orbit of a uniformly distributed real initial
phase whose digits are revealed lazily.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .circle import MapModel, Observable
from .heat import TorusMeasure, TrigFunction
from .spectral import harmonic_flow_arrays, harmonic_increment_matrix

__all__ = [
    "ChainParams",
    "ChainState",
    "EnergyProfile",
    "EnsembleResult",
    "BudgetExceeded",
    "AlignmentError",
    "DigitStream",
    "FieldClock",
    "init_state",
    "init_ensemble",
    "harmonic_flow",
    "rotation_flow",
    "step_interval",
    "advance",
    "run",
    "site_energy",
    "site_energies",
    "total_energy",
    "current",
    "currents",
    "norm_bounds",
    "WORKERS_ENV",
]

WORKERS_ENV = "MAGCHAIN_WORKERS"
DIGIT_BLOCK = 256
DEFAULT_BATCH = 1000
DENSE_MAX_N = 64


class BudgetExceeded(RuntimeError):
    """Requested run needs more substeps than the configured cap."""

    def __init__(self, estimate: int, budget: int):
        super().__init__(f"run needs {estimate} substeps per trajectory, budget is {budget}")
        self.estimate = estimate
        self.budget = budget


class AlignmentError(RuntimeError):
    """Microscopic time is not on the eps-grid where the field may jump."""


@dataclass(frozen=True)
class ChainParams:
    """Ring size, pinning, fast time scale and Strang substeps per eps-interval."""

    N: int
    omega0: float = 1.0
    eps: float = 1e-2
    substeps: int = 1

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be a positive integer")


class DigitStream:
    """Per-trajectory source of base-``d`` digits, drawn in fixed blocks.

    Blocks always have the same shape, so the digit sequence does not depend on
    how many rows are consumed at a time.
    """

    def __init__(self, rng: np.random.Generator, degree: int, n_sites: int, block: int = DIGIT_BLOCK):
        self.rng = rng
        self.degree = degree
        self.n_sites = n_sites
        self.block = block
        self._buf = np.empty((0, n_sites), dtype=np.int8)
        self._pos = 0

    def take(self, k: int) -> np.ndarray:
        parts = []
        while k > 0:
            if self._pos == self._buf.shape[0]:
                self._buf = self.rng.integers(0, self.degree, (self.block, self.n_sites), dtype=np.int8)
                self._pos = 0
            n = min(k, self._buf.shape[0] - self._pos)
            parts.append(self._buf[self._pos : self._pos + n])
            self._pos += n
            k -= n
        if not parts:
            return np.empty((0, self.n_sites), dtype=np.int8)
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def next(self) -> np.ndarray:
        return self.take(1)[0]


class FieldClock:
    """Advances the field phases by one map application."""

    def __init__(self, fmap: MapModel):
        self.fmap = fmap
        self.exact = fmap.is_linear
        d = fmap.degree
        L = 0
        while d ** (L + 1) <= 2**62:
            L += 1
        self.L = L
        self.modulus = d**L
        self.high = d ** (L - 1)
        self.scale = 1.0 / float(self.modulus)

    def init(self, rng: np.random.Generator, n: int):
        """Uniform initial phases; returns ``(theta, window)``."""
        if self.exact:
            w = rng.integers(0, self.modulus, n, dtype=np.int64)
            return w * self.scale, w
        return rng.random(n), None

    def advance(self, theta, window, digits=None):
        if not self.exact:
            return self.fmap(theta), None
        w = (window % self.high) * self.fmap.degree + digits.astype(np.int64)
        return w * self.scale, w


@dataclass
class ChainState:
    """Positions, momenta (shape ``(..., N, 2)``) and field phases (``(..., N)``).

    A leading batch axis turns the state into an ensemble.  ``window`` and
    ``streams`` carry the exact field clock for linear maps.
    """

    q: np.ndarray
    p: np.ndarray
    theta: np.ndarray
    t_micro: float = 0.0
    field_index: int = 0
    window: Optional[np.ndarray] = None
    streams: Optional[tuple] = None

    @property
    def N(self) -> int:
        return self.q.shape[-2]

    @property
    def batched(self) -> bool:
        return self.q.ndim == 3

    def copy(self) -> "ChainState":
        return ChainState(
            self.q.copy(),
            self.p.copy(),
            self.theta.copy(),
            self.t_micro,
            self.field_index,
            None if self.window is None else self.window.copy(),
            self.streams,
        )


@dataclass(frozen=True)
class EnergyProfile:
    e: np.ndarray
    t_macro: float


def _site_temperatures(T0, N: int) -> np.ndarray:
    u = np.arange(N) / N
    if isinstance(T0, TorusMeasure):
        vals = T0.density(u)
    elif isinstance(T0, TrigFunction) or callable(T0):
        vals = np.asarray(T0(u), dtype=float)
    else:
        vals = np.broadcast_to(np.asarray(T0, dtype=float), (N,)).copy()
    if np.any(vals < -1e-12):
        raise ValueError(f"initial temperature profile is negative (min {vals.min():.3e})")
    return np.maximum(vals, 0.0)


def init_state(params: ChainParams, T0, seed: int, trajectory_id: int = 0, fmap: Optional[MapModel] = None) -> ChainState:
    """Kinetic-only initial state with temperature profile ``T0``.

    ``q = 0`` and ``p_x = sqrt(2 T0(x/N)) (cos phi_x, sin phi_x)`` with i.i.d.
    uniform angles, so every site energy equals ``T0(x/N)`` exactly.  Field
    phases are i.i.d. uniform.
    """
    N = params.N
    temps = _site_temperatures(T0, N)
    rng = np.random.default_rng([int(seed), int(trajectory_id)])
    phi = rng.uniform(0.0, 2 * np.pi, N)
    r = np.sqrt(2.0 * temps)
    p = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    q = np.zeros_like(p)
    clock = FieldClock(fmap if fmap is not None else MapModel(2))
    theta, window = clock.init(rng, N)
    streams = None
    if clock.exact:
        streams = (DigitStream(rng, clock.fmap.degree, N),)
    return ChainState(q, p, theta, 0.0, 0, window, streams)


def init_ensemble(params: ChainParams, T0, seed: int, trajectory_ids: Sequence[int], fmap: Optional[MapModel] = None) -> ChainState:
    """Stack independent trajectories into a batched state."""
    states = [init_state(params, T0, seed, i, fmap) for i in trajectory_ids]
    window = None if states[0].window is None else np.stack([s.window for s in states])
    streams = None if states[0].streams is None else tuple(s.streams[0] for s in states)
    return ChainState(
        np.stack([s.q for s in states]),
        np.stack([s.p for s in states]),
        np.stack([s.theta for s in states]),
        0.0,
        0,
        window,
        streams,
    )


def harmonic_flow(state: ChainState, params: ChainParams, delta: float) -> ChainState:
    """Exact pinned harmonic evolution over ``delta``, mode by mode in Fourier space.

    Only ``q`` and ``p`` change; the clock is advanced by :func:`step_interval`.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    out = state.copy()
    out.q, out.p = harmonic_flow_arrays(state.q, state.p, params.omega0, delta)
    return out


def _rotate(p0, p1, angle):
    c, s = np.cos(angle), np.sin(angle)
    return c * p0 - s * p1, s * p0 + c * p1


def rotation_flow(state: ChainState, params: ChainParams, b: Observable, delta: float) -> ChainState:
    """Momentum rotation ``dp_x/dt = eps^{-1/2} b(theta_x) J p_x`` over ``delta``.

    With ``J = [[0, 1], [-1, 0]]`` this is a rotation by ``-eps^{-1/2} b delta``
    (clockwise for positive ``b``).
    """
    angle = -b(state.theta) * delta / math.sqrt(params.eps)
    out = state.copy()
    p0, p1 = _rotate(state.p[..., 0], state.p[..., 1], angle)
    out.p = np.stack([p0, p1], axis=-1)
    return out


def _check_alignment(state: ChainState, eps: float):
    expected = state.field_index * eps
    if abs(state.t_micro - expected) > 1e-9 * max(1.0, abs(expected)):
        raise AlignmentError(
            f"t_micro={state.t_micro!r} is not the start of field interval {state.field_index} "
            f"(expected {expected!r})"
        )


def _draw_digits(state: ChainState) -> Optional[np.ndarray]:
    if state.streams is None:
        return None
    if state.batched:
        return np.stack([s.next() for s in state.streams])
    return state.streams[0].next()


def step_interval(state: ChainState, params: ChainParams, fmap: MapModel, b: Observable) -> ChainState:
    """Advance one eps-interval with ``substeps`` Strang steps, then apply the map.

    Each substep is half rotation, full harmonic flow, half rotation, with the
    field frozen at its value at the start of the interval.
    """
    _check_alignment(state, params.eps)
    h = params.eps / params.substeps
    s = state
    for _ in range(params.substeps):
        s = rotation_flow(s, params, b, 0.5 * h)
        s = harmonic_flow(s, params, h)
        s = rotation_flow(s, params, b, 0.5 * h)
    clock = FieldClock(fmap)
    if clock.exact and s.window is None:
        raise ValueError("linear maps require the exact field clock; build the state with init_state")
    s.theta, s.window = clock.advance(s.theta, s.window, _draw_digits(s))
    s.field_index = state.field_index + 1
    s.t_micro = s.field_index * params.eps
    return s


# ---------------------------------------------------------------- observables


def site_energies(q, p, omega0: float) -> np.ndarray:
    """Per-site energies ``p^2/2 + (q_x - q_{x-1})^2/2 + omega0^2 q_x^2/2``."""
    q = np.asarray(q)
    p = np.asarray(p)
    dq = q - np.roll(q, 1, axis=-2)
    return 0.5 * (np.sum(p * p, -1) + np.sum(dq * dq, -1) + omega0**2 * np.sum(q * q, -1))


def site_energy(state: ChainState, x: int, omega0: float) -> float:
    e = site_energies(state.q, state.p, omega0)
    return e[..., x % state.N]


def total_energy(state: ChainState, omega0: float):
    return site_energies(state.q, state.p, omega0).sum(axis=-1)


def currents(q, p) -> np.ndarray:
    """Currents ``j_{x,x+1} = -p_x . (q_{x+1} - q_x)`` for every ``x``."""
    dq = np.roll(q, -1, axis=-2) - q
    return -np.sum(p * dq, axis=-1)


def current(state: ChainState, x: int):
    return currents(state.q, state.p)[..., x % state.N]


def norm_bounds(omega0: float):
    """Constants ``(lo, hi)`` with ``lo |z|^2 <= E <= hi |z|^2``."""
    return 0.5 * min(1.0, omega0**2), 0.5 * max(1.0, omega0**2 + 4.0)


# ---------------------------------------------------------------- fast runner


class _Integrator:
    """Batched propagation with merged rotations and a cached harmonic step.

    The state is kept as ``Z`` with shape ``(B, 2, 2N)``: for each momentum
    component ``c``, ``Z[:, c, :N]`` holds ``q[..., c]`` and ``Z[:, c, N:]``
    holds ``p[..., c]``.
    """

    def __init__(self, params: ChainParams, fmap: MapModel, b: Observable):
        self.params = params
        self.b = b
        self.clock = FieldClock(fmap)
        self.h = params.eps / params.substeps
        self.scale = math.sqrt(params.eps)  # eps^{-1/2} * eps
        N = params.N
        self.dense = N <= DENSE_MAX_N
        if self.dense:
            self.dP = harmonic_increment_matrix(N, params.omega0, self.h)

    def harmonic(self, Z):
        N = self.params.N
        if self.dense:
            B = Z.shape[0]
            flat = Z.reshape(2 * B, 2 * N)
            return (flat + flat @ self.dP).reshape(Z.shape)
        q, p = harmonic_flow_arrays(Z[..., :N], Z[..., N:], self.params.omega0, self.h, axis=-1)
        return np.concatenate([q, p], axis=-1)

    def rotate(self, Z, angle):
        N = self.params.N
        c, s = np.cos(angle), np.sin(angle)
        p0 = Z[:, 0, N:]
        p1 = Z[:, 1, N:]
        n0 = c * p0 - s * p1
        n1 = s * p0 + c * p1
        Z[:, 0, N:] = n0
        Z[:, 1, N:] = n1

    def evolve(self, Z, theta, window, streams, n_intervals, pending):
        """Advance ``n_intervals``; ``pending`` is a half rotation not yet applied."""
        M = self.params.substeps
        done = 0
        while done < n_intervals:
            chunk = min(DIGIT_BLOCK, n_intervals - done)
            digits = None
            if self.clock.exact:
                digits = np.stack([s.take(chunk) for s in streams], axis=1)
            for k in range(chunk):
                full = -self.scale * self.b(theta) / M
                self.rotate(Z, pending + 0.5 * full)
                Z = self.harmonic(Z)
                for _ in range(M - 1):
                    self.rotate(Z, full)
                    Z = self.harmonic(Z)
                pending = 0.5 * full
                theta, window = self.clock.advance(theta, window, None if digits is None else digits[k])
            done += chunk
        return Z, theta, window, pending


def _pack(state: ChainState) -> np.ndarray:
    # (B, N, 2) -> (B, 2, 2N)
    return np.concatenate([state.q.transpose(0, 2, 1), state.p.transpose(0, 2, 1)], axis=-1)


def _unpack(Z, N):
    return Z[..., :N].transpose(0, 2, 1), Z[..., N:].transpose(0, 2, 1)


@dataclass
class _BatchStats:
    count: int
    mean: np.ndarray  # (T, N)
    m2: np.ndarray  # (T, N)
    cov_sums: Optional[np.ndarray] = None  # (T, 3, N, N): q.q, q.p, p.p

    def merge(self, other: "_BatchStats") -> "_BatchStats":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        cov = None
        if self.cov_sums is not None:
            cov = self.cov_sums + other.cov_sums
        return _BatchStats(n, mean, m2, cov)


def advance(state: ChainState, params: ChainParams, fmap: MapModel, b: Observable, n_intervals: int) -> ChainState:
    """Advance ``n_intervals`` eps-intervals with the fast batched integrator.

    Equivalent to repeated :func:`step_interval` up to roundoff; adjacent half
    rotations are merged and small rings use a dense harmonic propagator.
    """
    _check_alignment(state, params.eps)
    single = not state.batched
    s = state.copy()
    if single:
        s.q, s.p, s.theta = s.q[None], s.p[None], s.theta[None]
        s.window = None if s.window is None else s.window[None]
    if FieldClock(fmap).exact and s.window is None:
        raise ValueError("linear maps require the exact field clock; build the state with init_state")
    integ = _Integrator(params, fmap, b)
    Z = _pack(s)
    Z, theta, window, pending = integ.evolve(Z, s.theta, s.window, s.streams, n_intervals, np.zeros_like(s.theta))
    integ.rotate(Z, pending)
    q, p = _unpack(Z, params.N)
    s.q, s.p, s.theta, s.window = np.ascontiguousarray(q), np.ascontiguousarray(p), theta, window
    if single:
        s.q, s.p, s.theta = s.q[0], s.p[0], s.theta[0]
        s.window = None if window is None else window[0]
    s.field_index = state.field_index + n_intervals
    s.t_micro = s.field_index * params.eps
    return s


def _run_batch(args):
    params, fmap, b, temps, seed, ids, out_intervals, covariance = args
    state = init_ensemble(params, temps, seed, ids, fmap)
    integ = _Integrator(params, fmap, b)
    Z = _pack(state)
    theta, window = state.theta, state.window
    pending = np.zeros_like(theta)
    N = params.N
    T = len(out_intervals)
    mean = np.empty((T, N))
    m2 = np.empty((T, N))
    cov = np.empty((T, 3, N, N)) if covariance else None
    done = 0
    for i, target in enumerate(out_intervals):
        Z, theta, window, pending = integ.evolve(Z, theta, window, state.streams, target - done, pending)
        done = target
        snap = Z.copy()
        integ.rotate(snap, pending)
        q, p = _unpack(snap, N)
        e = site_energies(q, p, params.omega0)
        mean[i] = e.mean(axis=0)
        m2[i] = ((e - mean[i]) ** 2).sum(axis=0)
        if covariance:
            cov[i, 0] = np.einsum("bxc,byc->xy", q, q)
            cov[i, 1] = np.einsum("bxc,byc->xy", q, p)
            cov[i, 2] = np.einsum("bxc,byc->xy", p, p)
    return _BatchStats(len(ids), mean, m2, cov)


@dataclass
class EnsembleResult:
    """Ensemble-mean site energies at the requested output times.

    Attributes
    ----------
    t_macro : ndarray
        Output times after rounding to the eps-grid.
    t_macro_requested : ndarray
    intervals : ndarray
        Number of eps-intervals to each output.
    mean, stderr : ndarray, shape (T, N)
    covariance : list of CovMatrix or None
        Empirical second moments, averaged over the ensemble.
    """

    t_macro: np.ndarray
    t_macro_requested: np.ndarray
    t_micro: np.ndarray
    intervals: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    ensemble_size: int
    substeps_per_trajectory: int
    covariance: Optional[list] = None

    @property
    def rounding(self) -> np.ndarray:
        return self.t_macro - self.t_macro_requested

    def profiles(self):
        return [EnergyProfile(self.mean[i], float(self.t_macro[i])) for i in range(len(self.t_macro))]


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def output_intervals(params: ChainParams, t_macro_grid) -> np.ndarray:
    t = np.asarray(t_macro_grid, dtype=float)
    if np.any(t < 0):
        raise ValueError("output times must be non-negative")
    return np.rint(t * params.N**2 / params.eps).astype(np.int64)


def run(
    params: ChainParams,
    fmap: MapModel,
    b: Observable,
    T0,
    t_macro_grid: Sequence[float],
    ensemble_size: int,
    seed: int,
    *,
    budget: Optional[int] = None,
    covariance: bool = False,
    batch_size: int = DEFAULT_BATCH,
    workers: Optional[int] = None,
) -> EnsembleResult:
    """Run an ensemble and return mean site energies at macroscopic times.

    Trajectory ``i`` is seeded by ``(seed, i)`` and batches are reduced in
    index order, so results are bitwise independent of ``workers`` (which
    defaults to the ``MAGCHAIN_WORKERS`` environment variable).

    Raises
    ------
    BudgetExceeded
        If the per-trajectory substep count exceeds ``budget``.
    """
    if ensemble_size < 1:
        raise ValueError("ensemble_size must be at least 1")
    req = np.asarray(t_macro_grid, dtype=float)
    intervals = output_intervals(params, req)
    if np.any(np.diff(intervals) < 0):
        raise ValueError("output times must be non-decreasing")
    steps = int(intervals.max(initial=0)) * params.substeps
    if budget is not None and steps > budget:
        raise BudgetExceeded(steps, int(budget))
    temps = _site_temperatures(T0, params.N)
    batches = [
        (params, fmap, b, temps, seed, list(range(s, min(s + batch_size, ensemble_size))), list(intervals), covariance)
        for s in range(0, ensemble_size, batch_size)
    ]
    nw = min(resolve_workers(workers), len(batches))
    if nw > 1:
        with ProcessPoolExecutor(max_workers=nw) as ex:
            results = list(ex.map(_run_batch, batches))
    else:
        results = [_run_batch(a) for a in batches]
    acc = results[0]
    for r in results[1:]:
        acc = acc.merge(r)
    n = acc.count
    stderr = np.sqrt(acc.m2 / max(n - 1, 1) / n) if n > 1 else np.zeros_like(acc.mean)
    cov = None
    if covariance:
        from .stochastic import CovMatrix

        cov = [CovMatrix(c[0] / n, c[1] / n, c[2] / n) for c in acc.cov_sums]
    t_micro = intervals * params.eps
    return EnsembleResult(
        t_macro=t_micro / params.N**2,
        t_macro_requested=req,
        t_micro=t_micro,
        intervals=intervals,
        mean=acc.mean,
        stderr=stderr,
        ensemble_size=n,
        substeps_per_trajectory=steps,
        covariance=cov,
    )
