"""Expanding circle maps, their transfer operator and correlation statistics.

The fast field is driven by maps of the form

    f(theta) = d * theta + sum_m a_m sin(2 pi m theta)  (mod 1),

whose lift ``F`` satisfies ``F(x + 1) = F(x) + d`` and ``F(0) = 0``.  Densities
live on a uniform periodic grid.  Correlations are computed by pushing the
signed density ``b * rho`` forward with the transfer operator rather than by
sampling ``b o f^k`` on the grid, which would alias once ``d^k`` exceeds the grid
resolution.
"""

from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "MapModel",
    "Observable",
    "DensityGrid",
    "BranchInversionError",
    "map_eval",
    "map_deriv",
    "inverse_branches",
    "transfer_apply",
    "invariant_density",
    "center_observable",
    "autocorrelation",
    "correlations",
    "green_kubo_gamma",
    "birkhoff_variance",
    "decay_rate",
    "decay_fit",
    "periodic_orbit_certificate",
]

NEWTON_TOL = 1e-13
NEWTON_MAXITER = 50
DEFAULT_GRID = 4096


class BranchInversionError(RuntimeError):
    """Newton iteration on a monotone branch of the lift failed to converge."""


def _wrap(x):
    y = np.mod(x, 1.0)
    # np.mod can return exactly 1.0 for tiny negative inputs
    return np.where(y >= 1.0, 0.0, y)


@dataclass(frozen=True)
class MapModel:
    """Degree-``d`` expanding circle map with a finite sine perturbation.

    Parameters
    ----------
    degree : int
        Topological degree ``d >= 2``.
    perturbation : sequence of (amplitude, harmonic)
        Terms ``a_m sin(2 pi m theta)`` added to ``d * theta``.
    expansion_floor : float, optional
        Certified lower bound ``lambda`` on ``f'``.  Defaults to the analytic
        bound ``d - sum 2 pi m |a_m|``; an explicit value must not exceed it.
    """

    degree: int = 2
    perturbation: tuple = ()
    expansion_floor: Optional[float] = None

    def __post_init__(self):
        d = int(self.degree)
        if d != self.degree or d < 2:
            raise ValueError("degree must be an integer >= 2")
        pert = tuple((float(a), int(m)) for a, m in self.perturbation)
        if any(m < 1 for _, m in pert):
            raise ValueError("harmonics must be positive integers")
        object.__setattr__(self, "perturbation", pert)
        analytic = d - sum(2 * math.pi * m * abs(a) for a, m in pert)
        lam = analytic if self.expansion_floor is None else float(self.expansion_floor)
        if not lam > 1.0:
            raise ValueError(f"expansion floor {lam:.6g} must exceed 1")
        if lam > analytic + 1e-12:
            raise ValueError(f"expansion floor {lam:.6g} exceeds the analytic bound {analytic:.6g}")
        grid = np.arange(8192) / 8192
        if self.deriv(grid).min() < lam - 1e-12:
            raise ValueError("map derivative falls below the expansion floor on the check grid")
        object.__setattr__(self, "expansion_floor", lam)

    @property
    def is_linear(self) -> bool:
        return all(a == 0.0 for a, _ in self.perturbation)

    def lift(self, x):
        """Lift ``F`` on the real line."""
        x = np.asarray(x, dtype=float)
        out = self.degree * x
        for a, m in self.perturbation:
            out = out + a * np.sin(2 * np.pi * m * x)
        return out

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, float(self.degree))
        for a, m in self.perturbation:
            out = out + 2 * np.pi * m * a * np.cos(2 * np.pi * m * x)
        return out

    def __call__(self, theta):
        return _wrap(self.lift(theta))

    @property
    def sup_amplitude(self) -> float:
        return sum(abs(a) for a, _ in self.perturbation)

    @property
    def distortion(self) -> float:
        """Bound on ``|f''| / (f')^2``, the constant governing cone invariance."""
        f2 = sum((2 * np.pi * m) ** 2 * abs(a) for a, m in self.perturbation)
        return f2 / self.expansion_floor**2


def map_eval(fmap: MapModel, theta):
    """``f(theta)`` in ``[0, 1)``."""
    return fmap(theta)


def map_deriv(fmap: MapModel, theta):
    return fmap.deriv(theta)


def _solve_lift(fmap: MapModel, target: np.ndarray) -> np.ndarray:
    """Solve ``F(y) = target`` for each entry by bracketed Newton."""
    d = fmap.degree
    A = fmap.sup_amplitude
    lo = (target - A) / d
    hi = (target + A) / d
    y = target / d
    for _ in range(NEWTON_MAXITER):
        r = fmap.lift(y) - target
        if np.all(np.abs(r) <= NEWTON_TOL):
            return y
        hi = np.where(r > 0, y, hi)
        lo = np.where(r < 0, y, lo)
        step = y - r / fmap.deriv(y)
        outside = (step <= lo) | (step >= hi)
        y = np.where(outside, 0.5 * (lo + hi), step)
    r = fmap.lift(y) - target
    if np.all(np.abs(r) <= NEWTON_TOL):
        return y
    raise BranchInversionError(
        f"branch inversion did not converge (max residual {np.abs(r).max():.3e})"
    )


def inverse_branches(fmap: MapModel, theta):
    """All ``d`` preimages of ``theta`` with their derivatives.

    Returns
    -------
    points, derivs : ndarray, shape ``theta.shape + (d,)``
        Preimages sorted ascending in ``[0, 1)`` and ``f'`` at each of them.
    """
    theta = _wrap(np.asarray(theta, dtype=float))
    targets = theta[..., None] + np.arange(fmap.degree)
    y = _wrap(_solve_lift(fmap, targets))
    y = np.sort(y, axis=-1)
    return y, fmap.deriv(y)


@functools.lru_cache(maxsize=32)
def _grid_preimages(fmap: MapModel, M: int):
    y, dy = inverse_branches(fmap, np.arange(M) / M)
    y.setflags(write=False)
    w = 1.0 / dy
    w.setflags(write=False)
    return y, w


@dataclass(frozen=True)
class Observable:
    """Trigonometric-polynomial observable, optionally plus a coboundary term.

    ``b(theta) = const + sum_m cos[m-1] cos(2 pi m theta) + sin[m-1] sin(2 pi m theta)
    + zeta(theta) - zeta(f(theta))`` where the last two terms are present only
    when ``zeta`` and ``zeta_map`` are given.
    """

    const: float = 0.0
    cos: tuple = ()
    sin: tuple = ()
    centered: bool = False
    zeta: Optional["Observable"] = None
    zeta_map: Optional[MapModel] = None

    def __post_init__(self):
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos))
        object.__setattr__(self, "sin", tuple(float(s) for s in self.sin))
        if (self.zeta is None) != (self.zeta_map is None):
            raise ValueError("zeta and zeta_map must be given together")

    @classmethod
    def coboundary(cls, zeta: "Observable", fmap: MapModel) -> "Observable":
        """``zeta - zeta o f``; identically zero mean for any invariant measure."""
        z = replace(zeta, const=0.0, centered=False)
        return cls(zeta=z, zeta_map=fmap, centered=True)

    @property
    def is_zero(self) -> bool:
        trig_zero = self.const == 0 and not any(self.cos) and not any(self.sin)
        return trig_zero and (self.zeta is None or self.zeta.is_zero)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        val = np.full(theta.shape, float(self.const))
        for m, c in enumerate(self.cos, start=1):
            if c:
                val = val + c * np.cos(2 * np.pi * m * theta)
        for m, s in enumerate(self.sin, start=1):
            if s:
                val = val + s * np.sin(2 * np.pi * m * theta)
        if self.zeta is not None:
            val = val + self.zeta(theta) - self.zeta(self.zeta_map(theta))
        return val

    def sup_bound(self) -> float:
        """Cheap upper bound on ``sup |b|``."""
        s = abs(self.const) + sum(map(abs, self.cos)) + sum(map(abs, self.sin))
        if self.zeta is not None:
            s += 2 * self.zeta.sup_bound()
        return s

    def shifted(self, delta: float) -> "Observable":
        return replace(self, const=self.const + delta)


@dataclass(frozen=True)
class DensityGrid:
    """Density sampled on ``theta_i = i / M``, integrated by the periodic trapezoid rule."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("density values must be a 1-d array")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.size) / self.size

    def integral(self, weight=None) -> float:
        v = self.values if weight is None else self.values * weight
        return float(np.mean(v))

    def normalized(self) -> "DensityGrid":
        return DensityGrid(self.values / self.integral())

    def log_derivative_bound(self) -> float:
        """``max |rho' / rho|`` from centred finite differences."""
        v = self.values
        if np.any(v <= 0):
            return math.inf
        dv = (np.roll(v, -1) - np.roll(v, 1)) * (self.size / 2.0)
        return float(np.max(np.abs(dv / v)))

    def interpolate(self, y, method: str = "trig") -> np.ndarray:
        """Evaluate the grid function off-grid.

        ``"trig"`` uses the trigonometric interpolant (spectrally accurate for
        smooth data); ``"linear"`` uses periodic piecewise-linear interpolation,
        which preserves positivity exactly.
        """
        y = np.asarray(y, dtype=float)
        if method == "linear":
            return np.interp(y, self.grid, self.values, period=1.0)
        if method != "trig":
            raise ValueError(f"unknown interpolation method {method!r}")
        M = self.size
        c = np.fft.rfft(self.values) / M
        keep = np.abs(c) > 1e-15 * max(np.abs(c).max(), 1e-300)
        keep[0] = True
        k = np.nonzero(keep)[0]
        ck = c[k].copy()
        ck[k > 0] *= 2.0
        if M % 2 == 0:
            # Nyquist term appears once and must be taken as a cosine
            ck[k == M // 2] *= 0.5
        phase = np.exp(2j * np.pi * np.multiply.outer(y, k))
        return (phase @ ck).real

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "rho"])
            for t, r in zip(self.grid, self.values):
                w.writerow([repr(float(t)), repr(float(r))])


def _upsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Trigonometric interpolant sampled on a grid ``factor`` times finer."""
    M = values.size
    c = np.fft.rfft(values)
    if M % 2 == 0:
        c[-1] *= 0.5
    return np.fft.irfft(c, n=factor * M) * factor


def transfer_apply(fmap: MapModel, rho: DensityGrid, method: str = "trig") -> DensityGrid:
    """Transfer operator ``(L rho)(theta) = sum_{f(y) = theta} rho(y) / f'(y)``."""
    M = rho.size
    if M < 64:
        raise ValueError("transfer operator requires at least 64 grid points")
    if fmap.is_linear:
        # preimages (i + k M) / (d M) sit on a refinement of the grid
        d = fmap.degree
        if method == "trig":
            fine = _upsample(rho.values, d)
        else:
            fine = rho.interpolate(np.arange(d * M) / (d * M), method)
        return DensityGrid(fine.reshape(d, M).sum(axis=0) / d)
    y, w = _grid_preimages(fmap, M)
    return DensityGrid((rho.interpolate(y, method) * w).sum(axis=1))


def invariant_density(
    fmap: MapModel,
    grid_size: int = DEFAULT_GRID,
    tol: float = 1e-13,
    max_iter: int = 1000,
    method: str = "trig",
) -> DensityGrid:
    """Fixed point of the transfer operator reached by power iteration from ``rho = 1``."""
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    rho = DensityGrid(np.ones(grid_size))
    if fmap.is_linear:
        return rho
    for _ in range(max_iter):
        new = transfer_apply(fmap, rho, method).normalized()
        change = np.max(np.abs(new.values - rho.values))
        rho = new
        if change <= tol:
            if np.any(rho.values <= 0):
                raise RuntimeError("invariant density is not strictly positive")
            return rho
    raise RuntimeError(f"invariant density did not converge in {max_iter} iterations (change {change:.3e})")


def center_observable(b: Observable, rho: DensityGrid) -> Observable:
    """Subtract ``int b rho`` from the constant term and mark ``b`` centred."""
    mean = rho.integral(b(rho.grid))
    out = b.shifted(-mean)
    return replace(out, centered=True)


def _require_centered(b: Observable, rho: DensityGrid, tol: float = 1e-10):
    if not b.centered:
        mean = rho.integral(b(rho.grid))
        if abs(mean) > tol * max(1.0, b.sup_bound()):
            raise ValueError(f"observable is not centred (mean {mean:.3e})")


def correlations(fmap: MapModel, b: Observable, rho: DensityGrid, kmax: int, method: str = "trig") -> np.ndarray:
    """``C(k) = int b (b o f^k) rho`` for ``k = 0..kmax`` via ``int b L^k(b rho)``."""
    bv = b(rho.grid)
    g = DensityGrid(bv * rho.values)
    out = np.empty(kmax + 1)
    for k in range(kmax + 1):
        if k:
            g = transfer_apply(fmap, g, method)
        out[k] = np.mean(bv * g.values)
    return out


def autocorrelation(fmap: MapModel, b: Observable, rho: DensityGrid, k: int) -> float:
    """Correlation ``int b(theta) b(f^k theta) rho(theta) dtheta``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    _require_centered(b, rho)
    return float(correlations(fmap, b, rho, k)[k])


@dataclass(frozen=True)
class DecayFit:
    nu: float
    amplitude: float
    residual: float
    fallback: bool


def decay_fit(fmap: MapModel, b: Observable, rho: DensityGrid, kmax: int = 40, corr=None) -> DecayFit:
    """Exponential fit ``|C(k)| ~ A nu^k``; falls back to ``nu = 1 / lambda``."""
    C = correlations(fmap, b, rho, kmax) if corr is None else np.asarray(corr)
    c0 = abs(C[0])
    floor = 1e-13 * max(c0, 1e-300)
    k = np.arange(1, C.size)
    ok = np.abs(C[1:]) > floor
    if c0 == 0 or ok.sum() < 5:
        nu = 1.0 / fmap.expansion_floor
        return DecayFit(nu, c0, 0.0, True)
    kk, yy = k[ok], np.log(np.abs(C[1:][ok]))
    slope, intercept = np.polyfit(kk, yy, 1)
    resid = float(np.sqrt(np.mean((yy - (slope * kk + intercept)) ** 2)))
    nu = float(np.clip(np.exp(slope), 1e-6, 1 - 1e-6))
    amp = max(c0, float(np.max(np.abs(C[1:][ok]) / nu ** kk)))
    return DecayFit(nu, amp, resid, False)


def decay_rate(fmap: MapModel, b: Observable, rho: DensityGrid) -> float:
    """Estimated correlation decay rate ``nu`` in ``(0, 1)`` (tail-bound tool only)."""
    return decay_fit(fmap, b, rho).nu


def green_kubo_gamma(
    fmap: MapModel,
    b: Observable,
    rho: DensityGrid,
    K: Optional[int] = None,
    target: float = 1e-12,
    K_cap: int = 400,
):
    """Green-Kubo sum ``gamma = C(0) + 2 sum_{k=1}^K C(k)`` with a tail bound.

    If ``K`` is omitted it is chosen so that ``nu^K <= target`` for the fitted
    decay rate.

    Returns
    -------
    gamma : float
    tail_bound : float
    """
    _require_centered(b, rho)
    if b.is_zero:
        return 0.0, 0.0
    fit = decay_fit(fmap, b, rho)
    if K is None:
        K = min(K_cap, max(1, math.ceil(math.log(target) / math.log(fit.nu))))
    if K < 1:
        raise ValueError("K must be at least 1")
    C = correlations(fmap, b, rho, K)
    gamma = float(C[0] + 2.0 * C[1:].sum())
    tail = 2.0 * fit.amplitude * fit.nu ** (K + 1) / (1.0 - fit.nu)
    predicted = fit.amplitude * fit.nu**K
    if abs(C[K]) > 10 * predicted and abs(C[K]) > 1e-14:
        warnings.warn(
            f"|C({K})| = {abs(C[K]):.3e} exceeds the decay model prediction {predicted:.3e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return gamma, float(tail)


def birkhoff_variance(
    fmap: MapModel,
    b: Observable,
    rho: DensityGrid,
    n: int,
    method: str = "transfer",
    quad_points: int = 1 << 16,
) -> float:
    """``|| n^{-1/2} sum_{k<n} b o f^k ||^2`` in ``L^2(rho)``.

    ``method="transfer"`` expands the square into the weighted correlation sum
    ``C(0) + 2 sum_l (1 - l/n) C(l)``.  ``method="quadrature"`` integrates the
    squared Birkhoff sum directly on a fine grid and is only reliable while
    ``d^n`` stays well below ``quad_points``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    _require_centered(b, rho)
    if method == "transfer":
        C = correlations(fmap, b, rho, n - 1)
        w = 1.0 - np.arange(n) / n
        return max(0.0, float(C[0] + 2.0 * np.dot(w[1:], C[1:])))
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    theta = np.arange(quad_points) / quad_points
    r = rho.interpolate(theta)
    s = np.zeros_like(theta)
    x = theta.copy()
    for _ in range(n):
        s += b(x)
        x = fmap(x)
    return float(np.mean(s * s * r) / n)


def _period_points(fmap: MapModel, p: int) -> np.ndarray:
    """All solutions of ``f^p(y) = y`` in ``[0, 1)`` by bisection on ``F^p(y) - y``."""

    def G(y):
        x = y
        for _ in range(p):
            x = fmap.lift(x)
        return x - y

    j = np.arange(fmap.degree**p - 1, dtype=float)
    lo = np.zeros_like(j)
    hi = np.ones_like(j)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        up = G(mid) > j
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo < 1e-16):
            break
    return 0.5 * (lo + hi)


def _circle_dist(a, b):
    d = np.abs(a - b) % 1.0
    return np.minimum(d, 1.0 - d)


def periodic_orbit_certificate(fmap: MapModel, b: Observable, p_max: int = 6, tol: float = 1e-6):
    """First periodic orbit with a non-vanishing Birkhoff sum of ``b``.

    A nonzero orbit sum rules out ``b`` being a continuous coboundary, which for
    these maps is equivalent to ``gamma > 0``.

    Returns
    -------
    None or (period, orbit, orbit_sum)
    """
    if not 1 <= p_max <= 12:
        raise ValueError("p_max must lie in 1..12")
    for p in range(1, p_max + 1):
        pts = _period_points(fmap, p)
        seen = np.zeros(pts.size, dtype=bool)
        for i in range(pts.size):
            if seen[i]:
                continue
            orbit = [pts[i]]
            x = fmap(pts[i])
            while _circle_dist(x, pts[i]) > 1e-9 and len(orbit) <= p:
                orbit.append(x)
                x = fmap(x)
            for y in orbit:
                seen |= _circle_dist(pts, y) < 1e-9
            if len(orbit) != p:
                continue  # lower period, already examined
            s = float(np.sum(b(np.array(orbit))))
            if abs(s) > tol:
                return p, tuple(float(y) for y in orbit), s
    return None
