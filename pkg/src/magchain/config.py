"""Declarative run configuration read from TOML files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .circle import MapModel, Observable
from .heat import TrigFunction

__all__ = ["ExperimentConfig", "load_config"]


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``gamma_mode`` is ``"computed"`` (Green-Kubo from the map and observable)
    or ``"explicit"``, in which case ``gamma`` is the generator noise strength
    used by the covariance and heat legs.
    """

    seed: int = 0
    map_degree: int = 2
    map_perturbation: list = field(default_factory=list)
    obs_kind: str = "trig"
    obs_const: float = 0.0
    obs_cos: list = field(default_factory=lambda: [1.0])
    obs_sin: list = field(default_factory=list)
    obs_center: bool = True
    N: int = 8
    omega0: float = 1.0
    eps: float = 1e-3
    substeps: int = 1
    gamma_mode: str = "computed"
    gamma: Optional[float] = None
    init_const: float = 1.0
    init_cos: list = field(default_factory=lambda: [1.0])
    init_sin: list = field(default_factory=list)
    t_macro: list = field(default_factory=lambda: [0.0, 0.01])
    ensemble_size: int = 100
    budget: Optional[int] = 10**8
    dt: Optional[float] = None
    kmax: Optional[int] = None
    grid_size: int = 4096
    beta: float = 0.5
    regime_t: float = 0.1
    equipartition_N: list = field(default_factory=lambda: [16, 32, 64, 128])
    equipartition_t: float = 0.05
    compare_tolerance: float = 0.02
    out_dir: str = "out"

    def __post_init__(self):
        if self.gamma_mode not in ("computed", "explicit"):
            raise ValueError("gamma mode must be 'computed' or 'explicit'")
        if self.gamma_mode == "explicit" and (self.gamma is None or self.gamma < 0):
            raise ValueError("explicit gamma mode needs a non-negative value")
        if self.obs_kind not in ("trig", "coboundary"):
            raise ValueError("observable kind must be 'trig' or 'coboundary'")
        if self.N < 1 or self.omega0 <= 0 or self.eps <= 0 or self.substeps < 1:
            raise ValueError("chain parameters out of range")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")

    # ------------------------------------------------------------ builders
    def map_model(self) -> MapModel:
        return MapModel(self.map_degree, tuple((a, m) for a, m in self.map_perturbation))

    def observable(self) -> Observable:
        """Observable before centring."""
        if self.obs_kind == "coboundary":
            zeta = Observable(0.0, tuple(self.obs_cos), tuple(self.obs_sin))
            return Observable.coboundary(zeta, self.map_model())
        return Observable(self.obs_const, tuple(self.obs_cos), tuple(self.obs_sin))

    def initial_profile(self) -> TrigFunction:
        return TrigFunction(self.init_const, tuple(self.init_cos), tuple(self.init_sin))

    # ------------------------------------------------------------ IO
    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        kw = {}
        if "seed" in data:
            kw["seed"] = int(data["seed"])
        m = data.get("map", {})
        _take(kw, m, {"degree": "map_degree", "perturbation": "map_perturbation"})
        o = data.get("observable", {})
        _take(kw, o, {"kind": "obs_kind", "const": "obs_const", "cos": "obs_cos", "sin": "obs_sin", "center": "obs_center"})
        c = data.get("chain", {})
        _take(kw, c, {"N": "N", "omega0": "omega0", "eps": "eps", "substeps": "substeps"})
        g = data.get("gamma", {})
        _take(kw, g, {"mode": "gamma_mode", "value": "gamma"})
        i = data.get("initial", {})
        _take(kw, i, {"const": "init_const", "cos": "init_cos", "sin": "init_sin"})
        r = data.get("run", {})
        _take(
            kw,
            r,
            {
                "t_macro": "t_macro",
                "ensemble_size": "ensemble_size",
                "budget": "budget",
                "dt": "dt",
                "kmax": "kmax",
                "grid_size": "grid_size",
                "compare_tolerance": "compare_tolerance",
            },
        )
        rg = data.get("regimes", {})
        _take(kw, rg, {"beta": "beta", "t": "regime_t"})
        eq = data.get("equipartition", {})
        _take(kw, eq, {"N": "equipartition_N", "t": "equipartition_t"})
        out = data.get("output", {})
        _take(kw, out, {"dir": "out_dir"})
        if kw.get("budget") is not None:
            kw["budget"] = int(kw["budget"])
        return cls(**kw)


def _take(kw, section, mapping):
    unknown = set(section) - set(mapping)
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    for src, dst in mapping.items():
        if src in section:
            kw[dst] = section[src]


def load_config(path) -> ExperimentConfig:
    with open(Path(path), "rb") as fh:
        return ExperimentConfig.from_mapping(tomllib.load(fh))
