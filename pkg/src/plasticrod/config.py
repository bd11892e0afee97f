"""Run configurations for the command-line interface.

Every config is a tree of frozen dataclasses. :func:`from_dict` fills defaults,
checks types and unknown keys (reporting dotted field paths), and each
dataclass contributes its own cross-field checks through ``problems()``.
All violations are collected before :class:`ConfigError` is raised.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from dataclasses import dataclass, field

from .errors import ConfigError

MU_DEFAULT = 4.0 * math.pi


# ---------------------------------------------------------------------------
# load schedules and densities (picklable callables)


@dataclass(frozen=True)
class ScheduleSpec:
    """``beta(t) = scale * t**exponent``."""

    scale: float = 1.0
    exponent: float = 1.0

    def problems(self, path):
        out = []
        if not self.scale >= 0:
            out.append(f"{path}.scale: load scale must be non-negative")
        if not self.exponent > 0:
            out.append(f"{path}.exponent: exponent must be positive so that beta(0) = 0")
        return out

    def __call__(self, t):
        return self.scale * float(t) ** self.exponent if t > 0 else 0.0

    def rate(self, t):
        if t <= 0:
            return self.scale if self.exponent == 1.0 else (0.0 if self.exponent > 1 else math.inf)
        return self.scale * self.exponent * float(t) ** (self.exponent - 1.0)


@dataclass(frozen=True)
class DensitySpec:
    """Load density ``f(x) = sum_k coefficients[k] x**k`` on ``[0, 1]``."""

    coefficients: tuple = (1.0,)

    def problems(self, path):
        import numpy as np

        if len(self.coefficients) == 0:
            return [f"{path}.coefficients: at least one coefficient is required"]
        x = np.linspace(0.0, 1.0, 2001)[:-1]
        if np.any(self(x) <= 0):
            return [f"{path}.coefficients: density must be positive on [0, 1)"]
        return []

    def __call__(self, x):
        import numpy as np

        x = np.asarray(x, dtype=float)
        return np.polynomial.polynomial.polyval(x, np.asarray(self.coefficients, dtype=float)) + 0.0 * x


# ---------------------------------------------------------------------------
# building blocks


@dataclass(frozen=True)
class SectionSpec:
    kind: str = "disc"
    refinement: int = 4
    width: float = 1.0
    height: float = 1.0
    nx: int = 8
    ny: int = 8

    def problems(self, path):
        out = []
        if self.kind not in ("disc", "rect"):
            out.append(f"{path}.kind: must be 'disc' or 'rect'")
        if self.refinement < 0:
            out.append(f"{path}.refinement: must be >= 0")
        if not (self.width > 0 and self.height > 0):
            out.append(f"{path}: width and height must be positive")
        if self.nx < 1 or self.ny < 1:
            out.append(f"{path}: nx and ny must be >= 1")
        return out


@dataclass(frozen=True)
class ElasticSpec:
    mu: float = MU_DEFAULT
    lam: float = 0.0

    def problems(self, path):
        out = []
        if not self.mu > 0:
            out.append(f"{path}.mu: shear modulus must be positive")
        if not 2 * self.mu + 3 * self.lam > 0:
            out.append(f"{path}.lam: need 2 mu + 3 lam > 0 for coercivity")
        return out


@dataclass(frozen=True)
class RodMaterialSpec:
    mu: float = MU_DEFAULT
    lam: float = 0.0
    rho: float | None = None  # defaults to mu
    delta: float = 1.0

    @property
    def rho_value(self):
        return self.mu if self.rho is None else self.rho

    def problems(self, path):
        out = ElasticSpec.problems(self, path)
        if not self.rho_value > 0:
            out.append(f"{path}.rho: hardening modulus must be positive")
        if not self.delta >= 0:
            out.append(f"{path}.delta: dissipation strength must be non-negative")
        return out


@dataclass(frozen=True)
class LoadSpec:
    kind: str = "vertical"
    beta: ScheduleSpec = field(default_factory=ScheduleSpec)
    f: DensitySpec = field(default_factory=DensitySpec)

    def problems(self, path):
        if self.kind not in ("vertical", "zero"):
            return [f"{path}.kind: must be 'vertical' or 'zero'"]
        return []


@dataclass(frozen=True)
class TimeSpec:
    dt: float = 0.1
    t_end: float | None = 1.0
    t_start: float = 0.0

    def problems(self, path):
        out = []
        if not self.dt > 0:
            out.append(f"{path}.dt: must be positive")
        if not self.t_start >= 0:
            out.append(f"{path}.t_start: must be non-negative")
        if self.t_end is not None and not self.t_end > self.t_start:
            out.append(f"{path}.t_end: must exceed t_start")
        return out

    def partition(self, t_end=None):
        import numpy as np

        t_end = self.t_end if t_end is None else t_end
        n = int(math.floor((t_end - self.t_start) / self.dt + 1e-9))
        return self.t_start + self.dt * np.arange(n + 1)


@dataclass(frozen=True)
class SolverSpec:
    max_sweeps: int = 200
    sweep_tol: float = 1e-10
    elastic_tol: float = 1e-8
    stability_competitors: int = 8
    stability_amplitude: float = 1e-3
    certify: bool = True

    def problems(self, path):
        out = []
        if self.max_sweeps < 1:
            out.append(f"{path}.max_sweeps: must be >= 1")
        if not self.sweep_tol > 0:
            out.append(f"{path}.sweep_tol: must be positive")
        if not self.elastic_tol > 0:
            out.append(f"{path}.elastic_tol: must be positive")
        if self.stability_competitors < 0:
            out.append(f"{path}.stability_competitors: must be >= 0")
        if not self.stability_amplitude >= 0:
            out.append(f"{path}.stability_amplitude: must be non-negative")
        return out


# ---------------------------------------------------------------------------
# subcommand configs


@dataclass(frozen=True)
class EffectiveConfig:
    section: SectionSpec = field(default_factory=SectionSpec)
    material: ElasticSpec = field(default_factory=ElasticSpec)
    refinements: tuple = (0, 1, 2, 3, 4)

    def problems(self, path=""):
        if not self.refinements or any((not isinstance(r, int)) or r < 0 for r in self.refinements):
            return ["refinements: non-empty list of integers >= 0 required"]
        return []


@dataclass(frozen=True)
class RodSpec:
    length: float = 1.0
    n_intervals: int = 16

    def problems(self, path):
        out = []
        if not self.length > 0:
            out.append(f"{path}.length: must be positive")
        if self.n_intervals < 2:
            out.append(f"{path}.n_intervals: must be >= 2")
        return out


@dataclass(frozen=True)
class SolveConfig:
    section: SectionSpec = field(default_factory=lambda: SectionSpec(refinement=1))
    material: RodMaterialSpec = field(default_factory=RodMaterialSpec)
    rod: RodSpec = field(default_factory=RodSpec)
    load: LoadSpec = field(default_factory=LoadSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    plastic_components: str = "planar"
    solver: SolverSpec = field(default_factory=SolverSpec)
    seed: int = 0

    def problems(self, path=""):
        out = []
        if self.plastic_components not in ("planar", "all"):
            out.append("plastic_components: must be 'planar' or 'all'")
        if self.time.t_end is None:
            out.append("time.t_end: required for solve")
        if self.seed < 0:
            out.append("seed: must be >= 0")
        return out


@dataclass(frozen=True)
class PlanarGridSpec:
    n_intervals: int = 64
    refinement: int = 1
    elastic_intervals: int = 1024

    def problems(self, path):
        out = []
        if self.n_intervals < 2:
            out.append(f"{path}.n_intervals: must be >= 2")
        if self.refinement < 0:
            out.append(f"{path}.refinement: must be >= 0")
        if self.elastic_intervals < 2:
            out.append(f"{path}.elastic_intervals: must be >= 2")
        return out


@dataclass(frozen=True)
class PlanarRunConfig:
    material: RodMaterialSpec = field(default_factory=RodMaterialSpec)
    load: LoadSpec = field(default_factory=LoadSpec)
    grid: PlanarGridSpec = field(default_factory=PlanarGridSpec)
    time: TimeSpec = field(default_factory=lambda: TimeSpec(dt=0.01, t_end=None))
    deflection_times: tuple = (0.5, 1.0, 2.0, 5.0, 10.0)
    convexified: bool = False
    solver: SolverSpec = field(default_factory=lambda: SolverSpec(certify=False))
    seed: int = 0

    def problems(self, path=""):
        out = []
        if self.load.kind != "vertical":
            out.append("load.kind: the planar example needs a vertical load")
        if any(not t >= 0 for t in self.deflection_times):
            out.append("deflection_times: times must be non-negative")
        return out


@dataclass(frozen=True)
class GammaGridSpec:
    n1: int = 64
    n_r: int = 16
    n_theta: int = 16
    length: float = 1.0

    def problems(self, path):
        out = []
        if self.n1 < 3 or self.n_r < 3 or self.n_theta < 4:
            out.append(f"{path}: need n1 >= 3, n_r >= 3, n_theta >= 4")
        if not self.length > 0:
            out.append(f"{path}.length: must be positive")
        return out


@dataclass(frozen=True)
class Material3DSpec:
    mu: float = MU_DEFAULT
    rho: float | None = None
    delta: float = 1.0
    r: float = 0.5
    p: float = 4.0
    alpha_C: float = 0.4
    alpha_R: float = 0.3
    scaled_gradient: bool = False

    @property
    def rho_value(self):
        return self.mu if self.rho is None else self.rho

    def problems(self, path):
        out = []
        if not self.mu > 0:
            out.append(f"{path}.mu: shear modulus must be positive")
        if not self.rho_value > 0:
            out.append(f"{path}.rho: hardening modulus must be positive")
        if not self.delta >= 0:
            out.append(f"{path}.delta: dissipation strength must be non-negative")
        if not 0 < self.r < 1:
            out.append(f"{path}.r: plastic log-ball radius must lie in (0, 1)")
        if not self.p > 3:
            out.append(f"{path}.p: strain-gradient exponent must exceed 3")
        if not (0 < self.alpha_C < 1):
            out.append(f"{path}.alpha_C: must lie in (0, 1)")
        if not (0 < self.alpha_R < 1):
            out.append(f"{path}.alpha_R: must lie in (0, 1)")
        bound = (2.0 / 3.0) * (1.0 - self.alpha_C)
        if 0 < self.alpha_C < 1 and not self.alpha_R < bound:
            out.append(
                f"{path}.alpha_R: strain-gradient scalings need alpha_R < (2/3)(1 - alpha_C) = {bound:.6g}"
                f" (got {self.alpha_R})"
            )
        return out


def _is_matrix(m):
    return (
        isinstance(m, (list, tuple))
        and len(m) == 3
        and all(isinstance(r, (list, tuple)) and len(r) == 3 for r in m)
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for r in m for v in r)
    )


@dataclass(frozen=True)
class GammaConfig:
    material: Material3DSpec = field(default_factory=Material3DSpec)
    curvature: tuple = (0.0, 0.5 * math.sqrt(2.0), 0.0)
    plastic: dict = field(default_factory=dict)  # optional "Z0", "Z2", "Z3" 3x3 matrices
    increment: tuple | None = None  # 3x3 deviatoric matrix
    h_list: tuple = (0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625)
    grid: GammaGridSpec = field(default_factory=GammaGridSpec)

    def problems(self, path=""):
        out = []
        if len(self.curvature) != 3:
            out.append("curvature: three skew coefficients required")
        for key, m in self.plastic.items():
            if key not in ("Z0", "Z2", "Z3"):
                out.append(f"plastic.{key}: unknown profile term (use Z0, Z2, Z3)")
            elif not _is_matrix(m):
                out.append(f"plastic.{key}: must be a 3x3 matrix")
        if self.increment is not None:
            m = self.increment
            if not _is_matrix(m):
                out.append("increment: must be a 3x3 matrix")
            else:
                asym = max(abs(m[i][j] - m[j][i]) for i in range(3) for j in range(3))
                if asym > 1e-12 or abs(m[0][0] + m[1][1] + m[2][2]) > 1e-12:
                    out.append("increment: must be symmetric and trace-free")
        hs = list(self.h_list)
        if not hs or any(not h > 0 for h in hs):
            out.append("h_list: positive thicknesses required")
        elif any(b >= a for a, b in zip(hs, hs[1:])):
            out.append("h_list: must be strictly decreasing")
        return out


CONFIG_TYPES = {
    "effective": EffectiveConfig,
    "solve": SolveConfig,
    "planar": PlanarRunConfig,
    "gamma": GammaConfig,
}


# ---------------------------------------------------------------------------
# generic dict -> dataclass conversion


def _as_tuple(v):
    return tuple(_as_tuple(x) for x in v) if isinstance(v, (list, tuple)) else v


def _convert(value, tp, path, errors):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], path, errors)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            errors.append(f"{path}: expected an object")
            return None
        return _build(tp, value, path, errors)
    if tp is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number")
            return value
        if not math.isfinite(value):
            errors.append(f"{path}: must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            errors.append(f"{path}: expected a string")
        return value
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            errors.append(f"{path}: expected a list")
            return value
        return _as_tuple(value)
    if tp is dict:
        if not isinstance(value, dict):
            errors.append(f"{path}: expected an object")
        return value
    return value


def _build(cls, doc, path, errors):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    n_before = len(errors)
    unknown = [f"{path + '.' if path else ''}{key}: unknown field" for key in doc if key not in names]
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in doc:
            sub = f"{path + '.' if path else ''}{f.name}"
            kwargs[f.name] = _convert(doc[f.name], hints[f.name], sub, errors)
    try:
        obj = cls(**kwargs)
    except TypeError as exc:  # pragma: no cover - guarded by the checks above
        errors.append(f"{path or '<root>'}: {exc}")
        return None
    # constraint checks only make sense on well-typed fields
    if len(errors) == n_before and hasattr(obj, "problems"):
        errors.extend(obj.problems(path or ""))
    errors.extend(unknown)
    return obj


def config_from_dict(command, doc):
    """Build and validate the config of ``command``; raises ConfigError listing every problem."""
    if command not in CONFIG_TYPES:
        raise ConfigError([f"unknown subcommand {command!r}"])
    if not isinstance(doc, dict):
        raise ConfigError(["<root>: config must be a JSON object"])
    errors = []
    obj = _build(CONFIG_TYPES[command], doc, "", errors)
    if errors:
        raise ConfigError(errors)
    return obj


def config_to_dict(obj):
    """Fully resolved config as plain JSON-compatible data."""

    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v

    return conv(obj)
