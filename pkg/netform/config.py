"""
Experiment configuration.

Text form is ``[section]`` headers with ``key = value`` lines. Values are
Python literals (``n = [33, 33]``, ``dt = 1e-3``), bare words
(``mode = picard``) or preset calls for the data fields
(``source = gaussian(center=0.5, width=0.1, amplitude=1.0)``).
"""

import ast
import configparser
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from netform.coupling import CouplingConfig
from netform.errors import ConfigParseError, ConfigValidationError, DomainError, NetformError
from netform.mesh import Grid, ScalarField, VectorField
from netform.parabolic import PhysParams, ReactionMode

logger = logging.getLogger(__name__)

# Arguments each preset accepts, in positional order
PRESET_ARGS: Dict[str, Tuple[str, ...]] = {
    "zero": (),
    "constant": ("a",),
    "gaussian": ("center", "width", "amplitude", "direction"),
    "bump": ("center", "width", "amplitude"),
    "bump_vector": ("center", "width", "amplitude", "direction"),
    "file": ("path",),
}
DEFAULT_SCALES = [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]


class Preset(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    kwargs: Dict[str, Any] = {}

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in PRESET_ARGS:
            raise ValueError(f"unknown preset {v!r}, expected one of {', '.join(PRESET_ARGS)}")
        return v


def parse_preset(text: str) -> Preset:
    """``name(arg, key=value, ...)`` with literal arguments"""
    try:
        node = ast.parse(text.strip(), mode="eval").body
    except SyntaxError:
        raise ValueError(f"cannot parse preset {text!r}")
    if isinstance(node, ast.Name):
        node = ast.Call(func=node, args=[], keywords=[])
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ValueError(f"expected a preset call such as gaussian(...), got {text!r}")
    name = node.func.id
    names = PRESET_ARGS.get(name)
    if names is None:
        raise ValueError(f"unknown preset {name!r}, expected one of {', '.join(PRESET_ARGS)}")
    if len(node.args) > len(names):
        raise ValueError(f"{name} takes at most {len(names)} arguments")
    try:
        kwargs = {names[i]: ast.literal_eval(arg) for i, arg in enumerate(node.args)}
        for kw in node.keywords:
            if kw.arg not in names:
                raise ValueError(f"unknown argument {kw.arg!r} for {name}")
            kwargs[kw.arg] = ast.literal_eval(kw.value)
    except (SyntaxError, TypeError) as e:
        raise ValueError(f"preset arguments must be literals: {e}")
    return Preset(name=name, kwargs=kwargs)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSection(_Section):
    dim: int
    n: Union[int, Tuple[int, ...]]
    extent: Union[float, Tuple[float, ...]] = 1.0

    @field_validator("dim")
    @classmethod
    def _dim(cls, v):
        if v not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        return v

    @field_validator("n")
    @classmethod
    def _nodes(cls, v, info):
        values = (v,) if isinstance(v, int) else v
        dim = info.data.get("dim")
        if dim is not None and len(values) not in (1, dim):
            raise ValueError(f"expected 1 or {dim} node counts, got {len(values)}")
        if any(k < 3 for k in values):
            raise ValueError("every axis needs at least 3 nodes")
        return v

    @field_validator("extent")
    @classmethod
    def _extent(cls, v):
        values = (v,) if isinstance(v, (int, float)) else v
        if any(not L > 0 for L in values):
            raise ValueError("extents must be positive")
        return v

    def build(self) -> Grid:
        n = self.n if isinstance(self.n, int) else (self.n * self.dim if len(self.n) == 1 else self.n)
        extent = self.extent if isinstance(self.extent, (int, float)) else tuple(self.extent)
        if not isinstance(extent, (int, float)) and len(extent) == 1:
            extent = extent[0]
        return Grid(dim=self.dim, n=n, extent=extent)


class ParamsSection(_Section):
    D: float = Field(1.0, gt=0)
    E: float = Field(1.0, ge=0)
    gamma: float = 1.0
    source: Preset = Preset(name="zero")
    m0: Preset = Preset(name="zero")
    scale: float = Field(1.0, ge=0)

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not v > 0.5:
            raise ValueError(f"metabolic exponent must satisfy gamma > 1/2, got {v}")
        return v

    @field_validator("source", "m0", mode="before")
    @classmethod
    def _preset(cls, v):
        if isinstance(v, str):
            return parse_preset(v)
        if isinstance(v, (int, float)):
            return Preset(name="constant", kwargs={"a": v})
        return v


class SteppingSection(_Section):
    dt: float = Field(1e-3, gt=0)
    t_end: float = Field(1.0, gt=0)
    store_every: int = Field(1, ge=1)
    cg_tol: float = Field(1e-10, gt=0)
    eps_reg: float = Field(1e-12, ge=0)
    blowup_threshold: float = Field(1e6, gt=0)
    dt_max: Optional[float] = Field(None, gt=0)
    reaction_mode: ReactionMode = ReactionMode.SEMI_IMPLICIT

    @field_validator("dt_max")
    @classmethod
    def _guard(cls, v, info):
        dt = info.data.get("dt")
        if v is not None and dt is not None and dt > v:
            raise ValueError(f"dt={dt} exceeds the stability guard dt_max={v}")
        return v


class ExperimentSection(_Section):
    mode: Literal["run", "picard", "sweep"] = "run"
    seed: int = 0
    k_max: int = Field(8, ge=1)
    picard_tol: float = Field(1e-8, ge=0)
    scales: List[float] = Field(default_factory=lambda: list(DEFAULT_SCALES))
    t_target: Optional[float] = Field(None, gt=0)
    refine: int = Field(0, ge=0)
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("scales")
    @classmethod
    def _ladder(cls, v):
        if not v:
            raise ValueError("at least one scale is needed")
        if any(s < 0 for s in v):
            raise ValueError("scales must be non-negative")
        if any(b > a for a, b in zip(v, v[1:])):
            raise ValueError("scales must be sorted descending")
        return v


Probe = Tuple[Tuple[float, ...], float]


class DiagnosticsSection(_Section):
    probes: List[Probe] = Field(default_factory=list)
    radii: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    beta: float = Field(0.5, gt=0)
    excess_threshold: Optional[float] = Field(None, gt=0)
    growth_ratio: float = Field(2.0, gt=0)
    checkpoints: Optional[List[float]] = None
    degiorgi_k: Optional[float] = Field(None, gt=0)
    n_levels: int = Field(30, ge=1)
    lp_exponents: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    integrability_q: List[float] = Field(default_factory=lambda: [2.0, 4.0])
    holder_pairs: int = Field(4000, ge=1)
    second_energy: bool = True

    @field_validator("probes", mode="before")
    @classmethod
    def _points(cls, v):
        # a 1D probe may be written (y, tau)
        if isinstance(v, (list, tuple)):
            return [((p[0],), p[1]) if isinstance(p, (list, tuple)) and len(p) == 2 and isinstance(p[0], (int, float)) else p for p in v]
        return v

    @field_validator("radii")
    @classmethod
    def _radii(cls, v):
        if not v or any(not r > 0 for r in v):
            raise ValueError("radii must be positive")
        return v

    @field_validator("lp_exponents", "integrability_q")
    @classmethod
    def _exponents(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("exponents must be >= 1")
        return v


class ExperimentConfig(_Section):
    grid: GridSection
    params: ParamsSection = ParamsSection()
    stepping: SteppingSection = SteppingSection()
    experiment: ExperimentSection = ExperimentSection()
    diagnostics: DiagnosticsSection = DiagnosticsSection()

    @property
    def t_target(self) -> float:
        return self.experiment.t_target if self.experiment.t_target is not None else self.stepping.t_end

    def coupling_config(self) -> CouplingConfig:
        s = self.stepping
        return CouplingConfig(
            store_every=s.store_every,
            cg_tol=s.cg_tol,
            blowup_threshold=s.blowup_threshold,
            eps_reg=s.eps_reg,
            reaction_mode=s.reaction_mode,
            dt_max=s.dt_max,
        )


def _coerce(raw: str) -> Any:
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _validation_error(err: ValidationError) -> ConfigValidationError:
    first = err.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or "config"
    reason = first["msg"]
    if reason.startswith("Value error, "):
        reason = reason[len("Value error, "):]
    return ConfigValidationError(key, reason)


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__defaults__"
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source="<config>")
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigParseError(e.message.split(": ", 1)[-1] if hasattr(e, "message") else str(e), line=e.lineno)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigParseError("text before the first [section] header", line=e.lineno)
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigParseError("expected 'key = value'", line=line)

    data = {section: {key: _coerce(value) for key, value in parser.items(section)} for section in parser.sections()}
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise _validation_error(e)
    logger.debug("parsed config: mode=%s grid=%s", cfg.experiment.mode, cfg.grid)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigParseError(f"cannot read config {path}: {e}")
    return parse_config(text)


# ---------------------------------------------------------------- presets


def _center(kwargs: Dict[str, Any], grid: Grid) -> np.ndarray:
    default = [o + 0.5 * L for o, L in zip(grid.origin, grid.extent)]
    return np.broadcast_to(np.asarray(kwargs.get("center", default), dtype=np.float64), (grid.dim,))


def _distance2(grid: Grid, center: np.ndarray) -> np.ndarray:
    return sum((x - c) ** 2 for x, c in zip(grid.mesh(), center))


def _profile(preset: Preset, grid: Grid) -> np.ndarray:
    kw = preset.kwargs
    amplitude = float(kw.get("amplitude", 1.0))
    if preset.name in ("gaussian", "bump", "bump_vector"):
        width = float(kw.get("width", 0.1))
        if not width > 0:
            raise ValueError("width must be positive")
        rho2 = _distance2(grid, _center(kw, grid)) / width ** 2
        if preset.name == "gaussian":
            return amplitude * np.exp(-0.5 * rho2)
        inside = rho2 < 1.0
        out = np.zeros(grid.shape)
        out[inside] = amplitude * np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
        return out
    raise ValueError(f"{preset.name} has no spatial profile")


def _file_fields(preset: Preset, grid: Grid, base_dir: Optional[Path]):
    from netform.snapshots import read_snapshot

    path = Path(preset.kwargs.get("path", ""))
    if base_dir is not None and not path.is_absolute():
        path = base_dir / path
    m, p, _ = read_snapshot(path)
    if p.grid.n != grid.n:
        raise ValueError(f"{path} holds a {p.grid.n} grid, config asks for {grid.n}")
    return m, p


def scalar_data(preset: Preset, grid: Grid, base_dir: Optional[Path] = None) -> np.ndarray:
    if preset.name == "zero":
        return np.zeros(grid.shape)
    if preset.name == "constant":
        return np.full(grid.shape, float(preset.kwargs.get("a", 0.0)))
    if preset.name == "file":
        return np.array(_file_fields(preset, grid, base_dir)[1].values)
    if preset.name in ("gaussian", "bump"):
        if "direction" in preset.kwargs:
            raise ValueError("a scalar preset takes no direction")
        return _profile(preset, grid)
    raise ValueError(f"{preset.name} is a vector preset")


def vector_data(preset: Preset, grid: Grid, base_dir: Optional[Path] = None) -> np.ndarray:
    """Components of shape (dim, *grid.shape) with boundary nodes set to zero"""
    if preset.name == "zero":
        data = np.zeros((grid.dim,) + grid.shape)
    elif preset.name == "file":
        data = _file_fields(preset, grid, base_dir)[0].array()
    elif preset.name == "constant":
        a = np.broadcast_to(np.asarray(preset.kwargs.get("a", 0.0), dtype=np.float64), (grid.dim,))
        data = a.reshape((grid.dim,) + (1,) * grid.dim) * np.ones((grid.dim,) + grid.shape)
    elif preset.name in ("gaussian", "bump_vector"):
        direction = np.zeros(grid.dim)
        direction[0] = 1.0
        direction = np.broadcast_to(np.asarray(preset.kwargs.get("direction", direction), dtype=np.float64), (grid.dim,))
        data = direction.reshape((grid.dim,) + (1,) * grid.dim) * _profile(preset, grid)[None]
    else:
        raise ValueError(f"{preset.name} is a scalar preset")
    data = np.array(data)
    data[:, grid.boundary_mask()] = 0.0
    return data


def build_params(cfg: ExperimentConfig, base_dir: Optional[Path] = None) -> PhysParams:
    """Grid, scaled source and initial conductance for a parsed config"""
    grid = cfg.grid.build()
    p = cfg.params
    try:
        S = scalar_data(p.source, grid, base_dir)
    except (ValueError, NetformError) as e:
        raise ConfigValidationError("params.source", str(e))
    try:
        m0 = vector_data(p.m0, grid, base_dir)
    except (ValueError, NetformError) as e:
        raise ConfigValidationError("params.m0", str(e))
    try:
        return PhysParams(
            D=p.D, E=p.E, gamma=p.gamma,
            S=ScalarField(grid, p.scale * S),
            m0=VectorField.from_array(grid, p.scale * m0),
        )
    except DomainError as e:
        raise ConfigValidationError("params", str(e))
