"""
Run configuration for lfi-node.

A run is described by one JSON file with the sections ``plant``, ``data``,
``train``, ``latent``, ``eval`` and ``paths``. Each section is a dataclass
with typed defaults; ``RunConfig.validate`` collects every field error before
raising so a bad file is reported in one go. Values from ``--set`` overrides
and the environment are applied on top of the file.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import load_dotenv

from ..jacest import EPS_MIN
from ..training.latent import DRIFT_TOL, SETTLE_TOL
from ..training.trainer import TrainConfig
from .exceptions import ConfigError, DataIOError, LfiNodeError

VALID_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
DEFAULT_LINEAR = {"A": [[0.0, 1.0], [-2.0, -3.0]], "B": [[0.0], [1.0]]}
GFM_GRID = (np.linspace(0.5, 1.2, 8), np.linspace(0.9, 1.1, 6))
GFM_TEST_INPUTS = [[0.95, 1.01], [1.05, 0.99]]
GFM_X0_OFFSET = [0.0, 0.1]
GFM_EPS_MIN = 1e-3
X0_MODES = ("auto", "nominal", "equilibrium")
SWEEP_POINTS = 48

Problems = List[Tuple[str, str]]


def _x0_problems(x0, state_dim: Optional[int]) -> Problems:
    if isinstance(x0, str):
        if x0 not in X0_MODES:
            return [("x0", f"must be one of {list(X0_MODES)} or a state vector")]
    elif state_dim is not None and len(x0) != state_dim:
        return [("x0", f"needs {state_dim} values")]
    return []


@dataclass
class PlantSpec:
    kind: str = "gfm_droop"
    params: Dict[str, Any] = field(default_factory=dict)

    def build(self):
        """The PlantModel this section describes (ConfigError when invalid)."""
        from ..plants import PlantModel

        params = self.params
        if self.kind == "linear" and not params:
            params = DEFAULT_LINEAR
        try:
            return PlantModel.from_spec(self.kind, params)
        except ValueError as e:
            raise ConfigError("plant.params", str(e)) from e

    def default_x_guess(self, state_dim: int) -> np.ndarray:
        if self.kind == "gfm_droop":
            return np.array([0.0, 0.5])
        return np.zeros(state_dim)

    def default_nominal(self, input_dim: int) -> List[float]:
        return [1.0] * input_dim if self.kind == "gfm_droop" else [0.0] * input_dim

    def default_grid(self, input_dim: int) -> List[List[float]]:
        """8 x 6 sweep of [V_g, w_g] for the droop plant, a scalar sweep otherwise."""
        if self.kind == "gfm_droop":
            return [[float(v), float(w)] for v in GFM_GRID[0] for w in GFM_GRID[1]]
        return [[float(c)] * input_dim for c in np.linspace(-1.0, 1.0, SWEEP_POINTS)]

    def default_test_inputs(self, input_dim: int) -> List[List[float]]:
        """Held-out inputs; the droop pair has stable equilibria inside the grid."""
        if self.kind == "gfm_droop":
            return [list(u) for u in GFM_TEST_INPUTS]
        return [[0.5] * input_dim, [-0.5] * input_dim]

    def default_x0_mode(self) -> str:
        """Droop runs start next to each input's equilibrium: its slow mode
        (tau ~ 6 s) would otherwise still be moving at the end of a 1 s run."""
        return "equilibrium" if self.kind == "gfm_droop" else "nominal"

    def default_x0_offset(self, state_dim: int) -> List[float]:
        if self.kind == "gfm_droop":
            return list(GFM_X0_OFFSET)
        return [0.0] * state_dim

    def default_eps_min(self) -> float:
        """Droop: skip the slow-manifold tail so neighbors see the fast mode."""
        return GFM_EPS_MIN if self.kind == "gfm_droop" else EPS_MIN

    def problems(self) -> Problems:
        try:
            self.build()
        except ConfigError as e:
            return [(e.field, e.reason)]
        return []


@dataclass
class DataSpec:
    grid: Optional[List[List[float]]] = None
    x0: Union[str, List[float]] = "auto"
    x0_offset: Optional[List[float]] = None
    dt: float = 2e-5
    duration: float = 1.0
    sigma_x: float = 0.0
    cutoff: Union[None, str, float] = None
    downsample: int = 10
    seed: int = 0
    time_scale: float = 1.0
    nominal_input: Optional[List[float]] = None
    step_time: float = 0.0
    rtol: float = 1e-7
    atol: float = 1e-9
    max_steps: int = 200_000

    def problems(self, input_dim: Optional[int], state_dim: Optional[int]) -> Problems:
        found = []
        if self.grid is not None:
            if len(self.grid) == 0:
                found.append(("grid", "input grid must hold at least one point"))
            elif input_dim is not None and any(
                len(np.atleast_1d(p)) != input_dim for p in self.grid
            ):
                found.append(("grid", f"every point needs {input_dim} input values"))
        found.extend(_x0_problems(self.x0, state_dim))
        if self.x0_offset is not None and state_dim is not None:
            if len(self.x0_offset) != state_dim:
                found.append(("x0_offset", f"needs {state_dim} values"))
        if not self.dt > 0:
            found.append(("dt", "must be > 0"))
        elif self.duration < 2 * self.dt:
            found.append(("duration", "must cover at least two samples"))
        if self.sigma_x < 0:
            found.append(("sigma_x", "must be >= 0"))
        if self.cutoff not in (None, "auto"):
            if isinstance(self.cutoff, str) or not self.cutoff > 0:
                found.append(("cutoff", "must be null, 'auto' or a frequency > 0"))
            elif self.dt > 0 and self.cutoff >= 0.5 / self.dt:
                found.append(("cutoff", f"must lie below Nyquist {0.5 / self.dt:g} Hz"))
        if int(self.downsample) != self.downsample or self.downsample < 1:
            found.append(("downsample", "must be an integer >= 1"))
        if not self.time_scale > 0:
            found.append(("time_scale", "must be > 0"))
        if self.nominal_input is not None and input_dim is not None:
            if len(self.nominal_input) != input_dim:
                found.append(("nominal_input", f"needs {input_dim} values"))
        if not 0 < self.rtol < 1:
            found.append(("rtol", "must lie in (0, 1)"))
        if self.atol < 0:
            found.append(("atol", "must be >= 0"))
        if self.max_steps < 1:
            found.append(("max_steps", "must be >= 1"))
        return found


@dataclass
class LatentSpec:
    window_len: Optional[int] = None
    eps_min: Optional[float] = None
    r_max: float = 0.2
    n_max: int = 200
    scheme: str = "central"
    settle_tol: float = SETTLE_TOL
    drift_tol: float = DRIFT_TOL
    plant_check: bool = True

    def problems(self, eps_min: float) -> Problems:
        """``eps_min`` is the resolved lower radius (plant default when unset)."""
        found = []
        if self.window_len is not None and self.window_len < 2:
            found.append(("window_len", "must be >= 2 or null for N/20"))
        if not 0 <= eps_min < self.r_max:
            found.append(("eps_min", "need 0 <= eps_min < r_max"))
        if self.n_max < 1:
            found.append(("n_max", "must be >= 1"))
        if self.scheme not in ("central", "forward"):
            found.append(("scheme", "must be 'central' or 'forward'"))
        if not self.settle_tol > 0:
            found.append(("settle_tol", "must be > 0"))
        if not self.drift_tol > 0:
            found.append(("drift_tol", "must be > 0"))
        return found


@dataclass
class EvalSpec:
    test_inputs: Optional[List[List[float]]] = None
    margin: float = 1e-6
    duration: Optional[float] = None
    x0: Union[str, List[float]] = "auto"
    data_jref: bool = True

    def problems(
        self, input_dim: Optional[int], state_dim: Optional[int] = None
    ) -> Problems:
        found = []
        if self.test_inputs is not None:
            if len(self.test_inputs) == 0:
                found.append(("test_inputs", "needs at least one input"))
            elif input_dim is not None and any(
                len(u) != input_dim for u in self.test_inputs
            ):
                found.append(("test_inputs", f"every input needs {input_dim} values"))
        if self.margin < 0:
            found.append(("margin", "must be >= 0"))
        if self.duration is not None and not self.duration > 0:
            found.append(("duration", "must be > 0"))
        found.extend(_x0_problems(self.x0, state_dim))
        return found


@dataclass
class PathSpec:
    """Output locations, relative to ``root`` unless absolute.

    ``{mode}`` and ``{seed}`` are filled in per run.
    """

    root: str = "runs"
    dataset: str = "dataset"
    model: str = "model_{mode}_seed{seed}.json"
    log: str = "train_{mode}_seed{seed}.csv"
    reports: str = "reports"

    def resolve(self, name: str, mode: str = "", seed: int = 0) -> Path:
        template = getattr(self, name)
        path = Path(template.format(mode=mode, seed=seed)).expanduser()
        return path if path.is_absolute() else Path(self.root).expanduser() / path

    def problems(self) -> Problems:
        found = []
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, str) or not value.strip():
                found.append((f.name, "must be a non-empty path"))
                continue
            try:
                value.format(mode="m", seed=0)
            except (KeyError, IndexError, ValueError) as e:
                reason = f"bad placeholder ({e}); use {{mode}} or {{seed}}"
                found.append((f.name, reason))
        return found


SECTIONS = {
    "plant": PlantSpec,
    "data": DataSpec,
    "train": TrainConfig,
    "latent": LatentSpec,
    "eval": EvalSpec,
    "paths": PathSpec,
}


@dataclass
class RunConfig:
    plant: PlantSpec = field(default_factory=PlantSpec)
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    latent: LatentSpec = field(default_factory=LatentSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    paths: PathSpec = field(default_factory=PathSpec)
    log_level: str = "INFO"

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        """Build from nested sections; unknown sections or keys are rejected."""
        if not isinstance(data, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        kwargs: Dict[str, Any] = {}
        for name, value in data.items():
            if name == "log_level":
                kwargs[name] = str(value).upper()
                continue
            section = SECTIONS.get(name)
            if section is None:
                raise ConfigError(name, "unknown section")
            if not isinstance(value, dict):
                raise ConfigError(name, "section must be a JSON object")
            known = {f.name for f in fields(section)}
            for key in value:
                if key not in known:
                    raise ConfigError(f"{name}.{key}", "unknown key")
            try:
                kwargs[name] = section(**value)
            except (TypeError, ValueError) as e:
                raise ConfigError(name, str(e)) from e
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path).expanduser()
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise DataIOError(path, "configuration file not found", e) from e
        except json.JSONDecodeError as e:
            raise ConfigError(str(path), f"invalid JSON: {e}") from e
        except OSError as e:
            raise DataIOError(path, "cannot read configuration", e) from e
        return cls.from_dict(data)

    @classmethod
    def from_environment(cls, config_path: Optional[str] = None) -> "RunConfig":
        """Defaults, then the config file, then LFI_NODE_* environment values.

        ``.env`` files are loaded first; the file comes from ``config_path``
        or ``LFI_NODE_CONFIG``.
        """
        load_dotenv()
        path = config_path or os.environ.get("LFI_NODE_CONFIG")
        config = cls.from_file(path) if path else cls()
        run_dir = os.environ.get("LFI_NODE_RUN_DIR")
        if run_dir:
            config.paths.root = run_dir
        level = os.environ.get("LFI_NODE_LOG_LEVEL")
        if level:
            config.log_level = level.upper()
        return config

    def apply_overrides(self, overrides: Sequence[str]) -> "RunConfig":
        """New config with ``section.key=value`` items applied.

        Values parse as JSON, falling back to the raw string.
        """
        data = self.to_dict()
        for item in overrides or ():
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(item, "override must look like section.key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.strip().split(".")
            if parts == ["log_level"]:
                data["log_level"] = value
                continue
            if len(parts) != 2 or parts[0] not in SECTIONS:
                raise ConfigError(key, "override must name section.key")
            data[parts[0]][parts[1]] = value
        return RunConfig.from_dict(data)

    def validate(self) -> None:
        """Check every section and raise one ConfigError listing all fields."""
        errors: Problems = []
        input_dim = state_dim = None
        try:
            plant = self.plant.build()
            input_dim, state_dim = plant.input_dim, plant.state_dim
        except ConfigError as e:
            errors.append((e.field, e.reason))
        except LfiNodeError as e:
            errors.append(("plant.params", str(e)))
        scoped = [
            ("data", self.data.problems(input_dim, state_dim)),
            ("train", self.train.problems()),
            ("latent", self.latent.problems(self.eps_min())),
            ("eval", self.eval.problems(input_dim, state_dim)),
            ("paths", self.paths.problems()),
        ]
        for section, problems in scoped:
            errors.extend((f"{section}.{name}", reason) for name, reason in problems)
        if self.log_level not in VALID_LOG_LEVELS:
            errors.append(("log_level", f"must be one of {sorted(VALID_LOG_LEVELS)}"))
        if errors:
            raise ConfigError(
                ", ".join(name for name, _ in errors),
                "; ".join(f"{name}: {reason}" for name, reason in errors),
            )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "plant": asdict(self.plant),
            "data": asdict(self.data),
            "train": self.train.to_dict(),
            "latent": asdict(self.latent),
            "eval": asdict(self.eval),
            "paths": asdict(self.paths),
            "log_level": self.log_level,
        }

    # Resolved values ---------------------------------------------------------

    def grid(self, input_dim: int) -> List[List[float]]:
        if self.data.grid is not None:
            return self.data.grid
        return self.plant.default_grid(input_dim)

    def nominal_input(self, input_dim: int) -> List[float]:
        if self.data.nominal_input is not None:
            return list(self.data.nominal_input)
        return self.plant.default_nominal(input_dim)

    def test_inputs(self, input_dim: int) -> List[List[float]]:
        if self.eval.test_inputs is not None:
            return [list(u) for u in self.eval.test_inputs]
        return self.plant.default_test_inputs(input_dim)

    def x0_mode(self, setting: str) -> str:
        """``nominal`` or ``equilibrium``; ``auto`` picks the plant's default."""
        return self.plant.default_x0_mode() if setting == "auto" else setting

    def x0_offset(self, state_dim: int) -> np.ndarray:
        if self.data.x0_offset is not None:
            return np.asarray(self.data.x0_offset, dtype=float)
        return np.asarray(self.plant.default_x0_offset(state_dim), dtype=float)

    def eps_min(self) -> float:
        if self.latent.eps_min is not None:
            return float(self.latent.eps_min)
        return self.plant.default_eps_min()
