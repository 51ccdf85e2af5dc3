"""Declarative run configuration: one file drives the whole pipeline.

Every section is validated before any compute and unknown keys are rejected.
The data-identity subset of the config is hashed into a fingerprint that
datasets embed and training verifies, so a run directory can always be traced
back to the exact data that produced it.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .container import canonical_json
from .fem import BoundaryLoad, MeshSpec, make_sensor_grid
from .grids import UniformGrid2D, parse_grid_spec
from .physics import CollocationSet, make_collocation
from .randomfield import KernelSpec, RandomFieldModel, build_kl_model
from .training import TrainingConfig


class ConfigError(Exception):
    pass


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _require_positive(value, name: str):
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")


@dataclass
class FieldSection:
    correlation_length: float = 1.0
    variance: float = 1.0
    alpha: float = 1.0
    beta: float = 0.1
    kl_terms: int = 5
    kl_grid: str = "25x25"

    def __post_init__(self):
        _require_positive(self.correlation_length, "field.correlation_length")
        _require_positive(self.variance, "field.variance")
        _require_positive(self.beta, "field.beta")
        _require_positive(self.kl_terms, "field.kl_terms")
        parse_grid_spec(self.kl_grid)


@dataclass
class ElasticitySection:
    nu: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"elasticity.nu must be in (0, 0.5), got {self.nu}")


@dataclass
class LoadSection:
    traction_right: list = field(default_factory=lambda: [1.5, 0.0])
    traction_top: list = field(default_factory=lambda: [0.0, 0.0])
    traction_bottom: list = field(default_factory=lambda: [0.0, 0.0])

    def __post_init__(self):
        for name in ("traction_right", "traction_top", "traction_bottom"):
            v = getattr(self, name)
            if not (isinstance(v, (list, tuple)) and len(v) == 2):
                raise ValueError(f"load.{name} must be a 2-vector")
            setattr(self, name, [float(v[0]), float(v[1])])


@dataclass
class DataSection:
    n_snapshots: int = 1000
    mesh: str = "64x64"
    sensors_per_side: int = 10

    def __post_init__(self):
        _require_positive(self.n_snapshots, "data.n_snapshots")
        nx, ny = parse_grid_spec(self.mesh)
        if nx < 2 or ny < 2:
            raise ValueError(f"data.mesh must be at least 2x2, got {self.mesh}")
        if self.sensors_per_side < 2:
            raise ValueError("data.sensors_per_side must be >= 2")


@dataclass
class CollocationSection:
    """interior_grid is either an equidistant spec like "10x10" or an explicit
    list of [x1, x2] points."""

    interior_grid: object = "10x10"
    boundary_points_per_side: int = 10

    def __post_init__(self):
        if isinstance(self.interior_grid, str):
            parse_grid_spec(self.interior_grid)
        elif isinstance(self.interior_grid, (list, tuple)):
            for p in self.interior_grid:
                if not (isinstance(p, (list, tuple)) and len(p) == 2):
                    raise ValueError(
                        "collocation.interior_grid entries must be [x1, x2] pairs"
                    )
            if not self.interior_grid:
                raise ValueError("collocation.interior_grid must be non-empty")
        else:
            raise ValueError(
                "collocation.interior_grid must be a grid spec or a point list"
            )
        if self.boundary_points_per_side < 2:
            raise ValueError("collocation.boundary_points_per_side must be >= 2")


@dataclass
class NetworkSection:
    hidden_layers: int = 4
    hidden_width: int = 128
    noise_dim: int = 5

    def __post_init__(self):
        _require_positive(self.hidden_layers, "networks.hidden_layers")
        _require_positive(self.hidden_width, "networks.hidden_width")
        _require_positive(self.noise_dim, "networks.noise_dim")


@dataclass
class OptimizerSection:
    learning_rate: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.9
    epsilon: float = 1e-8

    def __post_init__(self):
        _require_positive(self.learning_rate, "optimizer.learning_rate")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"optimizer.{name} must be in [0, 1)")
        _require_positive(self.epsilon, "optimizer.epsilon")


@dataclass
class TrainingSection:
    total_steps: int = 100000
    gen_steps_per_critic_step: int = 5
    gradient_penalty: float = 0.1
    n_pde_samples: int = 100
    n_bc_samples: int = 100
    checkpoint_every: int = 1000
    weight_adversarial: float = 1.0
    weight_pde: float = 1.0
    weight_bc: float = 1.0

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("training.total_steps must be >= 0")
        _require_positive(self.gen_steps_per_critic_step,
                          "training.gen_steps_per_critic_step")
        if self.gradient_penalty < 0:
            raise ValueError("training.gradient_penalty must be >= 0")
        _require_positive(self.n_pde_samples, "training.n_pde_samples")
        _require_positive(self.n_bc_samples, "training.n_bc_samples")
        _require_positive(self.checkpoint_every, "training.checkpoint_every")


@dataclass
class EvaluationSection:
    grid: str = "25x25"
    n_generated: int = 1000
    n_reference: int = 10000
    pdf_points: list = field(
        default_factory=lambda: [[0.25, 0.75], [0.5, 0.5], [0.75, 0.25]]
    )
    correlation_anchor_x1: float = 0.5
    correlation_sections: dict = field(
        default_factory=lambda: {"A": 0.75, "B": 0.5, "C": 0.25}
    )

    def __post_init__(self):
        parse_grid_spec(self.grid)
        _require_positive(self.n_generated, "evaluation.n_generated")
        _require_positive(self.n_reference, "evaluation.n_reference")
        for p in self.pdf_points:
            if not (isinstance(p, (list, tuple)) and len(p) == 2):
                raise ValueError("evaluation.pdf_points entries must be 2-vectors")


@dataclass
class SeedSection:
    """Independent streams: dataset generation, network init, training noise,
    evaluation sampling."""

    data: int = 1
    init: int = 2
    noise: int = 3
    evaluation: int = 4


@dataclass
class SweepSection:
    parameter: str = "n_snapshots"
    values: list = field(default_factory=lambda: [50, 100, 200])
    trials: int = 3
    total_steps: int = 2000
    trial_seed_stride: int = 1000

    def __post_init__(self):
        if self.parameter not in ("n_snapshots", "collocation_grid"):
            raise ValueError(
                "sweep.parameter must be 'n_snapshots' or 'collocation_grid'"
            )
        if not self.values:
            raise ValueError("sweep.values must be non-empty")
        _require_positive(self.trials, "sweep.trials")
        _require_positive(self.total_steps, "sweep.total_steps")


@dataclass
class RunConfig:
    field: FieldSection = None
    elasticity: ElasticitySection = None
    load: LoadSection = None
    data: DataSection = None
    collocation: CollocationSection = None
    networks: NetworkSection = None
    optimizer: OptimizerSection = None
    training: TrainingSection = None
    evaluation: EvaluationSection = None
    seeds: SeedSection = None
    sweep: SweepSection | None = None

    _SECTIONS = {
        "field": FieldSection,
        "elasticity": ElasticitySection,
        "load": LoadSection,
        "data": DataSection,
        "collocation": CollocationSection,
        "networks": NetworkSection,
        "optimizer": OptimizerSection,
        "training": TrainingSection,
        "evaluation": EvaluationSection,
        "seeds": SeedSection,
        "sweep": SweepSection,
    }

    def __post_init__(self):
        for name, cls in self._SECTIONS.items():
            if getattr(self, name) is None and name != "sweep":
                setattr(self, name, cls())

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        unknown = set(data) - set(cls._SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in cls._SECTIONS.items():
            if name in data:
                kwargs[name] = _build(section_cls, data[name], name)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path) as f:
            try:
                data = yaml.safe_load(f)
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        return cls.from_dict(data or {})

    def to_dict(self) -> dict:
        out = {
            name: asdict(getattr(self, name))
            for name in self._SECTIONS
            if getattr(self, name) is not None
        }
        return out

    def save(self, path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    # ---- derived objects -------------------------------------------------

    def data_identity(self) -> dict:
        """The subset of the config that determines the dataset bytes."""
        return {
            "field": asdict(self.field),
            "elasticity": asdict(self.elasticity),
            "load": asdict(self.load),
            "data": asdict(self.data),
            "seed_data": self.seeds.data,
        }

    def fingerprint(self) -> str:
        digest = hashlib.sha256(canonical_json(self.data_identity()).encode())
        return digest.hexdigest()

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.field.correlation_length, self.field.variance)

    def build_field_model(self) -> RandomFieldModel:
        return build_kl_model(
            UniformGrid2D.from_spec(self.field.kl_grid),
            self.kernel_spec(),
            self.field.kl_terms,
            self.field.alpha,
            self.field.beta,
        )

    def mesh_spec(self) -> MeshSpec:
        nx, ny = parse_grid_spec(self.data.mesh)
        return MeshSpec(nx, ny)

    def boundary_load(self) -> BoundaryLoad:
        return BoundaryLoad(
            tuple(self.load.traction_right),
            tuple(self.load.traction_top),
            tuple(self.load.traction_bottom),
        )

    def sensor_grid(self):
        return make_sensor_grid(self.data.sensors_per_side)

    def collocation_set(self) -> CollocationSet:
        interior = self.collocation.interior_grid
        if not isinstance(interior, str):
            interior = np.asarray(interior, dtype=float)
        return make_collocation(
            interior,
            self.collocation.boundary_points_per_side,
        )

    def evaluation_grid(self) -> UniformGrid2D:
        return UniformGrid2D.from_spec(self.evaluation.grid)

    def training_config(self, total_steps: int | None = None) -> TrainingConfig:
        return TrainingConfig(
            total_steps=self.training.total_steps if total_steps is None else total_steps,
            noise_dim=self.networks.noise_dim,
            hidden_layers=self.networks.hidden_layers,
            hidden_width=self.networks.hidden_width,
            learning_rate=self.optimizer.learning_rate,
            beta1=self.optimizer.beta1,
            beta2=self.optimizer.beta2,
            adam_epsilon=self.optimizer.epsilon,
            gp_coefficient=self.training.gradient_penalty,
            gen_steps_per_critic_step=self.training.gen_steps_per_critic_step,
            n_pde_samples=self.training.n_pde_samples,
            n_bc_samples=self.training.n_bc_samples,
            weight_adversarial=self.training.weight_adversarial,
            weight_pde=self.training.weight_pde,
            weight_bc=self.training.weight_bc,
            nu=self.elasticity.nu,
            checkpoint_every=self.training.checkpoint_every,
            init_seed=self.seeds.init,
            noise_seed=self.seeds.noise,
        )


def fingerprint_diff(expected: dict, actual: dict, prefix: str = "") -> list[str]:
    """Human-readable differences between two data-identity dicts."""
    lines = []
    keys = sorted(set(expected) | set(actual))
    for key in keys:
        path = f"{prefix}.{key}" if prefix else key
        ev, av = expected.get(key), actual.get(key)
        if isinstance(ev, dict) and isinstance(av, dict):
            lines.extend(fingerprint_diff(ev, av, path))
        elif ev != av:
            lines.append(f"  {path}: config={ev!r} dataset={av!r}")
    return lines
