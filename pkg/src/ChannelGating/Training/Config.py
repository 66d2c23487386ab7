"""
Experiment configuration files (YAML).

    seed: 0
    model: {preset: desk8, multiplier: 1, gated: true}
    data: {kind: synthetic-conditional, train_size: 10000, test_size: 2000}
    schedule: {preset: cifar-desk, l0_gamma_final: 0.05}
    prior: {kind: beta, params: [0.6, 0.4]}
    output: {directory: runs/desk, checkpoint_every: 10}
    loader: {workers: 2, prefetch: 2}

Every section is optional. Unknown keys and invalid values are reported
with the line they appear on.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from ..Datasets.DatasetSource import DatasetSource
from ..Losses.PriorSpec import PriorSpec
from ..Networks.GatedResNet import NetworkConfig
from .constants import DEFAULT_SCHEDULE, SHAPING_PRIOR
from .Schedule import TrainSchedule, gamma_point

logger = logging.getLogger("Config")

DEFAULT_MODEL = "desk8"
DEFAULT_OUTPUT = "runs/default"

SECTION_KEYS: Dict[str, Tuple[str, ...]] = {
    "model": ("preset",) + tuple(f.name for f in fields(NetworkConfig)),
    "data": tuple(f.name for f in fields(DatasetSource)),
    "schedule": ("preset",) + TrainSchedule.field_names(),
    "prior": ("kind", "params"),
    "output": ("directory", "checkpoint_every"),
    "loader": ("workers", "prefetch"),
}
TOP_LEVEL_KEYS = ("seed",) + tuple(SECTION_KEYS)


class ConfigError(ValueError):
    def __init__(self, message: str, source: Any = None, line: Optional[int] = None):
        self.source = source
        self.line = line
        where = f"{source}:{line}: " if line is not None else (f"{source}: " if source is not None else "")
        super().__init__(f"{where}{message}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    model_preset: str = DEFAULT_MODEL
    model: NetworkConfig = field(default_factory=lambda: NetworkConfig.preset(DEFAULT_MODEL))
    data: DatasetSource = field(default_factory=DatasetSource)
    schedule_preset: str = DEFAULT_SCHEDULE
    schedule: TrainSchedule = field(default_factory=lambda: TrainSchedule.preset(DEFAULT_SCHEDULE))
    prior: PriorSpec = field(default_factory=lambda: PriorSpec.from_dict(SHAPING_PRIOR))
    output: str = DEFAULT_OUTPUT
    checkpoint_every: int = 0
    workers: int = 0
    prefetch: int = 2

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "model": {"preset": self.model_preset, **self.model.to_dict()},
            "data": self.data.to_dict(),
            "schedule": {"preset": self.schedule_preset, **self.schedule.to_dict()},
            "prior": self.prior.to_dict(),
            "output": {"directory": self.output, "checkpoint_every": self.checkpoint_every},
            "loader": {"workers": self.workers, "prefetch": self.prefetch},
        }

    def with_overrides(
        self,
        seed: Optional[int] = None,
        gamma: Optional[float] = None,
        lam: Optional[float] = None,
        output: Optional[str] = None,
        gamma_index: Optional[int] = None,
    ) -> "ExperimentConfig":
        """
        Command-line overrides: γ sets the final L0 coefficient, either as a
        value or as an index into the schedule preset's sweep grid; λ sets
        the starting batch-shaping coefficient.
        """
        if gamma is not None and gamma_index is not None:
            raise ValueError("with_overrides: give either a γ value or a grid index, not both")
        if gamma_index is not None:
            gamma = gamma_point(self.schedule_preset, gamma_index)
        schedule = self.schedule
        if gamma is not None:
            schedule = replace(schedule, l0_gamma_final=gamma)
        if lam is not None:
            schedule = replace(schedule, bs_lambda_start=lam)
        return replace(
            self,
            seed=self.seed if seed is None else seed,
            schedule=schedule,
            output=self.output if output is None else output,
        )


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _mapping(node: yaml.Node, what: str, source: Any) -> Dict[str, Tuple[yaml.Node, yaml.Node]]:
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{what} must be a mapping", source, _line(node))
    return {str(k.value): (k, v) for k, v in node.value}


def _check_keys(node: yaml.Node, allowed: Tuple[str, ...], what: str, source: Any):
    for key, (key_node, _) in _mapping(node, what, source).items():
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {what}", source, _line(key_node))


def _build(factory, kwargs: Dict[str, Any], what: str, source: Any, node: Optional[yaml.Node]):
    try:
        return factory(**kwargs)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid {what}: {e}", source, _line(node) if node is not None else None) from e


def parse_config(text: str, source: Any = "<string>") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark is not None else None
        raise ConfigError(f"YAML syntax: {e.problem}", source, line) from e

    config = ExperimentConfig()
    if root is None:
        return config
    nodes = _mapping(root, "the configuration", source)
    _check_keys(root, TOP_LEVEL_KEYS, "the configuration", source)
    for section, allowed in SECTION_KEYS.items():
        if section in nodes:
            _check_keys(nodes[section][1], allowed, f"section '{section}'", source)

    def section(name: str) -> Tuple[Dict[str, Any], Optional[yaml.Node]]:
        if name not in nodes:
            return {}, None
        return dict(data[name] or {}), nodes[name][1]

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}", source, _line(nodes["seed"][1]))

    values, node = section("model")
    model_preset = values.pop("preset", DEFAULT_MODEL)
    model = _build(lambda **kw: NetworkConfig.preset(model_preset, **kw), values, "model", source, node)

    values, node = section("data")
    dataset = _build(DatasetSource, values, "data", source, node)

    values, node = section("schedule")
    schedule_preset = values.pop("preset", DEFAULT_SCHEDULE)
    schedule = _build(lambda **kw: TrainSchedule.preset(schedule_preset, **kw), values, "schedule", source, node)

    values, node = section("prior")
    prior = _build(PriorSpec.from_dict, {"d": values}, "prior", source, node) if values else config.prior

    output, node = section("output")
    loader, loader_node = section("loader")
    for what, value, where in (
        ("checkpoint_every", output.get("checkpoint_every", 0), node),
        ("workers", loader.get("workers", 0), loader_node),
    ):
        if not isinstance(value, int) or value < 0:
            raise ConfigError(f"{what} must be a nonnegative integer, got {value!r}", source, _line(where))
    prefetch = loader.get("prefetch", 2)
    if not isinstance(prefetch, int) or prefetch < 1:
        raise ConfigError(f"prefetch must be a positive integer, got {prefetch!r}", source, _line(loader_node))

    return ExperimentConfig(
        seed=seed,
        model_preset=model_preset,
        model=model,
        data=dataset,
        schedule_preset=schedule_preset,
        schedule=schedule,
        prior=prior,
        output=str(output.get("directory", DEFAULT_OUTPUT)),
        checkpoint_every=output.get("checkpoint_every", 0),
        workers=loader.get("workers", 0),
        prefetch=prefetch,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", path) from e
    config = parse_config(text, path)
    logger.debug(f"load_config: {path}: model {config.model_preset}, schedule {config.schedule_preset}")
    return config


def dump_config(config: ExperimentConfig, path: str | Path):
    with open(path, "w") as fp:
        yaml.safe_dump(config.to_dict(), fp, sort_keys=False)
