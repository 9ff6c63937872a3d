# -*- coding: utf-8 -*-
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
import sys
from typing import Any, Dict, List, Sequence

if sys.version_info >= (3, 11):
    from typing import Self
else:
    from typing_extensions import Self

import yaml

import constants
from region_sampling.simulator import DatasetSpec, ModelSpec
from region_sampling.strategies import parseStrategy
from utils import dictKeepKeys

LOGGER = logging.getLogger(__name__)

CAP_MODE_AUTO = 'auto'

DEFAULT_STRATEGIES = ('rand', 'uncert', 'divers_cluster', 'divers_coreset',
                      'badge', 'decomp')


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__('Invalid experiment configuration:\n  ' +
                         '\n  '.join(self.problems))


def tupled(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(tupled(v) for v in value)
    return value


def listed(value: Any) -> Any:
    if isinstance(value, tuple):
        return [listed(v) for v in value]
    if isinstance(value, dict):
        return {k: listed(v) for k, v in value.items()}
    return value


@dataclass
class ExperimentConfig:
    """
    One experiment: the dataset (generated from `dataset` or loaded from
    `dataset_path`), the strategies compared on it, per-cycle budgets and
    the stopping rule.  `cap_mode` "auto" means 1 per ROI image and
    `cap_fraction` of the pixels otherwise.
    """
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    dataset_path: str | None = None
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES
    n_image: int = 8
    n_region: int = 4
    region_size: int = 16
    tau: float = constants.DEFAULT_TAU
    cap_mode: str = CAP_MODE_AUTO
    cap_fraction: float = constants.DEFAULT_CAP_FRACTION
    divers_factor: int = constants.DEFAULT_DIVERS_FACTOR
    max_cycles: int = 10
    target: float = constants.DEFAULT_TARGET_FRACTION
    stop_at_target: bool = True
    seed: int = 0
    repeats: int = 1
    class_weight_mask: tuple[float, ...] | None = None
    score_annotated_pixels: bool = True
    model: ModelSpec = field(default_factory=ModelSpec)

    def validate(self) -> List[str]:
        problems = self.dataset.validate() + self.model.validate()

        if not self.strategies:
            problems.append('strategies must name at least one strategy')
        for name in self.strategies:
            try:
                parseStrategy(name)
            except ValueError as e:
                problems.append(str(e))
        if len(set(self.strategies)) != len(self.strategies):
            problems.append('strategies must not repeat')

        for name in ('n_image', 'n_region', 'region_size', 'divers_factor',
                     'max_cycles', 'repeats'):
            if getattr(self, name) < 1:
                problems.append(f'{name} must be >= 1')
        if self.seed < 0:
            problems.append('seed must be >= 0')
        if self.n_image > self.dataset.n_images:
            problems.append(f'n_image ({self.n_image}) exceeds the pool size '
                            f'({self.dataset.n_images})')
        if self.dataset.mode != constants.MODE_ROI and \
                self.region_size > min(self.dataset.shape[-2:]):
            problems.append(f'region_size ({self.region_size}) exceeds the '
                            f'image plane {list(self.dataset.shape[-2:])}')
        if not 0 < self.tau < 1:
            problems.append('tau must lie in (0, 1)')
        if not 0 < self.target <= 1:
            problems.append('target must lie in (0, 1]')
        if self.cap_mode not in (CAP_MODE_AUTO,) + constants.CAP_MODES:
            problems.append(f'cap_mode must be one of '
                            f'{(CAP_MODE_AUTO,) + constants.CAP_MODES}')
        if not 0 < self.cap_fraction <= 1:
            problems.append('cap_fraction must lie in (0, 1]')
        if self.class_weight_mask is not None:
            if len(self.class_weight_mask) != self.dataset.n_classes:
                problems.append(f'class_weight_mask needs '
                                f'{self.dataset.n_classes} entries')
            elif any(m < 0 for m in self.class_weight_mask) or \
                    not any(m > 0 for m in self.class_weight_mask):
                problems.append('class_weight_mask entries must be >= 0 with '
                                'at least one > 0')
        return problems

    def check(self) -> Self:
        """
        :raises ConfigError: listing every problem found.
        """
        try:
            problems = self.validate()
        except TypeError as e:
            problems = [f'a value has the wrong type ({e})']
        if problems:
            raise ConfigError(problems)
        return self

    def toDict(self) -> Dict[str, Any]:
        return listed(asdict(self))

    @classmethod
    def fromDict(cls, data: Dict[str, Any]) -> Self:
        """
        :raises ConfigError: on unknown keys or non-table sections.
        """
        problems: List[str] = []
        known = {f.name for f in fields(cls)}
        problems.extend(f'unknown key "{k}"' for k in sorted(set(data) - known))

        sections: Dict[str, Any] = {}
        for name, specClass in (('dataset', DatasetSpec), ('model', ModelSpec)):
            raw = data.get(name) or {}
            if not isinstance(raw, dict):
                problems.append(f'{name} must be a table')
                continue
            specKeys = [f.name for f in fields(specClass)]
            problems.extend(f'unknown key "{name}.{k}"'
                            for k in sorted(set(raw) - set(specKeys)))
            sections[name] = specClass(**{k: tupled(v) for k, v in
                                          dictKeepKeys(raw, specKeys).items()})
        if problems:
            raise ConfigError(problems)

        values = {k: tupled(v) for k, v in data.items()
                  if k in known and k not in sections}
        if isinstance(values.get('strategies'), str):
            values['strategies'] = (values['strategies'],)
        return cls(**sections, **values)


def setDotted(data: Dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split('.')
    target = data
    for part in parents:
        child = target.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError([f'cannot set "{key}": "{part}" is not a table'])
        target = child
    target[leaf] = value


def applyOverrides(data: Dict[str, Any],
                   overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply `key=value` overrides with dotted keys (`dataset.noise=0.5`);
    values are parsed as YAML scalars or flow sequences.
    """
    for override in overrides:
        key, sep, raw = override.partition('=')
        if not sep or not key.strip():
            raise ConfigError([f'override "{override}" is not key=value'])
        try:
            value = yaml.safe_load(raw) if raw.strip() else None
        except yaml.YAMLError as e:
            raise ConfigError([f'override "{override}": {e}']) from e
        setDotted(data, key.strip(), value)
    return data


def readYaml(path: Path | None,
             overrides: Sequence[str] = ()) -> Dict[str, Any]:
    """
    :raises ConfigError: when the file is missing, unreadable or not a
        table.
    """
    data: Any = {}
    if path is not None:
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except OSError as e:
            raise ConfigError([f'cannot read "{path}": {e}']) from e
        except yaml.YAMLError as e:
            raise ConfigError([f'"{path}" is not valid YAML: {e}']) from e
    if not isinstance(data, dict):
        raise ConfigError([f'"{path}" must hold a table of settings'])
    return applyOverrides(data, overrides)


def loadConfig(path: Path | None,
               overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Read an experiment YAML file (or start from defaults when `path` is
    None) and apply overrides.  Validation happens once the dataset is
    known, through `ExperimentConfig.check`.

    :raises ConfigError: when the file is missing, unreadable or holds
        unknown keys.
    """
    config = ExperimentConfig.fromDict(readYaml(path, overrides))
    LOGGER.debug(f'Loaded experiment configuration from "{path}"')
    return config


def sweepConfigs(config: ExperimentConfig,
                 axis: str) -> List[tuple[str, ExperimentConfig]]:
    """
    Variants of `config` along a sweep axis, labeled by axis value:

    - tau: each threshold in the standard sweep.
    - budget: (n_image, n_region) scaled by 1× and 2× on each axis.
    - dense-sparse: equal budgets spent as (k, 2m) "dense" and (2k, m)
      "sparse", from the configured (k, m).
    """
    k, m = config.n_image, config.n_region
    if axis == 'tau':
        return [(f'{tau:g}', replace(config, tau=tau))
                for tau in constants.TAU_SWEEP]
    if axis == 'budget':
        return [(f'{i}x{r}', replace(config, n_image=i, n_region=r))
                for i, r in ((k, m), (2 * k, m), (k, 2 * m), (2 * k, 2 * m))]
    if axis == 'dense-sparse':
        return [('dense', replace(config, n_image=k, n_region=2 * m)),
                ('sparse', replace(config, n_image=2 * k, n_region=m))]
    raise ConfigError([f'sweep axis must be one of {constants.SWEEP_AXES}, '
                       f'got "{axis}"'])
