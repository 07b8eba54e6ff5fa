"""
YAML configuration files.

A configuration file is a mapping with the optional sections ``synth``,
``architecture``, ``train``, ``search``, ``label``, ``action`` and ``report``.
Each section sets fields of the corresponding configuration class; missing
fields keep their defaults. For example::

    synth:
      seed: 3
      dx: 750
      intrinsics: {fx: 230, fy: 230, cx: 128, cy: 128}
    train:
      epochs: 50
    search:
      mode: closed-form
      residual_frame: root
"""
import enum
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict

import yaml

from stereopose.action import ActionConfig
from stereopose.geometry import CameraIntrinsics
from stereopose.geosearch import SearchConfig
from stereopose.labeling import LabelConfig
from stereopose.lifting import LifterArchitecture
from stereopose.neuralnet import TrainConfig
from stereopose.report import ReportConfig
from stereopose.skeleton import get_schema
from stereopose.synthgen import SynthConfig


class ConfigError(ValueError):
    """Raised when a configuration file is malformed"""


@dataclass(frozen=True)
class StereoPoseConfig:
    """The complete configuration of all commands"""

    synth: SynthConfig = field(default_factory=SynthConfig)
    architecture: LifterArchitecture = field(
        default_factory=LifterArchitecture
    )
    train: TrainConfig = field(default_factory=TrainConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    action: ActionConfig = field(default_factory=ActionConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def with_seed(self, seed):
        """Set the seed of every section that has one"""
        return replace(
            self,
            synth=replace(self.synth, seed=seed),
            architecture=replace(self.architecture, seed=seed),
            train=replace(self.train, seed=seed),
            action=replace(self.action, seed=seed),
        )


_SECTION_CLASSES = {
    "synth": SynthConfig,
    "architecture": LifterArchitecture,
    "train": TrainConfig,
    "search": SearchConfig,
    "label": LabelConfig,
    "action": ActionConfig,
    "report": ReportConfig,
}


def _synth_value(key, value):
    if key == "intrinsics":
        return CameraIntrinsics.from_dict(value)
    if key == "schema":
        return get_schema(value)
    if key in ("root_depth_range", "yaw_range"):
        return tuple(float(item) for item in value)
    if key == "bone_length_ranges":
        return {name: tuple(float(item) for item in bounds)
                for name, bounds in value.items()}
    if key == "joint_angle_ranges":
        return {name: float(limit) for name, limit in value.items()}
    return value


def _build_section(name, data):
    cls = _SECTION_CLASSES[name]
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError("Section %r must be a mapping" % name)
    known = {item.name for item in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError("Unknown keys in section %r: %s"
                          % (name, ", ".join(unknown)))
    values = dict(data)
    try:
        if name == "synth":
            values = {key: _synth_value(key, value)
                      for key, value in values.items()}
        return cls(**values)
    except (TypeError, ValueError, KeyError, AttributeError) as error:
        raise ConfigError("Invalid section %r: %s" % (name, error)) from error


def config_from_dict(data) -> StereoPoseConfig:
    """Build a configuration from a mapping of sections

    Raises:
        ConfigError: if a section or a key is unknown or a value is invalid
    """
    if data is None:
        return StereoPoseConfig()
    if not isinstance(data, dict):
        raise ConfigError("A configuration must be a mapping of sections")
    unknown = sorted(set(data) - set(_SECTION_CLASSES))
    if unknown:
        raise ConfigError("Unknown configuration sections: %s"
                          % ", ".join(unknown))
    return StereoPoseConfig(**{
        name: _build_section(name, data.get(name))
        for name in _SECTION_CLASSES
    })


def load_config(path) -> StereoPoseConfig:
    """Read a YAML configuration file

    Raises:
        ConfigError: if the file cannot be read or is malformed
    """
    try:
        with open(path, "r", encoding="utf-8") as stream:
            data = yaml.safe_load(stream)
    except OSError as error:
        raise ConfigError("Cannot read %s: %s" % (path, error)) from error
    except yaml.YAMLError as error:
        raise ConfigError("%s is not valid YAML: %s" % (path, error)) from error
    return config_from_dict(data)


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, CameraIntrinsics):
        return value.to_dict()
    if hasattr(value, "joint_names"):
        return value.name
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def config_to_dict(config: StereoPoseConfig) -> Dict[str, Any]:
    """Represent a configuration as nested plain values"""
    return {
        section: {
            item.name: _plain(getattr(getattr(config, section), item.name))
            for item in fields(getattr(config, section))
        }
        for section in _SECTION_CLASSES
    }


def dump_config(config: StereoPoseConfig, path=None) -> str:
    """Write the effective configuration as YAML.

    Returns:
        The YAML text, which is also written to ``path`` if given
    """
    text = yaml.safe_dump(config_to_dict(config), sort_keys=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
