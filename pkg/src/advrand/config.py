"""Experiment configuration: INI text with sections, every key optional.

Example::

    [experiment]
    master_seed = 7

    [model]
    epochs = 4

    [attacks]
    names = fgsm-10, deepfool, cw

    [cw]
    c = 30

Output locations and worker counts are command-line flags, not config
keys, so they never leak into the echoed configuration.  Unknown sections
or keys and unparsable values raise :class:`ConfigError` naming the key
and its line.  :meth:`ExperimentConfig.to_dict` gives the
fully resolved configuration that is echoed into every output.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .attacks import AttackConfig
from .classifier import ModelArch
from .defense import ColorJitter, RandomizationParams
from .errors import ConfigError, ContractError
from .harness import SCENARIOS


@dataclass(frozen=True)
class ExperimentSection:
    master_seed: int = 0


@dataclass(frozen=True)
class DataSection:
    source: str = "synthetic"
    n_train: int = 8000
    n_test: int = 2000
    side: int = 28
    channels: int = 1
    seed: int = 0


@dataclass(frozen=True)
class ModelSection:
    conv1: int = 16
    conv2: int = 32
    kernel: int = 3
    stride1: int = 1
    stride2: int = 2
    init_seed: int = 0
    train_seed: int = 0
    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 32
    momentum: float = 0.9
    scale_min: int = 28
    scale_max_exclusive: int = 37
    # training-time brightness augmentation, 8-bit units; 0 disables it
    brightness: float = 0.0
    adversarial: bool = False
    mix_fraction: float = 0.5
    # FGSM training epsilons in 8-bit units
    epsilons: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0)

    def arch(self, side: int, channels: int, num_classes: int = 10) -> ModelArch:
        return ModelArch(side, channels, self.conv1, self.conv2, num_classes,
                         self.kernel, self.stride1, self.stride2)


@dataclass(frozen=True)
class DeepFoolSection:
    max_iter: int = 50
    overshoot: float = 0.02


@dataclass(frozen=True)
class CWSection:
    c: float = 30.0
    k: float = 0.0
    lr: float = 0.01
    max_iter: int = 200


@dataclass(frozen=True)
class AttacksSection:
    names: tuple[str, ...] = ("fgsm-2", "fgsm-5", "fgsm-10", "deepfool", "cw")
    seed: int = 0


@dataclass(frozen=True)
class DefenseSection:
    resize_min: int = 28
    resize_max_exclusive: int = 36
    pad_target: int = 36
    flip_prob: float = 0.0
    jitter: tuple[str, ...] = ()
    n_iterations: int = 1
    # iteration counts for the accuracy-versus-iterations sweep; empty disables it
    sweep: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvaluateSection:
    scenarios: tuple[str, ...] = ("vanilla", "single", "ensemble")
    n_images: int = 500
    ensemble_images: int = 500
    subset_seed: int = 1
    defense_runs: int = 3
    diagnose_attacks: tuple[str, ...] = ("deepfool", "cw")


SECTIONS = {
    "experiment": ExperimentSection, "data": DataSection, "model": ModelSection,
    "attacks": AttacksSection, "deepfool": DeepFoolSection, "cw": CWSection,
    "defense": DefenseSection, "evaluate": EvaluateSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    attacks: AttacksSection = field(default_factory=AttacksSection)
    deepfool: DeepFoolSection = field(default_factory=DeepFoolSection)
    cw: CWSection = field(default_factory=CWSection)
    defense: DefenseSection = field(default_factory=DefenseSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def __post_init__(self):
        for name in self.evaluate.scenarios:
            if name not in SCENARIOS[:3]:
                raise ConfigError(f"evaluate.scenarios: unknown scenario {name!r}")
        for name in self.attacks.names + self.evaluate.diagnose_attacks:
            self.attack(name)
        self.randomization()

    @property
    def master_seed(self) -> int:
        return self.experiment.master_seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, experiment=replace(self.experiment, master_seed=int(seed)))

    def with_overrides(self, section: str, **values) -> "ExperimentConfig":
        return replace(self, **{section: replace(getattr(self, section), **values)})

    def attack(self, name: str) -> AttackConfig:
        """Resolve an attack name: ``fgsm-<eps in 8-bit units>``, ``deepfool`` or ``cw``."""
        seed = self.attacks.seed
        try:
            if name.startswith("fgsm-"):
                return AttackConfig("fgsm", epsilon=float(name[5:]) / 255.0, seed=seed)
            if name == "deepfool":
                d = self.deepfool
                return AttackConfig("deepfool", max_iter=d.max_iter, overshoot=d.overshoot, seed=seed)
            if name == "cw":
                c = self.cw
                return AttackConfig("cw", max_iter=c.max_iter, c=c.c, k=c.k, lr=c.lr, seed=seed)
        except (ValueError, ContractError) as exc:
            raise ConfigError(f"attack {name!r}: {exc}") from exc
        raise ConfigError(f"unknown attack {name!r}; use fgsm-<eps>, deepfool or cw")

    def attack_configs(self) -> list[AttackConfig]:
        return [self.attack(n) for n in self.attacks.names]

    def randomization(self) -> RandomizationParams:
        d = self.defense
        try:
            jitter = ColorJitter.standard(*d.jitter) if d.jitter else None
            return RandomizationParams(self.data.side, d.resize_min, d.resize_max_exclusive,
                                       d.pad_target, d.flip_prob, jitter)
        except ContractError as exc:
            raise ConfigError(f"defense: {exc}") from exc

    def to_dict(self) -> dict:
        return {f.name: _plain(asdict(getattr(self, f.name))) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        kw = {}
        for name, section in SECTIONS.items():
            values = dict(d.get(name, {}))
            for f in fields(section):
                if f.name in values and isinstance(f.default, tuple):
                    values[f.name] = tuple(values[f.name])
            kw[name] = section(**values)
        return cls(**kw)


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` inside each ``[section]``."""
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and line and line[0] not in "#;" and ("=" in line or ":" in line):
            key = line.split("=", 1)[0] if "=" in line else line.split(":", 1)[0]
            out[(section, key.strip().lower())] = i
    return out


def _convert(raw: str, default, kind: str, where: str):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            # element type from the annotation, e.g. "tuple[int, ...]"
            if kind.startswith("tuple[int"):
                return tuple(int(s) for s in items)
            if kind.startswith("tuple[float"):
                return tuple(float(s) for s in items)
            return tuple(items)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    lines = _key_lines(text)
    kw = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        section = SECTIONS[name]
        defaults = {f.name: f.default for f in fields(section)}
        kinds = {f.name: str(f.type) for f in fields(section)}
        values = {}
        for key, raw in parser.items(name):
            where = f"{source}:{lines.get((name, key), '?')}: {name}.{key}"
            if key not in defaults:
                raise ConfigError(f"{where}: unknown key")
            values[key] = _convert(raw, defaults[key], kinds[key], where)
        try:
            kw[name] = section(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{name}]: {exc}") from exc
    try:
        return ExperimentConfig(**kw)
    except ContractError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))
