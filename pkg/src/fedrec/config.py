"""Experiment configuration: INI file with sections, flags override values."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .boost import BoosterConfig
from .data import SynthConfig
from .errors import ConfigError
from .fed import FEDAVG, FEDPROX, StrategyConfig

SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class DataConfig:
    source: str = SYNTHETIC
    delimiter: str = ","
    user_column: str = "user_id"
    skill_column: str = "skill_id"
    correct_column: str = "correct"
    min_user_interactions: int = 50
    min_skill_interactions: int = 100
    test_fraction: float = 0.2

    @property
    def is_synthetic(self) -> bool:
        return self.source == SYNTHETIC


@dataclass(frozen=True)
class FedGridConfig:
    """Settings shared by every federated run plus the strategy list."""

    strategies: tuple[tuple[str, float], ...] = (
        (FEDAVG, 0.0),
        (FEDPROX, 0.1),
        (FEDPROX, 0.5),
        (FEDPROX, 1.0),
    )
    rounds: int = 30
    fraction_fit: float = 0.2
    min_fit_clients: int = 10
    local_epochs: int = 5
    learning_rate: float = 0.01
    batch_size: int = 32
    optimizer: str = "adam"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/reference"
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SynthConfig = field(default_factory=lambda: SynthConfig(ability_mean=1.5))
    central: BoosterConfig = field(default_factory=BoosterConfig)
    fed: FedGridConfig = field(default_factory=FedGridConfig)

    def synth_config(self) -> SynthConfig:
        return replace(self.synthetic, seed=self.seed)

    def booster_config(self) -> BoosterConfig:
        return replace(self.central, seed=self.seed)

    def strategies(self) -> list[StrategyConfig]:
        f = self.fed
        if not f.strategies:
            raise ConfigError("at least one federated strategy is required")
        return [
            StrategyConfig(
                kind=kind,
                mu=mu,
                rounds=f.rounds,
                fraction_fit=f.fraction_fit,
                min_fit_clients=f.min_fit_clients,
                local_epochs=f.local_epochs,
                learning_rate=f.learning_rate,
                batch_size=f.batch_size,
                seed=self.seed,
                optimizer=f.optimizer,
            )
            for kind, mu in f.strategies
        ]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["synthetic"] = asdict(self.synth_config())
        d["central"] = asdict(self.booster_config())
        d["fed"]["strategies"] = [f"{k}:{mu:g}" if k == FEDPROX else k for k, mu in self.fed.strategies]
        return d


def parse_strategies(text: str) -> tuple[tuple[str, float], ...]:
    """``"fedavg, fedprox:0.5"`` -> ``(("fedavg", 0.0), ("fedprox", 0.5))``."""
    out = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        name, _, mu = item.partition(":")
        name = name.strip().lower()
        if name == FEDAVG and not mu:
            out.append((FEDAVG, 0.0))
        elif name == FEDPROX and mu:
            out.append((FEDPROX, float(mu)))
        else:
            raise ConfigError(f"bad strategy {item!r}; use 'fedavg' or 'fedprox:<mu>'")
    if not out:
        raise ConfigError("at least one federated strategy is required")
    return tuple(out)


def _section(parser, name, defaults, converters):
    if not parser.has_section(name):
        return defaults
    values = {}
    for key, raw in parser.items(name):
        key = {"lambda": "reg_lambda"}.get(key, key)
        if key not in converters:
            raise ConfigError(f"unknown key [{name}] {key}")
        try:
            values[key] = converters[key](raw)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    try:
        return replace(defaults, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def _range(text: str) -> tuple[int, int]:
    parts = [p for p in text.replace("..", ",").replace("-", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"expected 'min, max', got {text!r}")
    return int(parts[0]), int(parts[1])


def _converters_for(cls, special=None) -> dict:
    conv = {}
    for name, f in cls.__dataclass_fields__.items():
        t = str(f.type)
        conv[name] = int if t == "int" else float if t == "float" else str
    conv.update(special or {})
    return conv


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read an INI config (or use defaults) and apply non-None overrides.

    Recognised overrides: ``seed``, ``out``, ``source``, ``strategies``, ``rounds``.
    """
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        unknown = set(parser.sections()) - {"experiment", "data", "synthetic", "central", "fed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        exp = _section(parser, "experiment", cfg, {"seed": int, "out": str})
        cfg = replace(
            exp,
            data=_section(parser, "data", cfg.data, _converters_for(DataConfig)),
            synthetic=_section(
                parser,
                "synthetic",
                cfg.synthetic,
                _converters_for(SynthConfig, {"interactions_per_user": _range}),
            ),
            central=_section(parser, "central", cfg.central, _converters_for(BoosterConfig)),
            fed=_section(
                parser, "fed", cfg.fed, _converters_for(FedGridConfig, {"strategies": parse_strategies})
            ),
        )
    if overrides.get("seed") is not None:
        cfg = replace(cfg, seed=int(overrides["seed"]))
    if overrides.get("out") is not None:
        cfg = replace(cfg, out=str(overrides["out"]))
    if overrides.get("source") is not None:
        cfg = replace(cfg, data=replace(cfg.data, source=str(overrides["source"])))
    if overrides.get("strategies") is not None:
        cfg = replace(cfg, fed=replace(cfg.fed, strategies=parse_strategies(overrides["strategies"])))
    if overrides.get("rounds") is not None:
        cfg = replace(cfg, fed=replace(cfg.fed, rounds=int(overrides["rounds"])))
    try:
        cfg.strategies()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 < cfg.data.test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    return cfg
