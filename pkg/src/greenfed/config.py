"""INI configuration for simulation runs.

Sections mirror the simulator's sub-configs: [simulation], [selection],
[optimizer], [model], [data], [traces]. Every key has a default, so a
minimal config only names the trace files.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .nn import CnnArch, SgdConfig
from .orchestrator import SimConfig
from .selection import SelectionConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    dataset: str = "synthetic"        # synthetic | idx
    num_classes: int = 10
    train_size: int = 800
    test_size: int = 200
    image_size: int = 8
    noise: float = 0.35
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    partitioner: str = "balanced"     # balanced | dirichlet
    beta: float = 0.5
    labels_per_user: int = 2


@dataclass
class TraceConfig:
    solar: str = ""
    spare: str = ""
    mapping: str = ""
    step_minutes: float = 5.0


@dataclass
class RunConfig:
    sim: SimConfig
    data: DataConfig
    traces: TraceConfig


def _get(parser, section, key, cast, default):
    if not parser.has_section(section) or not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            return parser.getboolean(section, key)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read(path)

    try:
        sel = SelectionConfig(
            alpha=_get(parser, "selection", "alpha", float, 1.0),
            exclusion_factor=_get(parser, "selection", "exclusion_factor", int, 1),
            min_clients=_get(parser, "selection", "min_clients", int, 3),
            max_fraction=_get(parser, "selection", "max_fraction", float, 0.1),
            forecast_horizon=_get(parser, "selection", "forecast_horizon", int, 12),
            max_loop_iters=_get(parser, "selection", "max_loop_iters", int, 24),
            default_rate=_get(parser, "selection", "default_rate", float, 0.0625),
        )
        sgd = SgdConfig(
            learning_rate=_get(parser, "optimizer", "learning_rate", float, 0.001),
            momentum=_get(parser, "optimizer", "momentum", float, 0.9),
            weight_decay=_get(parser, "optimizer", "weight_decay", float, 5.0e-4),
            epochs=_get(parser, "optimizer", "epochs", int, 1),
            batch_size=_get(parser, "optimizer", "batch_size", int, 10),
        )
        data = DataConfig(
            dataset=_get(parser, "data", "dataset", str, "synthetic"),
            num_classes=_get(parser, "data", "num_classes", int, 10),
            train_size=_get(parser, "data", "train_size", int, 800),
            test_size=_get(parser, "data", "test_size", int, 200),
            image_size=_get(parser, "data", "image_size", int, 8),
            noise=_get(parser, "data", "noise", float, 0.35),
            idx_train_images=_get(parser, "data", "idx_train_images", str, ""),
            idx_train_labels=_get(parser, "data", "idx_train_labels", str, ""),
            idx_test_images=_get(parser, "data", "idx_test_images", str, ""),
            idx_test_labels=_get(parser, "data", "idx_test_labels", str, ""),
            partitioner=_get(parser, "data", "partitioner", str, "balanced"),
            beta=_get(parser, "data", "beta", float, 0.5),
            labels_per_user=_get(parser, "data", "labels_per_user", int, 2),
        )
        arch = CnnArch(
            in_channels=1,
            image_size=data.image_size,
            hidden_channels=_get(parser, "model", "hidden_channels", int, 16),
            num_classes=data.num_classes,
        )
        sim = SimConfig(
            rounds=_get(parser, "simulation", "rounds", int, 15),
            num_clients=_get(parser, "simulation", "num_clients", int, 100),
            seed=_get(parser, "simulation", "seed", int, 0),
            round_window_steps=_get(parser, "simulation", "round_window_steps", int, 12),
            trace_start_step=_get(parser, "simulation", "trace_start_step", int, 0),
            selection=sel,
            sgd=sgd,
            arch=arch,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    traces = TraceConfig(
        solar=_get(parser, "traces", "solar", str, ""),
        spare=_get(parser, "traces", "spare", str, ""),
        mapping=_get(parser, "traces", "mapping", str, ""),
        step_minutes=_get(parser, "traces", "step_minutes", float, 5.0),
    )
    # trace paths are relative to the config file
    for name in ("solar", "spare", "mapping"):
        val = getattr(traces, name)
        if val and not Path(val).is_absolute():
            setattr(traces, name, str(path.parent / val))

    if data.dataset not in ("synthetic", "idx"):
        raise ConfigError(f"[data] dataset must be synthetic or idx, got {data.dataset!r}")
    if data.partitioner not in ("balanced", "dirichlet"):
        raise ConfigError(
            f"[data] partitioner must be balanced or dirichlet, got {data.partitioner!r}"
        )
    return RunConfig(sim=sim, data=data, traces=traces)
