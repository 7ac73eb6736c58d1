"""Flat run configuration, JSON loading and dataset construction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .graph import GraphDataset, LaplacianConfig, load_dir, normalize_laplacian, synth_sbm

STRATEGIES = ("uniform", "node_wise", "layer_wise", "subgraph", "mvs", "mvs_bandit")
NORM_SOURCES = ("last_layer_weight", "last_preactivation")


@dataclass
class TrainConfig:
    # dataset: a directory in the load_dir layout, or SBM parameters
    dataset_path: Optional[str] = None
    sbm_blocks: int = 4
    sbm_nodes_per_block: int = 75
    sbm_p_in: float = 0.3
    sbm_p_out: float = 0.02
    sbm_feature_dim: int = 16
    sbm_label_mode: str = "single"
    sbm_seed: int = 0
    norm_kind: str = "rw"
    add_self_loops: bool = True
    # model
    layers: int = 2
    hidden: int = 64
    aggregation: str = "plain"
    loss_mode: Optional[str] = None  # None picks from the label layout
    # sampling
    strategy: str = "mvs"
    batch_size: int = 32
    s: int = 5
    layer_sizes: Optional[list] = None
    layer_dist: str = "uniform"
    gamma: float = 1.0
    K: int = 20
    exact_inference: bool = False
    norm_source: str = "last_layer_weight"
    history_init: str = "full_forward"
    eta: float = 0.4
    bandit_delta: Optional[float] = None
    # optimisation
    lr: float = 0.01
    max_iters: int = 300
    patience: int = 0  # 0 disables early stopping
    early_stop_threshold: float = 0.01
    track_grad_var: bool = True
    seed: int = 0
    out: Optional[str] = None
    record_time: bool = False
    # variance experiment
    warmup: int = 15
    trials: int = 200
    strategies: Optional[list] = None

    def validate(self) -> "TrainConfig":
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(self.strategy in STRATEGIES, "strategy", f"must be one of {', '.join(STRATEGIES)}")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(0.0 < self.gamma <= 1.0, "gamma", "must lie in (0, 1]")
        need(self.K >= 1, "K", "must be >= 1")
        need(self.layers >= 1, "layers", "must be >= 1")
        need(self.hidden >= 1, "hidden", "must be >= 1")
        need(self.s >= 1, "s", "must be >= 1")
        need(self.aggregation in ("plain", "concat"), "aggregation", "must be plain or concat")
        need(self.loss_mode in (None, "softmax_ce", "sigmoid_bce"), "loss_mode", "must be softmax_ce or sigmoid_bce")
        need(self.norm_kind in ("rw", "sym"), "norm_kind", "must be rw or sym")
        need(self.layer_dist in ("uniform", "degree"), "layer_dist", "must be uniform or degree")
        need(self.norm_source in NORM_SOURCES, "norm_source", f"must be one of {', '.join(NORM_SOURCES)}")
        need(self.history_init in ("full_forward", "zeros"), "history_init", "must be full_forward or zeros")
        need(0.0 < self.eta < 0.5, "eta", "must lie in (0, 0.5)")
        need(self.bandit_delta is None or self.bandit_delta > 0, "bandit_delta", "must be positive")
        need(self.lr > 0, "lr", "must be positive")
        need(self.max_iters >= 1, "max_iters", "must be >= 1")
        need(self.patience >= 0, "patience", "must be >= 0")
        need(self.warmup >= 0, "warmup", "must be >= 0")
        need(self.trials >= 2, "trials", "must be >= 2")
        need(self.sbm_label_mode in ("single", "multi"), "sbm_label_mode", "must be single or multi")
        if self.layer_sizes is not None:
            need(len(self.layer_sizes) == self.layers, "layer_sizes", "needs one entry per layer")
            need(all(int(v) >= 1 for v in self.layer_sizes), "layer_sizes", "entries must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _coerce(name: str, value):
    """Type-check one JSON or CLI value against the field default's type."""
    if value is None:
        return None
    default = TrainConfig.__dataclass_fields__[name].default
    kind = type(default) if default is not None else None
    if name in ("layer_sizes", "strategies"):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        if not isinstance(value, list):
            raise ConfigError(name, "must be a list")
        return [int(v) for v in value] if name == "layer_sizes" else [str(v) for v in value]
    if name == "bandit_delta":
        kind = float
    if name in ("dataset_path", "loss_mode", "out"):
        kind = str
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError
                return value.lower() in ("true", "1")
            if not isinstance(value, bool):
                raise ValueError
            return value
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"cannot interpret {value!r} as {kind.__name__}") from None


def from_dict(data: dict, overrides: Optional[dict] = None) -> TrainConfig:
    merged = dict(data)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for k in merged:
        if k not in _FIELDS:
            raise ConfigError(k, "unknown field")
    return TrainConfig(**{k: _coerce(k, v) for k, v in merged.items()}).validate()


def load_config(path, overrides: Optional[dict] = None) -> TrainConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"no such file {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "must be a flat JSON object")
    return from_dict(data, overrides)


def build_dataset(cfg: TrainConfig) -> GraphDataset:
    if cfg.dataset_path is not None:
        return load_dir(cfg.dataset_path)
    return synth_sbm(cfg.sbm_blocks, cfg.sbm_nodes_per_block, cfg.sbm_p_in, cfg.sbm_p_out,
                     cfg.sbm_feature_dim, cfg.sbm_label_mode, cfg.sbm_seed)


def build_laplacian(cfg: TrainConfig, dataset: GraphDataset):
    return normalize_laplacian(dataset.adjacency, LaplacianConfig(cfg.norm_kind, cfg.add_self_loops))


def loss_mode_for(cfg: TrainConfig, dataset: GraphDataset) -> str:
    auto = "softmax_ce" if dataset.label_mode == "single" else "sigmoid_bce"
    if cfg.loss_mode is not None and cfg.loss_mode != auto:
        raise ConfigError("loss_mode", f"{cfg.loss_mode} does not fit {dataset.label_mode}-label data")
    return auto
