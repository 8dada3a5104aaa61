"""Flat JSON run configuration shared by every CLI subcommand.

Unknown keys and ill-typed values are hard errors that name the offending key.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .editors import EDITORS, EditConfig
from .errors import InvalidInputError
from .graph import SbmConfig
from .models import ARCHITECTURES, ModelConfig, TrainHyper


class ConfigError(InvalidInputError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None

    # data
    dataset: str = "sbm"  # sbm | cora-raw | generic-csv
    data_path: str = ""
    largest_cc: bool | None = None
    split_train: float = 0.6
    split_val: float = 0.2
    split_test: float = 0.2
    sbm_blocks: int = 7
    sbm_block_size: int = 355
    sbm_p_in: float = 0.0093
    sbm_p_out: float = 0.0012
    sbm_dim: int = 64
    sbm_separation: float = 2.0
    sbm_noise: float = 1.0

    # model + training
    arch: str = "gcn"
    layers: int = 2
    hidden: int = 32
    dropout: float = 0.1
    lr: float = 0.01
    epochs: int = 200

    # editing
    editor: str = "egnn"
    n_edits: int = 50
    threads: int = 1
    edit_lr: float = 0.01
    edit_budget: int = 100
    alpha: float = 0.1
    prepare_steps: int = 100
    prepare_batch: int = 0
    prepare_lr: float = 1e-3
    mlp_layers: int = 2
    mlp_hidden: int = 32
    zero_init_output: bool = True

    # generalisation
    group_class: int = 0
    flip_fraction: float = 0.1

    # landscape
    landscape_radius: float = 0.1
    landscape_resolution: int = 25
    landscape_pairs: int = 10
    landscape_mask: str = "train"

    # theory
    theory_trials: int = 100
    theory_step: float = 1e-2
    theory_l2: float = 0.1
    theory_match_scale: bool = True
    theory_block_size: int = 50
    theory_p_in: float = 0.3
    theory_p_out: float = 0.02
    theory_dim: int = 16
    theory_separation: float = 1.0
    theory_noise: float = 1.0
    theory_null_p: float = 0.1  # null model: p_in = p_out = this, zero separation

    def validate(self) -> "RunConfig":
        if self.seed is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)", "seed")
        if self.dataset not in ("sbm", "cora-raw", "generic-csv"):
            raise ConfigError(f"dataset must be sbm, cora-raw or generic-csv, got {self.dataset!r}", "dataset")
        if self.dataset != "sbm":
            if not self.data_path:
                raise ConfigError(f"dataset {self.dataset} needs data_path", "data_path")
            if not Path(self.data_path).exists() and not Path(self.data_path + ".content").exists():
                raise ConfigError(f"data_path {self.data_path!r} does not exist", "data_path")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}", "arch")
        if self.editor not in EDITORS:
            raise ConfigError(f"editor must be one of {EDITORS}", "editor")
        if self.landscape_mask not in ("train", "val", "test", "all"):
            raise ConfigError("landscape_mask must be train, val, test or all", "landscape_mask")
        for key in ("n_edits", "epochs", "prepare_steps", "theory_trials"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative", key)
        if self.threads < 1:
            raise ConfigError("threads must be >= 1", "threads")
        # constructing the sub-configs runs their own validation
        builders = (self.model_config, self.hyper, self.edit_config, self.sbm_config, self.theory_sbm,
                    self.theory_null_sbm)
        for build in builders:
            try:
                build()
            except InvalidInputError as exc:
                raise ConfigError(f"{build.__name__}: {exc}", build.__name__) from None
        return self

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.arch, self.layers, self.hidden, self.dropout, self.seed or 0)

    def hyper(self) -> TrainHyper:
        return TrainHyper(self.lr, self.epochs, self.seed or 0)

    def edit_config(self) -> EditConfig:
        return EditConfig(self.edit_lr, self.edit_budget, self.alpha, self.prepare_steps, self.prepare_batch,
                          self.prepare_lr, self.mlp_layers, self.mlp_hidden, self.zero_init_output, self.seed or 0)

    def sbm_config(self) -> SbmConfig:
        return SbmConfig(self.sbm_blocks, self.sbm_block_size, self.sbm_p_in, self.sbm_p_out, self.sbm_dim,
                         self.sbm_separation, self.sbm_noise, self.seed or 0)

    def theory_null_sbm(self) -> SbmConfig:
        return replace(self.theory_sbm(), p_in=self.theory_null_p, p_out=self.theory_null_p, separation=0.0)

    def theory_sbm(self) -> SbmConfig:
        return SbmConfig(2, self.theory_block_size, self.theory_p_in, self.theory_p_out, self.theory_dim,
                         self.theory_separation, self.theory_noise, self.seed or 0)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value):
    ftype = str(_FIELDS[key].type)
    if "bool" in ftype:
        if value is None and "None" in ftype:
            return None
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be a boolean", key)
    if ftype.startswith("int"):
        if value is None and "None" in ftype:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer", key)
        return value
    if ftype == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number", key)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string", key)
    return value


def merge(base: RunConfig, overrides: dict) -> RunConfig:
    unknown = sorted(set(overrides) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}", unknown[0])
    return replace(base, **{k: _coerce(k, v) for k, v in overrides.items()})


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {str(p)!r} not found", "config")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {str(p)!r} is not valid JSON: {exc}", "config") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", "config")
    return raw
