"""Run configuration: a JSON file plus ``key=value`` overrides (overrides win)."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .hyperparams import HyperParams

OUTPUT_ROOT_ENV = "INTRARANK_OUTPUT_ROOT"


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def desk_hparams() -> HyperParams:
    # A from-scratch MLP needs a larger step than a pretrained backbone.
    return HyperParams(lr=1e-3)


@dataclass
class RunConfig:
    hparams: HyperParams = field(default_factory=desk_hparams)
    # model
    hidden: list[int] = field(default_factory=lambda: [64])
    latent_dim: int = 32
    proj_dim: int = 32
    # data: "bundled", "synthetic" or a CSV path
    dataset: str = "bundled"
    split_path: str | None = None
    query_path: str | None = None
    gallery_path: str | None = None
    synthetic: dict = field(default_factory=dict)  # overrides for generate_synthetic
    # run
    seed: int = 0
    out_dir: str | None = None
    eval_ks: list[int] = field(default_factory=lambda: [1, 2, 4, 8])

    def validate(self) -> "RunConfig":
        self.hparams.validate()
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ConfigError("hidden layer sizes must be positive")
        if self.latent_dim < 1 or self.proj_dim < 1:
            raise ConfigError("latent_dim and proj_dim must be positive")
        if not self.eval_ks or any(int(k) < 1 for k in self.eval_ks):
            raise ConfigError("eval_ks must be positive integers")
        self.eval_ks = sorted(int(k) for k in self.eval_ks)
        self.hidden = [int(h) for h in self.hidden]
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        hp_raw = raw.pop("hparams", {}) or {}
        hp_fields = {f.name for f in dataclasses.fields(HyperParams)}
        own_fields = {f.name for f in dataclasses.fields(cls)} - {"hparams"}
        # hyperparameters may also appear at the top level
        for key in list(raw):
            if key in hp_fields and key not in own_fields:
                hp_raw[key] = raw.pop(key)
        unknown = set(raw) - own_fields
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        bad_hp = set(hp_raw) - hp_fields
        if bad_hp:
            raise ConfigError(f"unknown hyperparameters: {sorted(bad_hp)}")
        hp = dataclasses.replace(desk_hparams(), **hp_raw)
        try:
            return cls(hparams=hp, **raw).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items) -> dict:
    """``["tau=32", "hparams.delta=0.2", "hidden=[32,32]"]`` -> nested dict."""
    out: dict = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, value = item.partition("=")
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(value.strip())
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_dict(_merge(_canonical(raw), _canonical(parse_overrides(overrides))))


def _canonical(raw: dict) -> dict:
    """Move top-level hyperparameter keys under ``hparams``."""
    raw = dict(raw)
    hp = dict(raw.pop("hparams", {}) or {})
    hp_fields = {f.name for f in dataclasses.fields(HyperParams)}
    own = {f.name for f in dataclasses.fields(RunConfig)}
    for key in list(raw):
        if key in hp_fields and key not in own:
            hp[key] = raw.pop(key)
    if hp:
        raw["hparams"] = hp
    return raw
