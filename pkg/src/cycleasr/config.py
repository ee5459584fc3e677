"""Experiment configuration and its INI representation.

A config file has one section per module; every key is optional and falls
back to the dataclass default::

    [corpus]
    alphabet = abcdefg
    utterances = 1000
    ...
    [experiment]
    variant = Retrain-cyc+idt
    alpha = 0.5
    beta = 0.4
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any

from .corpus import CorpusConfig


class Variant(str, Enum):
    INITIAL = "Initial"
    BASELINE = "Baseline"
    IDT = "Retrain-idt"
    CYC = "Retrain-cyc"
    CYC_IDT = "Retrain-cyc+idt"

    @classmethod
    def parse(cls, name: str | "Variant") -> "Variant":
        if isinstance(name, Variant):
            return name
        for v in cls:
            if v.value.lower() == str(name).strip().lower():
                return v
        raise ValueError(f"unknown variant {name!r}; expected one of {[v.value for v in cls]}")


RETRAIN_VARIANTS = (Variant.BASELINE, Variant.IDT, Variant.CYC, Variant.CYC_IDT)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel for MMD; ``bandwidth=None`` selects the per-batch median heuristic."""

    bandwidth: float | None = None
    estimator: str = "biased"

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError(f"kernel bandwidth must be positive, got {self.bandwidth}")
        if self.estimator not in ("biased", "unbiased"):
            raise ConfigError(f"estimator must be 'biased' or 'unbiased', got {self.estimator!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    variant: Variant = Variant.CYC_IDT
    alpha: float = 0.5
    beta: float = 0.4
    ctc_weight: float = 0.3
    # training
    epochs_initial: int = 15
    epochs_retrain: int = 10
    epochs_lm: int = 5
    batch_size: int = 5
    patience: int = 3
    rho: float = 0.95
    eps: float = 1e-6
    seed: int = 0
    # architecture
    hidden: int = 64
    shared_layers: int = 1
    decoder_layers: int = 1
    embed_dim: int = 16
    att_dim: int = 64
    lm_hidden: int = 32
    # losses and decoding
    kernel: KernelConfig = field(default_factory=KernelConfig)
    max_len_factor: float = 1.5
    beam_width: int = 5
    lm_weight: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if isinstance(self.kernel, dict):
            object.__setattr__(self, "kernel", KernelConfig(**self.kernel))
        for name in ("alpha", "beta", "ctc_weight"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("epochs_initial", "epochs_retrain", "epochs_lm", "patience"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("batch_size", "hidden", "embed_dim", "att_dim", "lm_hidden", "beam_width", "decoder_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not 1 <= self.shared_layers <= 4:
            raise ConfigError(f"shared_layers must be in 1..4, got {self.shared_layers}")
        if not 0.0 < self.rho < 1.0 or not self.eps > 0:
            raise ConfigError("adadelta needs 0 < rho < 1 and eps > 0")
        if self.lm_weight < 0 or self.max_len_factor <= 0:
            raise ConfigError("lm_weight must be >= 0 and max_len_factor > 0")

    @property
    def effective_alpha(self) -> float:
        return 1.0 if self.variant is Variant.INITIAL else self.alpha

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def stage_seed(root: int, stage: str) -> int:
    """Deterministic per-stage seed derived from the root seed."""
    digest = hashlib.sha256(f"{root}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# ---------------------------------------------------------------------------
# INI I/O
# ---------------------------------------------------------------------------

def _coerce(raw: str, target: Any, name: str):
    if raw.strip().lower() in ("none", "median"):
        return None
    if target is None:
        return float(raw)
    if isinstance(target, Enum):
        return type(target).parse(raw)
    if isinstance(target, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(target, int):
        return int(raw)
    if isinstance(target, float):
        return float(raw)
    if isinstance(target, tuple):
        return tuple(float(v) for v in raw.split(",") if v.strip())
    return raw


def _apply_section(obj, section: dict[str, str], label: str):
    known = {f.name: f for f in fields(obj)}
    changes = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"[{label}] unknown key {key!r}")
        try:
            changes[key] = _coerce(raw, getattr(obj, key), f"{label}.{key}")
        except ValueError as exc:
            raise ConfigError(f"[{label}] invalid value for {key}: {raw!r} ({exc})") from None
    try:
        return dataclasses.replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{label}] {exc}") from None


def _raw_alphabet(section):
    # configparser strips surrounding whitespace, so the alphabet is quoted
    if "alphabet" in section:
        section = dict(section)
        section["alphabet"] = section["alphabet"].strip().strip('"')
    return section


def parse_config(text: str) -> tuple[CorpusConfig, ExperimentConfig]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    unknown = set(parser.sections()) - {"corpus", "experiment", "kernel"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    corpus = CorpusConfig()
    exp = ExperimentConfig()
    if parser.has_section("corpus"):
        corpus = _apply_section(corpus, _raw_alphabet(parser["corpus"]), "corpus")
    if parser.has_section("experiment"):
        exp = _apply_section(exp, dict(parser["experiment"]), "experiment")
    if parser.has_section("kernel"):
        exp = exp.replace(kernel=_apply_section(exp.kernel, dict(parser["kernel"]), "kernel"))
    return corpus, exp


def load_config(path: str | Path | None) -> tuple[CorpusConfig, ExperimentConfig]:
    if path is None:
        return CorpusConfig(), ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))


def _fmt(v) -> str:
    if isinstance(v, Enum):
        return v.value
    if v is None:
        return "median"
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(corpus: CorpusConfig, exp: ExperimentConfig) -> str:
    """Resolved config as INI text; ``parse_config(dump_config(c, e)) == (c, e)``."""
    out = io.StringIO()
    out.write("[corpus]\n")
    for f in fields(corpus):
        v = getattr(corpus, f.name)
        out.write(f'{f.name} = "{v}"\n' if f.name == "alphabet" else f"{f.name} = {_fmt(v)}\n")
    out.write("\n[experiment]\n")
    for f in fields(exp):
        if f.name != "kernel":
            out.write(f"{f.name} = {_fmt(getattr(exp, f.name))}\n")
    out.write("\n[kernel]\n")
    for f in fields(exp.kernel):
        out.write(f"{f.name} = {_fmt(getattr(exp.kernel, f.name))}\n")
    return out.getvalue()


def apply_overrides(corpus: CorpusConfig, exp: ExperimentConfig, overrides: list[str]
                    ) -> tuple[CorpusConfig, ExperimentConfig]:
    """Apply ``section.key=value`` overrides with the same coercion as the INI reader."""
    grouped: dict[str, dict[str, str]] = {"corpus": {}, "experiment": {}, "kernel": {}}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if section not in grouped:
            raise ConfigError(f"unknown config section in override: {section!r}")
        grouped[section][name] = value.strip()
    if grouped["corpus"]:
        corpus = _apply_section(corpus, _raw_alphabet(grouped["corpus"]), "corpus")
    if grouped["experiment"]:
        exp = _apply_section(exp, grouped["experiment"], "experiment")
    if grouped["kernel"]:
        exp = exp.replace(kernel=_apply_section(exp.kernel, grouped["kernel"], "kernel"))
    return corpus, exp
