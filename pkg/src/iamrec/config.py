"""Flat ``key = value`` run configuration with typed validation.

Blank lines and ``#`` comments are ignored.  Lists are comma separated.
Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .masks import VARIANTS


class ConfigError(ValueError):
    pass


def _as_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _as_ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


_PARSERS = {int: int, float: float, str: str, bool: _as_bool, "ints": _as_ints}


@dataclass
class RunConfig:
    interactions: str = ""
    titles: str = ""
    out_dir: str = "runs"
    d: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    ffn_mult: int = 4
    max_len: int = 256
    variant: str = "iam"
    lora_rank: int = 0
    lora_alpha: float = 16.0
    lora_dropout: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    seeds: tuple[int, ...] = (1, 2, 3)
    five_core: bool = True
    min_count: int = 1

    def validate(self) -> "RunConfig":
        for name in ("d", "n_heads", "n_blocks", "ffn_mult", "max_len", "epochs", "batch_size", "min_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} must be divisible by n_heads={self.n_heads}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.lora_rank < 0 or self.lora_rank > self.d:
            raise ConfigError("lora_rank must be in [0, d]")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ConfigError("lora_dropout must be in [0, 1)")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        return self

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        if "seeds" in data:
            data["seeds"] = tuple(data["seeds"])
        return cls(**data).validate()


@dataclass
class GradCheckConfig:
    d: int = 16
    n_heads: int = 2
    n_blocks: int = 2
    ffn_mult: int = 4
    n_items: int = 20
    vocab_size: int = 40
    seq_len: int = 12
    batch: int = 3
    n_coords: int = 200
    eps: float = 1e-3
    tolerance: float = 1e-4
    seed: int = 0
    lora_rank: int = 0
    variants: str = ",".join(VARIANTS)

    def validate(self) -> "GradCheckConfig":
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} must be divisible by n_heads={self.n_heads}")
        if self.seq_len < 4:
            raise ConfigError("seq_len must be >= 4")
        for v in self.variant_list:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        return self

    @property
    def variant_list(self) -> list[str]:
        return [v.strip() for v in self.variants.split(",") if v.strip()]


def _field_types(cls) -> dict:
    hints = {}
    for f in fields(cls):
        t = f.type
        if isinstance(t, str):
            t = {"int": int, "float": float, "str": str, "bool": bool}.get(t, "ints" if "tuple" in t else str)
        hints[f.name] = t
    return hints


def parse_text(text: str, cls=RunConfig, source: str = "<config>"):
    types = _field_types(cls)
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate config key '{key}'")
        try:
            values[key] = _PARSERS[types[key]](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from None
    return cls(**values).validate()


def load_config(path, cls=RunConfig):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, cls, str(path))


def dump_text(cfg) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
