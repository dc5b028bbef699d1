"""Experiment configuration as flat ``key = value`` text.

Lines starting with ``#`` are comments; list values are comma-separated.
Keys use the command-line flag names with dashes turned into underscores.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .data import NORM_PROFILES
from .errors import ConfigurationError
from .vq import KINDS

__all__ = ["RunConfig", "MODEL_KINDS", "parse_config", "load_config", "model_kinds"]

MODEL_KINDS = KINDS + tuple("ne-" + k for k in KINDS)


@dataclass
class RunConfig:
    data: str = ""  # vector file; empty means synthesize
    queries: str = ""
    synth_n: int = 10000
    synth_d: int = 16
    profile: str = "longtail"
    n_queries: int = 200
    quantizers: list = field(default_factory=lambda: ["pq", "ne-pq", "rq", "ne-rq"])
    m: int = 8
    mprime: int = 1
    k: int = 256  # codewords per codebook
    topk: int = 20
    checkpoints: list = field(default_factory=list)  # empty: 1, 2, 5, 10, ... up to n
    seed: int = 0
    repetitions: int = 1
    beam_width: int = 32
    opq_rounds: int = 10
    aq_rounds: int = 3
    max_iters: int = 25
    train_sample: int = 100000
    exact_norm: bool = False
    normalize: bool = True
    error_study: bool = True
    figures: bool = True

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls()
        for key, raw in values.items():
            setattr(cfg, key, _coerce(key, raw, known[key].default, known[key].default_factory))
        cfg.validate()
        return cfg

    def merged(self, overrides: dict) -> "RunConfig":
        """Copy with ``overrides`` applied; ``None`` values are ignored."""
        values = dataclasses.asdict(self)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_mapping(values)

    def validate(self) -> None:
        bad = [q for q in self.quantizers if q not in MODEL_KINDS]
        if bad:
            raise ConfigurationError(f"unknown quantizers: {', '.join(bad)} (choose from {', '.join(MODEL_KINDS)})")
        if not self.quantizers:
            raise ConfigurationError("no quantizers configured")
        if self.profile not in NORM_PROFILES:
            raise ConfigurationError(f"profile must be one of {', '.join(NORM_PROFILES)}")
        checks = [
            ("m", self.m >= 1), ("k", 1 <= self.k <= 65536), ("topk", self.topk >= 1),
            ("repetitions", self.repetitions >= 1), ("synth_n", self.synth_n >= 1),
            ("synth_d", self.synth_d >= 1), ("n_queries", self.n_queries >= 1),
            ("beam_width", self.beam_width >= 1), ("opq_rounds", self.opq_rounds >= 1),
            ("aq_rounds", self.aq_rounds >= 0), ("max_iters", self.max_iters >= 1),
            ("train_sample", self.train_sample >= 1),
            ("checkpoints", all(t >= 1 for t in self.checkpoints)),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigurationError(f"{name} = {getattr(self, name)!r} is out of range")
        if any(q.startswith("ne-") for q in self.quantizers) and not self.exact_norm:
            if not 1 <= self.mprime <= self.m - 1:
                raise ConfigurationError(f"mprime must lie in [1, m-1] = [1, {self.m - 1}]")


def _coerce(key, raw, default, factory):
    if isinstance(raw, str):
        raw = raw.strip()
    if factory is not dataclasses.MISSING:
        items = raw.split(",") if isinstance(raw, str) else list(raw)
        items = [str(v).strip() for v in items if str(v).strip()]
        if key == "checkpoints":
            return [_int(key, v) for v in items]
        return [v.lower() for v in items]
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        low = str(raw).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return _int(key, raw)
    return str(raw)


def _int(key, v) -> int:
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: expected an integer, got {v!r}") from None


def parse_config(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        values = parse_config(fh.read())
    cfg = RunConfig.from_mapping(values)
    return cfg.merged(overrides) if overrides else cfg


def model_kinds(cfg: RunConfig) -> list[str]:
    return list(dict.fromkeys(cfg.quantizers))
