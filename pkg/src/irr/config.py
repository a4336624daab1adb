"""Run configuration: key=value files with dotted sections plus overrides.

Example file:

    model.d=32
    trainer.lambda=0.1
    paths.report_dir=out

Unknown keys are rejected; cross-field constraints (indexer/model L and K
agreement, head divisibility) are validated after parsing.
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .reporting import config_digest


def _to_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _to_int_tuple(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    return tuple(int(part) for part in str(text).split(",") if part.strip())


@dataclass
class IndexerSection:
    L: int = 4
    K: int = 128
    seed: int = 42
    max_iters: int = 50
    restarts: int = 4
    dedup: bool = True  # False: all L levels semantic (imported-table style)


@dataclass
class ModelSection:
    d: int = 32
    L: int = 4
    K: int = 128
    layers: int = 2
    heads: int = 2
    N: int = 30
    context: str = "cumsum"  # or "last": only the previous level's context


@dataclass
class TrainerSection:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 64
    epochs: int = 10
    lambda_: float = 0.1
    seed: int = 42
    grad_clip: float = 5.0
    user_side_tf: bool = True
    use_aln: bool = True
    redistribution: bool = True
    shared_ran: bool = True


@dataclass
class DecoderSection:
    widths: tuple[int, ...] = (10, 20, 50)
    constrained: bool = True


@dataclass
class BenchSection:
    users: int = 16
    batches: int = 30
    warmup: int = 3
    batch_size: int = 16
    items: int = 200


@dataclass
class PathsSection:
    embeddings: str = ""
    interactions: str = ""
    sid_table: str = ""
    checkpoint: str = ""
    report_dir: str = ""


_CONVERTERS = {int: int, float: float, bool: _to_bool, str: str}


@dataclass
class RunConfig:
    indexer: IndexerSection = field(default_factory=IndexerSection)
    model: ModelSection = field(default_factory=ModelSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    bench: BenchSection = field(default_factory=BenchSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def set_key(self, dotted: str, raw_value):
        section_name, _, key = dotted.partition(".")
        if not key or not hasattr(self, section_name):
            raise ConfigError(f"unknown configuration key {dotted!r}")
        section = getattr(self, section_name)
        attr = "lambda_" if (section_name, key) == ("trainer", "lambda") else key
        known = {f.name for f in fields(section)}
        if attr not in known:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        try:
            if isinstance(getattr(section, attr), tuple):
                value = _to_int_tuple(raw_value)
            else:
                value = _CONVERTERS[type(getattr(section, attr))](raw_value)
        except (ValueError, KeyError):
            raise ConfigError(f"bad value for {dotted}: {raw_value!r}") from None
        setattr(section, attr, value)

    def validate(self):
        if self.indexer.L != self.model.L:
            raise ConfigError(f"model.L={self.model.L} conflicts with indexer.L={self.indexer.L}")
        if self.indexer.K != self.model.K:
            raise ConfigError(f"model.K={self.model.K} conflicts with indexer.K={self.indexer.K}")
        if self.model.d % self.model.heads:
            raise ConfigError(f"model.d={self.model.d} not divisible by model.heads={self.model.heads}")
        if self.model.N < 1:
            raise ConfigError("model.N must be >= 1")
        if self.model.context not in ("cumsum", "last"):
            raise ConfigError(f"model.context must be cumsum|last, got {self.model.context!r}")
        if self.trainer.lambda_ < 0:
            raise ConfigError("trainer.lambda must be >= 0")
        if self.model.L < 2 and self.indexer.dedup:
            raise ConfigError("indexer.dedup requires L >= 2")
        return self

    def to_items(self) -> list[tuple[str, str]]:
        out = []
        for section_name in ("indexer", "model", "trainer", "decoder", "bench", "paths"):
            section = getattr(self, section_name)
            for f in fields(section):
                key = "lambda" if f.name == "lambda_" else f.name
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = "true" if value else "false"
                out.append((f"{section_name}.{key}", str(value)))
        return sorted(out)

    def resolved_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.to_items()) + "\n"

    def digest(self) -> str:
        return config_digest(self.resolved_text())

    def to_dict(self) -> dict:
        return dict(self.to_items())

    @classmethod
    def from_dict(cls, mapping: dict) -> "RunConfig":
        cfg = cls()
        for key, value in mapping.items():
            cfg.set_key(key, value)
        return cfg.validate()


def parse_config(path=None, overrides=()) -> RunConfig:
    """Load a key=value config file, apply --set overrides, validate."""
    cfg = RunConfig()
    if path:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            cfg.set_key(key.strip(), value.strip())
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg.set_key(key.strip(), value.strip())
    return cfg.validate()
