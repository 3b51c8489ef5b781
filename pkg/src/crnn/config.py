"""``key=value`` run configuration.

Unknown keys and malformed values are rejected when the file is read.  Lines
starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import FormatError, UsageError


def _int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


@dataclass
class Config:
    alphabet_size: int = 10
    window: int = 20
    stride: int = 8
    layers: int = 2
    hidden: list[int] = field(default_factory=lambda: [128, 32])
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 1
    clip: float = 5.0
    val_fraction: float = 0.1
    seed: int = 0
    cnn_lr: float = 1e-3
    cnn_momentum: float = 0.9
    cnn_epochs: int = 3
    cnn_batch_size: int = 32
    num_samples: int = 100
    min_digits: int = 1
    max_digits: int = 5
    noise: float = 0.2
    jitter: int = 2
    train_data: str = ""
    test_data: str = ""

    @property
    def num_classes(self) -> int:
        return self.alphabet_size + 1

    def validate(self) -> "Config":
        if self.alphabet_size != 10:
            raise UsageError("alphabet_size must be 10 (digits)")
        if self.window != 20:
            raise UsageError("window must be 20 to match the CNN input")
        if self.stride < 1:
            raise UsageError("stride must be positive")
        if self.layers not in (1, 2):
            raise UsageError("layers must be 1 or 2")
        if len(self.hidden) != self.layers or any(h < 1 for h in self.hidden):
            raise UsageError(f"hidden needs {self.layers} positive sizes, got {self.hidden}")
        for name in ("lr", "cnn_lr"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative")
        for name in ("momentum", "cnn_momentum"):
            if not 0 <= getattr(self, name) < 1:
                raise UsageError(f"{name} must lie in [0, 1)")
        for name in ("epochs", "cnn_epochs", "num_samples"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative")
        if self.batch_size < 1 or self.cnn_batch_size < 1:
            raise UsageError("batch sizes must be positive")
        if not 0 <= self.val_fraction < 1:
            raise UsageError("val_fraction must lie in [0, 1)")
        if not 0 <= self.min_digits <= self.max_digits:
            raise UsageError("need 0 <= min_digits <= max_digits")
        return self

    def with_layers(self, layers: int) -> "Config":
        """Switch depth, resetting ``hidden`` to the standard size for that depth."""
        return replace(self, layers=layers, hidden=[128] if layers == 1 else [128, 32])

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "Config":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{source}:{lineno}: expected key=value")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in kinds:
                raise FormatError(f"{source}:{lineno}: unknown key {key!r}")
            kind = kinds[key]
            try:
                if kind == "int":
                    values[key] = int(value)
                elif kind == "float":
                    values[key] = float(value)
                elif kind == "list[int]":
                    values[key] = _int_list(value)
                else:
                    values[key] = value
            except ValueError:
                raise FormatError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
        if "layers" in values and "hidden" not in values:
            values["hidden"] = [128] if values["layers"] == 1 else [128, 32]
        try:
            return cls(**values).validate()
        except UsageError as exc:
            raise FormatError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path) -> "Config":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"{path}: {exc.strerror}") from None
        return cls.from_text(text, str(path))
