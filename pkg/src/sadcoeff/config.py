"""Run configuration.

Plain-text format, one ``key = value`` per line; blank lines and ``#``
comments are ignored.  Unknown keys are rejected rather than ignored so a
typo cannot silently fall back to a default.  Every numeric key is range
checked at load time.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError

# key -> (kind, default, lo, hi); lists use (kind, default, length, lo, hi)
_REGISTRY: dict[str, tuple] = {
    "seed":                ("int", 1234, 0, 2**63 - 1),
    "fps":                 ("float", 25.0, 1.0, 240.0),
    "num_styles":          ("int", 46, 1, 46),
    "clips_per_style":     ("int", 2, 1, 1000),
    "frames_per_clip":     ("int", 32, 32, 4096),
    "batch":               ("int", 32, 1, 1024),
    "batch_posevae":       ("int", 8, 1, 1024),
    "steps_expnet":        ("int", 2000, 0, 10**7),
    "steps_posevae":       ("int", 3000, 0, 10**7),
    "steps_mapper":        ("int", 2000, 0, 10**7),
    "lr_expnet":           ("float", 2e-5, 0.0, 1.0),
    "lr_posevae":          ("float", 1e-4, 0.0, 1.0),
    "lr_mapper":           ("float", 2e-4, 0.0, 1.0),
    "lambda_distill":      ("float", 2.0, 0.0, 1e6),
    "lambda_read":         ("float", 0.01, 0.0, 1e6),
    "lambda_lks":          ("float", 0.01, 0.0, 1e6),
    "lambda_eye":          ("float", 200.0, 0.0, 1e6),
    "lambda_mse":          ("float", 1.0, 0.0, 1e6),
    "lambda_kl":           ("float", 1.0, 0.0, 1e6),
    "lambda_gan":          ("float", 0.7, 0.0, 1e6),
    "lambda_kp":           ("float", 20.0, 0.0, 1e6),
    "latent_dim":          ("int", 64, 1, 4096),
    "hidden_dim":          ("int", 256, 1, 65536),
    "enc_channels":        ("intlist", (32, 64, 128, 256), 4, 1, 4096),
    "mapper_channels":     ("intlist", (128, 128, 128), 3, 1, 4096),
    "num_keypoints":       ("int", 15, 1, 4096),
    "audio_stride_posevae": ("int", 4, 1, 32),
    "checkpoint_every":    ("int", 0, 0, 10**7),
}


def _parse_value(key: str, raw: str):
    spec = _REGISTRY[key]
    kind = spec[0]
    try:
        if kind == "int":
            val = int(raw)
        elif kind == "float":
            val = float(raw)
        else:
            val = tuple(int(p.strip()) for p in raw.split(","))
    except ValueError as e:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from e
    if kind == "intlist":
        _, _, length, lo, hi = spec
        if len(val) != length:
            raise ConfigError(f"config key {key!r}: expected {length} comma-separated ints, got {len(val)}")
        for v in val:
            if not lo <= v <= hi:
                raise ConfigError(f"config key {key!r}: entry {v} outside [{lo}, {hi}]")
    else:
        _, _, lo, hi = spec
        if not lo <= val <= hi:
            raise ConfigError(f"config key {key!r}: value {val} outside [{lo}, {hi}]")
        if kind == "float" and val != val:
            raise ConfigError(f"config key {key!r}: NaN not allowed")
    return val


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Validated bag of run parameters; defaults carry the reference values."""

    seed: int = _REGISTRY["seed"][1]
    fps: float = _REGISTRY["fps"][1]
    num_styles: int = _REGISTRY["num_styles"][1]
    clips_per_style: int = _REGISTRY["clips_per_style"][1]
    frames_per_clip: int = _REGISTRY["frames_per_clip"][1]
    batch: int = _REGISTRY["batch"][1]
    batch_posevae: int = _REGISTRY["batch_posevae"][1]
    steps_expnet: int = _REGISTRY["steps_expnet"][1]
    steps_posevae: int = _REGISTRY["steps_posevae"][1]
    steps_mapper: int = _REGISTRY["steps_mapper"][1]
    lr_expnet: float = _REGISTRY["lr_expnet"][1]
    lr_posevae: float = _REGISTRY["lr_posevae"][1]
    lr_mapper: float = _REGISTRY["lr_mapper"][1]
    lambda_distill: float = _REGISTRY["lambda_distill"][1]
    lambda_read: float = _REGISTRY["lambda_read"][1]
    lambda_lks: float = _REGISTRY["lambda_lks"][1]
    lambda_eye: float = _REGISTRY["lambda_eye"][1]
    lambda_mse: float = _REGISTRY["lambda_mse"][1]
    lambda_kl: float = _REGISTRY["lambda_kl"][1]
    lambda_gan: float = _REGISTRY["lambda_gan"][1]
    lambda_kp: float = _REGISTRY["lambda_kp"][1]
    latent_dim: int = _REGISTRY["latent_dim"][1]
    hidden_dim: int = _REGISTRY["hidden_dim"][1]
    enc_channels: tuple = _REGISTRY["enc_channels"][1]
    mapper_channels: tuple = _REGISTRY["mapper_channels"][1]
    num_keypoints: int = _REGISTRY["num_keypoints"][1]
    audio_stride_posevae: int = _REGISTRY["audio_stride_posevae"][1]
    checkpoint_every: int = _REGISTRY["checkpoint_every"][1]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _REGISTRY:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
            values[key] = _parse_value(key, raw)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def replace(self, **kwargs) -> "RunConfig":
        for key, val in kwargs.items():
            if key not in _REGISTRY:
                raise ConfigError(f"unknown config key {key!r}")
            _parse_value(key, ",".join(str(v) for v in val) if isinstance(val, (tuple, list)) else str(val))
        return dataclasses.replace(self, **{k: tuple(v) if isinstance(v, list) else v for k, v in kwargs.items()})

    def dump(self) -> str:
        """Serialize in registry order; parsing the result reproduces self."""
        lines = []
        for key in _REGISTRY:
            val = getattr(self, key)
            if isinstance(val, tuple):
                lines.append(f"{key} = {','.join(str(v) for v in val)}")
            else:
                lines.append(f"{key} = {val!r}")
        return "\n".join(lines) + "\n"
