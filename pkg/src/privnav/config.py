"""Flat ``key = value`` run configuration with a fixed schema.

Lines starting with ``#`` are comments.  Unknown keys and unparsable values are
rejected before any work starts.  Command-line flags override file values.
"""
from __future__ import annotations

import subprocess
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

BASELINES = ("random", "map_only", "first_person", "first_person_det", "mpc2", "mpc5", "plaintext_cam")
DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    parties: int = 2
    frac_bits: int = 16
    n_train: int = 15000
    n_test: int = 2250
    lr: float = 0.01
    epochs: int = 600
    batch: int = 100             # plaintext training, episodes per step
    lr_drop_epoch: int = 0       # stage 1 step size becomes lr * lr_drop from this epoch; 0 = constant
    lr_drop: float = 1.0
    stage2_lr: float = 0.01
    stage2_epochs: int = 600
    stage2_batch: int = 500      # classifier retraining on frozen features
    dtype: str = "float64"
    baseline: str = "plaintext_cam"
    out_dir: str = "runs"
    attack_worlds: int = 3000
    bench_batch: int = 100
    bench_repeats: int = 3
    mpc_train: bool = False      # retrain the classifier under secret sharing (desk scale only)
    mpc_train_epochs: int = 1
    mpc_train_batch: int = 64

    def __post_init__(self):
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {', '.join(BASELINES)}; got {self.baseline!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {DTYPES}; got {self.dtype!r}")
        if not 2 <= self.parties <= 16:
            raise ConfigError(f"parties must be in 2..16; got {self.parties}")
        if not 1 <= self.frac_bits <= 31:
            raise ConfigError(f"frac_bits must be in 1..31; got {self.frac_bits}")
        for key in ("n_train", "n_test", "epochs", "batch", "stage2_epochs", "stage2_batch", "attack_worlds",
                    "bench_batch", "bench_repeats", "mpc_train_epochs", "mpc_train_batch", "lr_drop_epoch"):
            if getattr(self, key) < (0 if "epoch" in key else 1):
                raise ConfigError(f"{key} is out of range: {getattr(self, key)}")
        if self.lr <= 0 or self.stage2_lr <= 0 or self.lr_drop <= 0:
            raise ConfigError("learning rates must be positive")

    def lines(self) -> list[str]:
        return [f"{f.name} = {_fmt(getattr(self, f.name))}" for f in fields(self)]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


# Small enough for one CPU in well under an hour.  A larger step size than the
# full profile compensates for the far smaller number of updates.
DESK_SCALE = dict(n_train=2000, n_test=250, lr=0.3, epochs=90, batch=16, lr_drop_epoch=45, lr_drop=0.3,
                  stage2_lr=0.3, stage2_epochs=120, stage2_batch=16, dtype="float32", attack_worlds=1500)

SCHEMA = {f.name: f.type for f in fields(RunConfig)}


def _fmt(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _parse(key: str, raw: str):
    kind = SCHEMA[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r} expects {kind}, got {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = _parse(key, raw)
    return out


def resolve(path: str | Path | None = None, desk_scale: bool = False, **overrides) -> RunConfig:
    """Defaults, then the desk-scale profile, then the file, then explicit overrides."""
    values = dict(DESK_SCALE) if desk_scale else {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values.update(parse_config_text(text))
    for key, value in overrides.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            values[key] = value
    try:
        return replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def version_string() -> str:
    """Package version plus ``git describe`` of the source tree when available."""
    from . import __version__

    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                              capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"privnav {__version__}" + (f" ({desc})" if desc else "")
