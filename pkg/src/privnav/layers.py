"""Layer specifications shared by the plaintext network stack and the MPC budget."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Conv:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class Linear:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


LayerSpec = Conv | Linear | ReLU | Flatten
