"""Secure evaluation of the action classifier over secret-shared feature bundles.

Party 0 is always the navigating agent and owns its view and map features.  With
two parties all corner cameras belong to party 1; with more, cameras are dealt
round-robin to parties 1..P-1 (one camera per party when P = 5).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dealer import Budget, budget_estimate
from .layers import Linear, ReLU
from .model import BLOCKS, CAM_DIM, FEATURE_DIM, cam_slice
from .mpc import AShared, Engine, concat
from .nn import Network, encode_params
from .render import N_CAMERAS
from .ring import DEFAULT_FIXED, FixedConfig, encode_fixed


def feature_owners(P: int) -> list[tuple[slice, int]]:
    """Column blocks of the feature bundle, in order, with the party that owns each."""
    blocks = [(cam_slice(i), 1 + i % (P - 1)) for i in range(N_CAMERAS)]
    blocks.append((slice(BLOCKS["agent"].start, FEATURE_DIM), 0))
    return blocks


@dataclass
class SecureClassifier:
    """Public classifier weights, pre-encoded on the fixed-point grid."""
    net: Network
    cfg: FixedConfig = DEFAULT_FIXED

    def __post_init__(self):
        for layer in self.net.layers:
            if not isinstance(layer, (Linear, ReLU)):
                raise TypeError(f"secure classifier supports Linear and ReLU only, got {layer!r}")
        self._encoded = encode_params(self.net, self.cfg)

    def budget(self, batch: int, P: int, argmax: bool = True) -> Budget:
        return budget_estimate(self.net.layers, P, batch=batch, argmax=argmax)

    def share_inputs(self, engine: Engine, feats: np.ndarray) -> AShared:
        """Every owner shares its own columns; the shared bundle keeps the column order."""
        enc = encode_fixed(np.atleast_2d(feats), self.cfg)
        if enc.shape[1] != FEATURE_DIM:
            raise ValueError(f"feature bundle must have {FEATURE_DIM} columns, got {enc.shape[1]}")
        parts = [engine.share(np.ascontiguousarray(enc[:, sl]), owner) for sl, owner in feature_owners(engine.P)]
        return concat(parts, axis=-1)

    def logits_shared(self, engine: Engine, x: AShared) -> AShared:
        for layer, p in zip(self.net.layers, self._encoded):
            if isinstance(layer, Linear):
                x = engine.matmul_public(x, p["w"], p["b"])
            else:
                x = engine.relu(x)
        return x

    def predict(self, engine: Engine, feats: np.ndarray) -> np.ndarray:
        """One dealt session: share, evaluate, open only the argmax index per row."""
        feats = np.atleast_2d(feats)
        with engine.session_scope(self.budget(len(feats), engine.P, argmax=True)):
            x = self.share_inputs(engine, feats)
            return np.asarray(engine.argmax_reveal(self.logits_shared(engine, x)))

    def logits(self, engine: Engine, feats: np.ndarray) -> np.ndarray:
        """Decoded logits (opens the logits; test and diagnostics use only)."""
        feats = np.atleast_2d(feats)
        with engine.session_scope(self.budget(len(feats), engine.P, argmax=False)):
            x = self.share_inputs(engine, feats)
            return engine.reveal_real(self.logits_shared(engine, x))


def forward_cipher(g: Network, feats: np.ndarray, engine: Engine) -> np.ndarray:
    """Action index per feature bundle row, computed under secret sharing."""
    return SecureClassifier(g, engine.cfg).predict(engine, feats)
