"""Classifier retraining under secret sharing (opt-in; slow, desk scale only).

Weights, features and targets all stay shared.  Each minibatch is one dealt
session; the weights are opened only when training ends.
"""
from __future__ import annotations

import numpy as np

from .dealer import Budget, relu_budget
from .inference import SecureClassifier
from .layers import Linear, ReLU
from .mpc import AShared, Engine
from .nn import Network
from .ring import decode_fixed, encode_fixed


def _t(x: AShared) -> AShared:
    return AShared(np.ascontiguousarray(s.T) for s in x.shares)


def _linears(net: Network) -> list[Linear]:
    layers = list(net.layers)
    for i, layer in enumerate(layers):
        want = Linear if i % 2 == 0 else ReLU
        if not isinstance(layer, want):
            raise TypeError("secure training expects alternating Linear/ReLU layers ending in Linear")
    if not isinstance(layers[-1], Linear):
        raise TypeError("secure training expects a final Linear layer")
    return [layer for layer in layers if isinstance(layer, Linear)]


def sgd_step_budget(net: Network, batch: int, P: int) -> Budget:
    """Randomness for one secure SGD step, matrix triples listed in call order."""
    lins = _linears(net)
    total = Budget()
    for i, lin in enumerate(lins):
        total = total + Budget(matmul=(((batch, lin.in_features), (lin.in_features, lin.out_features)),),
                               trunc=batch * lin.out_features)
        if i < len(lins) - 1:
            total = total + relu_budget(batch * lin.out_features, P)
    total = total + Budget(trunc=batch * lins[-1].out_features)  # 2/B scaling of the error
    for i in range(len(lins) - 1, -1, -1):
        n_in, n_out = lins[i].in_features, lins[i].out_features
        total = total + Budget(matmul=(((n_in, batch), (batch, n_out)),), trunc=n_in * n_out)
        if i > 0:
            total = total + Budget(matmul=(((batch, n_out), (n_out, n_in)),), trunc=batch * n_in,
                                   beaver=batch * n_in)
        total = total + Budget(trunc=n_in * n_out + n_out)  # learning-rate scaling
    return total


def _sgd_step(engine: Engine, params: list[tuple[AShared, AShared]], x: AShared, y: AShared, lr: float):
    batch = x.shape[0]
    acts, masks = [x], []
    h = x
    for i, (w, b) in enumerate(params):
        h = engine.matmul(h, w)
        h = engine.add(h, AShared(np.broadcast_to(s, h.shape).copy() for s in b.shares))
        if i < len(params) - 1:
            h, keep = engine.relu(h, return_mask=True)
            masks.append(keep)
            acts.append(h)
    d = engine.mul_public_fixed(engine.sub(h, y), 2.0 / batch)
    new = list(params)
    for i in range(len(params) - 1, -1, -1):
        w, b = params[i]
        dw = engine.matmul(_t(acts[i]), d)
        db = AShared(s.sum(axis=0, dtype=np.uint64) for s in d.shares)
        if i > 0:
            d = engine.mul(engine.matmul(d, _t(w)), masks[i - 1])
        new[i] = (engine.sub(w, engine.mul_public_fixed(dw, lr)), engine.sub(b, engine.mul_public_fixed(db, lr)))
    return new


def train_classifier_mpc(g: Network, feats: np.ndarray, targets: np.ndarray, engine: Engine, lr: float,
                         epochs: int = 1, batch: int = 64, seed: int = 0, progress=None) -> Network:
    """Minibatch SGD on the squared error with every operand secret-shared.

    Features are shared by their owners, targets and initial weights by the
    agent (party 0).  Rows of a final short batch are dropped so every step has
    the same dealt budget.
    """
    cfg = engine.cfg
    _linears(g)
    secure = SecureClassifier(g, cfg)
    budget = sgd_step_budget(g, batch, engine.P)
    n_batches = len(feats) // batch
    params = None
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(feats))
        for k in range(n_batches):
            rows = order[k * batch:(k + 1) * batch]
            with engine.session_scope(budget):
                if params is None:
                    params = [(engine.share(encode_fixed(p["w"], cfg), 0), engine.share(encode_fixed(p["b"], cfg), 0))
                              for p in g.params if p]
                x = secure.share_inputs(engine, feats[rows])
                y = engine.share(encode_fixed(targets[rows], cfg), 0)
                params = _sgd_step(engine, params, x, y, lr)
            if progress is not None:
                progress(epoch, k)
    out = g.copy()
    if params is None:
        return out
    it = iter(params)
    for p in out.params:
        if p:
            w, b = next(it)
            p["w"] = decode_fixed(engine.reveal(w), cfg)
            p["b"] = decode_fixed(engine.reveal(b), cfg)
    return out
