"""Navigation policy model: view/map encoders feeding the action classifier.

Feature bundle layout (length 288): four corner-camera features (4 x 32), the
agent's own view feature (32), then the map feature (128).  Baselines reuse the
same classifier and zero-fill the blocks they do not observe.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import EpisodeRecord, replay
from .errors import ConfigError, DivergenceError
from .nn import (N_ACTIONS, Network, action_classifier, backward, forward, forward_fixed, load_checkpoint,
                 map_encoder, save_checkpoint, view_encoder)
from .render import AGENT_CAMERA, N_CAMERAS, render_u8
from .ring import DEFAULT_FIXED, FixedConfig, decode_fixed, encode_fixed
from .world import MAX_STEPS, STOP, WorldState

CAM_DIM = 32
MAP_DIM = 128
FEATURE_DIM = N_CAMERAS * CAM_DIM + CAM_DIM + MAP_DIM
BLOCKS = {
    "cams": slice(0, N_CAMERAS * CAM_DIM),
    "agent": slice(N_CAMERAS * CAM_DIM, (N_CAMERAS + 1) * CAM_DIM),
    "map": slice((N_CAMERAS + 1) * CAM_DIM, FEATURE_DIM),
}
ALL_BLOCKS = ("cams", "agent", "map")
BASELINE_BLOCKS = {
    "map_only": ("map",),
    "first_person": ("agent", "map"),
    "first_person_det": ("agent", "map"),
    "plaintext_cam": ALL_BLOCKS,
    "mpc2": ALL_BLOCKS,
    "mpc5": ALL_BLOCKS,
}


def cam_slice(i: int) -> slice:
    return slice(i * CAM_DIM, (i + 1) * CAM_DIM)


def map_input(world: WorldState) -> np.ndarray:
    """Map codes scaled to [0, 1]."""
    return world.map_grid().reshape(-1) / 3.0


@dataclass
class NavModel:
    view: Network
    map: Network
    g: Network
    blocks: tuple = ALL_BLOCKS

    def __post_init__(self):
        bad = set(self.blocks) - set(BLOCKS)
        if bad or not self.blocks:
            raise ConfigError(f"feature blocks must be a non-empty subset of {ALL_BLOCKS}, got {self.blocks}")
        self.blocks = tuple(b for b in ALL_BLOCKS if b in self.blocks)

    @classmethod
    def init(cls, seed: int, blocks=ALL_BLOCKS) -> "NavModel":
        rng = np.random.default_rng(seed)
        return cls(view_encoder(rng), map_encoder(rng), action_classifier(rng), tuple(blocks))

    def networks(self) -> dict[str, Network]:
        return {"view": self.view, "map": self.map, "g": self.g}

    def copy(self) -> "NavModel":
        return NavModel(self.view.copy(), self.map.copy(), self.g.copy(), self.blocks)

    # -- features, computed locally by each owner --
    def camera_features(self, cams_u8: np.ndarray) -> np.ndarray:
        """(n, 4, 3, H, W) uint8 -> (n, 128)."""
        n = cams_u8.shape[0]
        if "cams" not in self.blocks:
            return np.zeros((n, N_CAMERAS * CAM_DIM))
        flat = cams_u8.reshape((n * N_CAMERAS,) + cams_u8.shape[2:]) / 255.0
        return forward(self.view, flat).reshape(n, N_CAMERAS * CAM_DIM)

    def agent_features(self, views_u8: np.ndarray) -> np.ndarray:
        if "agent" not in self.blocks:
            return np.zeros((views_u8.shape[0], CAM_DIM))
        return forward(self.view, views_u8 / 255.0)

    def map_features(self, maps: np.ndarray) -> np.ndarray:
        if "map" not in self.blocks:
            return np.zeros((maps.shape[0], MAP_DIM))
        return forward(self.map, maps)

    def features(self, cam_feats: np.ndarray, views_u8: np.ndarray, maps: np.ndarray) -> np.ndarray:
        """Bundle per step: ``cam_feats`` already indexed per step."""
        return np.concatenate([cam_feats, self.agent_features(views_u8), self.map_features(maps)], axis=1)

    def logits(self, feats: np.ndarray, mode: str = "real", cfg: FixedConfig = DEFAULT_FIXED) -> np.ndarray:
        if mode == "real":
            return forward(self.g, feats)
        if mode == "fixed":
            return decode_fixed(forward_fixed(self.g, quantize(feats, cfg), cfg), cfg)
        raise ValueError(f"mode must be 'real' or 'fixed', got {mode!r}")

    def save(self, path, meta: dict | None = None):
        save_checkpoint(path, self.networks(), dict(meta or {}, blocks=list(self.blocks)))

    @classmethod
    def load(cls, path) -> tuple["NavModel", dict]:
        nets, meta = load_checkpoint(path)
        return cls(nets["view"], nets["map"], nets["g"], tuple(meta["blocks"])), meta


def quantize(x: np.ndarray, cfg: FixedConfig = DEFAULT_FIXED) -> np.ndarray:
    """Round onto the fixed-point grid the secure engine sees."""
    return decode_fixed(encode_fixed(x, cfg), cfg)


# -- sequence data ----------------------------------------------------------

@dataclass
class SequenceData:
    """Teacher-forced steps of many episodes, flattened episode-major.

    ``targets`` are padded to ``max_len`` with the stop token; the mask derived
    from the first stop keeps padding out of the loss.
    """
    cams: np.ndarray      # (E, 4, 3, H, W) uint8, static per episode
    views: np.ndarray     # (S, 3, H, W) uint8, agent view before each step
    maps: np.ndarray      # (S, 25) float
    offsets: np.ndarray   # (E + 1,) step offsets per episode
    targets: np.ndarray   # (E, max_len, 5) one-hot
    detour: np.ndarray    # (E,) bool

    @property
    def n_episodes(self) -> int:
        return len(self.offsets) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def step_episode(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_episodes), self.lengths)

    def step_actions(self) -> np.ndarray:
        idx = self.step_episode()
        pos = np.arange(len(idx)) - self.offsets[idx]
        return self.targets[idx, pos].argmax(axis=1)


def one_hot(actions, max_len: int = MAX_STEPS) -> np.ndarray:
    out = np.zeros((max_len, N_ACTIONS))
    out[:, STOP] = 1.0
    for t, a in enumerate(actions[:max_len]):
        out[t] = 0.0
        out[t, a] = 1.0
    return out


def build_sequences(records: list[EpisodeRecord], max_len: int = MAX_STEPS) -> SequenceData:
    cams, views, maps, lengths, targets = [], [], [], [], []
    for rec in records:
        states, _ = replay(rec)
        w0 = states[0]
        cams.append(np.stack([render_u8(w0, c) for c in range(N_CAMERAS)]))
        for s in states:
            views.append(render_u8(s, AGENT_CAMERA))
            maps.append(map_input(s))
        lengths.append(len(states))
        targets.append(one_hot(rec.actions, max_len))
    h, w = cams[0].shape[-2:] if cams else (0, 0)
    return SequenceData(
        cams=np.stack(cams) if cams else np.zeros((0, N_CAMERAS, 3, h, w), np.uint8),
        views=np.stack(views) if views else np.zeros((0, 3, h, w), np.uint8),
        maps=np.stack(maps) if maps else np.zeros((0, 25)),
        offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
        targets=np.stack(targets) if targets else np.zeros((0, max_len, N_ACTIONS)),
        detour=np.array([r.detour_required for r in records], dtype=bool),
    )


def sequence_mask(targets: np.ndarray) -> np.ndarray:
    """1 up to and including the first stop token, 0 afterwards."""
    is_stop = targets.argmax(axis=-1) == STOP
    first = np.where(is_stop.any(axis=1), is_stop.argmax(axis=1), targets.shape[1] - 1)
    return (np.arange(targets.shape[1])[None, :] <= first[:, None]).astype(np.float64)


def masked_mse(pred: np.ndarray, targets: np.ndarray, mask: np.ndarray | None = None):
    """Squared error summed over actions, averaged over unmasked steps.

    ``pred`` and ``targets`` are (E, T, 5).  Returns (loss, dloss/dpred).
    """
    if mask is None:
        mask = sequence_mask(targets)
    n = max(mask.sum(), 1.0)
    diff = (pred - targets) * mask[..., None]
    return float((diff ** 2).sum() / n), 2.0 * diff / n


# -- training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 0.01
    epochs: int = 600
    batch: int = 100          # episodes per step
    seed: int = 0
    max_loss: float = 1e6     # divergence guard
    dtype: str = "float64"    # float32 roughly halves conv time; params return to float64 afterwards
    lr_drop_epoch: int = 0    # from this epoch on the step size is lr * lr_drop; 0 disables the drop
    lr_drop: float = 1.0

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0 or self.batch < 1 or self.lr_drop_epoch < 0 or self.lr_drop <= 0:
            raise ConfigError(f"invalid training config {self}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_drop_epoch and epoch >= self.lr_drop_epoch:
            return self.lr * self.lr_drop
        return self.lr


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)        # mean loss per epoch
    grad_norms: list = field(default_factory=list)    # per epoch: {network: norm of last step's gradient}


def _grad_norm(grads: list[dict]) -> float:
    return float(np.sqrt(sum(float((g ** 2).sum()) for gd in grads for g in gd.values())))


def _sgd(net: Network, grads: list[dict], lr: float):
    for p, g in zip(net.params, grads):
        for k in g:
            p[k] -= lr * g[k]


def _batch_steps(data: SequenceData, eps: np.ndarray):
    """Flat step indices of episodes ``eps`` plus (row, position) into the padded targets."""
    idx, rows, pos = [], [], []
    for r, e in enumerate(eps):
        lo, hi = data.offsets[e], data.offsets[e + 1]
        idx.append(np.arange(lo, hi))
        rows.append(np.full(hi - lo, r))
        pos.append(np.arange(hi - lo))
    return np.concatenate(idx), np.concatenate(rows), np.concatenate(pos)


def _cast(nets: dict[str, Network], dtype):
    for net in nets.values():
        for p in net.params:
            for k in p:
                p[k] = p[k].astype(dtype)


def loss_and_grads(model: NavModel, data: SequenceData, eps: np.ndarray, trainable=("view", "map", "g"),
                   feats: np.ndarray | None = None, dtype=np.float64):
    """Masked MSE on a batch of episodes with gradients for the ``trainable`` networks.

    ``feats`` (per step, optional) short-circuits the encoders, used when they are frozen.
    """
    idx, rows, pos = _batch_steps(data, eps)
    targets = data.targets[eps].astype(dtype)
    scale = dtype(1 / 255)
    cache = {}
    if feats is None:
        x = np.zeros((len(idx), FEATURE_DIM), dtype)
        if "cams" in model.blocks:
            cams = data.cams[eps].reshape((len(eps) * N_CAMERAS,) + data.cams.shape[2:]) * scale
            cf, cache["cams"] = forward(model.view, cams, keep=True)
            x[:, BLOCKS["cams"]] = cf.reshape(len(eps), -1)[rows]
        if "agent" in model.blocks:
            af, cache["agent"] = forward(model.view, data.views[idx] * scale, keep=True)
            x[:, BLOCKS["agent"]] = af
        if "map" in model.blocks:
            mf, cache["map"] = forward(model.map, data.maps[idx].astype(dtype), keep=True)
            x[:, BLOCKS["map"]] = mf
    else:
        x = feats[idx].astype(dtype)
    out, gcache = forward(model.g, x, keep=True)
    pred = np.zeros_like(targets)
    pred[rows, pos] = out
    loss, dpred = masked_mse(pred, targets)
    need_dx = feats is None and ("view" in trainable or "map" in trainable)
    g_grads, dx = backward(model.g, gcache, dpred[rows, pos], need_dx=need_dx)
    grads = {"g": g_grads if "g" in trainable else None, "view": None, "map": None}
    if need_dx:
        if "view" in trainable:
            vg = None
            if "cams" in cache:
                dcf = np.zeros((len(eps), N_CAMERAS * CAM_DIM), dtype)
                np.add.at(dcf, rows, dx[:, BLOCKS["cams"]])
                vg, _ = backward(model.view, cache["cams"], dcf.reshape(len(eps) * N_CAMERAS, CAM_DIM))
            if "agent" in cache:
                ag, _ = backward(model.view, cache["agent"], dx[:, BLOCKS["agent"]])
                vg = ag if vg is None else [{k: a[k] + v[k] for k in a} for a, v in zip(ag, vg)]
            grads["view"] = vg
        if "map" in trainable and "map" in cache:
            grads["map"], _ = backward(model.map, cache["map"], dx[:, BLOCKS["map"]])
    return loss, grads


def train_sgd(model: NavModel, data: SequenceData, cfg: TrainConfig, trainable=("view", "map", "g"),
              feats: np.ndarray | None = None, log: TrainLog | None = None, progress=None) -> TrainLog:
    """Plain minibatch SGD over episodes, in place.  Raises DivergenceError on a non-finite or exploding loss."""
    log = log or TrainLog()
    nets = model.networks()
    dtype = np.dtype(cfg.dtype).type
    _cast(nets, dtype)
    try:
        _train_epochs(model, nets, data, cfg, trainable, feats, log, progress, dtype)
    finally:
        _cast(nets, np.float64)
    return log


def _train_epochs(model, nets, data, cfg, trainable, feats, log, progress, dtype):
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(data.n_episodes)
        total, count = 0.0, 0
        norms = {k: 0.0 for k in nets}
        for b, lo in enumerate(range(0, len(order), cfg.batch)):
            eps = order[lo:lo + cfg.batch]
            loss, grads = loss_and_grads(model, data, eps, trainable, feats, dtype)
            if not np.isfinite(loss) or loss > cfg.max_loss:
                raise DivergenceError(f"training diverged at epoch {epoch} batch {b}: loss={loss!r}, "
                                      f"lr={lr}, last epoch mean={log.losses[-1] if log.losses else None}")
            for name, g in grads.items():
                if g is not None:
                    _sgd(nets[name], g, lr)
                    norms[name] = _grad_norm(g)
                else:
                    norms[name] = 0.0
            total += loss * len(eps)
            count += len(eps)
        log.losses.append(total / max(count, 1))
        log.grad_norms.append(norms)
        if progress is not None:
            progress(epoch, log.losses[-1])


def step_features(model: NavModel, data: SequenceData, chunk: int = 2048) -> np.ndarray:
    """Feature bundle for every step, encoders run once per episode/step."""
    cam_feats = np.concatenate([model.camera_features(data.cams[lo:lo + chunk])
                                for lo in range(0, max(data.n_episodes, 1), chunk)])[:data.n_episodes]
    ep = data.step_episode()
    out = []
    for lo in range(0, len(ep), chunk):
        sl = slice(lo, lo + chunk)
        out.append(model.features(cam_feats[ep[sl]], data.views[sl], data.maps[sl]))
    return np.concatenate(out) if out else np.zeros((0, FEATURE_DIM))


def step_accuracy(model: NavModel, data: SequenceData, mode: str = "real", feats: np.ndarray | None = None,
                  cfg: FixedConfig = DEFAULT_FIXED) -> float:
    """Teacher-forced next-action accuracy over all real steps."""
    feats = step_features(model, data) if feats is None else feats
    pred = model.logits(feats, mode, cfg).argmax(axis=1)
    return float((pred == data.step_actions()).mean())


def pretrain(data: SequenceData, cfg: TrainConfig, blocks=ALL_BLOCKS, progress=None) -> tuple[NavModel, TrainLog]:
    """Stage 1: encoders and classifier trained end to end in plaintext."""
    model = NavModel.init(cfg.seed, blocks)
    log = train_sgd(model, data, cfg, progress=progress)
    return model, log


def retrain_classifier(model: NavModel, data: SequenceData, cfg: TrainConfig,
                       frac_cfg: FixedConfig = DEFAULT_FIXED, progress=None) -> tuple[NavModel, TrainLog]:
    """Stage 2: fresh classifier on frozen encoders, fed fixed-point-quantized features."""
    out = model.copy()
    out.g = action_classifier(np.random.default_rng([cfg.seed, 2]))
    feats = quantize(step_features(out, data), frac_cfg)
    log = train_sgd(out, data, cfg, trainable=("g",), feats=feats, progress=progress)
    return out, log
