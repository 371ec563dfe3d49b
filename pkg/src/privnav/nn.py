"""Small numpy network stack: conv / linear / ReLU with hand-written backprop.

Tensors are row-major; images are NCHW and ``Flatten`` keeps (C, H, W) order.
Linear weights are stored (in, out) so that y = x @ W + b; conv weights are
(out, in, k, k).
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .layers import Conv, Flatten, LayerSpec, Linear, ReLU
from .ring import DEFAULT_FIXED, FixedConfig, encode_fixed

VIEW_INPUT = (3, 45, 60)
MAP_INPUT = 25
N_ACTIONS = 5

VIEW_ENCODER = (Conv(3, 6, 5, 2), ReLU(), Conv(6, 6, 5, 2), ReLU(), Flatten(),
                Linear(648, 128), ReLU(), Linear(128, 32))
MAP_ENCODER = (Linear(25, 64), ReLU(), Linear(64, 128), ReLU(), Linear(128, 128))
ACTION_CLASSIFIER = (Linear(288, 128), ReLU(), Linear(128, 64), ReLU(), Linear(64, 16), ReLU(), Linear(16, 5))

_CONV_CHUNK = 128


@dataclass
class Network:
    name: str
    layers: tuple
    params: list = field(default_factory=list)  # per layer: dict of arrays, empty for parameter-free layers

    def param_counts(self) -> list[int]:
        return [sum(v.size for v in p.values()) for p in self.params if p]

    def copy(self) -> "Network":
        return Network(self.name, self.layers, [{k: v.copy() for k, v in p.items()} for p in self.params])

    def linear_layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(p["w"], p["b"]) for layer, p in zip(self.layers, self.params) if isinstance(layer, Linear)]


def init_network(name: str, layers, rng: np.random.Generator) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    params = []
    for layer in layers:
        if isinstance(layer, Linear):
            bound = 1.0 / np.sqrt(layer.in_features)
            params.append({"w": rng.uniform(-bound, bound, (layer.in_features, layer.out_features)),
                           "b": rng.uniform(-bound, bound, layer.out_features)})
        elif isinstance(layer, Conv):
            fan_in = layer.in_channels * layer.kernel ** 2
            bound = 1.0 / np.sqrt(fan_in)
            params.append({"w": rng.uniform(-bound, bound, (layer.out_channels, layer.in_channels,
                                                            layer.kernel, layer.kernel)),
                           "b": rng.uniform(-bound, bound, layer.out_channels)})
        else:
            params.append({})
    return Network(name, tuple(layers), params)


def view_encoder(rng):
    return init_network("view_encoder", VIEW_ENCODER, rng)


def map_encoder(rng):
    return init_network("map_encoder", MAP_ENCODER, rng)


def action_classifier(rng):
    return init_network("action_classifier", ACTION_CLASSIFIER, rng)


# -- layer kernels ----------------------------------------------------------

def _windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    """(N, C, Ho, Wo, k, k) strided view of all conv patches."""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def conv_forward(x, w, b, stride):
    out = []
    k = w.shape[-1]
    for lo in range(0, x.shape[0], _CONV_CHUNK):
        win = _windows(x[lo:lo + _CONV_CHUNK], k, stride)
        y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (n, Ho, Wo, O)
        out.append(y.transpose(0, 3, 1, 2))
    return np.concatenate(out, axis=0) + b[None, :, None, None]


def conv_backward(x, w, stride, dout, need_dx=True):
    k = w.shape[-1]
    dw = np.zeros_like(w)
    dx = np.zeros_like(x) if need_dx else None
    ho, wo = dout.shape[2], dout.shape[3]
    for lo in range(0, x.shape[0], _CONV_CHUNK):
        hi = lo + _CONV_CHUNK
        win = _windows(x[lo:hi], k, stride)
        d = dout[lo:hi]
        dw += np.tensordot(d, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, k, k)
        if need_dx:
            dcols = np.tensordot(d, w, axes=([1], [0]))  # (n, Ho, Wo, C, k, k)
            dcols = dcols.transpose(0, 3, 1, 2, 4, 5)
            for i in range(k):
                for j in range(k):
                    dx[lo:hi, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                        dcols[..., i, j]
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw, db


def conv_reference(x, w, b, stride):
    """Explicit im2col + matmul, used as an independent check of ``conv_forward``."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    cols = np.empty((n, ho, wo, c * k * k))
    for r in range(ho):
        for q in range(wo):
            patch = x[:, :, r * stride:r * stride + k, q * stride:q * stride + k]
            cols[:, r, q, :] = patch.reshape(n, -1)
    y = cols.reshape(-1, c * k * k) @ w.reshape(o, -1).T + b
    return y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)


# -- forward / backward -----------------------------------------------------

def forward(net: Network, x: np.ndarray, keep: bool = False):
    """Real-valued forward pass; with ``keep`` also returns the per-layer inputs for backward."""
    cache = []
    for layer, p in zip(net.layers, net.params):
        if keep:
            cache.append(x)
        if isinstance(layer, Linear):
            x = x @ p["w"] + p["b"]
        elif isinstance(layer, Conv):
            x = conv_forward(x, p["w"], p["b"], layer.stride)
        elif isinstance(layer, ReLU):
            x = np.maximum(x, 0.0)
        elif isinstance(layer, Flatten):
            x = x.reshape(x.shape[0], -1)
        else:
            raise TypeError(f"unsupported layer {layer!r}")
    return (x, cache) if keep else x


def backward(net: Network, cache: list, dout: np.ndarray, need_dx: bool = False):
    """Gradients for every layer's params and, optionally, for the network input."""
    grads = [dict() for _ in net.layers]
    d = dout
    for i in range(len(net.layers) - 1, -1, -1):
        layer, p, x = net.layers[i], net.params[i], cache[i]
        last = i == 0 and not need_dx
        if isinstance(layer, Linear):
            grads[i] = {"w": x.T @ d, "b": d.sum(axis=0)}
            d = None if last else d @ p["w"].T
        elif isinstance(layer, Conv):
            dx, dw, db = conv_backward(x, p["w"], layer.stride, d, need_dx=not last)
            grads[i] = {"w": dw, "b": db}
            d = dx
        elif isinstance(layer, ReLU):
            d = d * (x > 0)
        elif isinstance(layer, Flatten):
            d = d.reshape(x.shape)
        if d is None:
            break
    return grads, d


def encode_params(net: Network, cfg: FixedConfig = DEFAULT_FIXED) -> list[dict]:
    return [{k: encode_fixed(v, cfg) for k, v in p.items()} for p in net.params]


def forward_fixed(net: Network, x, cfg: FixedConfig = DEFAULT_FIXED, x_encoded: bool = False) -> np.ndarray:
    """Plaintext fixed-point forward mirroring the secure engine: products accumulate at
    scale 2^2f, the bias is added at that scale, and the sum is floor-shifted by f.
    Returns ring-encoded outputs (uint64)."""
    f = cfg.frac_bits
    v = (np.asarray(x, dtype=np.uint64) if x_encoded else encode_fixed(x, cfg)).view(np.int64)
    for layer, p in zip(net.layers, encode_params(net, cfg)):
        if isinstance(layer, Linear):
            w, b = p["w"].view(np.int64), p["b"].view(np.int64)
            acc = v @ w + (b << f)
            v = acc >> f
        elif isinstance(layer, Conv):
            w, b = p["w"].view(np.int64), p["b"].view(np.int64)
            win = _windows(v, w.shape[-1], layer.stride)
            acc = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
            v = (acc + (b << f)[None, :, None, None]) >> f
        elif isinstance(layer, ReLU):
            v = np.maximum(v, 0)
        elif isinstance(layer, Flatten):
            v = v.reshape(v.shape[0], -1)
    return np.ascontiguousarray(v).view(np.uint64)


def forward_plain(net: Network, x, mode: str = "real", cfg: FixedConfig = DEFAULT_FIXED) -> np.ndarray:
    """``real``: float64.  ``fixed``: fixed-point simulation, decoded to float."""
    if mode == "real":
        return forward(net, np.asarray(x, dtype=np.float64))
    if mode == "fixed":
        from .ring import decode_fixed

        return decode_fixed(forward_fixed(net, x, cfg), cfg)
    raise ValueError(f"mode must be 'real' or 'fixed', got {mode!r}")


# -- checkpoint -------------------------------------------------------------
#
# little-endian:
#   magic "PNCK" | u16 version | u32 meta_len | meta (utf-8 JSON) | u16 n_networks
#   per network: u16 name_len | name | u16 n_layers
#     per layer: u8 type | 4 x u32 spec | u8 n_params
#       per param: u8 key_len | key | u8 ndim | ndim x u32 dims | float64 data

CKPT_MAGIC = b"PNCK"
CKPT_VERSION = 1
_LAYER_CODES = {Conv: 0, Linear: 1, ReLU: 2, Flatten: 3}


def _layer_spec(layer) -> tuple[int, int, int, int, int]:
    if isinstance(layer, Conv):
        return 0, layer.in_channels, layer.out_channels, layer.kernel, layer.stride
    if isinstance(layer, Linear):
        return 1, layer.in_features, layer.out_features, 0, 0
    return _LAYER_CODES[type(layer)], 0, 0, 0, 0


def _layer_from_spec(code, a, b, c, d):
    return {0: lambda: Conv(a, b, c, d), 1: lambda: Linear(a, b), 2: ReLU, 3: Flatten}[code]()


def save_checkpoint(path_or_buf, networks: dict[str, Network], meta: dict | None = None):
    buf = io.BytesIO()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    buf.write(struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<H", len(networks)))
    for key in networks:
        net = networks[key]
        name = key.encode()
        buf.write(struct.pack("<H", len(name)) + name + struct.pack("<H", len(net.layers)))
        for layer, params in zip(net.layers, net.params):
            buf.write(struct.pack("<B4I", *_layer_spec(layer)))
            buf.write(struct.pack("<B", len(params)))
            for pname in sorted(params):
                arr = np.ascontiguousarray(params[pname], dtype="<f8")
                kb = pname.encode()
                buf.write(struct.pack("<B", len(kb)) + kb + struct.pack("<B", arr.ndim))
                buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                buf.write(arr.tobytes())
    data = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(data)
    else:
        with open(path_or_buf, "wb") as fh:
            fh.write(data)


def load_checkpoint(path_or_bytes) -> tuple[dict[str, Network], dict]:
    data = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) else open(path_or_bytes, "rb").read()
    magic, version, meta_len = struct.unpack_from("<4sHI", data, 0)
    if magic != CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = struct.calcsize("<4sHI")
    meta = json.loads(data[pos:pos + meta_len].decode())
    pos += meta_len
    (n_nets,) = struct.unpack_from("<H", data, pos)
    pos += 2
    nets = {}
    for _ in range(n_nets):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (n_layers,) = struct.unpack_from("<H", data, pos)
        pos += 2
        layers, params = [], []
        for _ in range(n_layers):
            spec = struct.unpack_from("<B4I", data, pos)
            pos += struct.calcsize("<B4I")
            layers.append(_layer_from_spec(*spec))
            (np_,) = struct.unpack_from("<B", data, pos)
            pos += 1
            p = {}
            for _ in range(np_):
                (klen,) = struct.unpack_from("<B", data, pos)
                pos += 1
                key = data[pos:pos + klen].decode()
                pos += klen
                (ndim,) = struct.unpack_from("<B", data, pos)
                pos += 1
                dims = struct.unpack_from(f"<{ndim}I", data, pos)
                pos += 4 * ndim
                n = int(np.prod(dims, dtype=np.int64))
                p[key] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(dims)
                pos += 8 * n
            params.append(p)
        nets[name] = Network(name, tuple(layers), params)
    return nets, meta
