"""Causal 3D residual convolution stack with batch and cached streaming paths.

Each residual block is::

    h1 = relu(down(x))            1x1x1 projection, C -> C/2
    h2 = relu(causal_conv(h1))    t x 3 x 3, zero left-padding in time
    out = x + up(h2)              1x1x1 projection, C/2 -> C

The streaming path keeps, per block, the last ``t - 1`` temporal slices of the
causal convolution's input, so every new frame costs the same regardless of
how many frames came before.
"""

import json
import os
import time
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np

from . import io


@dataclass(frozen=True)
class CausalBlockConfig:
    channels: int = 128
    temporal_kernel: int = 2
    num_blocks: int = 12
    spatial_kernel: int = 3

    def __post_init__(self):
        if self.channels < 2 or self.channels % 2:
            raise ValueError("channels must be an even integer >= 2")
        if self.temporal_kernel < 1 or self.num_blocks < 1:
            raise ValueError("temporal_kernel and num_blocks must be positive")
        if self.spatial_kernel != 3:
            raise ValueError("spatial kernel is fixed to 3")

    @property
    def hidden(self):
        return self.channels // 2


@dataclass
class BlockWeights:
    down_w: np.ndarray   # (C/2, C)
    down_b: np.ndarray   # (C/2,)
    conv_w: np.ndarray   # (C/2, C/2, t, 3, 3)
    conv_b: np.ndarray   # (C/2,)
    up_w: np.ndarray     # (C, C/2)
    up_b: np.ndarray     # (C,)

    FIELDS = ("down_w", "down_b", "conv_w", "conv_b", "up_w", "up_b")


def _expected_shapes(cfg):
    C, Ch, t = cfg.channels, cfg.hidden, cfg.temporal_kernel
    return {"down_w": (Ch, C), "down_b": (Ch,), "conv_w": (Ch, Ch, t, 3, 3),
            "conv_b": (Ch,), "up_w": (C, Ch), "up_b": (C,)}


def check_weights(weights, cfg):
    if len(weights) != cfg.num_blocks:
        raise ValueError(f"expected {cfg.num_blocks} blocks, got {len(weights)}")
    shapes = _expected_shapes(cfg)
    for i, blk in enumerate(weights):
        for name, shape in shapes.items():
            if getattr(blk, name).shape != shape:
                raise ValueError(f"block {i} {name}: expected {shape}, "
                                 f"got {getattr(blk, name).shape}")


def init_weights(cfg, seed=0, dtype=np.float32, residual_scale=0.1):
    """Random He-style weights; the up-projection is damped by ``residual_scale``."""
    rng = np.random.default_rng(seed)
    C, Ch, t = cfg.channels, cfg.hidden, cfg.temporal_kernel
    blocks = []
    for _ in range(cfg.num_blocks):
        blocks.append(BlockWeights(
            down_w=rng.normal(0, np.sqrt(2.0 / C), (Ch, C)).astype(dtype),
            down_b=np.zeros(Ch, dtype),
            conv_w=rng.normal(0, np.sqrt(2.0 / (Ch * t * 9)), (Ch, Ch, t, 3, 3)).astype(dtype),
            conv_b=rng.normal(0, 0.01, Ch).astype(dtype),
            up_w=(residual_scale * rng.normal(0, np.sqrt(1.0 / Ch), (C, Ch))).astype(dtype),
            up_b=np.zeros(C, dtype),
        ))
    return blocks


def _pointwise(w, b, x):
    # x: (Cin, ...) -> (Cout, ...)
    out = np.tensordot(w, x, axes=(1, 0))
    out += b.reshape((-1,) + (1,) * (x.ndim - 1))
    return out


def _tap_matrix(w):
    """(Co, Ci, t, 3, 3) -> (t, 9 * Co, Ci) so one matmul yields every spatial tap."""
    co, ci, t = w.shape[:3]
    return np.ascontiguousarray(np.transpose(w, (2, 3, 4, 0, 1)).reshape(t, 9 * co, ci))


def _flat_pad(h):
    """(Ci, H, W) -> (Ci, (H+2)*(W+2) + 2) with a zero border.

    A 3x3 tap at (ky, kx) is then a contiguous shift by ``ky * (W+2) + kx``;
    the two trailing zeros keep the largest shift in range.
    """
    ci, H, W = h.shape
    out = np.zeros((ci, (H + 2) * (W + 2) + 2), dtype=h.dtype)
    out[:, :(H + 2) * (W + 2)].reshape(ci, H + 2, W + 2)[:, 1:-1, 1:-1] = h
    return out


def _sum_taps(z, H, W):
    """Add the nine shifted tap responses ``z``: (9, Co, Lp) -> (Co, H, W)."""
    wp = W + 2
    L = H * wp
    acc = np.zeros(z.shape[1:2] + (L,), dtype=z.dtype)
    for ky in range(3):
        for kx in range(3):
            off = ky * wp + kx
            acc += z[3 * ky + kx, :, off:off + L]
    return acc.reshape(-1, H, wp)[:, :, :W]


def _causal_conv_batch(w, b, h):
    """``h``: (Ci, T, H, W) -> (Co, T, H, W), zero-padded by t-1 frames on the left."""
    ci, T, H, W = h.shape
    co, t = w.shape[0], w.shape[2]
    taps = _tap_matrix(w).reshape(t * 9 * co, ci)
    recent = deque(maxlen=t)
    out = np.empty((co, T, H, W), dtype=h.dtype)
    for n in range(T):
        recent.append((taps @ _flat_pad(h[:, n])).reshape(t, 9, co, -1))
        acc = np.zeros((co, H, W), dtype=h.dtype)
        # slice n - j meets temporal tap t - 1 - j
        for j, z in enumerate(reversed(recent)):
            acc += _sum_taps(z[t - 1 - j], H, W)
        out[:, n] = acc + b[:, None, None]
    return out


def forward_batch(x, weights, cfg):
    """Run the whole stack over a ``(C, T, H, W)`` sequence.

    Output frame ``n`` depends only on input frames ``<= n``; spatial size is
    preserved.
    """
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[0] != cfg.channels:
        raise ValueError(f"expected input of shape ({cfg.channels}, T, H, W), got {x.shape}")
    check_weights(weights, cfg)
    for blk in weights:
        h = np.maximum(_pointwise(blk.down_w, blk.down_b, x), 0)
        h = np.maximum(_causal_conv_batch(blk.conv_w, blk.conv_b, h), 0)
        x = x + _pointwise(blk.up_w, blk.up_b, h)
    return x


class StreamState:
    """Per-block caches of the last ``t - 1`` causal-conv input slices.

    A state belongs to one stream; it is updated in place by
    :func:`forward_stream`.
    """

    def __init__(self, cfg, height, width, dtype=np.float32):
        self.cfg = cfg
        self.height = height
        self.width = width
        depth = cfg.temporal_kernel - 1
        self.buffers = [np.zeros((depth, cfg.hidden, height, width), dtype=dtype)
                        for _ in range(cfg.num_blocks)]
        self.frames_seen = 0

    @property
    def nbytes(self):
        return sum(b.nbytes for b in self.buffers)

    def copy(self):
        other = StreamState.__new__(StreamState)
        other.cfg, other.height, other.width = self.cfg, self.height, self.width
        other.buffers = [b.copy() for b in self.buffers]
        other.frames_seen = self.frames_seen
        return other


def _causal_conv_frame(w, b, history, h):
    """One output frame from ``t - 1`` cached slices (oldest first) plus the current one."""
    t = w.shape[2]
    _, H, W = h.shape
    taps = _tap_matrix(w)
    acc = np.zeros((w.shape[0], H, W), dtype=h.dtype)
    for kt in range(t):
        x = history[kt] if kt < t - 1 else h
        acc += _sum_taps((taps[kt] @ _flat_pad(x)).reshape(9, w.shape[0], -1), H, W)
    return acc + b[:, None, None]


def forward_stream(frame, state, weights, cfg):
    """Process one ``(C, H, W)`` frame, updating ``state`` in place.

    Returns ``(output_frame, state)``. The output equals the matching frame of
    :func:`forward_batch` over the whole stream so far.
    """
    frame = np.asarray(frame)
    if state.cfg != cfg:
        raise ValueError("stream state was created for a different configuration")
    if frame.shape != (cfg.channels, state.height, state.width):
        raise ValueError(f"expected frame of shape {(cfg.channels, state.height, state.width)}, "
                         f"got {frame.shape}")
    check_weights(weights, cfg)
    x = frame
    for blk, buf in zip(weights, state.buffers):
        h = np.maximum(_pointwise(blk.down_w, blk.down_b, x), 0)
        conv = _causal_conv_frame(blk.conv_w, blk.conv_b, buf, h)
        if len(buf):
            buf[:-1] = buf[1:]
            buf[-1] = h
        h = np.maximum(conv, 0)
        x = x + _pointwise(blk.up_w, blk.up_b, h)
    state.frames_seen += 1
    return x, state


# -- weight files --------------------------------------------------------------------

def save_weights(directory, weights, cfg):
    """Write one tensor dump per array plus ``manifest.json`` listing layer order."""
    os.makedirs(directory, exist_ok=True)
    layers = []
    for i, blk in enumerate(weights):
        for name in BlockWeights.FIELDS:
            fname = f"block{i:02d}_{name}.ste"
            io.write_tensor(os.path.join(directory, fname), getattr(blk, name))
            layers.append({"block": i, "name": name, "file": fname})
    manifest = {"config": asdict(cfg), "layers": layers}
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_weights(directory):
    """Inverse of :func:`save_weights`; returns ``(weights, cfg)``."""
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    cfg = CausalBlockConfig(**manifest["config"])
    arrays = [{} for _ in range(cfg.num_blocks)]
    for layer in manifest["layers"]:
        arrays[layer["block"]][layer["name"]] = io.read_tensor(
            os.path.join(directory, layer["file"]))
    weights = [BlockWeights(**a) for a in arrays]
    check_weights(weights, cfg)
    return weights, cfg


# -- benchmark -----------------------------------------------------------------------

def benchmark_stream(cfg, weights, frames, height, width, checkpoints=None, seed=0, repeats=3):
    """Per-frame latency of cached streaming vs. full recompute.

    For each checkpoint ``n`` (1-based frame number) reports the best of
    ``repeats`` timings of pushing frame ``n`` through a warmed stream state,
    and of recomputing the batch output over frames ``1..n``. Also returns
    the largest stream/batch discrepancy over the whole run.
    """
    dtype = weights[0].down_w.dtype
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(cfg.channels, frames, height, width)).astype(dtype)
    if checkpoints is None:
        checkpoints = [n for n in (1, 2, 4, 8, 16, 32, 64, 128) if n <= frames]
    checkpoints = sorted(set(checkpoints))
    state = StreamState(cfg, height, width, dtype)
    outputs = []
    rows = []
    for n in range(1, frames + 1):
        if n in checkpoints:
            best = np.inf
            for _ in range(repeats):
                trial = state.copy()
                t0 = time.perf_counter()
                forward_stream(x[:, n - 1], trial, weights, cfg)
                best = min(best, time.perf_counter() - t0)
            recompute = np.inf
            for _ in range(1 if n > 16 else repeats):
                t0 = time.perf_counter()
                forward_batch(x[:, :n], weights, cfg)
                recompute = min(recompute, time.perf_counter() - t0)
            rows.append({"frame": n, "cached_s": best, "recompute_s": recompute})
        out, state = forward_stream(x[:, n - 1], state, weights, cfg)
        outputs.append(out)
    batch = forward_batch(x, weights, cfg)
    diff = float(np.max(np.abs(np.stack(outputs, axis=1) - batch)))
    return {"rows": rows, "max_abs_diff": diff, "state_bytes": state.nbytes}
