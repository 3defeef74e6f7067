"""Convolutional pixel-patch encoder with hand-written backpropagation.

The encoder is a fixed family: a stack of stride-1, zero-padded (same
size) convolutions with leaky-ReLU between them, a linear final layer
producing one d-dimensional embedding per pixel, and an affine
reconstruction head mapping an embedding back to the p x p x c patch
around its pixel. Forward and backward passes are written directly on
numpy (im2col + GEMM); there is no autodiff framework underneath, which
is why the gradient checks in the test suite are load-bearing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadMagicError,
    ChannelMismatchError,
    CorruptDataError,
    DimMismatchError,
    InvalidArchError,
    OutOfBoundsError,
    TruncatedFileError,
)
from .imgio import Image

MODEL_MAGIC = b"CUTSMDL1"
MODEL_VERSION = 1

LEAKY_SLOPE = 0.01


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor for the conv stack + reconstruction head."""

    num_layers: int = 4
    filter_size: int = 5
    channel_widths: tuple = (16, 32, 64, 128)
    embed_dim: int = 128
    recon_patch: int = 5
    input_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channel_widths", tuple(self.channel_widths))
        if self.num_layers < 1:
            raise InvalidArchError("need at least one conv layer")
        if len(self.channel_widths) != self.num_layers:
            raise InvalidArchError(
                f"{self.num_layers} layers but {len(self.channel_widths)} channel widths"
            )
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise InvalidArchError(f"filter size must be odd, got {self.filter_size}")
        if self.recon_patch < 1 or self.recon_patch % 2 == 0:
            raise InvalidArchError(f"recon patch must be odd, got {self.recon_patch}")
        if any(w < 1 for w in self.channel_widths):
            raise InvalidArchError("channel widths must be positive")
        if self.channel_widths[-1] != self.embed_dim:
            raise InvalidArchError(
                f"last channel width {self.channel_widths[-1]} != embed dim {self.embed_dim}"
            )
        if self.input_channels not in (1, 3):
            raise InvalidArchError(f"input channels must be 1 or 3, got {self.input_channels}")

    @property
    def receptive_field(self) -> int:
        return self.num_layers * (self.filter_size - 1) + 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_layers": self.num_layers,
                "filter_size": self.filter_size,
                "channel_widths": list(self.channel_widths),
                "embed_dim": self.embed_dim,
                "recon_patch": self.recon_patch,
                "input_channels": self.input_channels,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ArchSpec":
        try:
            raw = json.loads(text)
            return cls(
                num_layers=int(raw["num_layers"]),
                filter_size=int(raw["filter_size"]),
                channel_widths=tuple(int(w) for w in raw["channel_widths"]),
                embed_dim=int(raw["embed_dim"]),
                recon_patch=int(raw["recon_patch"]),
                input_channels=int(raw["input_channels"]),
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
            raise CorruptDataError(f"bad architecture descriptor: {e}") from e


@dataclass(frozen=True)
class EncoderParams:
    """All trainable tensors, in checkpoint order: (w, b) per layer, then head."""

    arch: ArchSpec
    conv_weights: list  # per layer: (out_ch, in_ch, k, k)
    conv_biases: list   # per layer: (out_ch,)
    recon_weight: np.ndarray  # (p*p*c, d)
    recon_bias: np.ndarray    # (p*p*c,)

    def tensors(self) -> list:
        """Flat tensor list in the fixed checkpoint order."""
        out = []
        for w, b in zip(self.conv_weights, self.conv_biases):
            out.append(w)
            out.append(b)
        out.append(self.recon_weight)
        out.append(self.recon_bias)
        return out

    def with_tensors(self, tensors: list) -> "EncoderParams":
        """Rebuild params from a flat tensor list (checkpoint order)."""
        n = self.arch.num_layers
        ws = [tensors[2 * i] for i in range(n)]
        bs = [tensors[2 * i + 1] for i in range(n)]
        return EncoderParams(self.arch, ws, bs, tensors[2 * n], tensors[2 * n + 1])

    def astype(self, dtype) -> "EncoderParams":
        return self.with_tensors([t.astype(dtype) for t in self.tensors()])


@dataclass(frozen=True)
class EmbeddingField:
    """H x W grid of d-dimensional embedding vectors."""

    data: np.ndarray  # (H, W, d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Patch:
    """p x p x c window of intensities (or a reconstruction of one)."""

    data: np.ndarray  # (p, p, c)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def init_params(arch: ArchSpec, seed: int) -> EncoderParams:
    """Uniform(-b, b) weights with b = sqrt(1/fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    in_ch = arch.input_channels
    k = arch.filter_size
    for out_ch in arch.channel_widths:
        bound = np.sqrt(1.0 / (in_ch * k * k))
        ws.append(rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(np.float32))
        bs.append(np.zeros(out_ch, dtype=np.float32))
        in_ch = out_ch
    p = arch.recon_patch
    out_dim = p * p * arch.input_channels
    bound = np.sqrt(1.0 / arch.embed_dim)
    rw = rng.uniform(-bound, bound, size=(out_dim, arch.embed_dim)).astype(np.float32)
    rb = np.zeros(out_dim, dtype=np.float32)
    return EncoderParams(arch, ws, bs, rw, rb)


# --- convolution primitives ---------------------------------------------------

def _weight_matrix(w: np.ndarray) -> np.ndarray:
    # (out, in, k, k) -> (in*k*k, out), matching the im2col column layout
    cout = w.shape[0]
    return w.transpose(1, 2, 3, 0).reshape(-1, cout)


def _conv_same_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1 zero-padded convolution. Returns (out, col) with col cached
    for the backward pass. x is (H, W, Cin), out is (H, W, Cout)."""
    h, wd, cin = x.shape
    k = w.shape[-1]
    pad = (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # (H, W, Cin, k, k)
    col = win.reshape(h * wd, cin * k * k)
    out = col @ _weight_matrix(w)
    out += b
    return out.reshape(h, wd, -1), col


def _conv_same_backward(col: np.ndarray, w: np.ndarray, dout: np.ndarray, in_shape):
    """Gradients of a same-size convolution given the cached im2col matrix."""
    h, wd, cin = in_shape
    cout, _, k, _ = w.shape
    pad = (k - 1) // 2
    dflat = dout.reshape(h * wd, cout)
    db = dflat.sum(axis=0)
    dwmat = col.T @ dflat  # (cin*k*k, cout)
    dw = dwmat.reshape(cin, k, k, cout).transpose(3, 0, 1, 2)
    dcol = dflat @ _weight_matrix(w).T
    dwin = dcol.reshape(h, wd, cin, k, k)
    dxp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=dcol.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[ki : ki + h, kj : kj + wd, :] += dwin[:, :, :, ki, kj]
    return dxp[pad : pad + h, pad : pad + wd, :], dw, db


def _conv_at_coords(x: np.ndarray, w: np.ndarray, b: np.ndarray, coords: np.ndarray):
    """Same convolution evaluated only at the given (i, j) output pixels.

    Returns (out (n, Cout), col (n, Cin*k*k)). Used by the training step,
    where the loss touches a small subset of pixels.
    """
    k = w.shape[-1]
    pad = (k - 1) // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    ii = coords[:, 0][:, None, None] + np.arange(k)[None, :, None]
    jj = coords[:, 1][:, None, None] + np.arange(k)[None, None, :]
    win = xp[ii, jj, :]  # (n, k, k, Cin)
    col = win.transpose(0, 3, 1, 2).reshape(len(coords), -1)
    return col @ _weight_matrix(w) + b, col


def _conv_at_coords_backward(
    col: np.ndarray, w: np.ndarray, dz: np.ndarray, coords: np.ndarray, in_shape
):
    """Backward counterpart of :func:`_conv_at_coords`; scatters dX densely."""
    h, wd, cin = in_shape
    cout, _, k, _ = w.shape
    pad = (k - 1) // 2
    db = dz.sum(axis=0)
    dwmat = col.T @ dz
    dw = dwmat.reshape(cin, k, k, cout).transpose(3, 0, 1, 2)
    dcol = dz @ _weight_matrix(w).T
    dwin = dcol.reshape(len(coords), cin, k, k).transpose(0, 2, 3, 1)  # (n, k, k, cin)
    dxp = np.zeros((h + 2 * pad, wd + 2 * pad, cin), dtype=dcol.dtype)
    ii = coords[:, 0][:, None, None] + np.arange(k)[None, :, None]
    jj = coords[:, 1][:, None, None] + np.arange(k)[None, None, :]
    np.add.at(dxp, (ii, jj), dwin)
    return dxp[pad : pad + h, pad : pad + wd, :], dw, db


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_grad_mask(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, LEAKY_SLOPE).astype(x.dtype)


def forward(params: EncoderParams, img: Image) -> EmbeddingField:
    """Map an image to its H x W x d embedding field.

    Every layer is a same-size convolution; all but the last are followed
    by leaky-ReLU, the last is linear, so spatial size is preserved
    exactly and each pixel gets one embedding.
    """
    field, _ = forward_with_cache(params, img.data, need_cache=False)
    return EmbeddingField(field)


def forward_with_cache(params: EncoderParams, x: np.ndarray, need_cache: bool = True):
    """Dense forward pass over all layers; optionally keeps im2col matrices
    and activation masks for the backward pass."""
    arch = params.arch
    if x.shape[2] != arch.input_channels:
        raise ChannelMismatchError(
            f"image has {x.shape[2]} channels, encoder expects {arch.input_channels}"
        )
    cols, masks, inputs = [], [], []
    a = x
    n = arch.num_layers
    for li in range(n):
        inputs.append(a)
        pre, col = _conv_same_forward(a, params.conv_weights[li], params.conv_biases[li])
        if need_cache:
            cols.append(col)
        if li < n - 1:
            if need_cache:
                masks.append(_leaky_grad_mask(pre))
            a = _leaky(pre)
        else:
            a = pre
    cache = {"cols": cols, "masks": masks, "inputs": inputs} if need_cache else None
    return a, cache


def backward_from_field(params: EncoderParams, cache: dict, dfield: np.ndarray):
    """Backpropagate a dense dLoss/dField through the whole conv stack.

    Returns per-layer (dW, dB) lists ordered like the params.
    """
    n = params.arch.num_layers
    dws = [None] * n
    dbs = [None] * n
    grad = dfield
    for li in range(n - 1, -1, -1):
        if li < n - 1:
            grad = grad * cache["masks"][li]
        grad, dw, db = _conv_same_backward(
            cache["cols"][li], params.conv_weights[li], grad, cache["inputs"][li].shape
        )
        dws[li] = dw
        dbs[li] = db
    return dws, dbs


def extract_patch(img: Image, i: int, j: int, p: int) -> Patch:
    """p x p x c window centered at (i, j); out-of-bounds cells are zero,
    matching the encoder's zero padding."""
    h, w = img.height, img.width
    if not (0 <= i < h and 0 <= j < w):
        raise OutOfBoundsError(f"pixel ({i}, {j}) outside {h}x{w} image")
    hw = (p - 1) // 2
    out = np.zeros((p, p, img.channels), dtype=img.data.dtype)
    r0, r1 = max(0, i - hw), min(h, i + hw + 1)
    c0, c1 = max(0, j - hw), min(w, j + hw + 1)
    out[r0 - (i - hw) : r1 - (i - hw), c0 - (j - hw) : c1 - (j - hw), :] = img.data[
        r0:r1, c0:c1, :
    ]
    return Patch(out)


def extract_patches_flat(data: np.ndarray, coords: np.ndarray, p: int) -> np.ndarray:
    """Vectorized extract_patch for many coordinates.

    Returns (n, p*p*c) rows flattened in (row, col, channel) order,
    identical to ``extract_patch(...).data.reshape(-1)``.
    """
    hw = (p - 1) // 2
    padded = np.pad(data, ((hw, hw), (hw, hw), (0, 0)))
    win = sliding_window_view(padded, (p, p), axis=(0, 1))  # (H, W, C, p, p)
    sel = win[coords[:, 0], coords[:, 1]]  # (n, C, p, p)
    return sel.transpose(0, 2, 3, 1).reshape(len(coords), -1)


def reconstruct_patch(params: EncoderParams, z: np.ndarray) -> Patch:
    """Affine head: recon_weight @ z + recon_bias, reshaped to p x p x c."""
    z = np.asarray(z)
    if z.ndim != 1 or z.shape[0] != params.arch.embed_dim:
        raise DimMismatchError(
            f"embedding must be a length-{params.arch.embed_dim} vector, got shape {z.shape}"
        )
    flat = params.recon_weight @ z + params.recon_bias
    p = params.arch.recon_patch
    return Patch(flat.reshape(p, p, params.arch.input_channels))


# --- Adam ---------------------------------------------------------------------

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    t: int
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(params: EncoderParams) -> AdamState:
    tensors = params.tensors()
    return AdamState(
        t=0,
        m=[np.zeros_like(t, dtype=np.float32) for t in tensors],
        v=[np.zeros_like(t, dtype=np.float32) for t in tensors],
    )


def adam_step(params: EncoderParams, grads: list, state: AdamState, lr: float):
    """One Adam update; returns (new params, new state). lr=0 leaves the
    parameter values bit-identical."""
    tensors = params.tensors()
    t = state.t + 1
    new_m, new_v, new_t = [], [], []
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m2 = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v2 = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        step = lr * (m2 / bc1) / (np.sqrt(v2 / bc2) + ADAM_EPS)
        new_t.append((p - step).astype(p.dtype, copy=False))
        new_m.append(m2.astype(np.float32, copy=False))
        new_v.append(v2.astype(np.float32, copy=False))
    return params.with_tensors(new_t), AdamState(t=t, m=new_m, v=new_v)


# --- checkpoint file ------------------------------------------------------------

def save_model(params: EncoderParams, path) -> None:
    """Write the checkpoint: magic, version, JSON arch, then each tensor as
    (u32 rank, u32 dims..., float32 LE payload) in checkpoint order."""
    arch_blob = params.arch.to_json().encode("utf-8")
    with open(Path(path), "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(arch_blob)))
        f.write(arch_blob)
        for t in params.tensors():
            t32 = np.ascontiguousarray(t, dtype="<f4")
            f.write(struct.pack("<I", t32.ndim))
            f.write(struct.pack(f"<{t32.ndim}I", *t32.shape))
            f.write(t32.tobytes(order="C"))


def load_model(path) -> EncoderParams:
    """Read a checkpoint written by :func:`save_model` (bit-exact round trip)."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such model file: {p}")
    blob = p.read_bytes()
    off = 0

    def take(n, what):
        nonlocal off
        if len(blob) - off < n:
            raise TruncatedFileError(f"{p}: truncated while reading {what}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    if take(len(MODEL_MAGIC), "magic") != MODEL_MAGIC:
        raise BadMagicError(f"{p}: bad magic")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != MODEL_VERSION:
        raise CorruptDataError(f"{p}: unsupported checkpoint version {version}")
    (alen,) = struct.unpack("<I", take(4, "arch length"))
    arch = ArchSpec.from_json(take(alen, "arch json").decode("utf-8"))

    tensors = []
    n_tensors = 2 * arch.num_layers + 2
    for ti in range(n_tensors):
        (rank,) = struct.unpack("<I", take(4, f"tensor {ti} rank"))
        if rank > 4:
            raise CorruptDataError(f"{p}: implausible tensor rank {rank}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"tensor {ti} dims"))
        count = int(np.prod(dims)) if rank else 1
        payload = take(4 * count, f"tensor {ti} payload")
        tensors.append(np.frombuffer(payload, dtype="<f4").reshape(dims).copy())
    if off != len(blob):
        raise CorruptDataError(f"{p}: trailing bytes after last tensor")

    params = EncoderParams(
        arch,
        [tensors[2 * i] for i in range(arch.num_layers)],
        [tensors[2 * i + 1] for i in range(arch.num_layers)],
        tensors[-2],
        tensors[-1],
    )
    _check_shapes(params)
    return params


def _check_shapes(params: EncoderParams) -> None:
    arch = params.arch
    in_ch = arch.input_channels
    k = arch.filter_size
    for li, out_ch in enumerate(arch.channel_widths):
        if params.conv_weights[li].shape != (out_ch, in_ch, k, k):
            raise CorruptDataError(f"layer {li} weight shape mismatch")
        if params.conv_biases[li].shape != (out_ch,):
            raise CorruptDataError(f"layer {li} bias shape mismatch")
        in_ch = out_ch
    out_dim = arch.recon_patch**2 * arch.input_channels
    if params.recon_weight.shape != (out_dim, arch.embed_dim):
        raise CorruptDataError("reconstruction weight shape mismatch")
    if params.recon_bias.shape != (out_dim,):
        raise CorruptDataError("reconstruction bias shape mismatch")
