"""Neural radiance field: frequency encoding, MLP, and checkpoints.

The field maps an encoded position through a softplus-activated trunk with
one skip connection, then reads opacity density from a linear head
(softplus, so it never saturates to a dead zone) and grayscale radiance
from a direction-conditioned head (logistic, so it stays in [0, 1]).
Smooth activations throughout keep finite-difference gradient checks clean.

Parameters live in autodiff Tensors; wrap evaluation in autodiff.no_grad()
when no tape is needed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

CHECKPOINT_MAGIC = b"NFP1"
_CKPT_HEADER = struct.Struct("<4sIIIIIIQ")


class CheckpointFormatError(ValueError):
    pass


class CorruptParametersError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingConfig:
    l_pos: int = 6
    l_dir: int = 2
    include_input: bool = True

    def __post_init__(self):
        if self.l_pos < 0 or self.l_dir < 0:
            raise ValueError("frequency counts must be non-negative")


@dataclass(frozen=True)
class FieldArch:
    depth: int = 4
    width: int = 64
    channels: int = 1
    encoding: EncodingConfig = EncodingConfig()

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("trunk depth must be at least 2")
        if self.width < 8:
            raise ValueError("trunk width must be at least 8")
        if self.channels < 1:
            raise ValueError("need at least one radiance channel")


def encoding_dim(dim: int, l: int, include_input: bool) -> int:
    return (dim if include_input else 0) + 2 * l * dim


def positional_encode(v: np.ndarray, l: int, include_input: bool = True) -> np.ndarray:
    """[v?, sin(2^k pi v), cos(2^k pi v) for k < l], per component."""
    v = np.asarray(v, dtype=np.float64)
    parts = [v] if include_input else []
    for k in range(l):
        arg = (2.0 ** k) * np.pi * v
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    if not parts:
        return np.zeros(v.shape[:-1] + (0,))
    return np.concatenate(parts, axis=-1)


class FieldParams:
    """Network weights in a fixed layer order, as autodiff tensors.

    Order: trunk layers 0..D-1, opacity head, color hidden, color out; each
    layer contributes (weight, bias).  The skip connection re-feeds the
    encoded position at layer D//2.
    """

    def __init__(self, arch: FieldArch, tensors):
        self.arch = arch
        self.tensors = list(tensors)

    @property
    def pos_dim(self) -> int:
        return encoding_dim(3, self.arch.encoding.l_pos,
                            self.arch.encoding.include_input)

    @property
    def dir_dim(self) -> int:
        return encoding_dim(3, self.arch.encoding.l_dir,
                            self.arch.encoding.include_input)

    @property
    def n_values(self) -> int:
        return sum(t.size for t in self.tensors)

    def flat_values(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.tensors])


def layer_shapes(arch: FieldArch):
    """(fan_in, fan_out) per layer in storage order."""
    enc = arch.encoding
    pos = encoding_dim(3, enc.l_pos, enc.include_input)
    dr = encoding_dim(3, enc.l_dir, enc.include_input)
    w = arch.width
    skip_at = arch.depth // 2
    shapes = []
    for i in range(arch.depth):
        if i == 0:
            fan_in = pos
        elif i == skip_at:
            fan_in = w + pos
        else:
            fan_in = w
        shapes.append((fan_in, w))
    shapes.append((w, 1))                    # opacity head
    shapes.append((w + dr, max(w // 2, 1)))  # color hidden
    shapes.append((max(w // 2, 1), arch.channels))
    return shapes


def init_params(seed: int, arch: FieldArch = FieldArch()) -> FieldParams:
    rng = np.random.default_rng(seed)
    tensors = []
    for fan_in, fan_out in layer_shapes(arch):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        tensors.append(ad.Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)),
                                 requires_grad=True))
        tensors.append(ad.Tensor(np.zeros(fan_out), requires_grad=True))
    return FieldParams(arch, tensors)


def field_forward(params: FieldParams, enc_pos, enc_dir):
    """Batch forward pass on encoded inputs.

    enc_pos (N, pos_dim) and enc_dir (N, dir_dim) are plain arrays (sample
    locations are constants of the optimization).  Returns (c, sigma)
    tensors of shape (N, channels) and (N, 1).
    """
    arch = params.arch
    t = params.tensors
    enc_pos_t = ad.Tensor(enc_pos)
    skip_at = arch.depth // 2
    h = enc_pos_t
    for i in range(arch.depth):
        if i == skip_at and i > 0:
            h = ad.concatenate([h, enc_pos_t], axis=1)
        h = ad.softplus(h @ t[2 * i] + t[2 * i + 1])
    k = 2 * arch.depth
    sigma = ad.softplus(h @ t[k] + t[k + 1])
    hidden = ad.softplus(
        ad.concatenate([h, ad.Tensor(enc_dir)], axis=1) @ t[k + 2] + t[k + 3])
    c = ad.sigmoid(hidden @ t[k + 4] + t[k + 5])
    return c, sigma


@dataclass(frozen=True)
class FieldSample:
    c: float
    sigma: float


def field_eval(params: FieldParams, x, d) -> FieldSample:
    """Single-point evaluation with full input/parameter validation."""
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    d = np.asarray(d, dtype=np.float64).reshape(1, 3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("direction must be unit length")
    for tensor in params.tensors:
        if not np.all(np.isfinite(tensor.data)):
            raise CorruptParametersError("field parameters contain non-finite values")
    enc = params.arch.encoding
    with ad.no_grad():
        c, sigma = field_forward(
            params,
            positional_encode(x, enc.l_pos, enc.include_input),
            positional_encode(d, enc.l_dir, enc.include_input))
    return FieldSample(float(c.data[0, 0]), float(sigma.data[0, 0]))


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params: FieldParams) -> None:
    arch = params.arch
    enc = arch.encoding
    flat = params.flat_values().astype("<f4")
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, arch.depth, arch.width,
                                  arch.channels, enc.l_pos, enc.l_dir,
                                  int(enc.include_input), flat.size))
        f.write(flat.tobytes())


def load_checkpoint(path) -> FieldParams:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _CKPT_HEADER.size:
        raise CheckpointFormatError(f"file too short for header ({len(raw)} bytes)")
    magic, depth, width, channels, l_pos, l_dir, inc, count = \
        _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r} at byte 0")
    arch = FieldArch(depth, width, channels,
                     EncodingConfig(l_pos, l_dir, bool(inc)))
    body = raw[_CKPT_HEADER.size:]
    if len(body) != count * 4:
        raise CheckpointFormatError(
            f"expected {count * 4} parameter bytes, got {len(body)}")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    shapes = layer_shapes(arch)
    want = sum(fi * fo + fo for fi, fo in shapes)
    if count != want:
        raise CheckpointFormatError(
            f"parameter count {count} does not match architecture ({want})")
    tensors = []
    pos = 0
    for fan_in, fan_out in shapes:
        w = flat[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos:pos + fan_out]
        pos += fan_out
        tensors.append(ad.Tensor(w, requires_grad=True))
        tensors.append(ad.Tensor(b, requires_grad=True))
    return FieldParams(arch, tensors)
