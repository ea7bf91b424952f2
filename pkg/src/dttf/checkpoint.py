"""Binary checkpoint container.

Layout (all integers and floats little-endian)::

    magic      8 bytes   b"DTTFCKPT"
    version    u32
    flags      u32       bit 0: four autoencoders follow the factors
    K, L, I_s, J_s, I_t, J_t, iter, n_history        u64 each
    per network (if flagged): depth u32, hidden act u32, output act u32,
                              depth+1 layer widths u64
    U_s, V_s, U_t, V_t, C                            f64, row-major
    per network: W_1, b_1, ..., W_M, b_M             f64, row-major
    objective history                                f64
    sha256 of everything above                       32 bytes
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

from .cp import FactorSet
from .errors import CorruptChecksum, VersionMismatch
from .sdae import Activation, DenoisingAutoencoder

MAGIC = b"DTTFCKPT"
VERSION = 1
_ACT_CODES = list(Activation)
_NET_ORDER = ("user_net_s", "user_net_t", "item_net_s", "item_net_t")


def _f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _encode(factors: FactorSet, nets=None, iteration=0, history=()) -> bytes:
    f = factors
    header = [f.K, f.L, *f.U_s.shape[:1], *f.V_s.shape[:1], *f.U_t.shape[:1],
              *f.V_t.shape[:1], iteration, len(history)]
    parts = [MAGIC, struct.pack("<II", VERSION, 1 if nets else 0),
             struct.pack("<8Q", *header)]
    if nets:
        for net in nets:
            parts.append(struct.pack("<III", net.depth, _ACT_CODES.index(net.hidden_activation),
                                     _ACT_CODES.index(net.output_activation)))
            parts.append(struct.pack(f"<{net.depth + 1}Q", *net.layer_sizes))
    parts += [_f64(m) for _, m in f.named()]
    if nets:
        parts += [_f64(p) for net in nets for p in net.params()]
    parts.append(_f64(np.asarray(history, dtype=np.float64)))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes, offset: int):
        self.buf = buf
        self.pos = offset

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CorruptChecksum("checkpoint ends prematurely")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def floats(self, *shape) -> np.ndarray:
        n = int(np.prod(shape))
        if self.pos + 8 * n > len(self.buf):
            raise CorruptChecksum("checkpoint ends prematurely")
        arr = np.frombuffer(self.buf, dtype="<f8", count=n, offset=self.pos)
        self.pos += 8 * n
        return arr.astype(np.float64).reshape(shape)


def _decode(buf: bytes):
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CorruptChecksum("not a dttf checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, len(MAGIC))
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, this build reads {VERSION}")
    body, digest = buf[:-32], buf[-32:]
    if len(buf) < len(MAGIC) + 8 + 32 or hashlib.sha256(body).digest() != digest:
        raise CorruptChecksum("checkpoint checksum mismatch (truncated or modified)")
    rd = _Reader(body, len(MAGIC) + 4)
    (flags,) = rd.unpack("<I")
    K, L, I_s, J_s, I_t, J_t, iteration, n_hist = rd.unpack("<8Q")
    layouts = []
    if flags & 1:
        for _ in _NET_ORDER:
            depth, g, f = rd.unpack("<III")
            layouts.append((rd.unpack(f"<{depth + 1}Q"), _ACT_CODES[g], _ACT_CODES[f]))
    factors = FactorSet(rd.floats(I_s, K), rd.floats(J_s, K), rd.floats(I_t, K),
                        rd.floats(J_t, K), rd.floats(L, K))
    nets = []
    for sizes, g, f in layouts:
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rd.floats(fan_out, fan_in))
            biases.append(rd.floats(fan_out))
        nets.append(DenoisingAutoencoder(weights, biases, g, f))
    history = rd.floats(n_hist).tolist()
    if rd.pos != len(body):
        raise CorruptChecksum("trailing bytes after checkpoint payload")
    return factors, nets, iteration, history


def save_checkpoint(state, path):
    nets = [getattr(state, name) for name in _NET_ORDER]
    data = _encode(state.factors, nets, state.iter, state.objective_history)
    with open(path, "wb") as fh:
        fh.write(data)


def load_checkpoint(path):
    from .model import TrainState

    with open(path, "rb") as fh:
        factors, nets, iteration, history = _decode(fh.read())
    if len(nets) != len(_NET_ORDER):
        raise CorruptChecksum(f"{path} holds factors only, not a training state")
    return TrainState(factors, *nets, iter=iteration, objective_history=history)


def save_factors(factors: FactorSet, path):
    with open(path, "wb") as fh:
        fh.write(_encode(factors))


def load_factors(path) -> FactorSet:
    with open(path, "rb") as fh:
        return _decode(fh.read())[0]
