"""Binary checkpoints: the block-sparse snapshot, then network state, then named arrays.

Layout (all little-endian)::

    TBSR section            written by BlockSparseMatrix.write
    b"TSTA" u32 version u32 N u32 rows
        f8[rows*N] x, f8[rows*N] trc, f8[rows*N] a, i64 step, u64 noise_seed
    b"TEXT" u32 count
        per array: u16 name_len, name (utf-8), u8 ndim, u64[ndim] shape, f8[...] data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..blocksparse import BlockSparseError, BlockSparseMatrix
from ..dynamics import NetworkState

STATE_MAGIC = b"TSTA"
EXTRA_MAGIC = b"TEXT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _take(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def write_state(fh, state: NetworkState):
    # rows=0 marks an unbatched (1-D) state
    rows, N = (0, state.x.size) if state.x.ndim == 1 else state.x.shape
    fh.write(STATE_MAGIC)
    fh.write(struct.pack("<III", VERSION, N, rows))
    for arr in (state.x, state.trc, state.a):
        fh.write(np.ascontiguousarray(np.atleast_2d(arr), dtype="<f8").tobytes())
    fh.write(struct.pack("<qQ", int(state.step), int(state.noise_seed)))


def read_state(fh) -> NetworkState:
    if _take(fh, 4) != STATE_MAGIC:
        raise CheckpointError("missing state section")
    version, N, rows = struct.unpack("<III", _take(fh, 12))
    if version != VERSION:
        raise CheckpointError(f"unsupported state version {version}")
    shape = (N,) if rows == 0 else (rows, N)
    arrs = [np.frombuffer(_take(fh, 8 * N * max(rows, 1)), dtype="<f8").reshape(shape).astype(float) for _ in range(3)]
    step, seed = struct.unpack("<qQ", _take(fh, 16))
    return NetworkState(arrs[0], arrs[1], arrs[2], step, seed)


def write_arrays(fh, arrays: dict):
    fh.write(EXTRA_MAGIC)
    fh.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype="<f8")
        key = name.encode("utf-8")
        fh.write(struct.pack("<H", len(key)) + key)
        fh.write(struct.pack("<B", a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_arrays(fh) -> dict:
    if _take(fh, 4) != EXTRA_MAGIC:
        raise CheckpointError("missing array section")
    (count,) = struct.unpack("<I", _take(fh, 4))
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _take(fh, 2))
        name = _take(fh, n).decode("utf-8")
        (ndim,) = struct.unpack("<B", _take(fh, 1))
        shape = struct.unpack(f"<{ndim}Q", _take(fh, 8 * ndim)) if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(_take(fh, 8 * size), dtype="<f8").reshape(shape).astype(float)
    return out


def save_checkpoint(path, W: BlockSparseMatrix, state: NetworkState, arrays: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        W.write(fh)
        write_state(fh, state)
        write_arrays(fh, arrays or {})
    return path


def load_checkpoint(path):
    """Returns ``(W, state, arrays)``."""
    with open(path, "rb") as fh:
        try:
            W = BlockSparseMatrix.read(fh)
        except BlockSparseError as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        state = read_state(fh)
        arrays = read_arrays(fh)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes")
    return W, state, arrays


def network_arrays(net) -> dict:
    H = net.heads
    d = {"R": H.R, "W_fb": H.W_fb, "b": H.b, "W_in": net.W_in, "T": net.tfm.T,
         "ewma": np.array([net.ewma_mse, net.ewma_power])}
    if H.R_V is not None:
        d["R_V"] = H.R_V
    return d


def save_network(path, net, extra: dict | None = None) -> Path:
    arrays = network_arrays(net)
    for k, v in (extra or {}).items():
        arrays["extra." + k] = v
    return save_checkpoint(path, net.W, net.state, arrays)


def restore_network(net, path) -> dict:
    """Load a checkpoint into ``net`` (built from the same config); returns extras."""
    W, state, arrays = load_checkpoint(path)
    if W.layout != net.W.layout:
        raise CheckpointError(f"checkpoint layout {W.layout} does not match network {net.W.layout}")
    if state.x.shape[-1] != net.N:
        raise CheckpointError("checkpoint state size does not match network")
    net.W = W
    net.state = state
    H = net.heads
    H.R, H.W_fb, H.b = arrays["R"], arrays["W_fb"], arrays["b"]
    H.R_V = arrays.get("R_V")
    net.W_in = arrays["W_in"]
    net.tfm.T = arrays["T"]
    net.ewma_mse, net.ewma_power = (float(v) for v in arrays["ewma"])
    return {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}


def checkpoint_extra(path, name: str):
    """One named extra array from a network checkpoint (``None`` if absent)."""
    return load_checkpoint(path)[2].get("extra." + name)
