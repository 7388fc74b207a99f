"""Block-sparse matrices with dense ell x ell tiles.

Occupancy is stored row-compressed (``indptr``/``indices``) with sorted
column-block indices; tile values live in one contiguous ``(nnz, ell, ell)``
array.  Rows index the output (postsynaptic) block, columns the input
(presynaptic) block, so ``M @ x`` is the recurrent drive.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

MAGIC = b"TBSR"
VERSION = 1
DENSE_LIMIT = 4096


class BlockSparseError(ValueError):
    """Raised on contract violations (shape, occupancy, c_max)."""


@dataclass(frozen=True)
class BlockLayout:
    B: int
    ell: int
    c_max: int

    def __post_init__(self):
        if self.B < 1 or self.ell < 1:
            raise BlockSparseError(f"B and ell must be >= 1, got B={self.B}, ell={self.ell}")
        if not 1 <= self.c_max <= self.B:
            raise BlockSparseError(f"c_max must lie in [1, {self.B}], got {self.c_max}")

    @property
    def N(self) -> int:
        return self.B * self.ell

    @classmethod
    def with_default_cmax(cls, B: int, ell: int) -> "BlockLayout":
        return cls(B, ell, max(1, B // 4))


class BlockSparseMatrix:
    """Square block-sparse matrix over a :class:`BlockLayout`.

    Diagonal tiles never hold self-connections when ``mask_self`` is set
    (the default); the mask is applied on insertion and by
    :meth:`apply_self_mask`, never inside the matvec.
    """

    def __init__(self, layout: BlockLayout, mask_self: bool = True):
        self.layout = layout
        self.mask_self = mask_self
        ell = layout.ell
        self.indptr = np.zeros(layout.B + 1, dtype=np.int64)
        self.indices = np.zeros(0, dtype=np.int64)
        self.data = np.zeros((0, ell, ell))
        self._refresh()

    # -- construction -----------------------------------------------------

    @classmethod
    def from_blocks(cls, layout: BlockLayout, blocks: dict, mask_self: bool = True):
        """Build from ``{(i, j): ell x ell array}``."""
        M = cls(layout, mask_self=mask_self)
        rows: list[list[int]] = [[] for _ in range(layout.B)]
        for (i, j) in blocks:
            _check_coord(layout, i, j)
            rows[i].append(j)
        for i, cols in enumerate(rows):
            if len(cols) > layout.c_max:
                raise BlockSparseError(f"row {i} has {len(cols)} blocks > c_max={layout.c_max}")
        indptr = np.zeros(layout.B + 1, dtype=np.int64)
        indices = []
        data = []
        for i in range(layout.B):
            for j in sorted(rows[i]):
                blk = np.array(blocks[(i, j)], dtype=float, copy=True)
                if blk.shape != (layout.ell, layout.ell):
                    raise BlockSparseError(f"block ({i},{j}) has shape {blk.shape}")
                indices.append(j)
                data.append(blk)
            indptr[i + 1] = len(indices)
        M.indptr = indptr
        M.indices = np.asarray(indices, dtype=np.int64)
        M.data = np.asarray(data, dtype=float).reshape(-1, layout.ell, layout.ell)
        M._refresh()
        M.apply_self_mask()
        return M

    @classmethod
    def from_dense(cls, layout: BlockLayout, dense: np.ndarray, mask_self: bool = True):
        """Tile a dense matrix, keeping only tiles with any non-zero entry."""
        B, ell = layout.B, layout.ell
        dense = np.asarray(dense, dtype=float)
        if dense.shape != (layout.N, layout.N):
            raise BlockSparseError(f"dense shape {dense.shape} != ({layout.N}, {layout.N})")
        tiles = dense.reshape(B, ell, B, ell).transpose(0, 2, 1, 3)
        blocks = {(i, j): tiles[i, j] for i in range(B) for j in range(B) if np.any(tiles[i, j])}
        return cls.from_blocks(layout, blocks, mask_self=mask_self)

    def copy(self) -> "BlockSparseMatrix":
        M = BlockSparseMatrix(self.layout, mask_self=self.mask_self)
        M.indptr = self.indptr.copy()
        M.indices = self.indices.copy()
        M.data = self.data.copy()
        M._refresh()
        return M

    def _refresh(self):
        counts = np.diff(self.indptr)
        self.rows = np.repeat(np.arange(self.layout.B), counts)
        # scatter matrix mapping tile contributions onto output block rows
        self._scatter = np.zeros((self.layout.B, len(self.indices)))
        self._scatter[self.rows, np.arange(len(self.indices))] = 1.0
        self._diag = self.rows == self.indices

    # -- queries ----------------------------------------------------------

    @property
    def nnz_blocks(self) -> int:
        return len(self.indices)

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def coords(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(self.rows, self.indices)]

    def occupancy(self) -> np.ndarray:
        occ = np.zeros((self.layout.B, self.layout.B), dtype=bool)
        occ[self.rows, self.indices] = True
        return occ

    def density(self) -> float:
        return self.nnz_blocks / float(self.layout.B * self.layout.B)

    def find(self, i: int, j: int) -> int:
        """Position of tile (i, j) in ``data``, or -1."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        pos = lo + np.searchsorted(self.indices[lo:hi], j)
        if pos < hi and self.indices[pos] == j:
            return int(pos)
        return -1

    def block(self, i: int, j: int) -> np.ndarray:
        pos = self.find(i, j)
        if pos < 0:
            raise BlockSparseError(f"block ({i},{j}) is not occupied")
        return self.data[pos]

    def __eq__(self, other):
        if not isinstance(other, BlockSparseMatrix):
            return NotImplemented
        return (
            self.layout == other.layout
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    # -- kernels ----------------------------------------------------------

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``M @ x`` for ``x`` of shape ``(N,)`` or ``(batch, N)``."""
        return bsr_matvec(self, x)

    def apply_self_mask(self):
        if self.mask_self and self._diag.any():
            idx = np.arange(self.layout.ell)
            d = self.data[self._diag]
            d[:, idx, idx] = 0.0
            self.data[self._diag] = d

    def self_mask(self) -> np.ndarray:
        """Per-tile 0/1 mask, zero on self-connections."""
        mask = np.ones_like(self.data)
        if self.mask_self and self._diag.any():
            idx = np.arange(self.layout.ell)
            m = mask[self._diag]
            m[:, idx, idx] = 0.0
            mask[self._diag] = m
        return mask

    # -- structural edits ---------------------------------------------------

    def insert_block(self, i: int, j: int, init: np.ndarray) -> "BlockSparseMatrix":
        """Occupy tile (i, j) in place and return ``self``."""
        _check_coord(self.layout, i, j)
        if self.find(i, j) >= 0:
            raise BlockSparseError(f"block ({i},{j}) already occupied")
        if self.row_counts()[i] >= self.layout.c_max:
            raise BlockSparseError(f"row {i} is full (c_max={self.layout.c_max})")
        init = np.asarray(init, dtype=float)
        if init.shape != (self.layout.ell, self.layout.ell):
            raise BlockSparseError(f"init block has shape {init.shape}")
        lo, hi = self.indptr[i], self.indptr[i + 1]
        pos = int(lo + np.searchsorted(self.indices[lo:hi], j))
        self.indices = np.insert(self.indices, pos, j)
        self.data = np.insert(self.data, pos, init, axis=0)
        self.indptr[i + 1:] += 1
        self._refresh()
        if i == j and self.mask_self:
            idx = np.arange(self.layout.ell)
            self.data[pos, idx, idx] = 0.0
        return self

    def remove_block(self, i: int, j: int) -> "BlockSparseMatrix":
        _check_coord(self.layout, i, j)
        pos = self.find(i, j)
        if pos < 0:
            raise BlockSparseError(f"block ({i},{j}) is not occupied")
        self.indices = np.delete(self.indices, pos)
        self.data = np.delete(self.data, pos, axis=0)
        self.indptr[i + 1:] -= 1
        self._refresh()
        return self

    # -- serialization ------------------------------------------------------

    def write(self, fh: BinaryIO):
        L = self.layout
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, L.B, L.ell, L.c_max))
        fh.write(self.row_counts().astype("<u4").tobytes())
        fh.write(self.indices.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(self.data, dtype="<f8").tobytes())

    @classmethod
    def read(cls, fh: BinaryIO) -> "BlockSparseMatrix":
        magic = fh.read(4)
        if magic != MAGIC:
            raise BlockSparseError(f"bad snapshot magic {magic!r}")
        version, B, ell, c_max = struct.unpack("<IIII", _read_exact(fh, 16))
        if version != VERSION:
            raise BlockSparseError(f"unsupported snapshot version {version}")
        layout = BlockLayout(B, ell, c_max)
        counts = np.frombuffer(_read_exact(fh, 4 * B), dtype="<u4").astype(np.int64)
        if np.any(counts > c_max):
            raise BlockSparseError("snapshot row exceeds c_max")
        nnz = int(counts.sum())
        indices = np.frombuffer(_read_exact(fh, 4 * nnz), dtype="<u4").astype(np.int64)
        if np.any(indices >= B):
            raise BlockSparseError("snapshot column index out of range")
        data = np.frombuffer(_read_exact(fh, 8 * nnz * ell * ell), dtype="<f8").reshape(nnz, ell, ell)
        M = cls(layout)
        M.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        M.indices = indices.copy()
        M.data = data.astype(float)
        M._refresh()
        return M


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise BlockSparseError(f"truncated snapshot: wanted {n} bytes, got {len(data)}")
    return data


def _check_coord(layout: BlockLayout, i: int, j: int):
    if not (0 <= i < layout.B and 0 <= j < layout.B):
        raise BlockSparseError(f"block coordinate ({i},{j}) outside {layout.B}x{layout.B} grid")


def bsr_matvec(M: BlockSparseMatrix, x: np.ndarray) -> np.ndarray:
    """Block-sparse product; work scales with the number of occupied tiles."""
    x = np.asarray(x, dtype=float)
    L = M.layout
    if x.shape[-1] != L.N or x.ndim > 2:
        raise BlockSparseError(f"matvec expects (..., {L.N}) input, got shape {x.shape}")
    squeeze = x.ndim == 1
    X = x.reshape(-1, L.B, L.ell)
    if M.nnz_blocks == 0:
        out = np.zeros_like(X)
    else:
        contrib = np.einsum("nij,bnj->bni", M.data, X[:, M.indices, :])
        out = np.einsum("rn,bni->bri", M._scatter, contrib)
    out = out.reshape(-1, L.N)
    return out[0] if squeeze else out


def block_frobenius_norms(M: BlockSparseMatrix) -> np.ndarray:
    norms = np.zeros((M.layout.B, M.layout.B))
    if M.nnz_blocks:
        norms[M.rows, M.indices] = np.sqrt(np.einsum("nij,nij->n", M.data, M.data))
    return norms


def insert_block(M: BlockSparseMatrix, i: int, j: int, init: np.ndarray) -> BlockSparseMatrix:
    return M.copy().insert_block(i, j, init)


def remove_block(M: BlockSparseMatrix, i: int, j: int) -> BlockSparseMatrix:
    return M.copy().remove_block(i, j)


def to_dense(M: BlockSparseMatrix, limit: int = DENSE_LIMIT) -> np.ndarray:
    L = M.layout
    if L.N > limit:
        raise BlockSparseError(f"refusing dense allocation for N={L.N} > {limit}")
    tiles = np.zeros((L.B, L.B, L.ell, L.ell))
    tiles[M.rows, M.indices] = M.data
    return tiles.transpose(0, 2, 1, 3).reshape(L.N, L.N)


def random_block_sparse(
    layout: BlockLayout,
    blocks_per_row: int,
    scale: float,
    rng: np.random.Generator,
    include_diagonal: bool = True,
) -> BlockSparseMatrix:
    """Random topology with Gaussian tiles of std ``scale / sqrt(ell * blocks_per_row)``.

    With that normalization the spectral radius is roughly ``scale``.
    """
    B, ell = layout.B, layout.ell
    k = min(blocks_per_row, layout.c_max)
    std = scale / np.sqrt(ell * max(k, 1))
    blocks = {}
    for i in range(B):
        if include_diagonal and k > 0:
            others = [j for j in range(B) if j != i]
            cols = [i] + list(rng.choice(others, size=k - 1, replace=False)) if k > 1 else [i]
        else:
            cols = list(rng.choice(B, size=k, replace=False))
        for j in cols:
            blocks[(i, int(j))] = rng.normal(0.0, std, size=(ell, ell))
    return BlockSparseMatrix.from_blocks(layout, blocks)
