"""Block-sparse matrices with FLOP-tallied arithmetic.

A :class:`BlockMatrix` stores only the nonzero dense blocks of a matrix that is
partitioned into block rows and block columns.  Blocks known to be exact
identities are flagged so that products with them are copies (zero FLOPs) and
so that their structural nonzero count is the diagonal only.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .flops import FlopCounter

__all__ = ["BlockMatrix"]

Key = tuple[int, int]


def _offsets(sizes: Sequence[int]) -> np.ndarray:
    return np.concatenate(([0], np.cumsum(sizes, dtype=np.int64))).astype(np.int64)


class BlockMatrix:
    """Matrix partitioned into blocks, storing only nonzero blocks.

    Parameters
    ----------
    row_sizes, col_sizes : sequence of int
        Heights of the block rows and widths of the block columns.
    blocks : dict, optional
        Mapping ``(block_row, block_col) -> ndarray``.
    identity : iterable of keys, optional
        Keys whose blocks are exact identity matrices.
    """

    __slots__ = ("row_sizes", "col_sizes", "blocks", "identity", "_roff", "_coff")

    def __init__(
        self,
        row_sizes: Sequence[int],
        col_sizes: Sequence[int],
        blocks: Optional[dict[Key, np.ndarray]] = None,
        identity: Iterable[Key] = (),
    ):
        self.row_sizes = tuple(int(s) for s in row_sizes)
        self.col_sizes = tuple(int(s) for s in col_sizes)
        self.blocks: dict[Key, np.ndarray] = dict(blocks or {})
        self.identity: set[Key] = set(identity)
        self._roff = _offsets(self.row_sizes)
        self._coff = _offsets(self.col_sizes)
        for (i, j), blk in self.blocks.items():
            if blk.shape != (self.row_sizes[i], self.col_sizes[j]):
                raise ValueError(
                    f"block ({i}, {j}) has shape {blk.shape}, expected "
                    f"{(self.row_sizes[i], self.col_sizes[j])}"
                )

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dense(
        cls, dense: np.ndarray, row_sizes: Sequence[int], col_sizes: Sequence[int]
    ) -> "BlockMatrix":
        """Partition ``dense`` and keep blocks that are not identically zero."""
        out = cls(row_sizes, col_sizes)
        dense = np.asarray(dense, dtype=float)
        if dense.shape != out.shape:
            raise ValueError(f"dense shape {dense.shape} does not match {out.shape}")
        for i in range(out.n_block_rows):
            for j in range(out.n_block_cols):
                blk = dense[out._roff[i] : out._roff[i + 1], out._coff[j] : out._coff[j + 1]]
                if blk.size and np.any(blk != 0.0):
                    out.blocks[(i, j)] = blk.copy()
        return out

    def set_identity(self, i: int, j: int) -> None:
        n = self.row_sizes[i]
        if n != self.col_sizes[j]:
            raise ValueError("identity block must be square")
        self.blocks[(i, j)] = np.eye(n)
        self.identity.add((i, j))

    def copy(self) -> "BlockMatrix":
        return BlockMatrix(
            self.row_sizes,
            self.col_sizes,
            {k: v.copy() for k, v in self.blocks.items()},
            self.identity,
        )

    # -- shape --------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return int(self._roff[-1]), int(self._coff[-1])

    @property
    def n_block_rows(self) -> int:
        return len(self.row_sizes)

    @property
    def n_block_cols(self) -> int:
        return len(self.col_sizes)

    @property
    def row_offsets(self) -> np.ndarray:
        return self._roff

    @property
    def col_offsets(self) -> np.ndarray:
        return self._coff

    def __repr__(self) -> str:
        return (
            f"BlockMatrix(shape={self.shape}, blocks={self.n_block_rows}x"
            f"{self.n_block_cols}, stored={len(self.blocks)})"
        )

    def get(self, i: int, j: int) -> Optional[np.ndarray]:
        return self.blocks.get((i, j))

    def is_identity(self, i: int, j: int) -> bool:
        return (i, j) in self.identity

    # -- structure ----------------------------------------------------------

    @property
    def nnz(self) -> int:
        """Structural nonzeros: identity blocks count their diagonal, others fully."""
        total = 0
        for key, blk in self.blocks.items():
            total += blk.shape[0] if key in self.identity else blk.size
        return total

    def pattern(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of structural nonzeros, lexicographically sorted."""
        rows, cols = [], []
        for (i, j), blk in self.blocks.items():
            r0, c0 = self._roff[i], self._coff[j]
            if (i, j) in self.identity:
                d = np.arange(blk.shape[0])
                rows.append(r0 + d)
                cols.append(c0 + d)
            else:
                rr, cc = np.meshgrid(
                    np.arange(blk.shape[0]), np.arange(blk.shape[1]), indexing="ij"
                )
                rows.append(r0 + rr.ravel())
                cols.append(c0 + cc.ravel())
        if not rows:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        r = np.concatenate(rows).astype(np.int64)
        c = np.concatenate(cols).astype(np.int64)
        order = np.lexsort((c, r))
        return r[order], c[order]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for (i, j), blk in self.blocks.items():
            out[self._roff[i] : self._roff[i + 1], self._coff[j] : self._coff[j + 1]] = blk
        return out

    def to_sparse(self) -> sp.csr_matrix:
        """CSR copy keeping explicit zeros of stored (non-identity) blocks."""
        rows, cols, vals = [], [], []
        for (i, j), blk in self.blocks.items():
            r0, c0 = self._roff[i], self._coff[j]
            if (i, j) in self.identity:
                d = np.arange(blk.shape[0])
                rows.append(r0 + d)
                cols.append(c0 + d)
                vals.append(np.ones(blk.shape[0]))
            else:
                rr, cc = np.meshgrid(
                    np.arange(blk.shape[0]), np.arange(blk.shape[1]), indexing="ij"
                )
                rows.append(r0 + rr.ravel())
                cols.append(c0 + cc.ravel())
                vals.append(blk.ravel())
        if not rows:
            return sp.csr_matrix(self.shape)
        coo = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=self.shape,
        )
        return coo.tocsr()

    # -- algebra ------------------------------------------------------------

    @property
    def T(self) -> "BlockMatrix":
        return BlockMatrix(
            self.col_sizes,
            self.row_sizes,
            {(j, i): blk.T.copy() for (i, j), blk in self.blocks.items()},
            {(j, i) for (i, j) in self.identity},
        )

    def matmul(self, other: "BlockMatrix", counter: Optional[FlopCounter] = None) -> "BlockMatrix":
        """Block-sparse product; identity blocks are applied as copies."""
        if self.col_sizes != other.row_sizes:
            raise ValueError("inner block partitions differ")
        by_row: dict[int, list[int]] = {}
        for k, j in other.blocks:
            by_row.setdefault(k, []).append(j)
        for v in by_row.values():
            v.sort()
        out: dict[Key, np.ndarray] = {}
        ident: set[Key] = set()
        for i, k in sorted(self.blocks):
            a = self.blocks[(i, k)]
            a_eye = (i, k) in self.identity
            for j in by_row.get(k, ()):
                b = other.blocks[(k, j)]
                b_eye = (k, j) in other.identity
                if a_eye:
                    prod = b.copy()
                elif b_eye:
                    prod = a.copy()
                else:
                    prod = a @ b
                    if counter is not None:
                        counter.gemm(a.shape[0], a.shape[1], b.shape[1])
                key = (i, j)
                if key in out:
                    out[key] += prod
                    ident.discard(key)
                    if counter is not None:
                        counter.add(prod.size)
                else:
                    out[key] = prod
                    if a_eye and b_eye:
                        ident.add(key)
        return BlockMatrix(self.row_sizes, other.col_sizes, out, ident)

    def __matmul__(self, other):
        if isinstance(other, BlockMatrix):
            return self.matmul(other)
        return self.matvec(other)

    def _combine(self, other: "BlockMatrix", sign: float, counter: Optional[FlopCounter]):
        if self.row_sizes != other.row_sizes or self.col_sizes != other.col_sizes:
            raise ValueError("block partitions differ")
        out = {k: v.copy() for k, v in self.blocks.items()}
        ident = set(self.identity)
        for key, blk in other.blocks.items():
            if key in out:
                out[key] = out[key] + blk if sign > 0 else out[key] - blk
                ident.discard(key)
                if counter is not None:
                    counter.add(blk.size)
            else:
                # sign flips are free under the counting rules
                out[key] = blk.copy() if sign > 0 else -blk
                if sign > 0 and key in other.identity:
                    ident.add(key)
        return BlockMatrix(self.row_sizes, self.col_sizes, out, ident)

    def add(self, other: "BlockMatrix", counter: Optional[FlopCounter] = None) -> "BlockMatrix":
        return self._combine(other, 1.0, counter)

    def sub(self, other: "BlockMatrix", counter: Optional[FlopCounter] = None) -> "BlockMatrix":
        return self._combine(other, -1.0, counter)

    def matvec(self, v: np.ndarray, counter: Optional[FlopCounter] = None) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.shape[1],):
            raise ValueError(f"vector length {v.shape} does not match {self.shape[1]}")
        out = np.zeros(self.shape[0])
        touched: set[int] = set()
        for (i, j), blk in sorted(self.blocks.items()):
            seg = v[self._coff[j] : self._coff[j + 1]]
            rs = slice(self._roff[i], self._roff[i + 1])
            if (i, j) in self.identity:
                contrib = seg
            else:
                contrib = blk @ seg
                if counter is not None:
                    counter.matvec(blk.shape[0], blk.shape[1])
            if i in touched:
                out[rs] += contrib
                if counter is not None:
                    counter.add(blk.shape[0])
            else:
                out[rs] = contrib
                touched.add(i)
        return out

    def rmatvec(self, v: np.ndarray, counter: Optional[FlopCounter] = None) -> np.ndarray:
        """``self.T @ v`` without materializing the transpose."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.shape[0],):
            raise ValueError(f"vector length {v.shape} does not match {self.shape[0]}")
        out = np.zeros(self.shape[1])
        touched: set[int] = set()
        for (i, j), blk in sorted(self.blocks.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            seg = v[self._roff[i] : self._roff[i + 1]]
            cs = slice(self._coff[j], self._coff[j + 1])
            if (i, j) in self.identity:
                contrib = seg
            else:
                contrib = blk.T @ seg
                if counter is not None:
                    counter.matvec(blk.shape[1], blk.shape[0])
            if j in touched:
                out[cs] += contrib
                if counter is not None:
                    counter.add(blk.shape[1])
            else:
                out[cs] = contrib
                touched.add(j)
        return out

    def select_rows(self, rows: Sequence[int]) -> "BlockMatrix":
        """Keep the listed block rows (a 0/1 selector product, so free)."""
        pos = {r: n for n, r in enumerate(rows)}
        out = {(pos[i], j): blk.copy() for (i, j), blk in self.blocks.items() if i in pos}
        ident = {(pos[i], j) for (i, j) in self.identity if i in pos}
        return BlockMatrix([self.row_sizes[r] for r in rows], self.col_sizes, out, ident)

    def select_cols(self, cols: Sequence[int]) -> "BlockMatrix":
        pos = {c: n for n, c in enumerate(cols)}
        out = {(i, pos[j]): blk.copy() for (i, j), blk in self.blocks.items() if j in pos}
        ident = {(i, pos[j]) for (i, j) in self.identity if j in pos}
        return BlockMatrix(self.row_sizes, [self.col_sizes[c] for c in cols], out, ident)

    def symmetrize(self) -> tuple["BlockMatrix", float]:
        """Return ``(M + M^T)/2`` and the largest entry of ``|M - M^T|`` before it."""
        if self.row_sizes != self.col_sizes:
            raise ValueError("symmetrize needs a square block partition")
        out: dict[Key, np.ndarray] = {}
        ident: set[Key] = set()
        dev = 0.0
        for key in set(self.blocks) | {(j, i) for (i, j) in self.blocks}:
            i, j = key
            a = self.blocks.get((i, j))
            b = self.blocks.get((j, i))
            if a is None:
                a = np.zeros_like(b.T)
            if b is None:
                b = np.zeros_like(a.T)
            diff = a - b.T
            if diff.size:
                dev = max(dev, float(np.max(np.abs(diff))))
            if not np.any(diff):
                out[key] = a.copy()
                if key in self.identity:
                    ident.add(key)
            else:
                out[key] = 0.5 * (a + b.T)
        return BlockMatrix(self.row_sizes, self.col_sizes, out, ident), dev

    def equal_blocks(self, other: "BlockMatrix") -> bool:
        """Bitwise equality of partitions and stored block content."""
        if self.row_sizes != other.row_sizes or self.col_sizes != other.col_sizes:
            return False
        if set(self.blocks) != set(other.blocks):
            return False
        return all(np.array_equal(self.blocks[k], other.blocks[k]) for k in self.blocks)
