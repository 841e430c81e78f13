"""Block-partitioned dense matrices with 1-based block indexing.

Matrices over a chain of subsystems are naturally addressed by block
position rather than by raw row/column: ``A.block(3, 2)`` is the coupling
of subsystem 3 to subsystem 2, ``A.submatrix(2, 3, 2, 3)`` is the
trailing-chain restriction.  Block indices are 1-based and ranges are
inclusive, matching the usual control-theoretic notation A[i:j, k:l].
"""

from dataclasses import dataclass

import numpy as np


class BlockIndexError(IndexError):
    """A block index or block range lies outside the partition."""


@dataclass(frozen=True)
class Partition:
    """Sizes of consecutive blocks along one axis."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) == 0:
            raise ValueError("partition needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def count(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    def offset(self, i: int) -> int:
        """Start offset of 1-based block ``i``."""
        self._check(i)
        return sum(self.sizes[: i - 1])

    def span(self, i: int, j: int | None = None) -> slice:
        """Slice covering blocks ``i..j`` (inclusive, 1-based)."""
        if j is None:
            j = i
        self._check_range(i, j)
        return slice(self.offset(i), self.offset(j) + self.sizes[j - 1])

    def sub(self, i: int, j: int) -> "Partition":
        """Partition restricted to blocks ``i..j``."""
        self._check_range(i, j)
        return Partition(self.sizes[i - 1 : j])

    def _check(self, i: int):
        if not 1 <= i <= self.count:
            raise BlockIndexError(
                f"block index {i} outside partition with {self.count} blocks"
            )

    def _check_range(self, i: int, j: int):
        self._check(i)
        self._check(j)
        if j < i:
            raise BlockIndexError(f"inverted or empty block range {i}..{j}")


class PartitionedMatrix:
    """A dense matrix with a fixed row and column block partition.

    The underlying array is copied on construction and marked read-only;
    all accessors return copies.
    """

    def __init__(self, data, row_partition: Partition, col_partition: Partition):
        arr = np.array(data, dtype=float)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D array, got ndim={arr.ndim}")
        if arr.shape != (row_partition.total, col_partition.total):
            raise ValueError(
                f"array shape {arr.shape} does not match partitions "
                f"({row_partition.total}, {col_partition.total})"
            )
        arr.setflags(write=False)
        self._data = arr
        self.row_partition = row_partition
        self.col_partition = col_partition

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the assembled matrix."""
        return self._data

    @property
    def shape(self):
        return self._data.shape

    def block(self, i: int, j: int) -> np.ndarray:
        """Block (i, j), 1-based."""
        r = self.row_partition.span(i)
        c = self.col_partition.span(j)
        return self._data[r, c].copy()

    def submatrix(self, i: int, j: int, k: int, l: int) -> "PartitionedMatrix":
        """Contiguous block range: rows i..j, columns k..l (inclusive)."""
        r = self.row_partition.span(i, j)
        c = self.col_partition.span(k, l)
        return PartitionedMatrix(
            self._data[r, c],
            self.row_partition.sub(i, j),
            self.col_partition.sub(k, l),
        )

    @staticmethod
    def from_blocks(grid, row_partition=None, col_partition=None) -> "PartitionedMatrix":
        """Assemble from a nested sequence of blocks.

        ``grid[i][j]`` is a 2-D array or ``None`` for a zero block.  Sizes
        are inferred from the given blocks unless partitions are passed
        explicitly; every row and column must contain at least one
        explicit block when inferring.
        """
        nrows = len(grid)
        ncols = len(grid[0])
        if any(len(row) != ncols for row in grid):
            raise ValueError("ragged block grid")
        cells = [[None if b is None else np.atleast_2d(np.asarray(b, dtype=float)) for b in row] for row in grid]

        if row_partition is None:
            rsizes = []
            for i in range(nrows):
                known = {c.shape[0] for c in cells[i] if c is not None}
                if not known:
                    raise ValueError(f"cannot infer size of block row {i + 1}")
                if len(known) > 1:
                    raise ValueError(f"inconsistent heights in block row {i + 1}")
                rsizes.append(known.pop())
            row_partition = Partition(tuple(rsizes))
        if col_partition is None:
            csizes = []
            for j in range(ncols):
                known = {cells[i][j].shape[1] for i in range(nrows) if cells[i][j] is not None}
                if not known:
                    raise ValueError(f"cannot infer size of block column {j + 1}")
                if len(known) > 1:
                    raise ValueError(f"inconsistent widths in block column {j + 1}")
                csizes.append(known.pop())
            col_partition = Partition(tuple(csizes))

        if row_partition.count != nrows or col_partition.count != ncols:
            raise ValueError("partition counts do not match the block grid")
        out = np.zeros((row_partition.total, col_partition.total))
        for i in range(nrows):
            for j in range(ncols):
                cell = cells[i][j]
                if cell is None:
                    continue
                expected = (row_partition.sizes[i], col_partition.sizes[j])
                if cell.shape != expected:
                    raise ValueError(
                        f"block ({i + 1}, {j + 1}) has shape {cell.shape}, expected {expected}"
                    )
                out[row_partition.span(i + 1), col_partition.span(j + 1)] = cell
        return PartitionedMatrix(out, row_partition, col_partition)

    def __repr__(self):
        return (
            f"PartitionedMatrix(rows={self.row_partition.sizes}, "
            f"cols={self.col_partition.sizes})"
        )
