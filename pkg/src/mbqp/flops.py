"""Floating-point operation tallies.

Counting rules: every add, subtract, multiply, divide and square root counts
as one FLOP; comparisons and copies are free.  Dense kernel counts are exact
for the straightforward algorithm, not asymptotic estimates, so tallies are
reproducible integers.
"""

from __future__ import annotations

__all__ = ["FlopCounter", "gemm_flops", "ldl_factor_flops", "ldl_solve_flops"]


def gemm_flops(m: int, k: int, n: int, accumulate: bool = False) -> int:
    """FLOPs of an ``(m, k) @ (k, n)`` product, optionally added into ``C``."""
    if m == 0 or n == 0 or k == 0:
        return 0
    count = 2 * m * n * k - m * n
    if accumulate:
        count += m * n
    return count


def ldl_factor_flops(n: int) -> int:
    """FLOPs of an unpivoted ``LDL^T`` factorization of an ``n x n`` matrix.

    Row interchanges chosen by a symmetric pivoting strategy are copies and do
    not change the count.
    """
    total = 0
    for j in range(n):
        # v_k = l_jk d_k, d_j = a_jj - sum l_jk v_k
        total += j + 2 * j
        # l_ij = (a_ij - sum_k l_ik v_k) / d_j
        total += (n - j - 1) * (2 * j + 1)
    return total


def ldl_solve_flops(n: int, nrhs: int = 1) -> int:
    """FLOPs of two triangular solves and a diagonal solve per right-hand side."""
    return (2 * n * n - n) * nrhs


class FlopCounter:
    """Per-instance FLOP accumulator.

    Never shared between solver instances; callers pass it down explicitly.
    """

    def __init__(self) -> None:
        self.total = 0

    def __repr__(self) -> str:
        return f"FlopCounter(total={self.total})"

    def add(self, n: int) -> None:
        self.total += int(n)

    def gemm(self, m: int, k: int, n: int, accumulate: bool = False) -> None:
        self.total += gemm_flops(m, k, n, accumulate)

    def matvec(self, m: int, k: int, accumulate: bool = False) -> None:
        self.total += gemm_flops(m, k, 1, accumulate)

    def dot(self, n: int) -> None:
        self.total += max(2 * n - 1, 0)

    def ldl_factor(self, n: int) -> None:
        self.total += ldl_factor_flops(n)

    def ldl_solve(self, n: int, nrhs: int = 1) -> None:
        self.total += ldl_solve_flops(n, nrhs)
