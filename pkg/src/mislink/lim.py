"""Misclassification adjustment for linear-in-means networks.

When the structural adjacency is row-normalised, the correction can no
longer be an affine map of each reported cell. For row ``i`` the adjusted
weight ``Wt_ij(h)`` is defined on every possible report ``h`` of the row so
that its expectation given the true row equals ``g_j / sum_k g_k``. The
conditional law of reports given truth is the ``(n-1)``-fold Kronecker power
of the 2x2 flip matrix ``T = [[1-p0, p0], [p1, 1-p1]]``, so the weights
solve a Kronecker-structured linear system.

Two evaluators are provided:

* :func:`lim_weights_bruteforce` solves the full ``2**(n-1)`` system by
  applying ``inv(T)`` along each axis; exponential, kept as the reference.
* :func:`lim_weight_fast` evaluates a single entry in ``O(n**2)``. Expanding
  the Kronecker solve, the entry is ``inv(T)[h_j, 1]`` times the sum over
  ``d`` of ``c_d / (1 + d)``, with ``c_d`` the coefficients of
  ``prod_{k != i, j} (inv(T)[h_k, 0] + inv(T)[h_k, 1] x)``. That sum is the
  integral of the product over [0, 1], which is computed by Gauss-Legendre
  quadrature rather than by expanding the coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce

import numpy as np

from .core import as_adjacency
from .errors import DegenerateRates, TooLarge, ValidationError

MAX_BRUTEFORCE_N = 20
MAX_DENSE_N = 12
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class FlipMatrix:
    """Row-stochastic report-given-truth matrix and its inverse."""

    T: np.ndarray
    Tinv: np.ndarray

    @classmethod
    def from_rates(cls, p0, p1):
        D = 1.0 - p0 - p1
        if abs(D) < DEGENERATE_TOL:
            raise DegenerateRates(f"p0 + p1 = {p0 + p1} makes the flip matrix singular")
        T = np.array([[1.0 - p0, p0], [p1, 1.0 - p1]])
        Tinv = np.array([[1.0 - p1, -p0], [-p1, 1.0 - p0]]) / D
        return cls(T, Tinv)


def support_enumeration(n):
    """All ``2**(n-1)`` binary rows of length ``n - 1``.

    Built by the recursion ``E_3 = [00; 01; 10; 11]`` and
    ``E_{m+1} = [0 | E_m; 1 | E_m]``, i.e. the first coordinate is the most
    significant bit.
    """
    if n < 2:
        raise ValidationError("n must be >= 2")
    E = np.array([[0], [1]], dtype=np.int8)
    for _ in range(n - 2):
        m = E.shape[0]
        E = np.vstack(
            [
                np.hstack([np.zeros((m, 1), np.int8), E]),
                np.hstack([np.ones((m, 1), np.int8), E]),
            ]
        )
    return E


def _check_n(n, cap):
    if n < 3:
        raise ValidationError("n must be >= 3")
    if n > cap:
        raise TooLarge(f"n={n} exceeds the enumeration cap of {cap}")


def cond_prob_matrix(n, p0, p1):
    """Dense ``P[g, h] = Pr(report h | truth g)`` over the enumerated support."""
    _check_n(n, MAX_DENSE_N)
    T = FlipMatrix.from_rates(p0, p1).T
    return reduce(np.kron, [T] * (n - 1))


def kron_inverse_matrix(n, p0, p1):
    _check_n(n, MAX_DENSE_N)
    Tinv = FlipMatrix.from_rates(p0, p1).Tinv
    return reduce(np.kron, [Tinv] * (n - 1))


def kron_matvec(factors, b):
    """``(F_1 kron F_2 kron ... kron F_m) @ b`` without forming the product."""
    x = np.asarray(b)
    x = x.astype(np.result_type(x, np.float64, *factors), copy=False)
    m = len(factors)
    x = x.reshape((2,) * m)
    for axis, F in enumerate(factors):
        x = np.moveaxis(np.tensordot(F, x, axes=([1], [axis])), 0, axis)
    return x.reshape(-1)


def row_normalized_targets(n, j_pos, dtype=np.float64):
    """``g_j / sum(g)`` for every enumerated true row ``g`` (0 for empty rows).

    ``j_pos`` is the position of ``j`` among the ``n - 1`` off-diagonal
    coordinates of the row.
    """
    E = support_enumeration(n).astype(dtype)
    deg = E.sum(axis=1)
    out = np.zeros(E.shape[0], dtype=dtype)
    nz = deg > 0
    out[nz] = E[nz, j_pos] / deg[nz]
    return out


def _offdiag_position(n, i, j):
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ValidationError(f"need distinct indices in [0, {n}), got ({i}, {j})")
    return j if j < i else j - 1


def lim_weights_bruteforce(n, i, j, p0, p1):
    """The full vector of adjusted weights ``Wt_ij`` over all reports of row ``i``.

    Entries follow :func:`support_enumeration` order. Indices are 0-based.

    The inverse Kronecker power amplifies rounding in the targets by roughly
    ``(1 / (1 - p0 - p1)) ** (n - 1)``, so the solve runs in ``np.longdouble``
    (a no-op on platforms where it equals double) and the result is
    rounded to float64 at the end.
    """
    _check_n(n, MAX_BRUTEFORCE_N)
    FlipMatrix.from_rates(p0, p1)  # validation
    q0, q1 = np.longdouble(p0), np.longdouble(p1)
    Tinv = np.array([[1 - q1, -q0], [-q1, 1 - q0]], dtype=np.longdouble) / (1 - q0 - q1)
    V = row_normalized_targets(n, _offdiag_position(n, i, j), np.longdouble)
    return kron_matvec([Tinv] * (n - 1), V).astype(np.float64)


def support_index(h, i):
    """Position of row report ``h`` (length n, ``h[i]`` ignored) in the enumeration."""
    bits = np.delete(np.asarray(h, dtype=np.int64), i)
    return int(bits @ (1 << np.arange(bits.size - 1, -1, -1)))


@lru_cache(maxsize=None)
def _gauss_legendre01(m):
    x, w = np.polynomial.legendre.leggauss(m)
    return 0.5 * (x + 1.0), 0.5 * w


def _poly_weight(Tinv, hj, m0, m1):
    """``Tinv[hj, 1]`` times the integral over [0, 1] of the factor product.

    Each of the ``m0`` zero reports contributes ``Tinv[0, 0] + Tinv[0, 1] x``
    and each of the ``m1`` one reports ``Tinv[1, 0] + Tinv[1, 1] x``. The
    product has degree ``m0 + m1``, so Gauss-Legendre with ``(m0 + m1) // 2 + 1``
    nodes integrates it exactly. Evaluating the factors at the nodes avoids
    the cancellation of expanding alternating-sign coefficients.
    """
    x, w = _gauss_legendre01((m0 + m1) // 2 + 1)
    f = (Tinv[0, 0] + Tinv[0, 1] * x) ** m0 * (Tinv[1, 0] + Tinv[1, 1] * x) ** m1
    return Tinv[int(hj), 1] * float(w @ f)


def lim_weight_fast(h, i, j, p0, p1):
    """Adjusted linear-in-means weight for cell ``(i, j)`` given report row ``h``.

    Parameters
    ----------
    h : sequence of {0, 1}
        Reported row ``i`` of length ``n``; ``h[i]`` is ignored.
    i, j : int
        0-based row and column, ``i != j``.
    p0, p1 : float
        Misclassification rates.
    """
    h = np.asarray(h)
    n = h.size
    _offdiag_position(n, i, j)
    Tinv = FlipMatrix.from_rates(p0, p1).Tinv
    mask = np.ones(n, dtype=bool)
    mask[[i, j]] = False
    m1 = int(np.count_nonzero(h[mask]))
    return _poly_weight(Tinv, h[j], n - 2 - m1, m1)


def lim_transform_group(H, p0, p1):
    """Adjusted row-normalised network for one observed adjacency.

    Within a row the weight depends on ``h_j`` and on how many of the other
    reports are 0 or 1, so at most two distinct values are evaluated per row.
    """
    H = as_adjacency(H)
    n = H.shape[0]
    Tinv = FlipMatrix.from_rates(p0, p1).Tinv
    out = np.zeros((n, n))
    cache = {}
    for i in range(n):
        row = H[i]
        ones = int(row.sum())
        for j in range(n):
            if j == i:
                continue
            hj = int(row[j])
            m1 = ones - hj
            m0 = n - 2 - m1
            key = (hj, m0, m1)
            if key not in cache:
                cache[key] = _poly_weight(Tinv, hj, m0, m1)
            out[i, j] = cache[key]
    return out


def example_table(p0, p1):
    """The ``n = 3`` report-given-truth table and the two weight vectors of row 1."""
    return {
        "P": cond_prob_matrix(3, p0, p1),
        "W12": lim_weights_bruteforce(3, 0, 1, p0, p1),
        "W13": lim_weights_bruteforce(3, 0, 2, p0, p1),
        "support": support_enumeration(3),
    }
