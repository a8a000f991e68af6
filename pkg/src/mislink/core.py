"""Grouped network data containers and the dense primitives shared by the
estimators: the misclassification adjustment of a noisy adjacency, the
within-group demeaning projection and the reduced-form solve.

Adjacency matrices are plain ``numpy`` arrays holding 0/1 values with a zero
diagonal; they are stored as ``int8`` and promoted to ``float64`` for any
arithmetic.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import InvalidRates, ShapeMismatch, SingularSystem

RCOND_FLOOR = 1e-12


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def as_adjacency(G, name="adjacency"):
    """Validate a binary adjacency matrix and return a read-only int8 copy."""
    G = np.asarray(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {G.shape}")
    if G.shape[0] < 2:
        raise ShapeMismatch(f"{name} needs at least 2 nodes")
    if not np.all((G == 0) | (G == 1)):
        raise ShapeMismatch(f"{name} entries must be 0 or 1")
    if np.any(np.diag(G) != 0):
        raise ShapeMismatch(f"{name} must have a zero diagonal")
    return _frozen(G, np.int8)


def check_rates(p0, p1):
    if not (np.isfinite(p0) and np.isfinite(p1)):
        raise InvalidRates(f"rates must be finite, got ({p0}, {p1})")
    if p0 < 0 or p1 < 0:
        raise InvalidRates(f"rates must be non-negative, got ({p0}, {p1})")
    if p0 + p1 >= 1:
        raise InvalidRates(f"p0 + p1 must be < 1, got {p0 + p1}")


def offdiag_ones(n):
    """The matrix of ones with a zero diagonal."""
    J = np.ones((n, n))
    np.fill_diagonal(J, 0.0)
    return J


def adjust_measure(H, p0, p1):
    """Correct a noisy adjacency for random link misclassification.

    Off-diagonal entries become ``(H_ij - p0) / (1 - p0 - p1)`` so that the
    result is conditionally unbiased for the true adjacency; the diagonal
    stays zero.

    Parameters
    ----------
    H : (n, n) array_like
        Observed 0/1 adjacency.
    p0, p1 : float
        Probability of reporting a non-existent link and of missing an
        existing one.

    Returns
    -------
    W : (n, n) ndarray of float64
    """
    check_rates(p0, p1)
    H = np.asarray(H, dtype=np.float64)
    n = H.shape[0]
    return (H - p0 * offdiag_ones(n)) / (1.0 - p0 - p1)


def adjust_measure_jacobian(H, p0, p1):
    """Derivatives of :func:`adjust_measure` with respect to ``p0`` and ``p1``."""
    H = np.asarray(H, dtype=np.float64)
    J = offdiag_ones(H.shape[0])
    d2 = (1.0 - p0 - p1) ** 2
    return (H - (1.0 - p1) * J) / d2, (H - p0 * J) / d2


def within_transform(M):
    """Demean each column of ``M``, i.e. apply ``I - 11'/n``."""
    M = np.asarray(M, dtype=np.float64)
    return M - M.mean(axis=0, keepdims=True)


def reduced_form_solve(G, lam, rhs):
    """Solve ``(I - lam * G) x = rhs`` by LU factorisation.

    Raises
    ------
    SingularSystem
        If the factorisation hits a zero pivot or the reciprocal condition
        estimate falls below ``1e-12``.
    """
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    A = np.eye(n) - lam * G
    anorm = np.linalg.norm(A, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
        except (scipy.linalg.LinAlgWarning, np.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(f"I - lambda*G is singular (lambda={lam})") from exc
    if np.any(np.diag(lu) == 0):
        raise SingularSystem(f"I - lambda*G is singular (lambda={lam})")
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond >= RCOND_FLOOR:
        raise SingularSystem(
            f"I - lambda*G is numerically singular (rcond={rcond:.3g}, lambda={lam})"
        )
    return scipy.linalg.lu_solve((lu, piv), np.asarray(rhs, dtype=np.float64))


@dataclass(frozen=True)
class Theta:
    lam: float
    beta: tuple

    def __post_init__(self):
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("Theta entries must be finite")

    def as_array(self):
        return np.array((self.lam,) + self.beta)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).ravel()
        return cls(a[0], tuple(a[1:]))


@dataclass(frozen=True)
class GroupSample:
    """One group: outcomes ``y``, covariates ``X`` and 1 or 2 noisy measures.

    ``truth`` carries the actual adjacency when it is known (simulation).
    ``node_ids`` label the rows; they default to ``"0", "1", ...``.
    """

    group_id: str
    y: np.ndarray
    X: np.ndarray
    measures: tuple
    truth: Optional[np.ndarray] = None
    node_ids: Optional[tuple] = None

    def __post_init__(self):
        y = _frozen(self.y, np.float64).ravel()
        X = _frozen(self.X, np.float64)
        if X.ndim == 1:
            X = _frozen(X[:, None])
        n = y.shape[0]
        if n < 3:
            raise ShapeMismatch(f"group {self.group_id}: needs n >= 3, got {n}")
        if X.shape[0] != n or X.shape[1] < 1:
            raise ShapeMismatch(
                f"group {self.group_id}: X has shape {X.shape}, expected ({n}, K>=1)"
            )
        measures = tuple(as_adjacency(H, f"measure {t + 1}") for t, H in enumerate(self.measures))
        if len(measures) not in (1, 2):
            raise ShapeMismatch(f"group {self.group_id}: expected 1 or 2 measures")
        truth = None if self.truth is None else as_adjacency(self.truth, "truth")
        for M in measures + (() if truth is None else (truth,)):
            if M.shape[0] != n:
                raise ShapeMismatch(
                    f"group {self.group_id}: adjacency is {M.shape[0]}x{M.shape[0]}, expected {n}"
                )
        ids = tuple(str(k) for k in range(n)) if self.node_ids is None else tuple(map(str, self.node_ids))
        if len(ids) != n or len(set(ids)) != n:
            raise ShapeMismatch(f"group {self.group_id}: need {n} distinct node ids")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "group_id", str(self.group_id))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "measures", measures)
        object.__setattr__(self, "truth", truth)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def K(self):
        return self.X.shape[1]

    def phi(self, column):
        """Pair indicator ``1{X_i,c == X_j,c}`` as an (n, n) bool array."""
        x = self.X[:, column]
        return x[:, None] == x[None, :]


@dataclass(frozen=True)
class Dataset:
    groups: tuple
    covariate_names: tuple = field(default=())
    phi_column: int = 0

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise ShapeMismatch("dataset has no groups")
        K = groups[0].K
        T = len(groups[0].measures)
        for g in groups:
            if g.K != K:
                raise ShapeMismatch(f"group {g.group_id}: K={g.K}, expected {K}")
            if len(g.measures) != T:
                raise ShapeMismatch(f"group {g.group_id}: measure count differs")
        names = tuple(self.covariate_names) or tuple(f"x{k + 1}" for k in range(K))
        if len(names) != K:
            raise ShapeMismatch(f"{len(names)} covariate names for K={K}")
        if not 0 <= self.phi_column < K:
            raise ShapeMismatch(f"phi_column {self.phi_column} out of range for K={K}")
        ids = [g.group_id for g in groups]
        if len(set(ids)) != len(ids):
            raise ShapeMismatch("duplicate group ids")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "covariate_names", names)

    @property
    def S(self):
        return len(self.groups)

    @property
    def K(self):
        return self.groups[0].K

    @property
    def n_measures(self):
        return len(self.groups[0].measures)

    @property
    def has_truth(self):
        return all(g.truth is not None for g in self.groups)

    def swap_measures(self) -> "Dataset":
        groups = [
            GroupSample(g.group_id, g.y, g.X, g.measures[::-1], g.truth, g.node_ids)
            for g in self.groups
        ]
        return Dataset(groups, self.covariate_names, self.phi_column)

    def map_measures(self, fn: Callable) -> "Dataset":
        groups = [
            GroupSample(
                g.group_id, g.y, g.X, tuple(fn(H) for H in g.measures), g.truth, g.node_ids
            )
            for g in self.groups
        ]
        return Dataset(groups, self.covariate_names, self.phi_column)


def stack_groups(blocks: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(b, dtype=np.float64) for b in blocks], axis=0)
