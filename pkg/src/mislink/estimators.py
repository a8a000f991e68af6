"""Two-stage least squares estimators of peer and individual effects.

Variants
--------
``ols``
    ``y`` on ``X`` (no peer term).
``naive``
    ``H y`` as the peer regressor, treating the noisy measure as the truth.
``adjusted``
    ``W y`` with ``W`` the misclassification-adjusted measure, instrumented
    by ``H' X`` (one measure) or by the other measure ``H(3-t) X``.
``oracle``
    the true ``G y`` instrumented by ``G X`` (simulation only).
``s2sls``
    both adjusted structural forms stacked with block-diagonal instruments.

Covariances are clustered by group. For the adjusted and stacked variants
the score of each group is corrected for sampling error in the first-stage
rate estimates when the supplied rates carry influence terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .core import Dataset, Theta, adjust_measure, adjust_measure_jacobian, within_transform
from .errors import (
    InvalidRates,
    MissingRates,
    MissingTruth,
    RankDeficient,
    ShapeMismatch,
    ValidationError,
)
from .rates import RatesEstimate

VARIANTS = ("ols", "naive", "adjusted", "oracle", "s2sls")
INSTRUMENTS = ("same", "cross", "transpose", "truth")
RCOND_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorSpec:
    """What to estimate and how.

    ``measure`` (1 or 2) picks the measure feeding the peer regressor;
    ``instruments`` picks the matrix multiplying ``X`` in the excluded
    instruments and defaults per variant (``same`` for naive, ``cross`` or
    ``transpose`` for adjusted, ``truth`` for oracle).
    """

    variant: str
    measure: int = 1
    instruments: Optional[str] = None
    fixed_effects: str = "none"
    rates: Optional[RatesEstimate] = None
    correct_first_stage: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        if self.instruments is not None and self.instruments not in INSTRUMENTS:
            raise ValidationError(f"unknown instrument source {self.instruments!r}")
        if self.fixed_effects not in ("none", "within"):
            raise ValidationError("fixed_effects must be 'none' or 'within'")
        if self.measure not in (1, 2):
            raise ValidationError("measure must be 1 or 2")

    def resolved_instruments(self, n_measures):
        if self.instruments is not None:
            return self.instruments
        if self.variant == "oracle":
            return "truth"
        if self.variant in ("adjusted", "s2sls"):
            return "cross" if n_measures == 2 else "transpose"
        return "same"

    def to_dict(self):
        return {
            "variant": self.variant,
            "measure": self.measure,
            "instruments": self.instruments,
            "fixed_effects": self.fixed_effects,
            "correct_first_stage": self.correct_first_stage,
        }


@dataclass
class GroupBlock:
    y: np.ndarray
    R: np.ndarray
    Z: np.ndarray
    dpeer: Optional[np.ndarray] = None  # d(peer column)/d(rates), n x r


@dataclass
class Design:
    blocks: list
    names: tuple
    rate_index: tuple = ()

    @property
    def Y(self):
        return np.concatenate([b.y for b in self.blocks])

    @property
    def R(self):
        return np.vstack([b.R for b in self.blocks])

    @property
    def Z(self):
        return np.vstack([b.Z for b in self.blocks])

    @property
    def S(self):
        return len(self.blocks)


@dataclass
class PeerEffectsFit:
    """Estimated coefficients with group-clustered covariance."""

    params: np.ndarray
    names: tuple
    vcov: np.ndarray
    spec: dict
    first_stage_corrected: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def theta(self) -> Optional[Theta]:
        if self.names[0] != "lambda":
            return None
        return Theta.from_array(self.params)

    @property
    def lam(self):
        return self.params[0] if self.names[0] == "lambda" else float("nan")

    def to_dict(self):
        return {
            "names": list(self.names),
            "params": self.params.tolist(),
            "se": self.se.tolist(),
            "vcov": self.vcov.tolist(),
            "spec": dict(self.spec),
            "first_stage_corrected": self.first_stage_corrected,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["params"], dtype=np.float64), tuple(d["names"]),
            np.asarray(d["vcov"], dtype=np.float64), d["spec"],
            d["first_stage_corrected"], d.get("diagnostics", {}),
        )


def _instrument_matrix(g, source, t):
    """The (n, n) matrix whose product with X forms the excluded instruments."""
    if source == "truth":
        if g.truth is None:
            raise MissingTruth(f"group {g.group_id} has no true network")
        return g.truth
    if source == "same":
        return g.measures[t]
    if source == "transpose":
        return g.measures[t].T
    if len(g.measures) < 2:
        raise ValidationError("cross-measure instruments need two measures")
    return g.measures[1 - t]


def _usable_rates(spec: EstimatorSpec):
    r = spec.rates
    if r is None:
        raise MissingRates(f"variant {spec.variant!r} needs estimated rates")
    if not r.clean:
        raise InvalidRates(f"rates carry validity flags {list(r.flags)}")
    return r


def _peer_block(g, spec, t, source):
    """Peer column, its rate derivative and the instrument block for measure t."""
    X = g.X
    y = g.y
    dpeer = None
    if spec.variant == "oracle":
        if g.truth is None:
            raise MissingTruth(f"group {g.group_id} has no true network")
        peer = g.truth @ y
    elif spec.variant == "naive":
        peer = g.measures[t] @ y
    else:
        rates = _usable_rates(spec)
        p0, p1 = rates.rates(t + 1)
        H = g.measures[t]
        peer = adjust_measure(H, p0, p1) @ y
        d0, d1 = adjust_measure_jacobian(H, p0, p1)
        dpeer = np.column_stack([d0 @ y, d1 @ y])
    M = _instrument_matrix(g, source, t)
    Z = np.column_stack([M @ X, X])
    return peer, dpeer, Z


def build_design(ds: Dataset, spec: EstimatorSpec) -> Design:
    """Per-group ``(y, R, Z)`` blocks for a single structural form."""
    if spec.variant == "s2sls":
        return build_stacked_design(ds, spec)
    if spec.measure > ds.n_measures and spec.variant in ("naive", "adjusted"):
        raise ShapeMismatch(f"dataset has {ds.n_measures} measure(s), asked for {spec.measure}")
    t = spec.measure - 1
    source = spec.resolved_instruments(ds.n_measures)
    if source == "transpose" and spec.variant != "ols":
        m = min(t, ds.n_measures - 1)
        if all(np.array_equal(g.measures[m], g.measures[m].T) for g in ds.groups):
            raise ValidationError(
                "transpose instruments need an unsymmetrized measure; every H is symmetric"
            )
    within = spec.fixed_effects == "within"
    names = ("lambda",) + tuple(ds.covariate_names)
    blocks = []
    for g in ds.groups:
        if spec.variant == "ols":
            y, R, Z, dpeer = g.y, g.X, g.X, None
        else:
            peer, dpeer, Z = _peer_block(g, spec, t, source)
            y, R = g.y, np.column_stack([peer, g.X])
        if within:
            y, R, Z = within_transform(y), within_transform(R), within_transform(Z)
            dpeer = None if dpeer is None else within_transform(dpeer)
        blocks.append(GroupBlock(np.asarray(y, dtype=np.float64), R, Z, dpeer))
    if spec.variant == "ols":
        names = tuple(ds.covariate_names)
    rate_index = (2 * t, 2 * t + 1) if spec.variant == "adjusted" else ()
    return Design(blocks, names, rate_index)


def build_stacked_design(ds: Dataset, spec: EstimatorSpec) -> Design:
    """Blocks for the stacked form using both measures.

    Each group contributes ``[y; y]``, ``[R1; R2]`` and
    ``blockdiag(Z1, Z2)`` with ``Zt`` built from the other measure by
    default.
    """
    if ds.n_measures != 2:
        raise ValidationError("stacked 2SLS needs two measures")
    within = spec.fixed_effects == "within"
    source = spec.resolved_instruments(2)
    sub = replace(spec, variant="adjusted")
    blocks = []
    for g in ds.groups:
        ys, Rs, Zs, ds_ = [], [], [], []
        for t in (0, 1):
            peer, dpeer, Z = _peer_block(g, sub, t, source)
            y, R = g.y, np.column_stack([peer, g.X])
            if within:
                y, R, Z, dpeer = (within_transform(a) for a in (y, R, Z, dpeer))
            ys.append(np.asarray(y, dtype=np.float64))
            Rs.append(R)
            Zs.append(Z)
            ds_.append(dpeer)
        n = g.n
        zero2 = np.zeros((n, 2))
        dstack = np.vstack([np.hstack([ds_[0], zero2]), np.hstack([zero2, ds_[1]])])
        blocks.append(
            GroupBlock(np.concatenate(ys), np.vstack(Rs), scipy.linalg.block_diag(*Zs), dstack)
        )
    return Design(blocks, ("lambda",) + tuple(ds.covariate_names), (0, 1, 2, 3))


def _check_rank(M, name):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] / s[0] < RCOND_FLOOR:
        raise RankDeficient(
            f"{name} is rank deficient (smallest/largest singular value "
            f"{(s[-1] / s[0]) if s.size and s[0] else 0.0:.3g})",
            matrix=name,
        )
    return s


def tsls(Y, R, Z):
    """2SLS coefficients ``(A' B^-1 A)^-1 A' B^-1 Z'Y`` with ``A = Z'R``, ``B = Z'Z``.

    Returns ``(theta, A, B)``.
    """
    Y = np.asarray(Y, dtype=np.float64)
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if R.shape[0] != Y.shape[0] or Z.shape[0] != Y.shape[0]:
        raise ShapeMismatch("Y, R and Z must have the same number of rows")
    if Z.shape[1] < R.shape[1]:
        raise RankDeficient("fewer instruments than regressors", matrix="Z")
    A = Z.T @ R
    B = Z.T @ Z
    _check_rank(B, "B")
    _check_rank(A, "A")
    cB = scipy.linalg.cho_factor(B)
    BiA = scipy.linalg.cho_solve(cB, A)
    C = A.T @ BiA
    _check_rank(C, "A'B^-1A")
    theta = scipy.linalg.solve(C, BiA.T @ (Z.T @ Y), assume_a="pos")
    return theta, A, B


def sandwich_weight(A, B):
    """``(A' B^-1 A)^-1 A' B^-1``."""
    BiA = scipy.linalg.solve(B, A, assume_a="pos")
    return scipy.linalg.solve(A.T @ BiA, BiA.T, assume_a="pos")


def clustered_vcov(A_bar, B_bar, scores, correction=None):
    """Group-clustered covariance of a 2SLS estimate.

    Parameters
    ----------
    A_bar, B_bar : ndarray
        Group averages of ``Z_s'R_s`` and ``Z_s'Z_s``.
    scores : (S, L) ndarray
        Per-group ``Z_s' v_s``.
    correction : tuple of (F, tau), optional
        ``F`` (L, r) is the group average of ``Z_s' d(R_s theta)/dp`` and
        ``tau`` (S, r) the first-stage influence terms; each score becomes
        ``Z_s'v_s - F tau_s``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    S = scores.shape[0]
    kappa = scores
    if correction is not None:
        F, tau = correction
        kappa = scores - np.asarray(tau) @ np.asarray(F).T
    Sigma0 = sandwich_weight(A_bar, B_bar)
    meat = kappa.T @ kappa / S
    V = Sigma0 @ meat @ Sigma0.T / S
    return 0.5 * (V + V.T)


def fit_design(design: Design, spec: EstimatorSpec, rates: Optional[RatesEstimate] = None):
    Y, R, Z = design.Y, design.R, design.Z
    theta, A, B = tsls(Y, R, Z)
    S = design.S
    scores = np.empty((S, Z.shape[1]))
    resid_norms = []
    for s, b in enumerate(design.blocks):
        v = b.y - b.R @ theta
        scores[s] = b.Z.T @ v
        resid_norms.append(float(np.linalg.norm(v)))
    A_bar, B_bar = A / S, B / S
    correction = None
    corrected = False
    if (
        spec.correct_first_stage
        and design.rate_index
        and rates is not None
        and rates.tau is not None
    ):
        if rates.tau.shape[0] != S:
            raise ShapeMismatch(
                f"rate influence terms cover {rates.tau.shape[0]} groups, data has {S}"
            )
        idx = list(design.rate_index)
        lam = theta[0]
        F = sum(b.Z.T @ (lam * b.dpeer) for b in design.blocks) / S
        tau = rates.tau[:, idx]
        correction = (F, tau)
        corrected = True
    vcov = clustered_vcov(A_bar, B_bar, scores, correction)
    sv_A = np.linalg.svd(A_bar, compute_uv=False)
    sv_B = np.linalg.svd(B_bar, compute_uv=False)
    diagnostics = {
        "S": S,
        "n_obs": int(Y.shape[0]),
        "n_instruments": int(Z.shape[1]),
        "min_singular_value_A": float(sv_A[-1]),
        "min_singular_value_B": float(sv_B[-1]),
        "clusters_too_few": bool(S < max(2, Z.shape[1])),
        "residual_norms": resid_norms,
    }
    return PeerEffectsFit(theta, design.names, vcov, spec.to_dict(), corrected, diagnostics)


def fit(ds: Dataset, spec: EstimatorSpec) -> PeerEffectsFit:
    """Build the design for ``spec``, estimate and attach clustered SEs."""
    design = build_design(ds, spec)
    rates = spec.rates if spec.variant in ("adjusted", "s2sls") else None
    out = fit_design(design, spec, rates)
    out.spec["instruments"] = spec.resolved_instruments(ds.n_measures)
    return out


def s2sls(ds: Dataset, rates: RatesEstimate, fixed_effects="none", correct_first_stage=True):
    """Stacked adjusted 2SLS over both measures."""
    spec = EstimatorSpec(
        "s2sls", fixed_effects=fixed_effects, rates=rates,
        correct_first_stage=correct_first_stage,
    )
    return fit(ds, spec)
