"""Closed-form estimation of link misclassification rates.

Rates are recovered from conditional link frequencies in two cells of pairs,
split by a binary pair covariate ``phi`` (same value of one covariate or
not). With two conditionally independent measures the frequencies of
``H1``, ``H2`` and ``max(H1, H2)`` in each cell pin down
``(p0, p1)`` for both measures together with the link formation rates
``(pi1, pi0)``. A single unsymmetrized measure of a symmetric network is
handled by treating ``H_ij`` and ``H_ji`` as the two measures of the
unordered pair.

Group level summands are stacked as an 8-vector per group::

    [num1(H1), num1(H2), num1(H3), den1, num0(H1), num0(H2), num0(H3), den0]

where ``num_a(Ht)`` is the weighted count of reported links among pairs with
``phi == a`` and ``den_a`` the weighted count of such pairs. The frequencies
are ratios of the across-group means, and the delta-method covariance uses a
finite-difference Jacobian of the map from those means to the estimates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset
from .errors import EmptyPhiCell, NegativeDiscriminant, NoVariation, ValidationError

SINGLE = "single"
TWO = "two"
NOVARIATION_TOL = 1e-8
FD_REL_STEP = 1e-6

# order of the parameter vector used for covariances and influence functions
PARAM_NAMES = ("p0_1", "p1_1", "p0_2", "p1_2", "pi1", "pi0")


@dataclass(frozen=True)
class PsiMoments:
    """Conditional link frequencies and the group summands behind them.

    ``psi1[t]`` and ``psi0[t]`` are the frequencies for measure ``t + 1``
    (``t = 2`` is the element-wise max of the two) among pairs with
    ``phi == 1`` and ``phi == 0``.
    """

    psi1: np.ndarray
    psi0: np.ndarray
    upsilon: np.ndarray
    mode: str

    @classmethod
    def from_means(cls, ubar, mode, upsilon=None):
        ubar = np.asarray(ubar, dtype=np.float64)
        if ubar[3] <= 0 or ubar[7] <= 0:
            raise EmptyPhiCell(
                "no pairs with phi=1" if ubar[3] <= 0 else "no pairs with phi=0"
            )
        psi1 = ubar[0:3] / ubar[3]
        psi0 = ubar[4:7] / ubar[7]
        if upsilon is None:
            upsilon = ubar[None, :]
        return cls(psi1, psi0, np.asarray(upsilon), mode)

    @property
    def S(self):
        return self.upsilon.shape[0]


def _two_measure_summands(H1, H2, phi, n):
    w = 1.0 / (n * (n - 1))
    off = ~np.eye(n, dtype=bool)
    H3 = np.maximum(H1, H2)
    out = np.empty(8)
    for base, cell in ((0, phi & off), (4, ~phi & off)):
        out[base + 0] = w * H1[cell].sum()
        out[base + 1] = w * H2[cell].sum()
        out[base + 2] = w * H3[cell].sum()
        out[base + 3] = w * cell.sum()
    return out


def _single_measure_summands(H, phi, n):
    w = 2.0 / (n * (n - 1))
    lower = np.tril(np.ones((n, n), dtype=bool), -1)  # i > j
    h1 = H[lower]
    h2 = H.T[lower]
    h3 = np.maximum(h1, h2)
    ph = phi[lower]
    out = np.empty(8)
    for base, cell in ((0, ph), (4, ~ph)):
        out[base + 0] = w * h1[cell].sum()
        out[base + 1] = w * h2[cell].sum()
        out[base + 2] = w * h3[cell].sum()
        out[base + 3] = w * cell.sum()
    return out


def psi_moments_two(ds: Dataset) -> PsiMoments:
    """Frequencies from two measures over ordered pairs ``i != j``."""
    if ds.n_measures != 2:
        raise ValidationError("two-measure rate estimation needs 2 measures per group")
    ups = np.array(
        [
            _two_measure_summands(
                g.measures[0].astype(np.float64),
                g.measures[1].astype(np.float64),
                g.phi(ds.phi_column),
                g.n,
            )
            for g in ds.groups
        ]
    )
    return PsiMoments.from_means(ups.mean(axis=0), TWO, ups)


def psi_moments_single(ds: Dataset, measure=0) -> PsiMoments:
    """Frequencies from one unsymmetrized measure over unordered pairs.

    Assumes the true network is symmetric; ``H_ij`` and ``H_ji`` act as two
    independent reports of the same link.
    """
    ups = np.array(
        [
            _single_measure_summands(
                g.measures[measure].astype(np.float64), g.phi(ds.phi_column), g.n
            )
            for g in ds.groups
        ]
    )
    return PsiMoments.from_means(ups.mean(axis=0), SINGLE, ups)


@dataclass(frozen=True)
class RatesEstimate:
    """Estimated misclassification rates and link formation rates.

    ``p0`` and ``p1`` are 2-tuples indexed by measure; in single-measure mode
    both entries are equal. ``vcov`` and ``tau`` follow the parameter order
    in ``PARAM_NAMES``; ``tau`` holds the per-group influence terms whose
    mean is the linearised estimation error.
    """

    mode: str
    p0: tuple
    p1: tuple
    pi1: float
    pi0: float
    C2: float
    C1: float
    C0: float
    xi: float
    pi0_alternatives: tuple = ()
    flags: tuple = ()
    vcov: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    S: int = 0

    @property
    def clean(self):
        return not self.flags

    def rates(self, measure=1):
        """``(p0, p1)`` for measure 1 or 2."""
        return self.p0[measure - 1], self.p1[measure - 1]

    def as_vector(self):
        return np.array(
            [self.p0[0], self.p1[0], self.p0[1], self.p1[1], self.pi1, self.pi0]
        )

    @property
    def se(self):
        if self.vcov is None:
            return None
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @classmethod
    def known(cls, p0, p1, measures=1, pi1=float("nan"), pi0=float("nan")):
        """Rates treated as known: no sampling error, no correction term."""
        if measures == 1 or np.ndim(p0) == 0:
            p0 = (p0, p0) if np.ndim(p0) == 0 else p0
            p1 = (p1, p1) if np.ndim(p1) == 0 else p1
        return cls(
            "known", tuple(map(float, p0)), tuple(map(float, p1)),
            pi1, pi0, 1.0, float("nan"), float("nan"), float("nan"),
        )

    def to_dict(self):
        d = {
            "mode": self.mode,
            "p0": list(self.p0),
            "p1": list(self.p1),
            "pi1": self.pi1,
            "pi0": self.pi0,
            "C2": self.C2,
            "C1": self.C1,
            "C0": self.C0,
            "xi": self.xi,
            "pi0_alternatives": list(self.pi0_alternatives),
            "flags": list(self.flags),
            "param_names": list(PARAM_NAMES),
            "S": self.S,
        }
        d["vcov"] = None if self.vcov is None else self.vcov.tolist()
        d["se"] = None if self.vcov is None else self.se.tolist()
        d["tau"] = None if self.tau is None else self.tau.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        def arr(v):
            return None if v is None else np.asarray(v, dtype=np.float64)

        def num(v):
            # JSON null stands for a missing (NaN) value
            return float("nan") if v is None else float(v)

        return cls(
            d["mode"], tuple(map(num, d["p0"])), tuple(map(num, d["p1"])),
            num(d["pi1"]), num(d["pi0"]), num(d.get("C2")), num(d.get("C1")),
            num(d.get("C0")), num(d.get("xi")), tuple(map(num, d.get("pi0_alternatives", ()))),
            tuple(d.get("flags", ())), arr(d.get("vcov")), arr(d.get("tau")), d.get("S", 0),
        )


def solve_rates(psi: PsiMoments, mode=None, check=True) -> RatesEstimate:
    """Invert the frequency system in closed form.

    The quadratic ``C2 xi^2 - C1 xi - C0 = 0`` has exactly one admissible
    root ``xi = (C1 + sqrt(C1^2 + 4 C2 C0)) / (2 C2)``; ``xi`` equals
    ``(1 - p0_2 - p1_2) * pi1``.

    Estimates outside the admissible region are flagged (``flags``), never
    clamped.
    """
    mode = mode or psi.mode
    a1 = np.array(psi.psi1, dtype=np.float64)
    a0 = np.array(psi.psi0, dtype=np.float64)
    if mode == SINGLE:
        m1 = 0.5 * (a1[0] + a1[1])
        m0 = 0.5 * (a0[0] + a0[1])
        a1[0] = a1[1] = m1
        a0[0] = a0[1] = m0
    elif mode != TWO:
        raise ValidationError(f"unknown rates mode {mode!r}")
    d = a0 - a1
    if abs(d[1]) < NOVARIATION_TOL:
        raise NoVariation("link frequencies do not differ across the phi cells")
    C2 = 1.0 if mode == SINGLE else d[0] / d[1]
    C1 = a1[0] - 1.0 + d[2] / d[1] - (1.0 - a1[1]) * C2
    C0 = a1[0] + a1[1] - a1[0] * a1[1] - a1[2]
    disc = C1 * C1 + 4.0 * C2 * C0
    if disc < 0:
        raise NegativeDiscriminant(f"discriminant {disc:.3g} < 0")
    xi = (C1 + math.sqrt(disc)) / (2.0 * C2)
    p0_1 = a1[0] - C2 * xi
    p0_2 = a1[1] - xi
    p0_3 = p0_1 + p0_2 - p0_1 * p0_2
    e1, e2, e3 = a1[0] - p0_1, a1[1] - p0_2, a1[2] - p0_3
    denom = (1.0 - p0_1) * e2 + (1.0 - p0_2) * e1 - e3
    pi1 = e1 * e2 / denom if denom != 0 else float("nan")
    p1_1 = 1.0 - p0_1 - e1 / pi1
    p1_2 = 1.0 - p0_2 - e2 / pi1
    p0s = (p0_1, p0_2, p0_3)
    pi0_alt = tuple(
        float((a0[t] - p0s[t]) / (a1[t] - p0s[t]) * pi1) if a1[t] != p0s[t] else float("nan")
        for t in range(3)
    )
    pi0 = pi0_alt[0]
    if check and abs(pi1 - pi0) < NOVARIATION_TOL:
        raise NoVariation(f"pi1 and pi0 coincide ({pi1:.6g})")

    if mode == SINGLE:
        p0_2, p1_2 = p0_1, p1_1
    flags = []
    for name, v in (("p0_1", p0_1), ("p1_1", p1_1), ("p0_2", p0_2), ("p1_2", p1_2)):
        if not (0.0 <= v < 1.0):
            flags.append(f"{name}_out_of_range")
    if not (p0_1 + p1_1 < 1.0) or not (p0_2 + p1_2 < 1.0):
        flags.append("rates_sum_ge_1")
    for name, v in (("pi1", pi1), ("pi0", pi0)):
        if not (0.0 < v <= 1.0):
            flags.append(f"{name}_out_of_range")
    return RatesEstimate(
        mode, (float(p0_1), float(p0_2)), (float(p1_1), float(p1_2)),
        float(pi1), float(pi0), float(C2), float(C1), float(C0), float(xi),
        pi0_alt, tuple(flags), S=psi.S,
    )


def _estimate_vector(ubar, mode):
    psi = PsiMoments.from_means(ubar, mode)
    return solve_rates(psi, mode, check=False).as_vector()


def rates_jacobian(ubar, mode, rel_step=FD_REL_STEP):
    """Central-difference Jacobian of the estimates w.r.t. the mean summands."""
    ubar = np.asarray(ubar, dtype=np.float64)
    J = np.empty((len(PARAM_NAMES), ubar.size))
    for k in range(ubar.size):
        h = rel_step * max(abs(ubar[k]), 1e-8)
        up, dn = ubar.copy(), ubar.copy()
        up[k] += h
        dn[k] -= h
        J[:, k] = (_estimate_vector(up, mode) - _estimate_vector(dn, mode)) / (2 * h)
    return J


def rates_vcov(psi: PsiMoments, est: RatesEstimate) -> RatesEstimate:
    """Attach delta-method covariance and per-group influence terms.

    Returns a new estimate with ``vcov`` and ``tau`` filled in; the
    covariance is ``J Cov(upsilon) J' / S`` with the sample covariance taken
    across groups.
    """
    ups = psi.upsilon
    S = ups.shape[0]
    ubar = ups.mean(axis=0)
    J = rates_jacobian(ubar, psi.mode)
    dev = ups - ubar
    tau = dev @ J.T
    if S > 1:
        vcov = tau.T @ tau / (S * (S - 1))
    else:
        vcov = np.zeros((len(PARAM_NAMES), len(PARAM_NAMES)))
    vcov = 0.5 * (vcov + vcov.T)
    flags = list(est.flags)
    se_pi0 = math.sqrt(max(vcov[5, 5], 0.0))
    alts = [a for a in est.pi0_alternatives[1:] if not math.isnan(a)]
    if alts and se_pi0 > 0 and max(abs(a - est.pi0) for a in alts) > 10 * se_pi0:
        flags.append("pi0_disagrees_across_measures")
    return RatesEstimate(
        est.mode, est.p0, est.p1, est.pi1, est.pi0, est.C2, est.C1, est.C0, est.xi,
        est.pi0_alternatives, tuple(flags), vcov, tau, S,
    )


def estimate_rates(ds: Dataset, mode=None, measure=0) -> RatesEstimate:
    """Moments, closed-form solve and delta-method covariance in one call.

    ``mode`` defaults to ``"two"`` when the data carry two measures and to
    ``"single"`` otherwise; ``measure`` selects the measure used in single
    mode.
    """
    if mode is None:
        mode = TWO if ds.n_measures == 2 else SINGLE
    psi = psi_moments_two(ds) if mode == TWO else psi_moments_single(ds, measure)
    return rates_vcov(psi, solve_rates(psi, mode))


def forward_psi(pi1, pi0, rates1, rates2=None):
    """Population frequencies implied by link and misclassification rates.

    ``rates2`` defaults to ``rates1`` (single-measure case). Returns
    ``(psi1, psi0)`` each of length 3, the third entry for ``max(H1, H2)``.
    """
    rates2 = rates1 if rates2 is None else rates2
    (a0, a1), (b0, b1) = rates1, rates2
    r = [(a0, a1), (b0, b1), (a0 + b0 - a0 * b0, a1 * b1)]

    def psi(pi):
        return np.array([p0 + (1.0 - p0 - p1) * pi for p0, p1 in r])

    return psi(pi1), psi(pi0)


def psi_from_population(pi1, pi0, rates1, rates2=None, mode=TWO):
    """A :class:`PsiMoments` whose frequencies equal the population values."""
    psi1, psi0 = forward_psi(pi1, pi0, rates1, rates2)
    ubar = np.concatenate([psi1, [1.0], psi0, [1.0]])
    return PsiMoments.from_means(ubar, mode)
