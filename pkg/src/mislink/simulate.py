"""Synthetic grouped network data with misclassified link reports.

Each group is drawn from its own random stream keyed by
``(seed, replication, group index)``, so a configuration fully determines the
dataset irrespective of how groups are scheduled across workers. Within a
group the draw order is fixed: covariates, true links, structural errors,
group effect noise, then one set of report flips per measure.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import Dataset, GroupSample, check_rates, reduced_form_solve
from .errors import InvalidRates, ValidationError

UNSYMMETRIZED = "unsymmetrized"
SYMMETRIZED = "symmetrized"


@dataclass(frozen=True)
class MeasureChannelSpec:
    """Misclassification channel producing one noisy measure.

    In ``unsymmetrized`` mode every ordered cell is flipped independently:
    1 -> 0 with probability ``p1`` and 0 -> 1 with probability ``p0``. In
    ``symmetrized`` mode both members of an unordered pair report
    independently with respondent rates ``(phi0, phi1)`` and the link is
    recorded if either reports it, which gives ``p1 = phi1**2`` and
    ``p0 = 1 - (1 - phi0)**2``.
    """

    p0: float
    p1: float
    mode: str = UNSYMMETRIZED
    phi0: Optional[float] = None
    phi1: Optional[float] = None

    def __post_init__(self):
        if self.mode not in (UNSYMMETRIZED, SYMMETRIZED):
            raise ValidationError(f"unknown measure mode {self.mode!r}")
        if self.mode == SYMMETRIZED:
            if self.phi0 is None or self.phi1 is None:
                raise ValidationError("symmetrized channel needs respondent rates phi0, phi1")
            if not (0 <= self.phi0 <= 1 and 0 <= self.phi1 <= 1):
                raise InvalidRates("respondent rates must lie in [0, 1]")
            object.__setattr__(self, "p0", 1.0 - (1.0 - self.phi0) ** 2)
            object.__setattr__(self, "p1", self.phi1 ** 2)
        check_rates(self.p0, self.p1)

    @classmethod
    def symmetrized(cls, phi0, phi1):
        return cls(0.0, 0.0, SYMMETRIZED, phi0, phi1)

    def to_dict(self):
        if self.mode == SYMMETRIZED:
            return {"mode": self.mode, "phi0": self.phi0, "phi1": self.phi1}
        return {"mode": self.mode, "p0": self.p0, "p1": self.p1}

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, (list, tuple)):
            return cls(float(d[0]), float(d[1]))
        mode = d.get("mode", UNSYMMETRIZED)
        if mode == SYMMETRIZED:
            return cls.symmetrized(float(d["phi0"]), float(d["phi1"]))
        return cls(float(d["p0"]), float(d["p1"]), mode)


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the data generating process.

    ``n`` is either a common group size or a sequence of ``S`` sizes. The
    group effect, when enabled, is ``fe_scale * mean(X) @ beta + fe_intercept
    + fe_sd * e`` with ``e`` standard normal.
    """

    S: int = 100
    n: Union[int, tuple] = 50
    lam: float = 0.05
    beta: tuple = (1.0, 2.0)
    pi1: float = 0.2
    pi0: float = 0.1
    channels: tuple = (MeasureChannelSpec(0.10, 0.20), MeasureChannelSpec(0.08, 0.16))
    fixed_effects: bool = True
    fe_scale: float = 5.0
    fe_intercept: float = -1.5
    fe_sd: float = 1.0
    symmetric_g: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not isinstance(self.n, int):
            object.__setattr__(self, "n", tuple(int(v) for v in self.n))
        chans = tuple(
            c if isinstance(c, MeasureChannelSpec) else MeasureChannelSpec.from_dict(c)
            for c in self.channels
        )
        object.__setattr__(self, "channels", chans)
        if self.S < 1:
            raise ValidationError("S must be >= 1")
        if min(self.sizes) < 3:
            raise ValidationError("group sizes must be >= 3")
        if not (0 <= self.pi0 <= 1 and 0 <= self.pi1 <= 1):
            raise ValidationError("link formation probabilities must lie in [0, 1]")
        if len(chans) not in (1, 2):
            raise ValidationError("one or two measurement channels are supported")
        if len(self.beta) != 2:
            raise ValidationError("the covariate design has K=2; beta must have length 2")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if any(c.mode == SYMMETRIZED for c in chans) and not self.symmetric_g:
            raise ValidationError("symmetrized measures require a symmetric true network")

    @property
    def sizes(self):
        if isinstance(self.n, int):
            return (self.n,) * self.S
        if len(self.n) != self.S:
            raise ValidationError(f"{len(self.n)} group sizes given for S={self.S}")
        return self.n

    def replace(self, **kw):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self):
        return {
            "S": self.S,
            "n": self.n if isinstance(self.n, int) else list(self.n),
            "lam": self.lam,
            "beta": list(self.beta),
            "pi1": self.pi1,
            "pi0": self.pi0,
            "channels": [c.to_dict() for c in self.channels],
            "fixed_effects": self.fixed_effects,
            "fe_scale": self.fe_scale,
            "fe_intercept": self.fe_intercept,
            "fe_sd": self.fe_sd,
            "symmetric_g": self.symmetric_g,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("schema_version", None)
        d.pop("kind", None)
        if "rates" in d:
            if "channels" in d:
                raise ValidationError("give either 'rates' or 'channels', not both")
            d["channels"] = d.pop("rates")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown SimConfig fields: {sorted(unknown)}")
        if "channels" in d:
            d["channels"] = tuple(MeasureChannelSpec.from_dict(c) for c in d["channels"])
        if "n" in d and not isinstance(d["n"], int):
            d["n"] = tuple(d["n"])
        return cls(**d)


def group_rng(seed, replication, group):
    """Counter-based stream for one group of one replication."""
    ss = np.random.SeedSequence([int(seed), int(replication), int(group)])
    return np.random.Generator(np.random.Philox(ss))


def gen_covariates(n, rng):
    """Column 1 Bernoulli(1/2), column 2 standard normal."""
    x1 = (rng.random(n) < 0.5).astype(np.float64)
    x2 = rng.standard_normal(n)
    return np.column_stack([x1, x2])


def gen_network(X, pi1, pi0, phi_column=0, symmetric=False, rng=None):
    """Dyadic Bernoulli links with probability ``pi1`` for same-type pairs
    (equal values in ``phi_column``) and ``pi0`` otherwise."""
    X = np.asarray(X)
    n = X.shape[0]
    x = X[:, phi_column]
    prob = np.where(x[:, None] == x[None, :], pi1, pi0)
    u = rng.random((n, n))
    G = (u < prob).astype(np.int8)
    if symmetric:
        G = np.triu(G, 1)
        G = G + G.T
    np.fill_diagonal(G, 0)
    return G


def corrupt(G, spec: MeasureChannelSpec, rng):
    """Draw a noisy report of ``G`` through the channel ``spec``."""
    G = np.asarray(G)
    n = G.shape[0]
    if spec.mode == UNSYMMETRIZED:
        u = rng.random((n, n))
        H = np.where(G == 1, u >= spec.p1, u < spec.p0).astype(np.int8)
    else:
        if not np.array_equal(G, G.T):
            raise ValidationError("symmetrized channel requires a symmetric G")
        u = rng.random((2, n, n))
        rate = np.where(G == 1, 1.0 - spec.phi1, spec.phi0)
        reports = u < rate
        H = np.triu(reports[0] | reports[1], 1).astype(np.int8)
        H = H + H.T
    np.fill_diagonal(H, 0)
    return H


def simulate_group(cfg: SimConfig, replication, index):
    n = cfg.sizes[index]
    rng = group_rng(cfg.seed, replication, index)
    beta = np.asarray(cfg.beta)
    X = gen_covariates(n, rng)
    G = gen_network(X, cfg.pi1, cfg.pi0, 0, cfg.symmetric_g, rng)
    eps = rng.standard_normal(n)
    e = rng.standard_normal()
    alpha = 0.0
    if cfg.fixed_effects:
        alpha = cfg.fe_scale * X.mean(axis=0) @ beta + cfg.fe_intercept + cfg.fe_sd * e
    y = reduced_form_solve(G, cfg.lam, X @ beta + alpha + eps)
    measures = tuple(corrupt(G, ch, rng) for ch in cfg.channels)
    return GroupSample(str(index), y, X, measures, truth=G)


def simulate_dataset(cfg: SimConfig, replication=0, threads=1) -> Dataset:
    """Draw a full dataset (truth included) from ``cfg``."""
    idx = range(cfg.S)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            groups = list(pool.map(lambda s: simulate_group(cfg, replication, s), idx))
    else:
        groups = [simulate_group(cfg, replication, s) for s in idx]
    return Dataset(groups, ("x1", "x2"), phi_column=0)
