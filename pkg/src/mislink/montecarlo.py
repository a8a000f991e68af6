"""Replication harness: simulate, estimate rates, fit every variant, summarise.

Each replication ``q`` draws its data from streams keyed by
``(seed, q, group)``, so results do not depend on which worker ran which
replication. Summaries are always reduced in replication order.
"""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AllReplicationsFailed, MislinkError, RatesFlagged, ValidationError
from .estimators import EstimatorSpec, fit
from .rates import PARAM_NAMES, estimate_rates
from .simulate import SimConfig, simulate_dataset


@dataclass(frozen=True)
class VariantTemplate:
    """An estimator column of the study; rates are filled in per replication."""

    label: str
    variant: str
    measure: int = 1
    instruments: Optional[str] = None
    fixed_effects: str = "within"
    correct_first_stage: bool = True

    def __post_init__(self):
        # validate eagerly so a bad template fails before any simulation
        self.spec(None)

    @property
    def needs_rates(self):
        return self.variant in ("adjusted", "s2sls")

    def spec(self, rates):
        return EstimatorSpec(
            self.variant, self.measure, self.instruments, self.fixed_effects,
            rates, self.correct_first_stage,
        )

    def to_dict(self):
        return {
            "label": self.label,
            "variant": self.variant,
            "measure": self.measure,
            "instruments": self.instruments,
            "fixed_effects": self.fixed_effects,
            "correct_first_stage": self.correct_first_stage,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


DEFAULT_VARIANTS = (
    VariantTemplate("naive_H1", "naive", 1),
    VariantTemplate("naive_H2", "naive", 2),
    VariantTemplate("adjusted_W1", "adjusted", 1),
    VariantTemplate("adjusted_W2", "adjusted", 2),
    VariantTemplate("oracle", "oracle"),
)


@dataclass(frozen=True)
class McConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    Q: int = 100
    variants: tuple = DEFAULT_VARIANTS
    rates_mode: Optional[str] = None

    def __post_init__(self):
        if self.Q < 1:
            raise ValidationError("Q must be >= 1")
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise ValidationError("variant labels must be unique")
        object.__setattr__(self, "variants", tuple(self.variants))

    def to_dict(self):
        return {
            "sim": self.sim.to_dict(),
            "Q": self.Q,
            "variants": [v.to_dict() for v in self.variants],
            "rates_mode": self.rates_mode,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("schema_version", None)
        d.pop("kind", None)
        unknown = set(d) - {"sim", "Q", "variants", "rates_mode"}
        if unknown:
            raise ValidationError(f"unknown McConfig fields: {sorted(unknown)}")
        kw = {}
        if "sim" in d:
            kw["sim"] = SimConfig.from_dict(d["sim"])
        if "Q" in d:
            kw["Q"] = int(d["Q"])
        if "variants" in d:
            kw["variants"] = tuple(VariantTemplate.from_dict(v) for v in d["variants"])
        if d.get("rates_mode") is not None:
            kw["rates_mode"] = d["rates_mode"]
        return cls(**kw)


@dataclass
class VariantSummary:
    label: str
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    mean_se: np.ndarray
    estimates: np.ndarray  # (n_success, p)
    ses: np.ndarray

    def to_dict(self):
        return {
            "label": self.label,
            "names": list(self.names),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "mean_se": self.mean_se.tolist(),
            "estimates": self.estimates.tolist(),
            "se": self.ses.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        a = lambda k: np.asarray(d[k], dtype=np.float64)
        return cls(d["label"], tuple(d["names"]), a("mean"), a("sd"), a("mean_se"),
                   a("estimates"), a("se"))


@dataclass
class McReport:
    """Summary of a Monte Carlo study.

    ``runtime_seconds`` is kept on the object but not serialised, so that
    report files are reproducible byte for byte.
    """

    config: dict
    Q: int
    n_success: int
    failures: list
    rates: VariantSummary
    variants: list
    runtime_seconds: float = float("nan")

    def variant(self, label) -> VariantSummary:
        for v in self.variants:
            if v.label == label:
                return v
        raise KeyError(label)

    def to_dict(self):
        return {
            "config": self.config,
            "Q": self.Q,
            "n_success": self.n_success,
            "failures": list(self.failures),
            "rates": self.rates.to_dict(),
            "variants": [v.to_dict() for v in self.variants],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            d["config"], d["Q"], d["n_success"], list(d["failures"]),
            VariantSummary.from_dict(d["rates"]),
            [VariantSummary.from_dict(v) for v in d["variants"]],
        )


def _sd(a):
    if a.shape[0] < 2:
        return np.zeros(a.shape[1:])
    return a.std(axis=0, ddof=1)


def summarise(label, names, estimates, ses):
    est = np.asarray(estimates, dtype=np.float64).reshape(-1, len(names))
    se = np.asarray(ses, dtype=np.float64).reshape(-1, len(names))
    return VariantSummary(label, tuple(names), est.mean(axis=0), _sd(est),
                          se.mean(axis=0), est, se)


def run_replication(cfg: McConfig, q):
    """One replication. Returns ``(rates, {label: fit})`` or raises MislinkError."""
    ds = simulate_dataset(cfg.sim, replication=q)
    rates = estimate_rates(ds, mode=cfg.rates_mode)
    if not rates.clean and any(v.needs_rates for v in cfg.variants):
        raise RatesFlagged(",".join(rates.flags))
    fits = {}
    for v in cfg.variants:
        fits[v.label] = fit(ds, v.spec(rates if v.needs_rates else None))
    return rates, fits


def _safe_replication(cfg, q):
    try:
        return run_replication(cfg, q)
    except MislinkError as exc:
        return f"{type(exc).__name__}: {exc}"


def run_mc(cfg: McConfig, threads=1) -> McReport:
    """Run ``cfg.Q`` replications and aggregate in replication order.

    Replications whose rate estimate is flagged, or whose fit fails
    numerically, are dropped and listed in ``failures``.
    """
    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda q: _safe_replication(cfg, q), range(cfg.Q)))
    else:
        results = [_safe_replication(cfg, q) for q in range(cfg.Q)]

    failures = [
        {"replication": q, "reason": r} for q, r in enumerate(results) if isinstance(r, str)
    ]
    ok = [r for r in results if not isinstance(r, str)]
    if not ok:
        raise AllReplicationsFailed(
            f"all {cfg.Q} replications failed; first reason: {failures[0]['reason']}"
        )

    rate_est = [r.as_vector() for r, _ in ok]
    rate_se = [
        r.se if r.se is not None else np.full(len(PARAM_NAMES), np.nan) for r, _ in ok
    ]
    rates_summary = summarise("rates", PARAM_NAMES, rate_est, rate_se)
    variants = []
    for v in cfg.variants:
        fits = [f[v.label] for _, f in ok]
        variants.append(
            summarise(v.label, fits[0].names, [f.params for f in fits], [f.se for f in fits])
        )
    return McReport(
        cfg.to_dict(), cfg.Q, len(ok), failures, rates_summary, variants,
        time.perf_counter() - t0,
    )


def _param_rows(summaries):
    rows = []
    for s in summaries:
        for name in s.names:
            if name not in rows:
                rows.append(name)
    return rows


def emit_table(report: McReport, fmt="markdown", table="estimates"):
    """Render means with SDs in parentheses.

    ``table="estimates"`` has one column per variant and one row per
    coefficient; ``table="rates"`` is the rate-estimation summary. The CSV
    form is long (one line per variant and parameter) and lossless.
    """
    if table == "estimates":
        summaries = list(report.variants)
    elif table == "rates":
        summaries = [report.rates]
    else:
        raise ValidationError(f"unknown table {table!r}")

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "parameter", "mean", "sd", "mean_se", "count"])
        for s in summaries:
            for k, name in enumerate(s.names):
                w.writerow([
                    s.label, name, format(s.mean[k], ".17g"), format(s.sd[k], ".17g"),
                    format(s.mean_se[k], ".17g"), s.estimates.shape[0],
                ])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValidationError(f"unknown table format {fmt!r}")

    if table == "rates":
        header = ["statistic"] + list(report.rates.names)
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        r = report.rates
        lines.append("| mean | " + " | ".join(f"{m:.4f}" for m in r.mean) + " |")
        lines.append("| sd | " + " | ".join(f"{m:.4f}" for m in r.sd) + " |")
        return "\n".join(lines) + "\n"

    header = ["parameter"] + [s.label for s in summaries]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for name in _param_rows(summaries):
        cells = [name]
        for s in summaries:
            if name in s.names:
                k = s.names.index(name)
                cells.append(f"{s.mean[k]:.4f} ({s.sd[k]:.4f})")
            else:
                cells.append("")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
