"""Fitting the supervisor's trigger statistics from intervention records.

Each record's state is scored through a candidate value function; under the
model "intervene when V(x) + w <= mu, w ~ N(0, sigma^2)" those scores are
i.i.d. Gaussian around mu, so the per-candidate maximum-likelihood estimates
are the sample mean and the biased sample variance.  Model selection scores
every library member by its maximised log-likelihood; an optional prior
keeps only candidates whose avoid region covers the robot's own (never less
conservative than the truth), and clamps mu_hat at zero for the same reason.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .reachability import (
    DataFormatError,
    ValueFunction,
    interpolate_many,
    is_superset_reachable,
)
from .supervisor import InterventionRecord

SIGMA2_FLOOR = 1e-6
MAX_EXCLUSION_RATE = 0.1

FIT_SCHEMA = "fit-1"


class InsufficientDataError(ValueError):
    """Fewer than two usable records."""


class ExclusionRateError(ValueError):
    """Too many records fall outside the value function's domain."""


class EmptyFeasibleSetError(ValueError):
    """The conservativeness prior rejected every library candidate."""


def record_values(vf: ValueFunction, records: list[InterventionRecord]
                  ) -> tuple[np.ndarray, int]:
    """Scores of the records through vf, dropping out-of-domain states.

    Returns (values of the kept records, number excluded).
    """
    xs = np.array([r.relative_state.x for r in records])
    ys = np.array([r.relative_state.y for r in records])
    ths = np.array([r.relative_state.theta for r in records])
    vals, inside = interpolate_many(vf, xs, ys, ths, return_inside=True)
    return vals[inside], int(len(records) - inside.sum())


def fit_mu_sigma(values) -> tuple[float, float]:
    """Gaussian MLE: sample mean and biased (1/p) variance, variance floored."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise InsufficientDataError(
            f"need at least 2 values to fit, got {values.size}")
    mu = float(values.mean())
    sigma2 = float(values.var())
    return mu, max(sigma2, SIGMA2_FLOOR)


def log_likelihood(values, mu: float, sigma2: float) -> float:
    values = np.asarray(values, dtype=np.float64)
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    p = values.size
    return float(-(p / 2) * math.log(2 * math.pi * sigma2)
                 - np.sum((values - mu) ** 2) / (2 * sigma2))


def candidate_likelihood(vf: ValueFunction, records: list[InterventionRecord]
                         ) -> tuple[float, float, float]:
    """MLE of (mu, sigma2) through one candidate plus the achieved log-likelihood.

    Aborts if more than 10% of the records fall outside the grid: a fit that
    ignores that much data would not be comparable across candidates.
    """
    if not records:
        raise InsufficientDataError("no records")
    vals, n_excluded = record_values(vf, records)
    if n_excluded > MAX_EXCLUSION_RATE * len(records):
        raise ExclusionRateError(
            f"{n_excluded}/{len(records)} records out of domain "
            f"(limit {MAX_EXCLUSION_RATE:.0%})")
    mu, sigma2 = fit_mu_sigma(vals)
    return mu, sigma2, log_likelihood(vals, mu, sigma2)


@dataclass(frozen=True)
class CandidateFit:
    omega_max: float
    mu_hat: float
    sigma2_hat: float
    log_likelihood: float
    conservative: bool | None  # None when no reference was supplied


@dataclass(frozen=True)
class SupervisorFit:
    vf: ValueFunction
    omega_max: float
    mu_hat: float  # clamped at 0: the supervisor is never bolder than the truth
    sigma2_hat: float
    log_likelihood: float
    per_candidate: list[CandidateFit]
    n_records: int
    n_excluded: int

    @property
    def sigma_hat(self) -> float:
        return math.sqrt(self.sigma2_hat)


def select_value_function(library: list[ValueFunction],
                          records: list[InterventionRecord],
                          reference: ValueFunction | None = None,
                          ) -> SupervisorFit:
    """Score every library member and keep the best.

    With a reference value function the selection is MAP rather than ML:
    candidates whose avoid region does not cover the reference's are
    discarded outright.  Likelihood ties break toward the smaller turn
    bound (the more conservative model).
    """
    if not library:
        raise ValueError("empty library")
    ordered = sorted(library, key=lambda vf: vf.omega_max)
    per_candidate: list[CandidateFit] = []
    best = None
    best_vf = None
    for vf in ordered:
        mu, sigma2, ll = candidate_likelihood(vf, records)
        conservative = (is_superset_reachable(vf, reference)
                        if reference is not None else None)
        cand = CandidateFit(omega_max=vf.omega_max, mu_hat=mu,
                            sigma2_hat=sigma2, log_likelihood=ll,
                            conservative=conservative)
        per_candidate.append(cand)
        if reference is not None and not conservative:
            continue
        if best is None or cand.log_likelihood > best.log_likelihood:
            best = cand
            best_vf = vf
    if best is None:
        raise EmptyFeasibleSetError(
            "no library candidate covers the reference avoid region")
    _, n_excluded = record_values(best_vf, records)
    return SupervisorFit(vf=best_vf, omega_max=best.omega_max,
                         mu_hat=max(best.mu_hat, 0.0),
                         sigma2_hat=best.sigma2_hat,
                         log_likelihood=best.log_likelihood,
                         per_candidate=per_candidate,
                         n_records=len(records), n_excluded=n_excluded)


def predicted_fp_fraction(vf: ValueFunction, level: float,
                          records: list[InterventionRecord]) -> float:
    """Fraction of intervention states strictly above the level set: the share
    of supervisor triggers this safe set would not have acted on."""
    if not records:
        raise ValueError("no records")
    xs = np.array([r.relative_state.x for r in records])
    ys = np.array([r.relative_state.y for r in records])
    ths = np.array([r.relative_state.theta for r in records])
    vals = interpolate_many(vf, xs, ys, ths)
    return float(np.mean(vals > level))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _candidate_doc(c: CandidateFit) -> dict:
    return {"omega_max": c.omega_max, "mu_hat": c.mu_hat,
            "sigma2_hat": c.sigma2_hat, "log_likelihood": c.log_likelihood,
            "conservative": c.conservative}


def save_fit(fit: SupervisorFit, path: str) -> None:
    doc = {
        "schema": FIT_SCHEMA,
        "selected": {
            "omega_max": fit.omega_max,
            "mu_hat": fit.mu_hat,
            "sigma2_hat": fit.sigma2_hat,
            "log_likelihood": fit.log_likelihood,
        },
        "candidates": [_candidate_doc(c) for c in fit.per_candidate],
        "n_records": fit.n_records,
        "n_excluded": fit.n_excluded,
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def load_fit_doc(path: str) -> dict:
    """Load and validate a fit report (the selection itself is not rebuilt:
    the value function lives in its own artifact)."""
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("schema") != FIT_SCHEMA:
        raise DataFormatError(f"{path}: expected schema {FIT_SCHEMA!r}")
    for key in ("selected", "candidates", "n_records", "n_excluded"):
        if key not in doc:
            raise DataFormatError(f"{path}: missing key {key!r}")
    for key in ("omega_max", "mu_hat", "sigma2_hat", "log_likelihood"):
        if key not in doc["selected"]:
            raise DataFormatError(f"{path}: selected block missing {key!r}")
    return doc
