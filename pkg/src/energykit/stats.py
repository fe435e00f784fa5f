"""Sample sizing and two-sample nonparametric comparison."""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError, InvalidComparisonError
from .trace import PowerTrace, TraceDiagnostics

# Romano et al. cut-offs on |delta|
CLIFF_THRESHOLDS = (0.147, 0.33, 0.474)
CLIFF_LABELS = ("negligible", "small", "medium", "large")
EXACT_MAX_MIN_N = 20
# beyond this total the exact rank-sum table gets too large to tabulate
EXACT_MAX_TOTAL_N = 400
P_UNDERFLOW = 1e-300
SIDEDNESS_NOTE = "Mann-Whitney U is two-sided"


@dataclass(frozen=True)
class SampleSizeRequest:
    confidence: float = 0.95
    margin: float = 0.05

    def __post_init__(self):
        for name in ("confidence", "margin"):
            value = getattr(self, name)
            if not (0 < value < 1):
                raise InvalidArgumentError(f"{name} must lie strictly inside (0, 1), got {value}")


@dataclass(frozen=True)
class MannWhitneyResult:
    u_statistic: float
    p_value: float
    method: str  # "exact" or "normal"
    underflow: bool = False


@dataclass(frozen=True)
class ComparisonReport:
    u_statistic: float
    p_value: float
    cliffs_delta: float
    magnitude: str
    n_a: int
    n_b: int
    p_method: str = "exact"
    p_underflow: bool = False


def required_sample_size(req: SampleSizeRequest | None = None, *, confidence=None, margin=None) -> int:
    """Cochran's n for an unlimited population at maximum variance (p = 0.5).

    >>> required_sample_size(SampleSizeRequest(0.95, 0.05))
    385
    """
    if req is None:
        req = SampleSizeRequest(confidence if confidence is not None else 0.95,
                                margin if margin is not None else 0.05)
    z = NormalDist().inv_cdf((1 + req.confidence) / 2)
    n = z * z * 0.25 / (req.margin * req.margin)
    # guard against 385.0000000001-style float noise pushing ceil up a notch
    return math.ceil(round(n, 9))


def _as_sample(x: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise InvalidArgumentError(f"sample {name} is empty")
    return arr


def _exact_rank_sum_counts(doubled_ranks: np.ndarray, k: int) -> np.ndarray:
    """counts[s] = number of size-``k`` subsets whose doubled ranks sum to s."""
    top = int(np.sort(doubled_ranks)[-k:].sum())
    counts = np.zeros((k + 1, top + 1))
    counts[0, 0] = 1.0
    for r in doubled_ranks.astype(int):
        for j in range(k, 0, -1):
            counts[j, r:] += counts[j - 1, : top + 1 - r]
    return counts[k]


def _exact_p(observed_doubled_sum: int, doubled_ranks: np.ndarray, k: int) -> float:
    counts = _exact_rank_sum_counts(doubled_ranks, k)
    sums = np.arange(counts.size)
    centre = k * doubled_ranks.sum() / doubled_ranks.size
    dev = abs(observed_doubled_sum - centre)
    extreme = np.abs(sums - centre) >= dev - 1e-9
    return float(min(1.0, counts[extreme].sum() / counts.sum()))


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test of ``a`` against ``b``.

    U counts pairs with a > b, ties counting one half.  Small samples get the
    exact permutation distribution of the mid-rank sum; once both samples
    exceed 20 the tie- and continuity-corrected normal approximation is used.
    """
    x = _as_sample(a, "a")
    y = _as_sample(b, "b")
    n_a, n_b = x.size, y.size
    n = n_a + n_b
    ranks = rankdata(np.concatenate([x, y]))
    r_a = float(ranks[:n_a].sum())
    u = r_a - n_a * (n_a + 1) / 2

    if min(n_a, n_b) <= EXACT_MAX_MIN_N and n <= EXACT_MAX_TOTAL_N:
        doubled = np.rint(ranks * 2).astype(np.int64)
        # tabulate over the smaller sample; its deviation from centre mirrors the other's
        observed = doubled[:n_a] if n_a <= n_b else doubled[n_a:]
        p = _exact_p(int(observed.sum()), doubled, observed.size)
        return MannWhitneyResult(u, p, "exact")

    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts.astype(float) ** 3 - tie_counts))
    var = n_a * n_b / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return MannWhitneyResult(u, 1.0, "normal")
    z = max(abs(u - n_a * n_b / 2.0) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2)))
    if p < P_UNDERFLOW:
        return MannWhitneyResult(u, 0.0, "normal", underflow=True)
    return MannWhitneyResult(u, p, "normal")


def magnitude_label(delta: float) -> str:
    return CLIFF_LABELS[bisect_right(CLIFF_THRESHOLDS, abs(delta))]


def cliffs_delta(a: Sequence[float], b: Sequence[float]) -> tuple[float, str]:
    """Cliff's delta of ``a`` over ``b`` with its magnitude label.

    Counted via binary search on the sorted ``b`` so 10^4 x 10^4 samples stay
    cheap; the result is identical to looping over all cross pairs.
    """
    x = _as_sample(a, "a")
    y = np.sort(_as_sample(b, "b"))
    below = np.searchsorted(y, x, side="left")  # b < x
    above = y.size - np.searchsorted(y, x, side="right")  # b > x
    dominance = int(below.sum()) - int(above.sum())
    delta = dominance / (x.size * y.size)
    return delta, magnitude_label(delta)


def compare_samples(a: Sequence[float], b: Sequence[float]) -> ComparisonReport:
    mw = mann_whitney_u(a, b)
    delta, magnitude = cliffs_delta(a, b)
    return ComparisonReport(
        u_statistic=mw.u_statistic,
        p_value=mw.p_value,
        cliffs_delta=delta,
        magnitude=magnitude,
        n_a=len(a),
        n_b=len(b),
        p_method=mw.method,
        p_underflow=mw.underflow,
    )


def compare_traces(a: PowerTrace, b: PowerTrace) -> ComparisonReport:
    return compare_samples(a.powers, b.powers)


@dataclass(frozen=True)
class OverheadReport:
    low_net_joules: float
    high_net_joules: float
    relative_difference: float  # (high - low) / low
    comparison: ComparisonReport
    low_diagnostics: TraceDiagnostics
    high_diagnostics: TraceDiagnostics
    low_rate: float
    high_rate: float

    @property
    def percent(self) -> float:
        return self.relative_difference * 100.0


# plan fields that must agree for an overhead comparison to be meaningful
COMPARABLE_PLAN_FIELDS = ("runs", "warmup_discard", "workload")


def overhead_report(low, high) -> OverheadReport:
    """Relative net-energy cost of sampling ``high`` versus ``low``.

    Both arguments are :class:`~energykit.orchestrator.ExperimentResult`
    objects from the same plan apart from the sampling rate and backend.
    """
    for name in COMPARABLE_PLAN_FIELDS:
        if getattr(low.plan, name) != getattr(high.plan, name):
            raise InvalidComparisonError(
                f"plans differ in {name}: {getattr(low.plan, name)!r} vs {getattr(high.plan, name)!r}"
            )
    e_low = low.net_energy_value.joules
    e_high = high.net_energy_value.joules
    if e_low <= 0:
        raise InvalidComparisonError("reference net energy must be positive")
    return OverheadReport(
        low_net_joules=e_low,
        high_net_joules=e_high,
        relative_difference=(e_high - e_low) / e_low,
        comparison=compare_traces(low.workload_trace, high.workload_trace),
        low_diagnostics=low.diagnostics,
        high_diagnostics=high.diagnostics,
        low_rate=low.workload_trace.nominal_rate,
        high_rate=high.workload_trace.nominal_rate,
    )
