"""nDCG@k, paired t-test and run-level aggregation."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field

from .data import Qrels, Run


class EvaluationError(ValueError):
    pass


@dataclass
class PerQueryScores:
    scores: dict[str, float]
    metric: str = "ndcg@10"
    excluded: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scores)

    def to_report(self) -> dict:
        metric, _, k = self.metric.partition("@")
        return {
            "metric": metric,
            "k": int(k) if k else None,
            "per_query": dict(sorted(self.scores.items())),
            "mean": mean_ndcg(self) if self.scores else None,
            "excluded_queries": sorted(self.excluded),
        }


def _dcg(gains: Sequence[int]) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> PerQueryScores:
    """Linear-gain nDCG@k with a log2(rank + 1) discount.

    Every query with at least one positive judgment is scored; those missing
    from the run score 0. Run queries without a positive judgment are left out
    and listed in ``excluded``.
    """
    if k <= 0:
        raise EvaluationError("k must be positive")
    judged = qrels.by_query()
    evaluable = {q for q, grades in judged.items() if any(g > 0 for g in grades.values())}
    excluded = sorted((set(run.rankings) | set(judged)) - evaluable)
    scores = {}
    for qid in sorted(evaluable):
        grades = judged[qid]
        ideal = _dcg(sorted(grades.values(), reverse=True)[:k])
        ranked = run.rankings.get(qid, [])[:k]
        scores[qid] = _dcg([grades.get(d, 0) for d, _ in ranked]) / ideal
    return PerQueryScores(scores, f"ndcg@{k}", excluded)


def mean_ndcg(scores: PerQueryScores | Mapping[str, float]) -> float:
    values = scores.scores if isinstance(scores, PerQueryScores) else scores
    if not values:
        raise EvaluationError("cannot average an empty score set")
    return math.fsum(values.values()) / len(values)


@dataclass(frozen=True)
class AggregateStats:
    mean: float
    std: float
    n: int


def aggregate(values: Sequence[float]) -> AggregateStats:
    """Mean and sample standard deviation (divisor n - 1; 0 for a single value)."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        raise EvaluationError("cannot aggregate an empty sequence")
    if all(v == values[0] for v in values):
        return AggregateStats(values[0], 0.0, n)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    return AggregateStats(mean, std, n)


# Regularized incomplete beta via the modified Lentz continued fraction.
_CF_EPS = 1e-16
_CF_TINY = 1e-300
_CF_MAX_ITER = 10_000


def _beta_cf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _CF_TINY if abs(d) < _CF_TINY else d
        c = 1.0 + aa / c
        c = _CF_TINY if abs(c) < _CF_TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t * t))))


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    significant_at_5pct: bool
    degenerate: bool
    n: int
    mean_difference: float

    def to_dict(self) -> dict:
        return asdict(self)


def paired_t_test(
    a: PerQueryScores | Mapping[str, float], b: PerQueryScores | Mapping[str, float]
) -> TTestResult:
    """Two-sided paired t-test over per-query differences ``a - b``.

    When every difference is identical the statistic is undefined: all-zero
    differences give p = 1, a constant non-zero shift gives p = 0.
    """
    sa = a.scores if isinstance(a, PerQueryScores) else dict(a)
    sb = b.scores if isinstance(b, PerQueryScores) else dict(b)
    if set(sa) != set(sb):
        diff = sorted(set(sa) ^ set(sb))
        raise EvaluationError(f"query sets differ: {diff[:10]}")
    n = len(sa)
    if n < 2:
        raise EvaluationError("paired t-test needs at least two queries")
    diffs = [sa[q] - sb[q] for q in sorted(sa)]
    mean = math.fsum(diffs) / n
    df = n - 1
    sd = 0.0
    if not all(x == diffs[0] for x in diffs):
        sd = math.sqrt(math.fsum((x - mean) ** 2 for x in diffs) / df)
    if sd == 0.0:
        # constant differences, or spread too small to square without underflow
        if mean == 0.0:
            return TTestResult(0.0, df, 1.0, False, True, n, 0.0)
        return TTestResult(math.copysign(math.inf, mean), df, 0.0, True, True, n, mean)
    t = mean / (sd / math.sqrt(n))
    p = student_t_two_sided_p(t, df)
    return TTestResult(t, df, p, p < 0.05, False, n, mean)
