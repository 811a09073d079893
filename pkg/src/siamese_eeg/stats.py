"""Significance tests with p-values from the regularized incomplete beta function."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, RejectedInputError

_MAX_ITER = 200
_TOL = 1e-12
_TINY = 1e-300


def _beta_cf(a: float, b: float, x: float) -> float:
    """Continued fraction for I_x(a, b), evaluated with the modified Lentz method."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = _TINY if abs(d) < _TINY else d
        c = 1.0 + aa / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _TOL:
            return h
    raise NumericError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if not (a > 0 and b > 0):
        raise RejectedInputError("betainc needs a > 0 and b > 0")
    if not 0.0 <= x <= 1.0:
        raise RejectedInputError(f"betainc argument {x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    if not df > 0:
        raise RejectedInputError("degrees of freedom must be positive")
    if math.isinf(t):
        return 1.0 if t > 0 else 0.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def t_sf_two_sided(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc(df / 2.0, 0.5, df / (df + t * t))


def f_cdf(f: float, d1: float, d2: float) -> float:
    if not (d1 > 0 and d2 > 0):
        raise RejectedInputError("degrees of freedom must be positive")
    if f <= 0:
        return 0.0
    return betainc(d1 / 2.0, d2 / 2.0, d1 * f / (d1 * f + d2))


def f_sf(f: float, d1: float, d2: float) -> float:
    if not (d1 > 0 and d2 > 0):
        raise RejectedInputError("degrees of freedom must be positive")
    if f <= 0:
        return 1.0
    return betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


@dataclass(frozen=True)
class AnovaResult:
    F: float
    df_between: int
    df_within: int
    p: float

    def __str__(self) -> str:
        return f"F({self.df_between}) = {self.F:.2f}, {format_p(self.p)}"


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float

    def __str__(self) -> str:
        return f"t({self.df}) = {self.t:.2f}, {format_p(self.p)}"


def format_p(p: float) -> str:
    return "p < 0.001" if p < 0.001 else f"p = {p:.3f}"


def _as_sample(values, name: str) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise RejectedInputError(f"{name} needs at least 2 values")
    if not np.isfinite(x).all():
        raise RejectedInputError(f"{name} contains non-finite values")
    return x


def one_way_anova(groups) -> AnovaResult:
    groups = [_as_sample(g, f"group {i}") for i, g in enumerate(groups)]
    if len(groups) < 2:
        raise RejectedInputError("ANOVA needs at least 2 groups")
    n = sum(len(g) for g in groups)
    grand = np.concatenate(groups).mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(float(np.sum((g - g.mean()) ** 2)) for g in groups)
    df_b, df_w = len(groups) - 1, n - len(groups)
    if ss_within <= 0.0:
        raise RejectedInputError("zero within-group variance; F is undefined")
    f = (ss_between / df_b) / (ss_within / df_w)
    return AnovaResult(float(f), df_b, df_w, f_sf(f, df_b, df_w))


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired t-test on ``a - b``."""
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    if len(a) != len(b):
        raise RejectedInputError("paired samples must have equal length")
    d = a - b
    n = len(d)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise RejectedInputError("differences have zero variance; t is undefined")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return TTestResult(t, n - 1, t_sf_two_sided(t, n - 1))


def independent_ttest(a, b) -> TTestResult:
    """Two-sided two-sample t-test with pooled variance."""
    a, b = _as_sample(a, "a"), _as_sample(b, "b")
    na, nb = len(a), len(b)
    pooled = (np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)) / (na + nb - 2)
    if pooled == 0.0:
        raise RejectedInputError("zero pooled variance; t is undefined")
    t = float((a.mean() - b.mean()) / math.sqrt(pooled * (1.0 / na + 1.0 / nb)))
    df = na + nb - 2
    return TTestResult(t, df, t_sf_two_sided(t, df))


def bonferroni(p_values, alpha: float = 0.05) -> list[bool]:
    """``p < alpha / m`` for each of the ``m`` p-values."""
    p = [float(v) for v in p_values]
    for v in p:
        if not 0.0 <= v <= 1.0:
            raise RejectedInputError(f"p-value {v} outside [0, 1]")
    if not p:
        return []
    threshold = alpha / len(p)
    return [v < threshold for v in p]
