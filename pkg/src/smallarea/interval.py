"""Logit-scale confidence intervals and interval scoring.

Pure functions only. Degenerate inputs are the caller's to handle: a
boundary estimate (0 or 1) cannot be logit-transformed and raises, and an
undefined variance never reaches this module (callers emit a zero-width
interval at the point estimate by convention).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import expit, logit


class BoundaryEstimateError(ValueError):
    """Point estimate sits on 0 or 1; the logit transform is undefined."""


# Rational minimax approximation to the standard normal quantile
# (Wichura's algorithm AS241, double-precision branch). Verified in the test
# suite against an independent implementation to <= 1e-9 absolute.
_A = (
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
)
_B = (
    1.0,
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_C = (
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
)
_D = (
    1.0,
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_E = (
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
)
_F = (
    1.0,
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


def _poly(coeffs: tuple[float, ...], x: float) -> float:
    out = 0.0
    for c in reversed(coeffs):
        out = out * x + c
    return out


def normal_quantile(p: float) -> float:
    """Standard normal quantile, accurate to well under 1e-9 absolute."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile argument must lie in (0, 1), got {p!r}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


@dataclass(frozen=True)
class TransformedEstimate:
    """Point estimate and variance mapped to the logit scale."""

    theta: float
    var_theta: float
    p_hat: float


def logit_transform(p_hat: float, variance: float) -> TransformedEstimate:
    """Delta-method transfer of (estimate, variance) to the logit scale."""
    if not 0.0 < p_hat < 1.0:
        raise BoundaryEstimateError(
            f"estimate {p_hat!r} is on the boundary; logit undefined"
        )
    if variance is None or not math.isfinite(variance) or variance < 0:
        raise ValueError(f"variance must be a finite nonnegative real, got {variance!r}")
    deriv = 1.0 / (p_hat * (1.0 - p_hat))
    return TransformedEstimate(
        theta=float(logit(p_hat)),
        var_theta=variance * deriv * deriv,
        p_hat=p_hat,
    )


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float
    level: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"interval bounds out of order: {self}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, truth: float) -> bool:
        return self.lower <= truth <= self.upper


def wald_interval(t: TransformedEstimate, level: float = 0.95) -> Interval:
    """Symmetric logit-scale interval mapped back to the probability scale.

    A zero logit-scale variance collapses to a zero-width interval at the
    point estimate.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    z = normal_quantile(1.0 - (1.0 - level) / 2.0)
    half = z * math.sqrt(t.var_theta)
    if half == 0.0:
        return Interval(lower=t.p_hat, upper=t.p_hat, level=level)
    # expit rounds to the boundary once |theta +- half| passes ~37; the exact
    # endpoints are strictly interior, so keep the floats there too
    lo = max(float(expit(t.theta - half)), math.nextafter(0.0, 1.0))
    hi = min(float(expit(t.theta + half)), math.nextafter(1.0, 0.0))
    return Interval(lower=lo, upper=hi, level=level)


def point_interval(p_hat: float, level: float) -> Interval:
    """Zero-width interval convention for estimates without a usable variance."""
    return Interval(lower=p_hat, upper=p_hat, level=level)


def estimate_interval(
    p_hat: float, variance: float | None, level: float = 0.95
) -> Interval:
    """Interval for a prevalence estimate under its variance status.

    Estimates with an unusable variance (undefined, zero, or a boundary
    point estimate) get the degenerate point interval; everything else gets
    the logit-scale Wald interval.
    """
    if variance is None or variance <= 0.0 or not 0.0 < p_hat < 1.0:
        return point_interval(p_hat, level)
    return wald_interval(logit_transform(p_hat, variance), level)


def interval_score(interval: Interval, truth: float, alpha: float = 0.2) -> float:
    """Proper interval score: width plus 2/alpha times the miss distance.

    Lower is better. The score penalty's alpha is an independent knob from
    the interval's own level.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    score = interval.width
    if truth > interval.upper:
        score += 2.0 / alpha * (truth - interval.upper)
    if truth < interval.lower:
        score += 2.0 / alpha * (interval.lower - truth)
    return score
