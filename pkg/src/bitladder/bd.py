"""Bjontegaard deltas between two RD curves.

BD-Rate integrates ln(rate) as a function of quality over the shared quality
range; BD-Quality integrates quality as a function of ln(rate) over the shared
rate range. Positive BD-Rate means the test curve needs more bitrate for the
same quality; negative BD-Quality means it delivers less quality at the same
bitrate.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import BDResult, BitrateLadder, RDCurve, RDSurface
from .hull import follow_ladder


class Interpolation(str, enum.Enum):
    PCHIP = "piecewise_cubic_hermite"
    CUBIC = "cubic_polynomial"


class BDError(ValueError):
    pass


@dataclass(frozen=True)
class BDOptions:
    interpolation: Interpolation = Interpolation.PCHIP
    min_points: int = 4
    integration_samples: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "interpolation", Interpolation(self.interpolation))
        if self.min_points < 2:
            raise ValueError("min_points must be >= 2")
        if self.interpolation is Interpolation.CUBIC and self.min_points < 4:
            raise ValueError("cubic_polynomial needs min_points >= 4")
        if self.integration_samples < 100:
            raise ValueError("integration_samples must be >= 100")


# -- interpolation ----------------------------------------------------------

def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Fritsch-Carlson monotone slopes with shape-preserving end conditions."""
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    for k in range(1, n - 1):
        a, b = delta[k - 1], delta[k]
        if a == 0 or b == 0 or np.sign(a) != np.sign(b):
            continue
        w1 = 2 * h[k] + h[k - 1]
        w2 = h[k] + 2 * h[k - 1]
        d[k] = (w1 + w2) / (w1 / a + w2 / b)
    d[0] = _end_slope(h[0], h[1], delta[0], delta[1])
    d[-1] = _end_slope(h[-1], h[-2], delta[-1], delta[-2])
    return d


def _end_slope(h0, h1, m0, m1):
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3 * m0):
        return 3 * m0
    return d


def hermite_eval(x: np.ndarray, y: np.ndarray, d: np.ndarray, t: np.ndarray) -> np.ndarray:
    k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
    h = x[k + 1] - x[k]
    s = (t - x[k]) / h
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y[k] + (s3 - 2 * s2 + s) * h * d[k]
            + (-2 * s3 + 3 * s2) * y[k + 1] + (s3 - s2) * h * d[k + 1])


class _Fit:
    def __init__(self, x: np.ndarray, y: np.ndarray, kind: Interpolation):
        self.x = x
        self.kind = kind
        if kind is Interpolation.PCHIP:
            self.y = y
            self.d = pchip_slopes(x, y)
        else:
            self.coef = np.polyfit(x, y, 3)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        if self.kind is Interpolation.PCHIP:
            return hermite_eval(self.x, self.y, self.d, t)
        return np.polyval(self.coef, t)


def simpson(f, lo: float, hi: float, samples: int, breakpoints=()) -> float:
    """Composite Simpson over ``samples`` subintervals split at ``breakpoints``.

    Segment edges follow the interpolants' knots so each piece is a single
    cubic and Simpson's rule is exact on it.
    """
    edges = np.unique(np.concatenate(([lo, hi], [b for b in breakpoints if lo < b < hi])))
    widths = np.diff(edges)
    total = 0.0
    for a, b, w in zip(edges[:-1], edges[1:], widths):
        m = max(2, int(round(samples * w / (hi - lo))))
        m += m % 2
        t = np.linspace(a, b, m + 1)
        v = f(t)
        total += (b - a) / (3 * m) * (v[0] + v[-1] + 4 * v[1:-1:2].sum() + 2 * v[2:-1:2].sum())
    return float(total)


# -- curve preparation ------------------------------------------------------

def _as_arrays(curve: RDCurve) -> tuple[np.ndarray, np.ndarray]:
    r, q = curve.rates, curve.qualities
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise BDError("rates must be positive and finite")
    return r, q


def _rate_axis(curve: RDCurve, opts: BDOptions):
    """quality as a function of ln(rate): sorted by rate, equal rates keep max quality."""
    r, q = _as_arrays(curve)
    lr = np.log(r)
    keep = {}
    for a, b in zip(lr, q):
        keep[a] = max(b, keep.get(a, -np.inf))
    x = np.array(sorted(keep))
    y = np.array([keep[v] for v in x])
    if len(x) < opts.min_points:
        raise BDError(f"curve has {len(x)} distinct rates, need {opts.min_points}")
    return x, y


def _quality_axis(curve: RDCurve, opts: BDOptions):
    """ln(rate) as a function of quality: equal qualities collapse to their max-rate point."""
    r, q = _as_arrays(curve)
    order = np.lexsort((q, r))
    r, q = r[order], q[order]
    if opts.interpolation is Interpolation.PCHIP and np.any(np.diff(q) < 0):
        raise BDError("quality is not monotonic in rate; piecewise_cubic_hermite needs it")
    keep = {}
    for a, b in zip(q, np.log(r)):
        keep[a] = max(b, keep.get(a, -np.inf))
    x = np.array(sorted(keep))
    y = np.array([keep[v] for v in x])
    if len(x) < opts.min_points:
        raise BDError(f"curve has {len(x)} distinct qualities, need {opts.min_points}")
    return x, y


def _mean_difference(test_xy, ref_xy, opts: BDOptions, what: str):
    (xt, yt), (xr, yr) = test_xy, ref_xy
    lo, hi = max(xt[0], xr[0]), min(xt[-1], xr[-1])
    if not lo < hi:
        raise BDError(f"no {what} overlap between curves")
    ft = _Fit(xt, yt, opts.interpolation)
    fr = _Fit(xr, yr, opts.interpolation)
    knots = np.concatenate((xt, xr)) if opts.interpolation is Interpolation.PCHIP else ()
    diff = simpson(lambda t: ft(t) - fr(t), lo, hi, opts.integration_samples, knots)
    return diff / (hi - lo), (lo, hi)


def bd_rate(test: RDCurve, reference: RDCurve, options: BDOptions = BDOptions()) -> float:
    """Average percent bitrate difference of ``test`` over ``reference`` at equal quality."""
    mean, _ = _mean_difference(_quality_axis(test, options), _quality_axis(reference, options),
                               options, "quality")
    return 100.0 * math.expm1(mean)


def bd_quality(test: RDCurve, reference: RDCurve, options: BDOptions = BDOptions()) -> float:
    """Average quality difference (test - reference) at equal bitrate."""
    mean, _ = _mean_difference(_rate_axis(test, options), _rate_axis(reference, options),
                               options, "rate")
    return mean


def bd_metrics(test: RDCurve, reference: RDCurve,
               options: BDOptions = BDOptions()) -> BDResult:
    mq, rate_iv = _mean_difference(_rate_axis(test, options), _rate_axis(reference, options),
                                   options, "rate")
    mr, q_iv = _mean_difference(_quality_axis(test, options),
                                _quality_axis(reference, options), options, "quality")
    ln10 = math.log(10)
    return BDResult(
        bd_rate_percent=100.0 * math.expm1(mr),
        bd_quality=mq,
        overlap_interval=(rate_iv[0] / ln10, rate_iv[1] / ln10),
        quality_interval=(float(q_iv[0]), float(q_iv[1])),
    )


def ladder_curve(ladder: BitrateLadder, surface: RDSurface) -> RDCurve:
    """(actual bitrate, quality) at each preset bitrate along the ladder's choices."""
    return follow_ladder(surface, ladder)


def sample_fits(test: RDCurve, reference: RDCurve, options: BDOptions = BDOptions(),
                n: int = 101) -> list[tuple[float, float, float]]:
    """(kbps, test quality, reference quality) on the fitted curves, for plotting."""
    xt, yt = _rate_axis(test, options)
    xr, yr = _rate_axis(reference, options)
    lo, hi = max(xt[0], xr[0]), min(xt[-1], xr[-1])
    if not lo < hi:
        raise BDError("no rate overlap between curves")
    t = np.linspace(lo, hi, n)
    ft, fr = _Fit(xt, yt, options.interpolation), _Fit(xr, yr, options.interpolation)
    return [(float(math.exp(a)), float(b), float(c)) for a, b, c in zip(t, ft(t), fr(t))]
