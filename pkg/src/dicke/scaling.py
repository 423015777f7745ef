"""Peak location, power-law fits and data collapse."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import ModelParams
from .eigen import ground_state
from .observables import fs_overlap_route, second_derivative_with_state

INVGOLD = (math.sqrt(5) - 1) / 2


class NoInteriorPeak(RuntimeError):
    pass


class SignMixture(ValueError):
    pass


class Degenerate(ValueError):
    pass


class EmptyCommonSupport(ValueError):
    pass


# --------------------------------------------------------------------------
# records

CSV_COLUMNS = ("n_atoms", "D", "lambda", "observable", "value", "n_tr", "tol_energy", "seed")


@dataclass
class SweepRecord:
    n_atoms: int
    d_ratio: float
    lam: float
    observable: str
    value: float
    n_tr: int
    tol_energy: float
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite {self.observable} at N={self.n_atoms}, lam={self.lam}")

    def row(self) -> list:
        return [self.n_atoms, repr(float(self.d_ratio)), repr(float(self.lam)), self.observable,
                repr(float(self.value)), self.n_tr, repr(float(self.tol_energy)), self.seed]


def write_records(path, records: Sequence[SweepRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_records(path) -> list[SweepRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepRecord(int(r["n_atoms"]), float(r["D"]), float(r["lambda"]), r["observable"],
                        float(r["value"]), int(r["n_tr"]), float(r["tol_energy"]),
                        int(r.get("seed") or 0)) for r in rows]


# --------------------------------------------------------------------------
# peak finding

def golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float,
               f_cache: dict | None = None) -> tuple[float, float]:
    """Golden-section maximization of a unimodal f on [lo, hi] to width <= tol."""
    cache = {} if f_cache is None else f_cache

    def ev(x):
        if x not in cache:
            cache[x] = f(x)
        return cache[x]

    a, b = lo, hi
    c = b - INVGOLD * (b - a)
    d = a + INVGOLD * (b - a)
    fc, fd = ev(c), ev(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVGOLD * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVGOLD * (b - a)
            fd = ev(d)
    best = max(cache.items(), key=lambda kv: kv[1] if a <= kv[0] <= b else -math.inf)
    return best


def find_peak(f: Callable[[float], float], bracket: tuple[float, float],
              tol_lambda: float = 5e-5, n_scan: int = 16) -> tuple[float, float, dict]:
    """Maximize f inside ``bracket``: coarse scan, then golden section.

    If the scan is monotone the bracket is widened once on the rising side;
    a second monotone scan raises :class:`NoInteriorPeak`. Returns
    (x_max, f_max, evaluations).
    """
    lo, hi = map(float, bracket)
    if not hi > lo:
        raise ValueError("bracket must satisfy lo < hi")
    cache: dict = {}
    for attempt in range(2):
        xs = np.linspace(lo, hi, n_scan)
        ys = []
        for x in xs:
            x = float(x)
            if x not in cache:
                cache[x] = f(x)
            ys.append(cache[x])
        i = int(np.argmax(ys))
        if 0 < i < n_scan - 1:
            x, y = golden_max(f, float(xs[i - 1]), float(xs[i + 1]), tol_lambda, cache)
            return x, y, cache
        width = hi - lo
        if i == 0:
            lo, hi = lo - width, lo + (xs[1] - xs[0])
        else:
            lo, hi = hi - (xs[1] - xs[0]), hi + width
    raise NoInteriorPeak(f"no interior maximum in widened bracket [{lo}, {hi}]")


class CurveEvaluator:
    """Memoized observable along lambda at fixed N, D and truncation.

    ``kind`` is "chi_f" (average FS) or "neg_d2e" (-d^2 e0/dlam^2, positive
    near the transition). The truncation is fixed once, at the coupling of
    ``p``, so the curve is smooth in lambda; every evaluation warm-starts
    from the ground state at the nearest lambda already visited.
    """

    KINDS = ("chi_f", "neg_d2e")

    def __init__(self, p: ModelParams, kind: str = "chi_f", n_tr: int | None = None,
                 energy_tol: float = 1e-10, tol: float | None = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown observable {kind!r}; expected one of {self.KINDS}")
        self.p, self.kind, self.tol = p, kind, tol
        self._states: dict[float, np.ndarray] = {}
        if n_tr is None:
            sol, _ = ground_state(p, energy_tol=energy_tol, tol=tol)
            n_tr = sol.n_tr
            self._states[p.lam] = sol.ground
        self.n_tr = int(n_tr)
        self.values: dict[float, float] = {}

    def __call__(self, lam: float) -> float:
        lam = float(lam)
        if lam in self.values:
            return self.values[lam]
        v0 = None
        if self._states:
            v0 = self._states[min(self._states, key=lambda x: abs(x - lam))]
        q = self.p.with_lam(lam)
        if self.kind == "chi_f":
            est = fs_overlap_route(q, n_tr=self.n_tr, tol=self.tol, v0=v0)
            value, state = est.chi_f, est.state
        else:
            d2, sol = second_derivative_with_state(q, n_tr=self.n_tr, tol=self.tol, v0=v0)
            value, state = -d2, sol.ground
        self.values[lam] = value
        self._states[lam] = state
        return value


def find_fs_peak(p: ModelParams, bracket: tuple[float, float], tol_lambda: float = 5e-5,
                 evaluator: CurveEvaluator | None = None) -> tuple[float, float]:
    """(lambda_max, chi_f_max) of the average FS at the N and D of ``p``."""
    if evaluator is None:
        evaluator = CurveEvaluator(p.with_lam(0.5 * (bracket[0] + bracket[1])))
    x, y, _ = find_peak(evaluator, bracket, tol_lambda)
    return x, y


# --------------------------------------------------------------------------
# power-law fits

@dataclass
class ScalingFit:
    slope: float
    stderr: float
    intercept: float
    local_slopes: list  # (1/N_eff, slope) for consecutive pairs
    extrapolated_slope: float
    extrapolated_stderr: float
    sign: int = 1
    # local slopes extrapolated linearly in N_eff^(-1/3), the leading
    # correction to scaling at the critical point
    asymptotic_slope: float = float("nan")
    asymptotic_stderr: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def fit_loglog(points: Sequence[tuple[float, float]]) -> ScalingFit:
    """Least-squares slope of log|value| against log N.

    Local slopes between consecutive sizes are attributed to
    1/sqrt(N_i N_{i+1}) and extrapolated linearly to 1/N -> 0
    (``extrapolated_slope``) and linearly in N^(-1/3) (``asymptotic_slope``).
    """
    pts = sorted((float(n), float(v)) for n, v in points)
    if len(pts) < 4:
        raise Degenerate(f"need at least 4 points, got {len(pts)}")
    n = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.any(v == 0) or (np.any(v > 0) and np.any(v < 0)):
        raise SignMixture("values must be strictly of one sign")
    sign = 1 if v[0] > 0 else -1
    x, y = np.log(n), np.log(sign * v)
    slope, intercept = np.polyfit(x, y, 1)
    # stderr from the residuals directly: linregress goes through r**2,
    # which floors it near sqrt(eps) for exact power laws
    resid = y - (slope * x + intercept)
    stderr = math.sqrt(resid @ resid / (len(x) - 2) / np.sum((x - x.mean()) ** 2))
    loc = np.diff(y) / np.diff(x)
    inv = 1 / np.sqrt(n[:-1] * n[1:])
    e_slope, e_err = _extrapolate(inv, loc)
    a_slope, a_err = _extrapolate(np.cbrt(inv), loc)
    return ScalingFit(float(slope), stderr, float(intercept),
                      [(float(a), float(b)) for a, b in zip(inv, loc)], e_slope, e_err, sign,
                      a_slope, a_err)


def _extrapolate(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Intercept of a straight line through (x, y) with its standard error."""
    if len(y) < 3:
        return float(y[-1]), float("nan")
    if np.ptp(y) == 0:
        return float(y[0]), 0.0
    ext = stats.linregress(x, y)
    return float(ext.intercept), float(ext.intercept_stderr)


# --------------------------------------------------------------------------
# data collapse

@dataclass
class CollapseResult:
    nu: float
    lambda_max_per_n: dict
    residual: float
    window: tuple
    support: tuple = ()
    # pair-averaged integral of the squared difference over the support;
    # unlike the mean it cannot grow when the window shrinks
    integrated: float = 0.0


def _peak_of(lam: np.ndarray, val: np.ndarray) -> tuple[float, float]:
    """Parabolic refinement of the discrete maximum."""
    i = int(np.argmax(val))
    if 0 < i < len(val) - 1:
        x = lam[i - 1:i + 2] - lam[i]
        y = val[i - 1:i + 2]
        a, b, c = np.polyfit(x, y, 2)
        if a < 0:
            xm = -b / (2 * a)
            if x[0] <= xm <= x[2]:
                return float(lam[i] + xm), float(np.polyval([a, b, c], xm))
    return float(lam[i]), float(val[i])


def scaled_curves(curves: Mapping[int, tuple], nu: float, peaks: Mapping | None = None):
    """Map each curve to (N^nu (lam - lam_max), (v_max - v)/v)."""
    out = {}
    for n, (lam, val) in curves.items():
        lam = np.asarray(lam, dtype=float)
        val = np.asarray(val, dtype=float)
        order = np.argsort(lam)
        lam, val = lam[order], val[order]
        lm, vm = peaks[n] if peaks and n in peaks else _peak_of(lam, val)
        out[n] = ((lam - lm) * float(n) ** nu, (vm - val) / val, lm, vm)
    return out


def collapse(curves: Mapping[int, tuple], nu: float, window: float = 2.0,
             peaks: Mapping | None = None, n_grid: int = 201) -> CollapseResult:
    """Collapse residual of per-N curves {N: (lam, value)} at exponent nu.

    Residual: mean over curve pairs of the mean squared difference of the
    linearly interpolated scaled curves on their common support inside
    |N^nu (lam - lam_max)| <= window.
    """
    if len(curves) < 3:
        raise Degenerate("need at least 3 system sizes")
    sc = scaled_curves(curves, nu, peaks)
    lo = max(max(x.min() for x, *_ in sc.values()), -window)
    hi = min(min(x.max() for x, *_ in sc.values()), window)
    if not hi > lo:
        raise EmptyCommonSupport(f"scaled abscissae do not overlap at nu={nu}")
    grid = np.linspace(lo, hi, n_grid)
    ys = {n: np.interp(grid, x, y) for n, (x, y, _, _) in sc.items()}
    res = [float(np.mean((ys[a] - ys[b]) ** 2)) for a, b in combinations(sorted(ys), 2)]
    integ = [_integrated_sq_diff(sc[a][:2], sc[b][:2], lo, hi)
             for a, b in combinations(sorted(sc), 2)]
    return CollapseResult(nu, {int(n): (lm, vm) for n, (_, _, lm, vm) in sc.items()},
                          float(np.mean(res)), (-window, window), (float(lo), float(hi)),
                          float(np.mean(integ)))


def _integrated_sq_diff(c1, c2, lo, hi) -> float:
    """Exact integral over [lo, hi] of the squared difference of two polylines."""
    knots = np.concatenate([c1[0], c2[0], [lo, hi]])
    knots = np.unique(knots[(knots >= lo) & (knots <= hi)])
    d = np.interp(knots, *c1) - np.interp(knots, *c2)
    h = np.diff(knots)
    return float(np.sum(h * (d[:-1] ** 2 + d[:-1] * d[1:] + d[1:] ** 2) / 3))


def optimize_nu(curves: Mapping[int, tuple], nu_range=(0.5, 0.9), step: float = 0.01,
                window: float = 2.0, peaks: Mapping | None = None, tol: float = 1e-4):
    """Grid scan of the collapse residual over nu, refined by golden section."""
    lo, hi = nu_range
    if not 0 < lo < hi < 2:
        raise ValueError("nu_range must lie inside (0, 2)")
    nus = np.arange(lo, hi + step / 2, step)
    scan = [collapse(curves, float(nu), window, peaks).residual for nu in nus]
    i = int(np.argmin(scan))
    a = float(nus[max(i - 1, 0)])
    b = float(nus[min(i + 1, len(nus) - 1)])
    nu_best, _ = golden_max(lambda nu: -collapse(curves, nu, window, peaks).residual, a, b, tol)
    best = collapse(curves, nu_best, window, peaks)
    if best.residual > scan[i]:
        best = collapse(curves, float(nus[i]), window, peaks)
    return best.nu, best, (nus, np.array(scan))


def alpha_exponents(mu: float, nu: float) -> float:
    """alpha = mu/nu for chi_F ~ |lam - lam_c|^-alpha."""
    if nu == 0:
        raise ZeroDivisionError("nu must be nonzero")
    return mu / nu


def save_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
