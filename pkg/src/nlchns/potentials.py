"""Singular double-well potentials and their clamped-derivative regularisation.

The regularised ``F_eps = F_1eps + F_2eps`` agrees with ``F`` on
``[-1+eps, 1-eps]``; beyond the clamp points ``F_1eps`` is the degree-``p``
Taylor polynomial of ``F_1`` (its ``p``-th derivative frozen at the clamp
value) and ``F_2eps`` the degree-2 Taylor polynomial of ``F_2``.  All pieces
are closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .reports import CheckReport

SAMPLES_PER_UNIT = 2048
EPS_MAX = 0.5


def sample_open_interval(lo: float, hi: float, per_unit: int = SAMPLES_PER_UNIT) -> np.ndarray:
    n = max(int(round((hi - lo) * per_unit)), 2)
    return np.linspace(lo, hi, n + 1)[1:-1]


def sample_closed_interval(lo: float, hi: float, per_unit: int = SAMPLES_PER_UNIT) -> np.ndarray:
    n = max(int(round((hi - lo) * per_unit)), 2)
    return np.linspace(lo, hi, n + 1)


class SingularPotential:
    """``F = F_1 + F_2`` on (-1, 1) with ``F_1`` singular at the endpoints."""

    p: int

    def f1_deriv(self, k: int, s):
        raise NotImplementedError

    def f2_deriv(self, k: int, s):
        raise NotImplementedError

    def value(self, s):
        return self.f1_deriv(0, s) + self.f2_deriv(0, s)

    def d1(self, s):
        return self.f1_deriv(1, s) + self.f2_deriv(1, s)

    def d2(self, s):
        return self.f1_deriv(2, s) + self.f2_deriv(2, s)


@dataclass(frozen=True)
class LogarithmicPotential(SingularPotential):
    """``F(s) = theta/2 ((1+s)log(1+s) + (1-s)log(1-s)) - theta_c/2 s^2``."""

    theta: float = 0.8
    theta_c: float = 1.0
    p: int = 4

    def __post_init__(self):
        if self.p < 3:
            raise ValueError("clamping order p must be an integer >= 3")

    def f1_deriv(self, k: int, s):
        s = np.asarray(s, dtype=float)
        th = self.theta
        if k == 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                a = np.where(s > -1, (1 + s) * np.log1p(np.maximum(s, -1 + 1e-300)), 0.0)
                b = np.where(s < 1, (1 - s) * np.log1p(-np.minimum(s, 1 - 1e-300)), 0.0)
            return 0.5 * th * (a + b)
        if k == 1:
            return th * np.arctanh(s)
        # k >= 2: theta/2 (k-2)! [(-1)^k (1+s)^(1-k) + (1-s)^(1-k)]
        c = 0.5 * th * math.factorial(k - 2)
        return c * ((-1) ** k * (1 + s) ** (1 - k) + (1 - s) ** (1 - k))

    def f2_deriv(self, k: int, s):
        s = np.asarray(s, dtype=float)
        if k == 0:
            return -0.5 * self.theta_c * s * s
        if k == 1:
            return -self.theta_c * s
        if k == 2:
            return np.full_like(s, -self.theta_c)
        return np.zeros_like(s)

    def to_dict(self) -> dict:
        return {"kind": "logarithmic", "theta": self.theta, "theta_c": self.theta_c, "p": self.p}


class RegularPotential:
    """``F_eps`` defined on all of R from a :class:`SingularPotential`."""

    def __init__(self, parent: SingularPotential, eps: float, eps_max: float = EPS_MAX):
        if not (0 < eps <= eps_max):
            raise ValueError(f"eps must lie in (0, {eps_max}], got {eps}")
        self.parent = parent
        self.eps = float(eps)
        self.p = parent.p
        s0 = 1.0 - self.eps
        self.clamp = s0
        pts = np.array([s0, -s0])
        # Taylor data at +-(1 - eps): F_1 up to order p, F_2 up to order 2
        self._t1 = np.array([parent.f1_deriv(k, pts) for k in range(self.p + 1)])
        self._t2 = np.array([parent.f2_deriv(k, pts) for k in range(3)])

    @staticmethod
    def _taylor(coeffs, ds, order, k):
        """k-th derivative of ``sum_{m<=order} coeffs[m] ds^m / m!``."""
        out = np.zeros_like(ds)
        for m in range(order, k - 1, -1):
            out = out * ds / (m - k + 1) + coeffs[m]
        return out

    def _piecewise(self, s, k, inner, taylor, order):
        s = np.asarray(s, dtype=float)
        s0 = self.clamp
        if s.size and np.abs(s).max() <= s0:
            return inner(k, s)
        hi, lo = s > s0, s < -s0
        mid = ~(hi | lo)
        out = np.empty_like(s)
        if np.any(mid):
            out[mid] = inner(k, s[mid])
        if np.any(hi):
            out[hi] = self._taylor(taylor[:, 0], s[hi] - s0, order, k)
        if np.any(lo):
            out[lo] = self._taylor(taylor[:, 1], s[lo] + s0, order, k)
        return out

    def _inner_only(self, deriv, s, k):
        # derivatives above the Taylor order vanish outside the window
        s = np.asarray(s, dtype=float)
        c = self.clamp
        return np.where(np.abs(s) <= c, deriv(k, np.clip(s, -c, c)), 0.0)

    def f1(self, s, k: int = 0):
        if k > self.p:
            return self._inner_only(self.parent.f1_deriv, s, k)
        return self._piecewise(s, k, self.parent.f1_deriv, self._t1, self.p)

    def f2(self, s, k: int = 0):
        if k > 2:
            return self._inner_only(self.parent.f2_deriv, s, k)
        return self._piecewise(s, k, self.parent.f2_deriv, self._t2, 2)

    def value(self, s):
        return self.f1(s, 0) + self.f2(s, 0)

    def d1(self, s):
        return self.f1(s, 1) + self.f2(s, 1)

    def d2(self, s):
        return self.f1(s, 2) + self.f2(s, 2)

    def convex_companion(self, a_inf: float):
        """``G_eps(s) = F_eps(s) + a_inf/2 s^2`` with its second derivative."""
        return (lambda s: self.value(s) + 0.5 * a_inf * np.asarray(s) ** 2,
                lambda s: self.d2(s) + a_inf)


def regularize(F: SingularPotential, eps: float, eps_max: float = EPS_MAX) -> RegularPotential:
    return RegularPotential(F, eps, eps_max)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

def _window_checks(F: SingularPotential, eps0: float):
    right = sample_closed_interval(1.0 - eps0, 1.0)[:-1]
    left = sample_closed_interval(-1.0, -1.0 + eps0)[1:]
    p = F.p
    dp_r, dp_l = F.f1_deriv(p, right), F.f1_deriv(p, left)
    c1 = float(min(dp_r.min(), dp_l.min()))
    growth_ok = c1 > 0
    signs_ok = True
    bad_signs = []
    for k in range(p + 1):
        if np.any(F.f1_deriv(k, right) < 0):
            signs_ok = False
            bad_signs.append(f"F1^({k}) < 0 near +1")
    for j in range((p - 2) // 2 + 1):
        if 2 * j + 2 <= p and np.any(F.f1_deriv(2 * j + 2, left) < 0):
            signs_ok = False
            bad_signs.append(f"F1^({2 * j + 2}) < 0 near -1")
        if 2 * j + 1 <= p and np.any(F.f1_deriv(2 * j + 1, left) > 0):
            signs_ok = False
            bad_signs.append(f"F1^({2 * j + 1}) > 0 near -1")
    monotone_ok = bool(np.all(np.diff(dp_r) >= 0) and np.all(np.diff(dp_l) <= 0))
    return growth_ok, c1, signs_ok, bad_signs, monotone_ok


def check_singular_assumptions(F: SingularPotential) -> CheckReport:
    """Sampled evidence for the endpoint assumptions on ``F_1`` and the empirical ``eps0`` window."""
    ks = np.arange(3, 9)
    right = F.f1_deriv(1, 1 - 10.0 ** -ks)
    left = F.f1_deriv(1, -1 + 10.0 ** -ks)
    # divergence evidence: strictly monotone with increments that do not die out
    dr, dl = np.diff(right), np.diff(left)
    diverges = bool(right[0] > 0 > left[0] and np.all(dr > 0) and np.all(dl < 0)
              and dr.min() > 0.1 * dr[0] and dl.max() < 0.1 * dl[0])
    windows = [0.9, 0.75, 0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.025, 0.01]
    best = None
    per_window = {}
    for e0 in windows:
        growth_ok, c1, signs_ok, bad_signs, monotone_ok = _window_checks(F, e0)
        per_window[e0] = {"endpoint_growth_order": growth_ok, "c1": c1, "endpoint_derivative_signs": signs_ok, "endpoint_monotone_growth": monotone_ok}
        if growth_ok and signs_ok and monotone_ok and best is None:
            best = (e0, c1)
    e_small = windows[-1]
    growth_ok, c1, signs_ok, bad_signs, monotone_ok = _window_checks(F, e_small)
    growth_msg = ""
    if not growth_ok:
        growth_msg = (f"F1^({F.p}) is not bounded below by a positive constant near both endpoints; "
                "odd p cannot satisfy this for an even F1, use an even p (default 4)")
    children = [
        CheckReport("endpoint_growth_order", growth_ok, {"c1_on_smallest_window": c1, "p": F.p}, message=growth_msg),
        CheckReport("endpoint_derivative_signs", signs_ok, {"violations": bad_signs}),
        CheckReport("endpoint_monotone_growth", monotone_ok, {}),
        CheckReport("endpoint_divergence", diverges, {"k": ks.tolist(), "F1prime_near_plus1": right.tolist(), "F1prime_near_minus1": left.tolist()}),
    ]
    details = {"eps0_window": None if best is None else best[0],
               "c1": None if best is None else best[1],
               "note": "passes on sample", "windows": {str(k): v for k, v in per_window.items()}}
    if isinstance(F, LogarithmicPotential):
        ok = 0 < F.theta < F.theta_c
        children.insert(0, CheckReport("log_temperature_range", ok,
                                       {"theta": F.theta, "theta_c": F.theta_c},
                                       message="" if ok else "requires 0 < theta < theta_c"))
    return CheckReport.group("singular_potential", children, **details)


def clamp_smoothness(Fe: RegularPotential, h: float = 1e-9) -> dict:
    """Relative one-sided derivative mismatches at the clamp points.

    Each derivative is evaluated a distance ``h`` on either side of the clamp
    point through the public oracles; the first-order drift ``2h |f^(k+1)|``
    is discounted so only a genuine jump remains.
    """
    out = {}
    parts = (("F1", Fe.f1, Fe.p), ("F2", Fe.f2, 2))
    for label, fn, order in parts:
        for k in range(order):
            worst = 0.0
            for sgn in (1.0, -1.0):
                x = sgn * Fe.clamp
                inner = fn(np.array([x - sgn * h]), k)[0]
                outer = fn(np.array([x + sgn * h]), k)[0]
                slope = max(abs(fn(np.array([x - sgn * h]), k + 1)[0]),
                            abs(fn(np.array([x + sgn * h]), k + 1)[0]))
                jump = max(abs(inner - outer) - 2.0 * h * slope * 1.01, 0.0)
                worst = max(worst, jump / max(1.0, abs(inner)))
            out[f"{label}_order{k}"] = worst
    return out


def growth_constants(Fe: RegularPotential, S: float = 5.0):
    """Brute-force ``(C_p, D_p)`` with ``F_eps(s) >= C_p |s|^p - D_p``."""
    s = sample_closed_interval(-S, S)
    vals = Fe.value(s)
    far = np.abs(s) >= 2.0
    cp = float(np.min(vals[far] / (np.abs(s[far]) ** Fe.p + 1.0)))
    dp = max(0.0, cp * 2.0 ** Fe.p - float(np.min(vals)))
    return cp, dp


def check_regularized_bounds(Fe: RegularPotential, kernel_report: CheckReport, S: float = 5.0,
                             F_prev: RegularPotential | None = None) -> CheckReport:
    """Sampled checks of the properties of ``F_eps`` the existence argument relies on."""
    inf_a = kernel_report.details["inf_a"]
    a_inf = kernel_report.details["a_inf"]
    c0 = kernel_report.details.get("c0")
    s = sample_closed_interval(-S, S)
    d2 = Fe.d2(s)
    children = []

    coer = d2 + inf_a
    if c0 is None:
        c0 = float(np.min(coer))
    viol = int(np.sum(coer < c0 - 1e-9))
    children.append(CheckReport("coercivity", viol == 0 and c0 > 0,
                                {"c0": c0, "min_F2_plus_inf_a": float(np.min(coer)), "violations": viol,
                                 "samples": len(s)}))

    cp, dp = growth_constants(Fe, S)
    grow_viol = int(np.sum(Fe.value(s) < cp * np.abs(s) ** Fe.p - dp - 1e-12))
    children.append(CheckReport("growth", cp > 0 and grow_viol == 0,
                                {"C_p": cp, "D_p": dp, "violations": grow_viol}))

    g2 = d2 + a_inf
    conv_viol = int(np.sum(g2 < -1e-9))
    children.append(CheckReport("G_convexity", conv_viol == 0,
                                {"min_G2": float(np.min(g2)), "violations": conv_viol}))

    inside = sample_open_interval(-1.0, 1.0)
    f1 = Fe.parent.f1_deriv(0, inside)
    f1e = Fe.f1(inside, 0)
    bF = int(np.sum(f1e > f1 + 1e-12 * np.maximum(1.0, np.abs(f1))))
    children.append(CheckReport("F1eps_below_F1", bF == 0, {"violations": bF}))
    g1 = np.abs(Fe.parent.f1_deriv(1, inside))
    g1e = np.abs(Fe.f1(inside, 1))
    bFp = int(np.sum(g1e > g1 + 1e-12 * np.maximum(1.0, g1)))
    children.append(CheckReport("F1eps_prime_below_F1_prime", bFp == 0, {"violations": bFp}))

    window = np.abs(inside) <= Fe.clamp
    exact = bool(np.all(Fe.value(inside[window]) == Fe.parent.value(inside[window])))
    children.append(CheckReport("agrees_inside_window", exact, {"samples": int(window.sum())}))

    smooth = clamp_smoothness(Fe)
    worst = max(smooth.values())
    children.append(CheckReport("clamp_smoothness", worst <= 1e-9, {"mismatch": smooth}))

    if F_prev is not None:
        # monotone improvement: F_1eps <= F_1eps' <= F_1 for eps' < eps
        lo, hi = (F_prev, Fe) if F_prev.eps > Fe.eps else (Fe, F_prev)
        mono = int(np.sum(lo.f1(inside) > hi.f1(inside) + 1e-12 * np.maximum(1, np.abs(hi.f1(inside)))))
        children.append(CheckReport("monotone_in_eps", mono == 0, {"violations": mono}))

    return CheckReport.group("regularized_potential", children, eps=Fe.eps, p=Fe.p,
                             note="passes on sample", samples_per_unit=SAMPLES_PER_UNIT)
