"""Ball-segment overapproximations of regions.

Each region ``R_{i,j}`` is enclosed in ``{x in C_j : r_inner <= |x| <= r_outer}``.
On a sphere ``|x| = r`` the matrix exponential in ``mu`` is a single numeric
matrix, so the sign of ``mu(r u, tau)`` over a patch of directions reduces
to an interval bound of the direction vector ``y(u)``. Radii are certified
once per cone at the smallest time and carried to the other times by the
homogeneity scaling ``r_i = (tau*/tau_i)^(1/alpha) r*``.

Certification is implemented for planar systems, where direction patches
are angular intervals.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .expm import expm
from .interval import EPS, BoxEnclosure, imul, widen
from .isochron import MuFunction, manifold_radii
from .partition import Cone
from .polynomial import Polynomial

SEED_DIRECTIONS = 64
BRACKET_INFLATION = 0.2
INITIAL_PATCHES = 8
MIN_PATCH = 1e-9
PATCH_BUDGET = 200_000


@dataclass(frozen=True)
class BallSegment:
    band: int
    cone: Cone
    r_inner: float
    r_outer: float

    def __post_init__(self):
        if self.r_inner < 0 or not self.r_inner < self.r_outer:
            raise ValueError(f"need 0 <= r_inner < r_outer, got {self.r_inner}, {self.r_outer}")

    @property
    def key(self) -> tuple[int, int]:
        return (self.band, self.cone.index)

    @property
    def innermost(self) -> bool:
        return self.r_inner == 0.0

    def contains(self, X, rtol: float = 0.0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        r = np.linalg.norm(X, axis=1)
        ok = (r >= self.r_inner * (1 - rtol)) & (r <= self.r_outer * (1 + rtol))
        return ok & self.cone.contains(X)


# -------------------------------------------------------------------------
# direction-patch bounds

def _cos_sin_range(a, b):
    """Interval hulls of cos and sin over ``[a, b]`` (arrays, ``b - a < pi``)."""
    ca, cb, sa, sb = np.cos(a), np.cos(b), np.sin(a), np.sin(b)
    clo, chi = np.minimum(ca, cb), np.maximum(ca, cb)
    slo, shi = np.minimum(sa, sb), np.maximum(sa, sb)

    def hits(phase):
        # does [a, b] contain phase + 2 pi k for some k?
        k = np.ceil((a - phase) / (2 * np.pi))
        return phase + 2 * np.pi * k <= b

    chi = np.where(hits(0.0), 1.0, chi)
    clo = np.where(hits(np.pi), -1.0, clo)
    shi = np.where(hits(np.pi / 2), 1.0, shi)
    slo = np.where(hits(-np.pi / 2), -1.0, slo)
    clo, chi = widen(clo, chi, 8 * EPS)
    slo, shi = widen(slo, shi, 8 * EPS)
    return clo, chi, slo, shi


class _RayPolynomial:
    """Rigorous bounds of ``P(rho cos t, rho sin t)`` for ``t`` in intervals."""

    def __init__(self, P: Polynomial, rho: float):
        self.enc = BoxEnclosure(P, mean_value=False)
        self.grad = [BoxEnclosure(g, mean_value=False) for g in P.gradient()]
        self.rho = rho
        self.constant = P.degree <= 0

    def bounds(self, a, b):
        rho = self.rho
        clo, chi, slo, shi = _cos_sin_range(a, b)
        lo_box = np.stack([rho * clo, rho * slo], axis=1)
        hi_box = np.stack([rho * chi, rho * shi], axis=1)
        lo_box, _ = widen(lo_box, lo_box, 2 * EPS)
        _, hi_box = widen(hi_box, hi_box, 2 * EPS)
        nlo, nhi = self.enc.natural(lo_box, hi_box)
        if self.constant:
            return nlo, nhi
        # mean-value form in the angle
        c = 0.5 * (a + b)
        half = 0.5 * (b - a)
        cc, sc = np.cos(c), np.sin(c)
        pc_lo = np.stack([rho * cc, rho * sc], axis=1)
        pc_lo, pc_hi = widen(pc_lo, pc_lo, 4 * EPS)
        vlo, vhi = self.enc.natural(pc_lo, pc_hi)
        # d/dt P = rho * (-sin t * P_x + cos t * P_y)
        gxlo, gxhi = self.grad[0].natural(lo_box, hi_box)
        gylo, gyhi = self.grad[1].natural(lo_box, hi_box)
        t1lo, t1hi = imul(gxlo, gxhi, -shi, -slo)
        t2lo, t2hi = imul(gylo, gyhi, clo, chi)
        dlo, dhi = widen(rho * (t1lo + t2lo), rho * (t1hi + t2hi), 4 * EPS)
        mlo, mhi = imul(dlo, dhi, -half, half)
        mvlo, mvhi = widen(vlo + mlo, vhi + mhi, 4 * EPS)
        return np.maximum(nlo, mvlo), np.minimum(nhi, mvhi)


class SphereSign:
    """Sign certificates for ``mu(r u, tau)`` over angular patches."""

    def __init__(self, mu: MuFunction):
        if mu.n != 2:
            raise NotImplementedError("sphere certification is implemented for planar systems")
        self.mu = mu
        n = mu.n
        zs = [Polynomial.variable(k, n) for k in range(n)] + [Polynomial.zero(n)] * n
        self.rays = [_RayPolynomial(q.compose(zs), mu.rho) for q in mu.cert.lie_phis[:mu.p]]

    def weights(self, r: float, tau: float) -> np.ndarray:
        T = (r / self.mu.rho) ** self.mu.alpha * tau
        return expm(self.mu.A * T)[0]

    def bounds(self, w: np.ndarray, a, b):
        """Interval of ``w . y(u)`` over patches ``[a, b]``."""
        p = self.mu.p
        lo = np.zeros(np.size(a))
        hi = np.zeros(np.size(a))
        mag = np.zeros(np.size(a))
        for k in range(p):
            ylo, yhi = self.rays[k].bounds(a, b)
            if k > 0:
                ylo, yhi = np.maximum(ylo, 0.0), np.maximum(yhi, 0.0)
            plo, phi = imul(np.full_like(ylo, w[k]), np.full_like(yhi, w[k]), ylo, yhi)
            lo, hi = lo + plo, hi + phi
            mag = mag + np.maximum(np.abs(plo), np.abs(phi))
        last = w[p] * self.mu.cert.deltas[p]
        lo, hi = lo + last, hi + last
        mag = mag + abs(last)
        # expm is accurate to a few ulps relative to the weights' magnitude
        slack = 1e-12 * mag + (p + 3) * EPS * mag
        return lo - slack, hi + slack

    def certify(self, cone: Cone, r: float, tau: float, sign: str,
                budget: int = PATCH_BUDGET) -> bool | None:
        """True if certified, False if refuted, None if indeterminate."""
        if cone.angles is None:
            raise NotImplementedError("cone has no angular description")
        if not r > 0:
            raise ValueError("radius must be positive")
        w = self.weights(r, tau)
        a0, b0 = cone.angles
        edges = np.linspace(a0, b0, INITIAL_PATCHES + 1)
        a, b = edges[:-1], edges[1:]
        used = 0
        while a.size:
            used += a.size
            if used > budget:
                return None
            lo, hi = self.bounds(w, a, b)
            if sign == "nonpositive":
                open_ = hi > 0
            else:
                open_ = lo < 0
            a, b = a[open_], b[open_]
            if not a.size:
                return True
            # a wrong-signed patch midpoint settles the matter
            mid = 0.5 * (a + b)
            g = self.point_values(w, mid)
            if (sign == "nonpositive" and np.any(g > 0)) or (sign == "nonnegative" and np.any(g < 0)):
                return False
            if np.any(b - a < MIN_PATCH):
                return None
            a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
        return True

    def point_values(self, w, angles) -> np.ndarray:
        U = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return self.mu.lie_vector(U) @ w


def certify_inner_radius(mu: MuFunction, cone: Cone, tau_star: float, r: float,
                         checker: SphereSign | None = None) -> bool:
    """``mu(r u, tau_star) <= 0`` for every direction ``u`` of the cone."""
    checker = checker or SphereSign(mu)
    return checker.certify(cone, r, tau_star, "nonpositive") is True


def certify_outer_radius(mu: MuFunction, cone: Cone, tau_star: float, r: float,
                         checker: SphereSign | None = None) -> bool:
    """``mu(r u, tau_star) >= 0`` for every direction ``u`` of the cone."""
    checker = checker or SphereSign(mu)
    return checker.certify(cone, r, tau_star, "nonnegative") is True


def seed_radii(mu: MuFunction, cone: Cone, tau_star: float,
               n_seeds: int = SEED_DIRECTIONS) -> np.ndarray:
    a, b = cone.angles
    ang = np.linspace(a, b, n_seeds)
    return manifold_radii(mu, np.stack([np.cos(ang), np.sin(ang)], axis=1), tau_star)


def bisect_radii(mu: MuFunction, cone: Cone, tau_star: float, tol: float = 1e-3,
                 checker: SphereSign | None = None,
                 n_seeds: int = SEED_DIRECTIONS) -> tuple[float, float]:
    """Largest certified inner and smallest certified outer radius.

    ``tol`` is relative to the midpoint of the seed bracket.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    checker = checker or SphereSign(mu)
    radii = seed_radii(mu, cone, tau_star, n_seeds)
    r_lo = float(radii.min()) * (1 - BRACKET_INFLATION)
    r_hi = float(radii.max()) * (1 + BRACKET_INFLATION)
    width = tol * 0.5 * (r_lo + r_hi)
    for _ in range(20):
        if checker.certify(cone, r_lo, tau_star, "nonpositive") is True:
            break
        r_lo *= 0.5
    else:
        raise RuntimeError(f"no certified inner radius for cone {cone.index}")
    for _ in range(20):
        if checker.certify(cone, r_hi, tau_star, "nonnegative") is True:
            break
        r_hi *= 2.0
    else:
        raise RuntimeError(f"no certified outer radius for cone {cone.index}")

    good, bad = r_lo, r_hi
    while bad - good > width:
        mid = 0.5 * (good + bad)
        if checker.certify(cone, mid, tau_star, "nonpositive") is True:
            good = mid
        else:
            bad = mid
    r_inner = good
    good, bad = r_hi, r_lo
    while good - bad > width:
        mid = 0.5 * (good + bad)
        if checker.certify(cone, mid, tau_star, "nonnegative") is True:
            good = mid
        else:
            bad = mid
    return r_inner, good


def scale_radii(r_star: float, tau_star: float, tau_i: float, alpha: float) -> float:
    if min(r_star, tau_star, tau_i, alpha) <= 0:
        raise ValueError("all arguments must be positive")
    return r_star * (tau_star / tau_i) ** (1.0 / alpha)


def build_ball_segments(mu: MuFunction, cones: Sequence[Cone], times: Sequence[float],
                        tol: float = 1e-3, map_fn=map) -> dict[tuple[int, int], BallSegment]:
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    tau_star = times[0]
    checker = SphereSign(mu)
    radii = list(map_fn(lambda c: bisect_radii(mu, c, tau_star, tol, checker), cones))
    segments = {}
    q = len(times)
    for cone, (r_in, r_out) in zip(cones, radii):
        for i in range(q):
            outer = scale_radii(r_out, tau_star, times[i], mu.alpha)
            inner = scale_radii(r_in, tau_star, times[i + 1], mu.alpha) if i + 1 < q else 0.0
            segments[(i + 1, cone.index)] = BallSegment(i + 1, cone, inner, outer)
    return segments


def segments_csv(segments) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "r_inner", "r_outer"])
    for (i, j), s in sorted(segments.items()):
        w.writerow([i, j, repr(s.r_inner), repr(s.r_outer)])
    return buf.getvalue()


# -------------------------------------------------------------------------
# SMT-LIB emission

def _smt_num(c: float) -> str:
    f = Fraction(c)
    body = str(abs(f.numerator)) + ".0" if f.denominator == 1 else \
        f"(/ {abs(f.numerator)}.0 {f.denominator}.0)"
    return f"(- {body})" if f < 0 else body


def _smt_poly(P: Polynomial, names: Sequence[str]) -> str:
    if P.is_zero():
        return "0.0"
    terms = []
    for exp, c in P.items():
        factors = [_smt_num(c)]
        for name, e in zip(names, exp):
            factors.extend([name] * e)
        terms.append(factors[0] if len(factors) == 1 else f"(* {' '.join(factors)})")
    return terms[0] if len(terms) == 1 else f"(+ {' '.join(terms)})"


def smtlib_query(mu: MuFunction, cone: Cone, tau_star: float, r: float,
                 kind: str = "inner") -> str:
    """SMT-LIB query whose unsatisfiability certifies the radius.

    The query asks for a point of the cone on the sphere of radius ``r``
    where ``mu`` has the wrong sign.
    """
    if kind not in ("inner", "outer"):
        raise ValueError(kind)
    n = mu.n
    names = [f"x{k + 1}" for k in range(n)]
    scale = Fraction(mu.rho) / Fraction(r)
    zs = [Polynomial.variable(k, n).scale(float(scale)) for k in range(n)] + [Polynomial.zero(n)] * n
    w = expm(mu.A * ((r / mu.rho) ** mu.alpha * tau_star))[0]
    lines = ["(set-logic QF_NRA)"] + [f"(declare-fun {x} () Real)" for x in names]
    lines.append(f"(assert (= (+ {' '.join(f'(* {x} {x})' for x in names)}) {_smt_num(r * r)}))")
    for row in cone.E:
        lin = " ".join(f"(* {_smt_num(float(v))} {x})" for v, x in zip(row, names))
        lines.append(f"(assert (>= (+ {lin}) 0.0))")
    parts = []
    for k in range(mu.p):
        yk = _smt_poly(mu.cert.lie_phis[k].compose(zs), names)
        if k > 0:
            yk = f"(ite (> {yk} 0.0) {yk} 0.0)"
        parts.append(f"(* {_smt_num(float(w[k]))} {yk})")
    parts.append(_smt_num(float(w[mu.p] * mu.cert.deltas[mu.p])))
    g = f"(+ {' '.join(parts)})"
    rel = ">" if kind == "inner" else "<"
    lines.append(f"(assert ({rel} {g} 0.0))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"
