"""Coefficients bounding the p-th Lie derivative of the trigger.

Finds nonnegative ``delta_0 .. delta_p`` with

    (a)  L^p phi(xi) <= sum_{i<p} delta_i L^i phi(xi) + delta_p   for |xi| < d
    (b)  delta_0 phi(z, 0) + delta_p >= eps                       for z in Z

where Z is the ball of radius ``z_radius``. Candidates come from a linear
program over sampled points; condition (a) is then certified by interval
arithmetic on an adaptive box cover of the ball, and condition (b) the same
way on a cover of Z.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .etc_model import EtcSystem, ExtendedSystem
from .interval import BoxEnclosure, box_norm_sq_range
from .polynomial import Polynomial, lie_derivatives, parse_polynomial

log = logging.getLogger(__name__)

INFLATE = 1.5
MAX_ROUNDS = 8
FIRST_MARGIN = 0.02
CUT_ROUNDS = 6


class DeltaCertificationError(RuntimeError):
    """Raised when no candidate could be certified; carries the fallback."""

    def __init__(self, message: str, fallback: "DeltaCertificate | None" = None):
        super().__init__(message)
        self.fallback = fallback


@dataclass(frozen=True, eq=False)
class DeltaCertificate:
    deltas: tuple[float, ...]
    p: int
    d: float
    z_radius: float
    epsilon: float
    lie_phis: tuple[Polynomial, ...]
    e_radius: float | None = None
    n: int = field(default=0)

    def __post_init__(self):
        if len(self.deltas) != self.p + 1:
            raise ValueError("need p + 1 coefficients")
        if any(dl < 0 for dl in self.deltas):
            raise ValueError("coefficients must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if len(self.lie_phis) != self.p + 1:
            raise ValueError("need the Lie chain L^0 phi .. L^p phi")
        if not self.n:
            object.__setattr__(self, "n", self.lie_phis[0].nvars // 2)

    def with_deltas(self, deltas) -> "DeltaCertificate":
        return DeltaCertificate(tuple(float(x) for x in deltas), self.p, self.d, self.z_radius,
                                self.epsilon, self.lie_phis, self.e_radius, self.n)

    def residual(self) -> Polynomial:
        """``L^p phi - sum_{i<p} delta_i L^i phi - delta_p``; condition (a) is ``<= 0``."""
        g = self.lie_phis[self.p]
        for i in range(self.p):
            if self.deltas[i]:
                g = g - self.lie_phis[i].scale(self.deltas[i])
        return g - self.deltas[self.p]

    # serialisation --------------------------------------------------------
    def to_dict(self) -> dict:
        names = _xi_names(self.n)
        return {
            "deltas": list(self.deltas),
            "p": self.p,
            "d": self.d,
            "z_radius": self.z_radius,
            "e_radius": self.e_radius,
            "epsilon": self.epsilon,
            "variables": names,
            "lie_phis": [q.to_text(names) for q in self.lie_phis],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DeltaCertificate":
        names = data["variables"]
        lie = tuple(parse_polynomial(t, names) for t in data["lie_phis"])
        return cls(tuple(data["deltas"]), int(data["p"]), float(data["d"]),
                   float(data["z_radius"]), float(data["epsilon"]), lie,
                   data.get("e_radius"), len(names) // 2)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DeltaCertificate":
        return cls.from_dict(json.loads(text))


def _xi_names(n: int) -> list[str]:
    return [f"z{k + 1}" for k in range(n)] + [f"e{k + 1}" for k in range(n)]


# -------------------------------------------------------------------------
# sampling

def sample_ball(rng: np.random.Generator, n_points: int, dim: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((n_points, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(n_points) ** (1.0 / dim)
    return v * r[:, None]


def _lp_samples(rng, n, d, z_radius, e_radius, n_samples):
    dim = 2 * n
    pts = [sample_ball(rng, n_samples, dim, d)]
    # thin slabs near zero error carry the binding constraints
    sphere = sample_ball(rng, n_samples // 2, dim, 1.0)
    sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
    pts.append(sphere * d)
    z = sample_ball(rng, n_samples // 2, n, d)
    for scale in (0.0, 1e-3, 1e-2, 1e-1):
        e = sample_ball(rng, n_samples // 2, n, scale * d) if scale else np.zeros((n_samples // 2, n))
        zz = z * np.sqrt(np.maximum(0.0, 1 - np.sum(e ** 2, 1) / d ** 2))[:, None]
        pts.append(np.hstack([zz, e]))
    ang = rng.standard_normal((n_samples // 2, n))
    ang /= np.linalg.norm(ang, axis=1, keepdims=True)
    pts.append(np.hstack([ang * d * (1 - 1e-12), np.zeros_like(ang)]))
    return np.vstack(pts)


# -------------------------------------------------------------------------
# interval certification over balls

@dataclass
class BoxSweepResult:
    certified: bool
    boxes: int
    worst_bound: float
    counterexample: np.ndarray | None = None


def certify_on_ball(poly: Polynomial, radius: float, sign: str = "nonpositive",
                    center_dims: int | None = None, min_width_frac: float = 2.0 ** -16,
                    budget: int = 2_000_000, batch: int = 20000) -> BoxSweepResult:
    """Certify ``poly <= 0`` (or ``>= 0``) on the closed ball of ``radius``.

    The bounding cube is bisected along its widest side until each box either
    misses the ball or carries an interval bound of the right sign. A box that
    shrinks below ``radius * min_width_frac`` without certifying, or a box
    whose centre evaluates to the wrong sign, ends the sweep as a failure.
    """
    if sign not in ("nonpositive", "nonnegative"):
        raise ValueError(sign)
    target = poly if sign == "nonpositive" else -poly
    enc = BoxEnclosure(target)
    dim = poly.nvars
    lo = np.full((1, dim), -radius)
    hi = np.full((1, dim), radius)
    processed = 0
    worst = -np.inf
    r2 = radius * radius
    min_width = 2 * radius * min_width_frac
    while lo.shape[0]:
        take = min(batch, lo.shape[0])
        blo, bhi = lo[:take], hi[:take]
        lo, hi = lo[take:], hi[take:]
        processed += take
        if processed > budget:
            return BoxSweepResult(False, processed, worst)
        nlo, _ = box_norm_sq_range(blo, bhi)
        inside = nlo <= r2
        blo, bhi = blo[inside], bhi[inside]
        if not blo.shape[0]:
            continue
        _, ub = enc(blo, bhi)
        open_ = ub > 0
        if not open_.any():
            continue
        blo, bhi, ub = blo[open_], bhi[open_], ub[open_]
        centers = 0.5 * (blo + bhi)
        cin = np.sum(centers ** 2, axis=1) <= r2
        if cin.any():
            vals = target.evaluate(centers[cin])
            if np.any(vals > 0):
                k = int(np.argmax(vals))
                return BoxSweepResult(False, processed, float(vals[k]), centers[cin][k])
        widths = bhi - blo
        wmax = widths.max(axis=1)
        if np.any(wmax < min_width):
            worst = max(worst, float(ub[wmax < min_width].max()))
            return BoxSweepResult(False, processed, worst)
        axis = np.argmax(widths, axis=1)
        rows = np.arange(blo.shape[0])
        mid = 0.5 * (blo[rows, axis] + bhi[rows, axis])
        lo_a, hi_a = blo.copy(), bhi.copy()
        hi_a[rows, axis] = mid
        lo_b, hi_b = blo.copy(), bhi.copy()
        lo_b[rows, axis] = mid
        lo = np.vstack([lo, lo_a, lo_b])
        hi = np.vstack([hi, hi_a, hi_b])
    return BoxSweepResult(True, processed, worst)


def interval_sup_on_ball(poly: Polynomial, radius: float, depth: int = 6) -> float:
    """Rigorous upper bound of ``poly`` on the ball, from a uniform box grid."""
    dim = poly.nvars
    k = 2 ** depth
    edges = np.linspace(-radius, radius, k + 1)
    best = -np.inf
    enc = BoxEnclosure(poly)
    grids = np.stack(np.meshgrid(*([np.arange(k)] * dim), indexing="ij"), -1).reshape(-1, dim)
    for chunk in np.array_split(grids, max(1, grids.shape[0] // 50000)):
        blo, bhi = edges[chunk], edges[chunk + 1]
        nlo, _ = box_norm_sq_range(blo, bhi)
        keep = nlo <= radius * radius
        if keep.any():
            _, ub = enc(blo[keep], bhi[keep])
            best = max(best, float(ub.max()))
    return best


# -------------------------------------------------------------------------

def lie_chain(ext: ExtendedSystem, phi: Polynomial, p: int) -> tuple[Polynomial, ...]:
    return tuple(lie_derivatives(phi, ext.field, p))


def _z_slice(poly: Polynomial, n: int) -> Polynomial:
    """Restrict a polynomial over (z, e) to e = 0, as a polynomial in z."""
    zs = [Polynomial.variable(k, n) for k in range(n)] + [Polynomial.zero(n)] * n
    return poly.compose(zs)


def certify_certificate(cert: DeltaCertificate, budget: int = 2_000_000) -> tuple[bool, str]:
    """Box-sweep proof of both certificate inequalities; returns ``(ok, summary)``."""
    a = certify_on_ball(cert.residual(), cert.d, "nonpositive", budget=budget)
    if not a.certified:
        return False, f"condition (a) not certified ({a.boxes} boxes, bound {a.worst_bound:.3g})"
    n = cert.n
    b_poly = _z_slice(cert.lie_phis[0], n).scale(cert.deltas[0]) + (cert.deltas[cert.p] - cert.epsilon)
    b = certify_on_ball(b_poly, cert.z_radius, "nonnegative", budget=budget)
    if not b.certified:
        return False, f"condition (b) not certified ({b.boxes} boxes)"
    return True, f"certified with {a.boxes + b.boxes} boxes"


def fallback_certificate(ext: ExtendedSystem, phi: Polynomial, p: int, d: float,
                         z_radius: float, epsilon: float, e_radius: float | None = None,
                         depth: int = 5) -> DeltaCertificate:
    """The always-valid choice ``delta_i = 0``, ``delta_p = max(eps, sup L^p phi)``."""
    chain = lie_chain(ext, phi, p)
    sup = interval_sup_on_ball(chain[p], d, depth)
    deltas = [0.0] * p + [max(epsilon, sup)]
    return DeltaCertificate(tuple(deltas), p, d, z_radius, epsilon, chain, e_radius)


def solve_delta(ext: ExtendedSystem, phi: Polynomial, p: int, d: float, z_radius: float,
                epsilon: float, e_radius: float | None = None, n_samples: int = 20000,
                seed: int = 0, budget: int = 2_000_000,
                lower_weight: float = 1e-6) -> DeltaCertificate:
    """Search and certify delta coefficients for the given ball sizes.

    ``e_radius`` is the radius of the error-set proxy (default ``2 * z_radius``,
    the difference set of Z); the ball of radius ``d`` must contain
    ``Z x E``. The linear program minimises ``delta_p`` plus a small penalty
    ``lower_weight`` on the remaining coefficients, each normalised by the
    magnitude of its Lie derivative at ``|xi| = d``.
    """
    if p < 1:
        raise ValueError("order p must be at least 1")
    if d <= 0 or z_radius <= 0 or epsilon <= 0:
        raise ValueError("d, z_radius and epsilon must be positive")
    n = ext.n
    e_radius = 2 * z_radius if e_radius is None else float(e_radius)
    if z_radius ** 2 + e_radius ** 2 >= d ** 2:
        raise ValueError(
            f"Z x E (radii {z_radius}, {e_radius}) does not fit inside the ball of radius {d}"
        )
    chain = lie_chain(ext, phi, p)
    rng = np.random.default_rng(seed)
    pts = _lp_samples(rng, n, d, z_radius, e_radius, n_samples)
    vals = np.stack([q.evaluate(pts) for q in chain], axis=1)
    zpts = np.hstack([sample_ball(rng, n_samples // 4, n, z_radius), np.zeros((n_samples // 4, n))])
    zpts = np.vstack([zpts, np.hstack([_unit(rng, n_samples // 4, n) * z_radius,
                                       np.zeros((n_samples // 4, n))])])
    phi_z = chain[0].evaluate(zpts)

    mags = np.maximum(np.abs(vals).max(axis=0), 1e-300)
    c = np.full(p + 1, 0.0)
    c[p] = 1.0 / mags[p]
    c[:p] = lower_weight / mags[:p]
    A_b = np.zeros((zpts.shape[0], p + 1))
    A_b[:, 0] = -phi_z
    A_b[:, p] = -1.0
    b_b = np.full(zpts.shape[0], -epsilon)
    deltas = None
    for _ in range(CUT_ROUNDS):
        A_a = -np.hstack([vals[:, :p], np.ones((pts.shape[0], 1))])
        b_a = -vals[:, p]
        res = linprog(c, A_ub=np.vstack([A_a, A_b]), b_ub=np.concatenate([b_a, b_b]),
                      bounds=[(0, None)] * (p + 1), method="highs")
        if res.status != 0:
            log.warning("delta LP failed (%s); using fallback", res.message)
            return _certified_fallback(ext, phi, p, d, z_radius, epsilon, e_radius, budget)
        deltas = np.maximum(res.x, 0.0)
        trial = DeltaCertificate(tuple(float(x) for x in deltas), p, d, z_radius, epsilon,
                                 chain, e_radius)
        worst, cuts = _local_maxima(trial.residual(), pts, d, rng)
        if worst <= 0:
            break
        # add the local maximisers as new constraints and re-solve
        pts = np.vstack([pts, cuts])
        vals = np.vstack([vals, np.stack([q.evaluate(cuts) for q in chain], axis=1)])
    else:
        deltas[p] += max(worst, 0.0)
    deltas[p] *= 1 + FIRST_MARGIN
    cert = DeltaCertificate(tuple(float(x) for x in deltas), p, d, z_radius, epsilon, chain, e_radius)
    for rnd in range(MAX_ROUNDS):
        ok, why = certify_certificate(cert, budget)
        log.info("delta round %d: %s (%s)", rnd, "ok" if ok else "failed", why)
        if ok:
            return cert
        deltas = np.array(cert.deltas)
        deltas[p] *= INFLATE
        cert = cert.with_deltas(deltas)
    return _certified_fallback(ext, phi, p, d, z_radius, epsilon, e_radius, budget)


def _certified_fallback(ext, phi, p, d, z_radius, epsilon, e_radius, budget):
    fb = fallback_certificate(ext, phi, p, d, z_radius, epsilon, e_radius)
    ok, why = certify_certificate(fb, budget)
    if ok:
        return fb
    raise DeltaCertificationError(f"fallback certificate could not be re-verified: {why}", fb)


def _local_maxima(g: Polynomial, pts: np.ndarray, radius: float, rng, starts: int = 24):
    """Polish the largest sampled values of ``g`` on the ball by SLSQP."""
    grad = g.gradient()
    vals = g.evaluate(pts)
    order = np.argsort(vals)[::-1][:starts]
    seeds = np.vstack([pts[order], sample_ball(rng, starts, g.nvars, radius)])
    r2 = radius * radius
    found = []
    for x0 in seeds:
        with np.errstate(over="ignore", invalid="ignore"):
            res = minimize(
                lambda x: -g.evaluate(x[None])[0], x0,
                jac=lambda x: -np.array([q.evaluate(x[None])[0] for q in grad]),
                constraints=[{"type": "ineq", "fun": lambda x: r2 - x @ x,
                              "jac": lambda x: -2 * x}],
                method="SLSQP", options={"maxiter": 200, "ftol": 1e-14},
            )
        x = res.x
        if not np.all(np.isfinite(x)):
            continue
        nx = np.linalg.norm(x)
        if nx >= radius:
            x = x * (radius / nx) * (1 - 1e-12)
        found.append(x)
    found = np.array(found).reshape(-1, g.nvars)
    fv = g.evaluate(found) if found.shape[0] else np.array([-np.inf])
    return float(max(fv.max(), vals.max())), found


def _unit(rng, n_points, dim):
    v = rng.standard_normal((n_points, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# -------------------------------------------------------------------------

@dataclass
class DeltaViolationReport:
    n_samples: int
    worst_margin_a: float
    worst_margin_b: float
    violations_a: np.ndarray
    violations_b: np.ndarray

    @property
    def passed(self) -> bool:
        return self.violations_a.shape[0] == 0 and self.violations_b.shape[0] == 0


def verify_delta(cert: DeltaCertificate, n_samples: int = 100000, rng_seed: int = 0,
                 chunk: int = 50000) -> DeltaViolationReport:
    """Monte Carlo check of both inequalities at uniformly sampled points."""
    rng = np.random.default_rng(rng_seed)
    n = cert.n
    p = cert.p
    worst_a, worst_b = math.inf, math.inf
    bad_a, bad_b = [], []
    left = n_samples
    while left > 0:
        m = min(chunk, left)
        left -= m
        xi = sample_ball(rng, m, 2 * n, cert.d)
        vals = [q.evaluate(xi) for q in cert.lie_phis]
        rhs = sum(cert.deltas[i] * vals[i] for i in range(p)) + cert.deltas[p]
        margin = rhs - vals[p]
        worst_a = min(worst_a, float(margin.min()))
        bad_a.append(xi[margin < 0])
        z = sample_ball(rng, m, n, cert.z_radius)
        zx = np.hstack([z, np.zeros_like(z)])
        mb = cert.deltas[0] * cert.lie_phis[0].evaluate(zx) + cert.deltas[p] - cert.epsilon
        worst_b = min(worst_b, float(mb.min()))
        bad_b.append(z[mb < 0])
    empty_a = np.zeros((0, 2 * n))
    empty_b = np.zeros((0, n))
    return DeltaViolationReport(
        n_samples,
        worst_a if n_samples else math.inf,
        worst_b if n_samples else math.inf,
        np.vstack(bad_a) if bad_a else empty_a,
        np.vstack(bad_b) if bad_b else empty_b,
    )


# -------------------------------------------------------------------------

def certify_pretrigger_invariance(sys: EtcSystem, ext: ExtendedSystem,
                                  budget: int = 2_000_000) -> BoxSweepResult:
    """Certify ``z . z' <= 0`` wherever ``|e| <= sigma |z|``.

    By homogeneity it suffices to check ``|z| = 1``; points are written as
    ``e = sigma * w`` with ``|w| <= 1``. The check covers the annulus
    ``0.99 <= |z| <= 1.01`` crossed with the unit ball in ``w``; together with
    the trigger this keeps every inter-sample trajectory inside the ball
    around the origin through its starting point, with error below ``sigma``
    times the state norm.
    """
    n = sys.n
    sigma = math.sqrt(sys.sigma_sq)
    dim = 2 * n
    zs = [Polynomial.variable(k, dim) for k in range(n)]
    es = [Polynomial.variable(n + k, dim).scale(sigma) for k in range(n)]
    fz = [c.compose(zs + es) for c in ext.field.components[:n]]
    g = Polynomial.zero(dim)
    for k in range(n):
        g = g + zs[k] * fz[k]
    enc = BoxEnclosure(g)
    # boxes on a grid in z covering the annulus, w in [-1, 1]^n refined adaptively
    k = 64
    edges = np.linspace(-1.01, 1.01, k + 1)
    idx = np.stack(np.meshgrid(*([np.arange(k)] * n), indexing="ij"), -1).reshape(-1, n)
    zlo, zhi = edges[idx], edges[idx + 1]
    nlo, nhi = box_norm_sq_range(zlo, zhi)
    ring = (nlo <= 1.01 ** 2) & (nhi >= 0.99 ** 2)
    zlo, zhi = zlo[ring], zhi[ring]
    lo = np.hstack([zlo, -np.ones((zlo.shape[0], n))])
    hi = np.hstack([zhi, np.ones((zhi.shape[0], n))])
    processed = 0
    worst = -np.inf
    while lo.shape[0]:
        processed += lo.shape[0]
        if processed > budget:
            return BoxSweepResult(False, processed, worst)
        wlo2, _ = box_norm_sq_range(lo[:, n:], hi[:, n:])
        keep = wlo2 <= 1.0
        lo, hi = lo[keep], hi[keep]
        if not lo.shape[0]:
            break
        _, ub = enc(lo, hi)
        open_ = ub > 0
        lo, hi = lo[open_], hi[open_]
        if not lo.shape[0]:
            break
        worst = max(worst, float(ub[open_].max()))
        widths = hi - lo
        if widths.max() < 1e-4:
            return BoxSweepResult(False, processed, worst)
        axis = np.argmax(widths, axis=1)
        rows = np.arange(lo.shape[0])
        mid = 0.5 * (lo[rows, axis] + hi[rows, axis])
        lo_a, hi_a = lo.copy(), hi.copy()
        hi_a[rows, axis] = mid
        lo_b, hi_b = lo.copy(), hi.copy()
        lo_b[rows, axis] = mid
        lo = np.vstack([lo_a, lo_b])
        hi = np.vstack([hi_a, hi_b])
    return BoxSweepResult(True, processed, worst)
