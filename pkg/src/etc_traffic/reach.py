"""Validated flowpipes of the extended system, certified upper bounds of
inter-event times and the transition relation between ball segments.

Every set is a union of axis-aligned boxes. One integration step of length
``h`` from a box ``X`` first finds an a-priori enclosure ``B`` with
``X + [0, h] F(B) ⊆ B`` (so ``B`` holds every trajectory over the step, by the
Picard-Lindelöf argument), then tightens the end point to
``X + h F(B) ∩ B``. All interval operations round outward.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .etc_model import BatchOracle, EtcSystem, ExtendedSystem
from .interval import EPS, BoxEnclosure, imul, widen
from .overapprox import BallSegment, _cos_sin_range
from .polynomial import PolyVectorField, Polynomial

log = logging.getLogger(__name__)

LINE_SEARCH_GRID = (1.25, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0)


class FlowpipeError(RuntimeError):
    """Raised when an enclosure cannot be validated or grows past its bound."""


@dataclass(frozen=True)
class ReachParams:
    n_r: int = 4
    n_theta: int = 8
    growth_cap: float = 0.02
    h_initial: float = 1e-4
    h_min: float = 1e-12
    picard_iters: int = 8
    max_diameter: float = 1e3
    refine_depth: int = 3
    bisect_steps: int = 4
    grid: tuple[float, ...] = LINE_SEARCH_GRID

    def __post_init__(self):
        if self.n_r < 1 or self.n_theta < 1:
            raise ValueError("cell grid must be at least 1 x 1")
        if not 0 < self.growth_cap:
            raise ValueError("growth_cap must be positive")
        if self.refine_depth < 0 or self.bisect_steps < 0:
            raise ValueError("refine_depth and bisect_steps must be nonnegative")
        if not self.grid or any(g <= 1 for g in self.grid) or list(self.grid) != sorted(self.grid):
            raise ValueError("line-search grid must be increasing factors above 1")


@dataclass
class FlowpipeSegment:
    """Boxes (one row per initial cell) enclosing the flow over ``[t_a, t_b]``."""

    t_a: float
    t_b: float
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if not self.t_a < self.t_b:
            raise ValueError("segment needs t_a < t_b")
        if np.any(self.lo > self.hi):
            raise ValueError("empty enclosure")

    @property
    def time_interval(self) -> tuple[float, float]:
        return (self.t_a, self.t_b)


@dataclass
class ReachResult:
    segments: list[FlowpipeSegment]
    terminal_lo: np.ndarray
    terminal_hi: np.ndarray
    sound: bool = True

    def covering(self, t: float) -> list[FlowpipeSegment]:
        return [s for s in self.segments if s.t_a <= t <= s.t_b]


# -------------------------------------------------------------------------
# interval evaluation of a vector field

class FieldEnclosure:
    def __init__(self, field: PolyVectorField):
        if not field.is_square:
            raise ValueError("flowpipes need a square vector field")
        self.field = field
        self.dim = field.dimension
        self.encs = [BoxEnclosure(c) for c in field.components]

    def __call__(self, lo, hi):
        out_lo = np.empty_like(lo)
        out_hi = np.empty_like(hi)
        for k, enc in enumerate(self.encs):
            out_lo[:, k], out_hi[:, k] = enc(lo, hi)
        return out_lo, out_hi


def _axpy(xlo, xhi, h, flo, fhi):
    """Outward-rounded ``X + h * F`` for scalar or per-row ``h >= 0``."""
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    return widen(xlo + h * flo, xhi + h * fhi, 3 * EPS)


def _axpy_hull(xlo, xhi, h, flo, fhi):
    """``X + [0, h] * F``."""
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    return widen(xlo + h * np.minimum(flo, 0.0), xhi + h * np.maximum(fhi, 0.0), 3 * EPS)


class Tube:
    """Flowpipe of a batch of initial boxes on a shared time grid."""

    def __init__(self, fenc: FieldEnclosure, lo, hi, params: ReachParams = ReachParams()):
        self.fenc = fenc
        self.params = params
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or lo.shape[1] != fenc.dim:
            raise ValueError("initial boxes do not match the field dimension")
        self.times = [0.0]
        self.X = [(lo.copy(), hi.copy())]
        self.B: list[tuple[np.ndarray, np.ndarray]] = []
        self.FB: list[tuple[np.ndarray, np.ndarray]] = []
        self.h = params.h_initial
        self.sound = True

    @property
    def n_boxes(self) -> int:
        return self.X[0][0].shape[0]

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def _apriori(self, xlo, xhi, h):
        flo, fhi = self.fenc(xlo, xhi)
        blo, bhi = _axpy_hull(xlo, xhi, h, flo, fhi)
        for _ in range(self.params.picard_iters):
            w = bhi - blo
            pad = 0.1 * w + 1e-12 * (1.0 + np.abs(blo) + np.abs(bhi))
            clo, chi = blo - pad, bhi + pad
            flo, fhi = self.fenc(clo, chi)
            nlo, nhi = _axpy_hull(xlo, xhi, h, flo, fhi)
            if np.all(nlo >= clo) and np.all(nhi <= chi):
                # the tighter image is itself a valid enclosure
                flo, fhi = self.fenc(nlo, nhi)
                return nlo, nhi, flo, fhi
            blo, bhi = nlo, nhi
        return None

    def step(self):
        xlo, xhi = self.X[-1]
        scale = np.maximum((xhi - xlo).max(axis=1), 1e-9 * (1.0 + np.abs(xlo).max(axis=1)))
        h = self.h
        while True:
            if h < self.params.h_min:
                self.sound = False
                raise FlowpipeError(f"step size underflow at t = {self.t_end:.6g}")
            res = self._apriori(xlo, xhi, h)
            if res is None:
                h *= 0.5
                continue
            blo, bhi, flo, fhi = res
            nlo, nhi = _axpy(xlo, xhi, h, flo, fhi)
            nlo, nhi = np.maximum(nlo, blo), np.minimum(nhi, bhi)
            growth = float(((nhi - nlo).max(axis=1) / scale).max() - 1.0)
            if growth > self.params.growth_cap and h > 1e-3 * self.h:
                h *= 0.5
                continue
            break
        diam = (bhi - blo).max(axis=1)
        if np.any(diam > self.params.max_diameter):
            bad = int(np.argmax(diam))
            self.sound = False
            raise FlowpipeError(
                f"enclosure of box {bad} exceeded diameter {self.params.max_diameter} "
                f"at t = {self.t_end:.6g}")
        self.B.append((blo, bhi))
        self.FB.append((flo, fhi))
        self.X.append((nlo, nhi))
        self.times.append(self.t_end + h)
        self.h = h * 1.5 if growth < 0.5 * self.params.growth_cap else h

    def extend_to(self, t: float):
        while self.t_end < t:
            self.step()

    def boxes_at(self, t: float):
        """Boxes enclosing the flow at time ``t`` (extends the tube as needed)."""
        if t < 0:
            raise ValueError("time must be nonnegative")
        self.extend_to(t)
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        if self.times[k] == t:
            return self.X[k]
        k = min(k, len(self.B) - 1)
        xlo, xhi = self.X[k]
        blo, bhi = self.B[k]
        flo, fhi = self.FB[k]
        lo, hi = _axpy(xlo, xhi, t - self.times[k], flo, fhi)
        return np.maximum(lo, blo), np.minimum(hi, bhi)

    def segments(self, t_a: float = 0.0, t_b: float | None = None) -> list[FlowpipeSegment]:
        t_b = self.t_end if t_b is None else t_b
        self.extend_to(t_b)
        out = []
        for k, (blo, bhi) in enumerate(self.B):
            a, b = self.times[k], self.times[k + 1]
            if b >= t_a and a <= t_b:
                out.append(FlowpipeSegment(a, b, blo, bhi))
        return out

    def result(self, t_end: float) -> ReachResult:
        segs = self.segments(0.0, t_end) if t_end > 0 else []
        lo, hi = self.boxes_at(t_end)
        return ReachResult(segs, lo, hi, self.sound)


# -------------------------------------------------------------------------
# initial cells

@dataclass
class Cells:
    """Polar cells ``[r1, r2] x [a1, a2]`` of a planar annulus sector."""

    r1: np.ndarray
    r2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    depth: np.ndarray

    @classmethod
    def grid(cls, seg: BallSegment, n_r: int, n_theta: int) -> "Cells":
        if seg.cone.angles is None:
            raise NotImplementedError("cell grids need planar cones")
        rs = np.linspace(seg.r_inner, seg.r_outer, n_r + 1)
        a0, b0 = seg.cone.angles
        ts = np.linspace(a0, b0, n_theta + 1)
        R1, A1 = np.meshgrid(rs[:-1], ts[:-1], indexing="ij")
        R2, A2 = np.meshgrid(rs[1:], ts[1:], indexing="ij")
        return cls(R1.ravel(), R2.ravel(), A1.ravel(), A2.ravel(), np.zeros(R1.size, int))

    def __len__(self):
        return self.r1.size

    def subset(self, mask) -> "Cells":
        return Cells(self.r1[mask], self.r2[mask], self.a1[mask], self.a2[mask], self.depth[mask])

    def split(self) -> "Cells":
        rm = 0.5 * (self.r1 + self.r2)
        am = 0.5 * (self.a1 + self.a2)
        r1 = np.concatenate([self.r1, self.r1, rm, rm])
        r2 = np.concatenate([rm, rm, self.r2, self.r2])
        a1 = np.concatenate([self.a1, am, self.a1, am])
        a2 = np.concatenate([am, self.a2, am, self.a2])
        d = np.tile(self.depth + 1, 4)
        return Cells(r1, r2, a1, a2, d)

    def boxes(self, n_ext: int = 2):
        """Bounding boxes of the cells lifted with zero error coordinates."""
        clo, chi, slo, shi = _cos_sin_range(self.a1, self.a2)
        xlo, xhi = imul(self.r1, self.r2, clo, chi)
        ylo, yhi = imul(self.r1, self.r2, slo, shi)
        z = np.zeros((len(self), n_ext))
        lo = np.hstack([np.stack([xlo, ylo], axis=1), z])
        hi = np.hstack([np.stack([xhi, yhi], axis=1), z])
        return lo, hi

    def sample_points(self, per_cell: int = 0) -> np.ndarray:
        """Corners and centres of every cell (for cheap predictions)."""
        rs = [self.r1, self.r2, self.r1, self.r2, 0.5 * (self.r1 + self.r2)]
        as_ = [self.a1, self.a1, self.a2, self.a2, 0.5 * (self.a1 + self.a2)]
        r = np.stack(rs, axis=1)
        a = np.stack(as_, axis=1)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)


def _as_field(F) -> PolyVectorField:
    return F.field if isinstance(F, ExtendedSystem) else F


def flowpipe(F, init, t_span, params: ReachParams = ReachParams()) -> ReachResult:
    """Flowpipe over ``t_span = (t0, t1)`` from ``init``.

    ``init`` is either a :class:`BallSegment` (covered by polar cells lifted to
    zero error) or a pair ``(lo, hi)`` of box arrays in the field's space.
    Flow time is measured from the initial set; only the part of the tube
    over ``[t0, t1]`` is returned.
    """
    t0, t1 = (float(t) for t in t_span)
    if t0 < 0 or t1 < t0:
        raise ValueError("need 0 <= t0 <= t1")
    field_ = _as_field(F)
    if isinstance(init, BallSegment):
        lo, hi = Cells.grid(init, params.n_r, params.n_theta).boxes(field_.dimension - 2)
    else:
        lo, hi = init
    tube = Tube(FieldEnclosure(field_), lo, hi, params)
    segs = tube.segments(t0, t1) if t1 > t0 else []
    tlo, thi = tube.boxes_at(t1)
    return ReachResult(segs, tlo, thi, tube.sound)


# -------------------------------------------------------------------------
# upper bounds

def _trigger_enclosure(sys: EtcSystem) -> BoxEnclosure:
    return BoxEnclosure(sys.trigger, mean_value=False)


class RegionReach:
    """Refinable cell cover of one ball segment with per-cell flowpipes.

    ``t_upper`` per cell is the smallest time at which every trajectory of
    the cell was certified to have triggered; it starts at infinity.
    """

    def __init__(self, ext: ExtendedSystem, sys: EtcSystem, seg: BallSegment,
                 params: ReachParams = ReachParams(), oracle: BatchOracle | None = None):
        self.ext = ext
        self.sys = sys
        self.seg = seg
        self.params = params
        self.fenc = FieldEnclosure(ext.field)
        self.trigger = _trigger_enclosure(sys)
        self.oracle = oracle
        cells = Cells.grid(seg, params.n_r, params.n_theta)
        self.pieces: list[tuple[Cells, Tube, np.ndarray]] = []
        self._add(cells)

    def _add(self, cells: Cells):
        lo, hi = cells.boxes(self.sys.n)
        tube = Tube(self.fenc, lo, hi, self.params)
        self.pieces.append((cells, tube, np.full(len(cells), np.inf)))

    @property
    def n_cells(self) -> int:
        return sum(len(c) for c, _, _ in self.pieces)

    def _predicted_max(self, cells: Cells) -> np.ndarray:
        """Sampled inter-event time maximum per cell (heuristic only)."""
        if self.oracle is None:
            return np.full(len(cells), np.inf)
        pts = cells.sample_points().reshape(-1, self.sys.n)
        keep = np.linalg.norm(pts, axis=1) > 0
        tau = np.full(pts.shape[0], np.inf)
        tau[keep] = self.oracle.inter_event_times(pts[keep], t_cap=1.0, abs_tol=1e-9)
        return tau.reshape(len(cells), -1).max(axis=1)

    def certify(self, t: float) -> bool:
        """True if every cell is certified to have triggered by time ``t``."""
        ok_all = True
        new_pieces = []
        for cells, tube, t_up in self.pieces:
            ok = (t_up <= t) | self._check(tube, t)
            t_up[ok] = np.minimum(t_up[ok], t)
            if ok.all():
                new_pieces.append((cells, tube, t_up))
                continue
            # refine failing cells that look certifiable at this time
            refine = ~ok & (cells.depth < self.params.refine_depth)
            if refine.any():
                idx = np.nonzero(refine)[0]
                pred = self._predicted_max(cells.subset(refine))
                refine[idx[~(pred < t)]] = False
            keep = ~refine
            new_pieces.append((cells.subset(keep), _subtube(tube, keep), t_up[keep]))
            ok_all &= bool(ok[keep].all())
            if refine.any():
                sub = self._refine(cells.subset(refine).split(), t)
                new_pieces.extend(sub)
                ok_all &= all(bool(np.all(tu <= t)) for _, _, tu in sub)
        self.pieces = [p for p in new_pieces if len(p[0])]
        return ok_all

    def _refine(self, cells: Cells, t: float):
        lo, hi = cells.boxes(self.sys.n)
        tube = Tube(self.fenc, lo, hi, self.params)
        ok = self._check(tube, t)
        t_up = np.where(ok, t, np.inf)
        out = [(cells.subset(ok), _subtube(tube, ok), t_up[ok])]
        fail = ~ok
        if fail.any():
            if np.all(cells.depth[fail] < self.params.refine_depth):
                out.extend(self._refine(cells.subset(fail).split(), t))
            else:
                out.append((cells.subset(fail), _subtube(tube, fail), t_up[fail]))
        return [p for p in out if len(p[0])]

    def _check(self, tube: Tube, t: float) -> np.ndarray:
        lo, hi = tube.boxes_at(t)
        plo, _ = self.trigger(lo, hi)
        return plo > 0

    def event_boxes(self, t_lower: float, t_upper: float, natural: bool = True):
        """z-projections of every box that can hold the state at an event.

        With ``natural`` events the trigger must vanish at the event, so boxes
        whose trigger enclosure excludes zero are dropped, and each cell's own
        certified time caps its window. Forced events at ``t_upper`` keep the
        terminal boxes instead.
        """
        n = self.sys.n
        out_lo, out_hi = [], []
        for cells, tube, t_up in self.pieces:
            if not len(cells):
                continue
            stop = np.minimum(t_up, t_upper) if natural else np.full(len(cells), t_upper)
            tube.extend_to(float(stop.max()))
            for k, (blo, bhi) in enumerate(tube.B):
                a, b = tube.times[k], tube.times[k + 1]
                live = (b >= t_lower) & (a <= stop)
                if not live.any():
                    continue
                if natural:
                    plo, phi = self.trigger(blo, bhi)
                    live &= (plo <= 0) & (phi >= 0)
                out_lo.append(blo[live, :n])
                out_hi.append(bhi[live, :n])
            if not natural:
                tlo, thi = tube.boxes_at(t_upper)
                out_lo.append(tlo[:, :n])
                out_hi.append(thi[:, :n])
        if not out_lo:
            return np.zeros((0, n)), np.zeros((0, n))
        return np.vstack(out_lo), np.vstack(out_hi)


def _subtube(tube: Tube, mask) -> Tube:
    out = Tube.__new__(Tube)
    out.fenc = tube.fenc
    out.params = tube.params
    out.times = list(tube.times)
    out.X = [(lo[mask], hi[mask]) for lo, hi in tube.X]
    out.B = [(lo[mask], hi[mask]) for lo, hi in tube.B]
    out.FB = [(lo[mask], hi[mask]) for lo, hi in tube.FB]
    out.h = tube.h
    out.sound = tube.sound
    return out


def certify_upper_bound(F, seg: BallSegment, tau_max: float, sys: EtcSystem,
                        params: ReachParams = ReachParams()) -> bool:
    """True when every trajectory from the segment has triggered by ``tau_max``.

    The trigger must be positive on every terminal box. Flowpipe failures
    count as not certified.
    """
    if not tau_max > 0:
        raise ValueError("tau_max must be positive")
    ext = F if isinstance(F, ExtendedSystem) else ExtendedSystem(F, sys.n)
    try:
        return RegionReach(ext, sys, seg, params).certify(tau_max)
    except FlowpipeError as exc:
        log.info("upper bound %.6g not certified: %s", tau_max, exc)
        return False


@dataclass
class UpperBoundSearch:
    tau_upper: float | None
    reach: RegionReach
    tried: list[tuple[float, bool]] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.tau_upper is not None


def search_upper_bound(F, seg: BallSegment, tau_lower: float, tau_cap: float,
                       sys: EtcSystem, params: ReachParams = ReachParams(),
                       oracle: BatchOracle | None = None) -> UpperBoundSearch:
    """Line search on a geometric grid above ``tau_lower``, then bisection."""
    if not 0 < tau_lower < tau_cap:
        raise ValueError("need 0 < tau_lower < tau_cap")
    ext = F if isinstance(F, ExtendedSystem) else ExtendedSystem(F, sys.n)
    reach = RegionReach(ext, sys, seg, params, oracle)
    tried = []

    def attempt(t):
        try:
            ok = reach.certify(t)
        except FlowpipeError as exc:
            log.info("flowpipe failed at %.6g: %s", t, exc)
            ok = False
        tried.append((t, ok))
        return ok

    last_fail = tau_lower
    passed = None
    for g in params.grid:
        t = tau_lower * g
        if t > tau_cap:
            break
        if attempt(t):
            passed = t
            break
        last_fail = t
    if passed is None:
        return UpperBoundSearch(None, reach, tried)
    lo, hi = last_fail, passed
    for _ in range(params.bisect_steps):
        mid = 0.5 * (lo + hi)
        if attempt(mid):
            hi = mid
        else:
            lo = mid
    return UpperBoundSearch(hi, reach, tried)


def find_upper_bound(F, seg: BallSegment, tau_lower: float, tau_cap: float, sys: EtcSystem,
                     params: ReachParams = ReachParams()) -> float | None:
    """Certified upper bound of the inter-event times on ``seg``, or None."""
    return search_upper_bound(F, seg, tau_lower, tau_cap, sys, params).tau_upper


# -------------------------------------------------------------------------
# transitions

def _clip(poly: list, normal, tol: float) -> list:
    """Sutherland-Hodgman clip of a convex polygon to ``normal . x >= -tol``."""
    out = []
    m = len(poly)
    for k in range(m):
        p, q = poly[k], poly[(k + 1) % m]
        fp = normal[0] * p[0] + normal[1] * p[1] + tol
        fq = normal[0] * q[0] + normal[1] * q[1] + tol
        if fp >= 0:
            out.append(p)
        if (fp >= 0) != (fq >= 0):
            s = fp / (fp - fq)
            out.append((p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])))
    return out


def _min_norm(poly: list) -> float:
    m = len(poly)
    if m == 1:
        return math.hypot(*poly[0])
    inside = True
    sign = 0.0
    best = math.inf
    for k in range(m):
        p, q = poly[k], poly[(k + 1) % m]
        dx, dy = q[0] - p[0], q[1] - p[1]
        cross = dx * (-p[1]) - dy * (-p[0])
        if cross != 0:
            if sign == 0:
                sign = math.copysign(1.0, cross)
            elif math.copysign(1.0, cross) != sign:
                inside = False
        L2 = dx * dx + dy * dy
        s = 0.0 if L2 == 0 else min(1.0, max(0.0, -(p[0] * dx + p[1] * dy) / L2))
        best = min(best, math.hypot(p[0] + s * dx, p[1] + s * dy))
    return 0.0 if inside and m >= 3 else best


def box_meets_segment(lo, hi, seg: BallSegment, rtol: float = 1e-9) -> bool:
    """Does the planar box ``[lo, hi]`` meet the ball segment?

    The box is clipped to the cone; the clipped polygon is convex, so it
    meets the annulus iff its nearest point is inside the outer circle and
    its farthest vertex outside the inner one. Small tolerances make the
    test err towards intersection.
    """
    scale = max(abs(lo[0]), abs(lo[1]), abs(hi[0]), abs(hi[1]), 1e-300)
    poly = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    for row in seg.cone.E:
        poly = _clip(poly, row / np.linalg.norm(row), rtol * scale)
        if not poly:
            return False
    near = _min_norm(poly)
    far = max(math.hypot(*p) for p in poly)
    return near <= seg.r_outer * (1 + rtol) and far >= seg.r_inner * (1 - rtol)


def _norm_range(lo, hi):
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    near = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))
    far = np.maximum(np.abs(lo), np.abs(hi))
    return np.sqrt((near ** 2).sum(axis=1)), np.sqrt((far ** 2).sum(axis=1))


def targets_of_boxes(lo, hi, segments: dict) -> set:
    """Keys of all segments met by at least one planar box."""
    lo = np.atleast_2d(lo)
    hi = np.atleast_2d(hi)
    if lo.shape[0] == 0:
        return set()
    near, far = _norm_range(lo, hi)
    hits = set()
    for key, seg in segments.items():
        cand = (near <= seg.r_outer * (1 + 1e-9)) & (far >= seg.r_inner * (1 - 1e-9))
        for k in np.nonzero(cand)[0]:
            if box_meets_segment(lo[k], hi[k], seg):
                hits.add(key)
                break
    return hits


def transitions_from(F, seg: BallSegment, interval: tuple[float, float], all_segments: dict,
                     sys: EtcSystem, params: ReachParams = ReachParams(),
                     reach: RegionReach | None = None, forced: bool = False) -> set:
    """Target keys reachable from ``seg`` at an event time in ``interval``.

    ``forced`` marks an upper end that is a sampling deadline rather than a
    certified trigger time; the terminal boxes then count as event states.
    """
    t_lo, t_hi = (float(t) for t in interval)
    if not 0 <= t_lo <= t_hi:
        raise ValueError("invalid time interval")
    ext = F if isinstance(F, ExtendedSystem) else ExtendedSystem(F, sys.n)
    reach = reach or RegionReach(ext, sys, seg, params)
    if t_hi == t_lo:
        lo_hi = [tube.boxes_at(t_hi) for _, tube, _ in reach.pieces]
        lo = np.vstack([a[:, :sys.n] for a, _ in lo_hi])
        hi = np.vstack([b[:, :sys.n] for _, b in lo_hi])
    else:
        lo, hi = reach.event_boxes(t_lo, t_hi, natural=not forced)
    return targets_of_boxes(lo, hi, all_segments)


def flowpipe_csv(result: ReachResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not result.segments:
        w.writerow(["t_a", "t_b", "box"])
        return buf.getvalue()
    dim = result.segments[0].lo.shape[1]
    w.writerow(["t_a", "t_b", "box"] + [f"lo{k + 1}" for k in range(dim)]
               + [f"hi{k + 1}" for k in range(dim)])
    for s in result.segments:
        for b in range(s.lo.shape[0]):
            w.writerow([repr(s.t_a), repr(s.t_b), b] + [repr(float(v)) for v in s.lo[b]]
                       + [repr(float(v)) for v in s.hi[b]])
    return buf.getvalue()
