"""Finite traffic model of an ETC loop: regions, inter-event-time intervals
and the transition relation, plus trace and Monte Carlo validation."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import RunConfig
from .delta import DeltaCertificate, certify_pretrigger_invariance, solve_delta
from .etc_model import (BatchOracle, EtcSystem, TraceEvent, build_extended_field,
                        simulate_etc_trace)
from .isochron import MuFunction
from .overapprox import BallSegment, build_ball_segments
from .partition import Cone, Region, build_cones, build_regions, classify, cones_from_matrices
from .reach import (ReachParams, RegionReach, search_upper_bound, targets_of_boxes,
                    transitions_from)

log = logging.getLogger(__name__)

Key = tuple[int, int]
FORMATS = ("json", "dot", "csv-bounds", "csv-transitions")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True, eq=False)
class Abstraction:
    system: EtcSystem
    cert: DeltaCertificate
    rho: float
    times: tuple[float, ...]
    cones: tuple[Cone, ...]
    states: tuple[Region, ...]
    segments: dict[Key, BallSegment]
    outputs: dict[Key, tuple[float, float]]
    transitions: frozenset[tuple[Key, Key]]
    forced: frozenset[Key]
    epsilon: float
    config_digest: str
    system_text: dict = field(default_factory=dict)

    def __post_init__(self):
        keys = {r.key for r in self.states}
        for k, (lo, hi) in self.outputs.items():
            if k not in keys:
                raise ValueError(f"output for unknown state {k}")
            if not lo <= hi:
                raise ValueError(f"empty interval for state {k}")
        for a, b in self.transitions:
            if a not in keys or b not in keys:
                raise ValueError(f"transition {a} -> {b} has an unknown endpoint")
        expected = max((hi - lo for lo, hi in self.outputs.values()), default=0.0)
        if self.epsilon != expected:
            raise ValueError("epsilon must equal the largest interval length")
        object.__setattr__(self, "_mu", None)

    @property
    def mu(self) -> MuFunction:
        if self._mu is None:
            object.__setattr__(self, "_mu", MuFunction(self.cert, self.rho, self.system.alpha,
                                                       self.system.theta))
        return self._mu

    @property
    def caps(self) -> dict[Key, float]:
        return {k: self.outputs[k][1] for k in self.forced}

    def classify(self, x) -> Key | None:
        bands, js = classify(self.mu, self.cones, self.times, np.asarray(x, dtype=float)[None])
        if bands[0] == 0 or js[0] == 0:
            return None
        return int(bands[0]), int(js[0])

    def classify_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        return classify(self.mu, self.cones, self.times, X)

    def successors(self, key: Key) -> set[Key]:
        return {b for a, b in self.transitions if a == key}

    # -- export ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "etc-traffic-abstraction/1",
            "config_digest": self.config_digest,
            "system": self.system_text,
            "delta_certificate": self.cert.to_dict(),
            "rho": self.rho,
            "times": list(self.times),
            "cones": [{"index": c.index, "E": c.E.tolist(),
                       "angles": list(c.angles) if c.angles else None} for c in self.cones],
            "initial_states": "all",
            "states": [
                {"i": r.band, "j": r.cone, "tau_lower": self.outputs[r.key][0],
                 "tau_upper": self.outputs[r.key][1], "forced": r.key in self.forced,
                 "r_inner": self.segments[r.key].r_inner,
                 "r_outer": self.segments[r.key].r_outer}
                for r in self.states
            ],
            "transitions": [[list(a), list(b)] for a, b in sorted(self.transitions)],
            "epsilon": self.epsilon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Abstraction":
        st = data["system"]
        system = EtcSystem.from_text(st["plant"], st["controller"], st["sigma_sq"], st["alpha"])
        cert = DeltaCertificate.from_dict(data["delta_certificate"])
        cones = tuple(Cone(np.array(c["E"]), c["index"],
                           tuple(c["angles"]) if c["angles"] else None) for c in data["cones"])
        by_index = {c.index: c for c in cones}
        times = tuple(data["times"])
        states, segments, outputs, forced = [], {}, {}, set()
        for s in data["states"]:
            key = (s["i"], s["j"])
            states.append(Region(s["i"], s["j"], times[s["i"] - 1]))
            segments[key] = BallSegment(s["i"], by_index[s["j"]], s["r_inner"], s["r_outer"])
            outputs[key] = (s["tau_lower"], s["tau_upper"])
            if s["forced"]:
                forced.add(key)
        trans = frozenset((tuple(a), tuple(b)) for a, b in data["transitions"])
        return cls(system, cert, data["rho"], times, cones, tuple(states), segments, outputs,
                   trans, frozenset(forced), data["epsilon"], data["config_digest"], st)

    @classmethod
    def from_json(cls, text: str) -> "Abstraction":
        return cls.from_dict(json.loads(text))

    def export(self, fmt: str) -> bytes:
        if fmt == "json":
            text = self.to_json()
        elif fmt == "dot":
            text = self._dot()
        elif fmt == "csv-bounds":
            text = self._bounds_csv()
        elif fmt == "csv-transitions":
            text = self._transitions_csv()
        else:
            raise ValueError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")
        return text.encode("utf-8")

    def _dot(self) -> str:
        lines = ["digraph traffic {", "  rankdir=LR;"]
        for r in self.states:
            lo, hi = self.outputs[r.key]
            lines.append(f'  "R_{r.band}_{r.cone}" [label="({r.band},{r.cone}) '
                         f'[{lo:.6g}, {hi:.6g}]"];')
        for a, b in sorted(self.transitions):
            lines.append(f'  "R_{a[0]}_{a[1]}" -> "R_{b[0]}_{b[1]}";')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def _bounds_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "tau_lower", "tau_upper", "forced", "r_inner", "r_outer"])
        for r in self.states:
            lo, hi = self.outputs[r.key]
            seg = self.segments[r.key]
            w.writerow([r.band, r.cone, repr(lo), repr(hi), int(r.key in self.forced),
                        repr(seg.r_inner), repr(seg.r_outer)])
        return buf.getvalue()

    def _transitions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["from_i", "from_j", "to_i", "to_j"])
        for a, b in sorted(self.transitions):
            w.writerow([a[0], a[1], b[0], b[1]])
        return buf.getvalue()


def precision(a: Abstraction) -> float:
    return max((hi - lo for lo, hi in a.outputs.values()), default=0.0)


# -------------------------------------------------------------------------
# construction

def _reach_params(cfg: RunConfig) -> ReachParams:
    r = cfg.reach
    return ReachParams(n_r=r.n_r, n_theta=r.n_theta, growth_cap=r.growth_cap,
                       refine_depth=r.refine_depth, bisect_steps=r.bisect_steps)


def _upper_bound_job(args):
    ext, sys, seg, tau_lower, tau_cap, params, segments = args
    oracle = BatchOracle(sys, ext)
    res = search_upper_bound(ext, seg, tau_lower, tau_cap, sys, params, oracle)
    if res.tau_upper is None:
        return seg.key, None, set(), res.tried, None
    boxes = res.reach.event_boxes(tau_lower, res.tau_upper)
    targets = targets_of_boxes(*boxes, segments)
    return seg.key, res.tau_upper, targets, res.tried, boxes


# relative margin absorbing rounding differences between a band and a dilated copy
SHORTCUT_RTOL = 1e-12


def dilation_base(times: Sequence[float], i: int, computed: Sequence[int]) -> int | None:
    """A computed band whose ball segments dilate exactly onto band ``i``.

    Bands are 0-based here. Band ``i`` lies between the isochrons of
    ``times[i]`` and ``times[i + 1]``; it is ``lam`` times band ``k`` when both
    time ratios agree.
    """
    for k in computed:
        if math.isclose(times[i] / times[k], times[i + 1] / times[k + 1], rel_tol=1e-12):
            return k
    return None


def dilated_result(tau_upper: float, boxes, tau_ratio: float, alpha: int, segments: dict):
    """Upper bound and successor targets of ``lam * R`` from those of ``R``.

    With ``tau_ratio = tau_i / tau_k`` the dilation factor is
    ``lam = tau_ratio ** (-1 / alpha)``; flows of homogeneous systems satisfy
    ``x(t; lam x0) = lam x(lam^alpha t; x0)``, so inter-event times scale by
    ``tau_ratio`` and event states by ``lam``.
    """
    lam = tau_ratio ** (-1.0 / alpha)
    lo, hi = (np.asarray(b, dtype=float) for b in boxes)
    pad = SHORTCUT_RTOL * np.maximum(np.abs(lo), np.abs(hi)).max(axis=1, keepdims=True)
    targets = targets_of_boxes(lam * lo - pad, lam * hi + pad, segments)
    return tau_upper * tau_ratio * (1 + SHORTCUT_RTOL), targets


def _forced_job(args):
    ext, sys, seg, tau_lower, cap, params, segments = args
    reach = RegionReach(ext, sys, seg, params)
    targets = transitions_from(ext, seg, (tau_lower, cap), segments, sys, params,
                               reach=reach, forced=True)
    return seg.key, cap, targets, []


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def innermost_caps(cfg: RunConfig, upper: dict[Key, float], q: int, cone_ids) -> dict[Key, float]:
    explicit = cfg.caps.explicit()
    caps = {}
    if q >= 2:
        base = statistics.median(upper[(q - 1, j)] for j in cone_ids)
    else:
        base = None
    for j in cone_ids:
        if j in explicit:
            caps[(q, j)] = explicit[j]
        elif base is not None:
            caps[(q, j)] = cfg.caps.kappa * base
        else:
            raise StageError("caps", f"no cap for innermost cone {j} and no outer band to scale")
    return caps


@dataclass
class BuildReport:
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    line_search: dict[str, list] = field(default_factory=dict)


def _stage(name: str, report: BuildReport):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()
            log.info("stage %s ...", name)

        def __exit__(self, exc_type, exc, tb):
            report.timings[name] = time.perf_counter() - self.t0
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    return _Timer()


def build_abstraction(cfg: RunConfig, workers: int = 1,
                      report: BuildReport | None = None) -> Abstraction:
    """Run the whole construction for a validated configuration."""
    report = report if report is not None else BuildReport()
    cfg.validate()
    with _stage("system", report):
        s = cfg.system
        sys = EtcSystem.from_text(list(s.plant), list(s.controller), s.sigma_sq, s.alpha)
        ext = build_extended_field(sys)
    with _stage("delta", report):
        d = cfg.delta
        e_radius = (math.sqrt(sys.sigma_sq) * d.z_radius if d.error_set == "pretrigger"
                    else 2 * d.z_radius)
        radius = d.d if d.d is not None else math.hypot(d.z_radius, e_radius) * (1 + 1e-6)
        if d.error_set == "pretrigger":
            # the small error set is only justified if |z| cannot grow before an event
            inv = certify_pretrigger_invariance(sys, ext)
            if not inv.certified:
                raise StageError("delta", "state norm may grow while |e| <= sigma |z|; "
                                          "use error_set = 'difference'")
        cert = solve_delta(ext, sys.trigger, d.p, radius, d.z_radius, d.epsilon, e_radius,
                           n_samples=d.n_samples, seed=cfg.seed, budget=d.budget)
    with _stage("isochron", report):
        mu = MuFunction(cert, cfg.rho, sys.alpha, sys.theta)
    with _stage("partition", report):
        cones = (cones_from_matrices(cfg.cones) if cfg.cones is not None
                 else build_cones(cfg.n_cones, sys.n))
        times = tuple(cfg.times)
        regions = build_regions(times, cones)
    with _stage("overapprox", report):
        segments = build_ball_segments(mu, cones, times, cfg.overapprox.tol)
    params = _reach_params(cfg)
    q = len(times)
    cone_ids = [c.index for c in cones]
    outputs: dict[Key, tuple[float, float]] = {}
    transitions: set[tuple[Key, Key]] = set()
    with _stage("reach", report):
        # bands computed directly, and bands obtained by dilating one of them
        direct, scaled = [], {}
        for i in range(q - 1):
            base = dilation_base(times, i, direct) if cfg.reach.scaling_shortcut else None
            if base is None:
                direct.append(i)
            else:
                scaled[i] = base
        jobs = [(ext, sys, segments[r.key], r.tau_lower, cfg.reach.tau_cap_factor * r.tau_lower,
                 params, segments) for r in regions if r.band - 1 in direct]
        upper = {}
        boxes = {}
        for key, tau_up, targets, tried, bx in _pool_map(_upper_bound_job, jobs, workers):
            report.line_search[f"{key[0]},{key[1]}"] = tried
            if tau_up is None:
                raise StageError("reach", f"no upper bound certified for region {key}")
            upper[key] = tau_up
            boxes[key] = bx
            outputs[key] = (times[key[0] - 1], tau_up)
            transitions.update((key, b) for b in targets)
        for i, k in scaled.items():
            for j in cone_ids:
                src = (k + 1, j)
                key = (i + 1, j)
                tau_up, targets = dilated_result(upper[src], boxes[src], times[i] / times[k],
                                                 sys.alpha, segments)
                report.line_search[f"{key[0]},{key[1]}"] = [["dilated from", list(src)]]
                upper[key] = tau_up
                outputs[key] = (times[i], tau_up)
                transitions.update((key, b) for b in targets)
    with _stage("innermost", report):
        caps = innermost_caps(cfg, upper, q, cone_ids)
        jobs = [(ext, sys, segments[(q, j)], times[q - 1], caps[(q, j)], params, segments)
                for j in cone_ids]
        for key, cap, targets, _ in _pool_map(_forced_job, jobs, workers):
            if not cap > times[q - 1]:
                raise StageError("innermost", f"cap {cap} of {key} is below its lower bound")
            outputs[key] = (times[q - 1], cap)
            transitions.update((key, b) for b in targets)
    outputs = {r.key: outputs[r.key] for r in regions}
    eps = max(hi - lo for lo, hi in outputs.values())
    system_text = {"plant": list(cfg.system.plant), "controller": list(cfg.system.controller),
                   "sigma_sq": cfg.system.sigma_sq, "alpha": sys.alpha}
    return Abstraction(sys, cert, cfg.rho, times, tuple(cones), tuple(regions), segments,
                       outputs, frozenset(transitions), frozenset(caps), eps, cfg.digest(),
                       system_text)


# -------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    events_checked: int = 0
    time_violations: list = field(default_factory=list)
    path_violations: list = field(default_factory=list)
    coverage_violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not (self.time_violations or self.path_violations or self.coverage_violations)

    def to_dict(self) -> dict:
        return {
            "events_checked": self.events_checked,
            "passed": self.passed,
            "time_violations": [list(map(_jsonable, v)) for v in self.time_violations],
            "path_violations": [list(map(_jsonable, v)) for v in self.path_violations],
            "coverage_violations": [list(map(_jsonable, v)) for v in self.coverage_violations],
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def validate_trace(a: Abstraction, trace: Sequence[TraceEvent], slack: float = 1e-6) -> ValidationReport:
    """Check every inter-event time against its region and every region step
    against the transition relation."""
    rep = ValidationReport()
    prev = None
    for k, ev in enumerate(trace):
        rep.events_checked += 1
        key = ev.region_index if ev.region_index is not None else a.classify(ev.sample_state)
        if key is None or key not in a.outputs:
            rep.coverage_violations.append((k, np.asarray(ev.sample_state)))
            prev = None
            continue
        lo, hi = a.outputs[key]
        if ev.forced and key not in a.forced:
            rep.time_violations.append((k, ev.inter_event_time, (lo, hi)))
        elif not lo - slack <= ev.inter_event_time <= hi + slack:
            rep.time_violations.append((k, ev.inter_event_time, (lo, hi)))
        if prev is not None and (prev, key) not in a.transitions:
            rep.path_violations.append((k - 1, prev, key))
        prev = key
    return rep


@dataclass
class MonteCarloReport:
    n_samples: int
    time_violations: list = field(default_factory=list)
    transition_violations: list = field(default_factory=list)
    coverage_violations: list = field(default_factory=list)
    worst_lower_margin: float = math.inf
    worst_upper_margin: float = math.inf
    observed: set = field(default_factory=set)
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return not (self.time_violations or self.transition_violations or self.coverage_violations)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "passed": self.passed,
            "worst_lower_margin": self.worst_lower_margin,
            "worst_upper_margin": self.worst_upper_margin,
            "observed_transitions": len(self.observed),
            "skipped_uncovered": self.skipped,
            "time_violations": [list(map(_jsonable, v)) for v in self.time_violations],
            "transition_violations": [list(map(_jsonable, v)) for v in self.transition_violations],
            "coverage_violations": [list(map(_jsonable, v)) for v in self.coverage_violations],
        }


def sample_segment(seg: BallSegment, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from a planar ball segment."""
    a, b = seg.cone.angles
    r = np.sqrt(rng.uniform(seg.r_inner ** 2, seg.r_outer ** 2, n))
    th = rng.uniform(a, b, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=1)


def sample_region(a: Abstraction, key: Key, n: int, rng: np.random.Generator,
                  max_rounds: int = 50) -> np.ndarray:
    """Uniform samples from region ``key`` by rejection from its ball segment."""
    seg = a.segments[key]
    out = []
    got = 0
    for _ in range(max_rounds):
        X = sample_segment(seg, max(2 * (n - got), 64), rng)
        X = X[np.linalg.norm(X, axis=1) > 0]
        bands, js = a.classify_many(X)
        X = X[(bands == key[0]) & (js == key[1])]
        out.append(X[: n - got])
        got += out[-1].shape[0]
        if got >= n:
            break
    return np.vstack(out) if out else np.zeros((0, 2))


def check_points(a: Abstraction, X: np.ndarray, rep: MonteCarloReport,
                 oracle: BatchOracle, slack: float = 1e-6):
    """Oracle check of interval membership and successor transitions."""
    if X.shape[0] == 0:
        return
    bands, js = a.classify_many(X)
    # sources outside the covered set are not part of the model
    covered = (bands > 0) & (js > 0)
    rep.skipped += int((~covered).sum())
    X, bands, js = X[covered], bands[covered], js[covered]
    keys = list(zip(bands.tolist(), js.tolist()))
    upper = np.array([a.outputs[k][1] for k in keys])
    lower = np.array([a.outputs[k][0] for k in keys])
    forced = np.array([k in a.forced for k in keys])
    horizon = np.where(forced, upper, 50.0 * upper)
    tau, Y, fired = oracle.events(X, t_cap=horizon, abs_tol=1e-12)
    tau = np.where(fired | forced, tau, np.inf)
    rep.worst_lower_margin = min(rep.worst_lower_margin, float((tau - lower).min()))
    rep.worst_upper_margin = min(rep.worst_upper_margin, float((upper - tau).min()))
    bad = (tau < lower - slack) | (tau > upper + slack)
    for k in np.nonzero(bad)[0]:
        rep.time_violations.append((keys[k], X[k], float(tau[k]), a.outputs[keys[k]]))
    ok = ~bad & np.isfinite(tau)
    b2, j2 = a.classify_many(Y[ok]) if ok.any() else (np.zeros(0, int), np.zeros(0, int))
    for src_i, y, bb, jj in zip(np.nonzero(ok)[0], Y[ok], b2, j2):
        src = keys[src_i]
        if bb == 0 or jj == 0:
            rep.coverage_violations.append(("successor", y))
            continue
        dst = (int(bb), int(jj))
        rep.observed.add((src, dst))
        if (src, dst) not in a.transitions:
            rep.transition_violations.append((src, dst, X[src_i]))


def monte_carlo_validate(a: Abstraction, n_samples: int, seed: int = 0,
                         per_region: bool = True, slack: float = 1e-6) -> MonteCarloReport:
    """Sample initial states and compare the oracle against the abstraction.

    With ``per_region`` every state receives ``n_samples`` points; otherwise
    ``n_samples`` points are drawn over the whole covered set, each region
    weighted by its segment's area.
    """
    rng = np.random.default_rng(seed)
    oracle = BatchOracle(a.system)
    rep = MonteCarloReport(n_samples)
    if n_samples <= 0:
        return rep
    if per_region:
        for r in a.states:
            check_points(a, sample_region(a, r.key, n_samples, rng), rep, oracle, slack)
    else:
        keys = [r.key for r in a.states]
        areas = np.array([_area(a.segments[k]) for k in keys])
        counts = rng.multinomial(n_samples, areas / areas.sum())
        for k, c in zip(keys, counts):
            if c:
                check_points(a, sample_segment(a.segments[k], int(c), rng), rep, oracle, slack)
    return rep


def _area(seg: BallSegment) -> float:
    a, b = seg.cone.angles
    return 0.5 * (b - a) * (seg.r_outer ** 2 - seg.r_inner ** 2)


def simulate(a: Abstraction, x0, duration: float, abs_tol: float = 1e-9) -> list[TraceEvent]:
    return simulate_etc_trace(a.system, x0, duration, classify=a.classify, caps=a.caps,
                              abs_tol=abs_tol)
