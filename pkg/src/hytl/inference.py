"""Classification of time-robust tubes by MTL formulas and formula search.

A tube is a nominal trajectory segment, a clock-time window ``[lo, hi]`` (at
external time zero; ``lo`` may be negative) and a robustness radius
``gamma`` under the metric ``M``. The margin of a formula on a tube is the
worst weak robustness of the nominal segment over the window minus the bound
on how far any member of the tube can deviate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bisim import gamma_hat, sample_ellipsoid
from .errors import InferenceError
from .hybrid_model import flow_grid
from .mtl import (Always, And, Eventually, Interval, Not, Or, Predicate, Signal, coordinates,
                  evaluate, reach, to_text)
from .mtl.semantics import WEAK

POSITIVE = 1e-9  # margins at or above this count as strictly positive


@dataclass(eq=False)
class TubeData:
    name: str
    location: object  # hybrid_model.Location
    x0: np.ndarray
    gamma: float
    M: np.ndarray
    lo: float
    hi: float
    label: int
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.label not in (1, -1):
            raise InferenceError("tube labels must be +1 or -1")
        if self.lo > self.hi:
            raise InferenceError(f"tube {self.name}: empty window")

    def grid(self, step):
        """Outward-snapped grid indices of the window."""
        return math.floor(self.lo / step + 1e-9), math.ceil(self.hi / step - 1e-9)

    def signal(self, step, reach_steps):
        """Nominal samples from clock zero to the end of the window plus ``reach``."""
        _, k1 = self.grid(step)
        count = max(k1 + reach_steps, 0)
        sig = self._cache.get(step)
        if sig is None or sig.length < count + 1:
            sig = Signal(flow_grid(self.location, self.x0, step, count), step)
            self._cache[step] = sig
        return sig

    def bound(self, phi):
        coords = coordinates(phi)
        g_hat = gamma_hat(self.gamma, self.M)
        if len(coords) == 1:
            j = next(iter(coords))
            g_tilde = self.gamma * math.sqrt(np.linalg.inv(self.M)[j, j])
            return min(g_tilde, g_hat)
        return g_hat


def margin(tube, phi, step=0.05):
    """Certified classification margin of ``phi`` on a labelled tube."""
    target = phi if tube.label == 1 else Not(phi)
    r = reach(target, step)
    k0, k1 = tube.grid(step)
    sig = tube.signal(step, r)
    rob = evaluate(sig, target, k0, k1, WEAK)
    return float(np.min(rob)) - tube.bound(phi)


def cost(tubes, phi, zeta=1.0, step=0.05):
    """Penalty ``zeta`` for each tube without a strictly positive margin."""
    return zeta * sum(1 for tb in tubes if margin(tb, phi, step) < POSITIVE)


@dataclass
class SearchConfig:
    swarm: int = 40
    iterations: int = 200
    inertia: float = 0.729
    cognitive: float = 1.494
    social: float = 1.494
    zeta: float = 1.0
    seed: int = 0
    max_horizon: float = 10.0  # upper bound on interval endpoints
    coordinates: tuple | None = None  # zero-based; None = all
    threshold_slack: float = 0.05  # fraction of the data range added on each side
    connectives: bool = True
    step: float = 0.05

    def __post_init__(self):
        if self.zeta <= 0:
            raise InferenceError("zeta must be positive")
        if self.swarm < 1 or self.iterations < 1 or self.max_horizon <= 0:
            raise InferenceError("search budget must be positive")


@dataclass
class SearchResult:
    formula: object
    text: str
    cost: float
    margins: list
    template: str
    zero_cost: bool
    evaluations: int
    history: list = field(default_factory=list)

    def to_dict(self):
        return {"formula": self.text, "cost": self.cost, "margins": self.margins,
                "template": self.template, "zero_cost": self.zero_cost,
                "best_effort": not self.zero_cost, "evaluations": self.evaluations}


def _primitive(kind, j, op, a, b, c):
    a, b = sorted((a, b))
    iv = Interval(float(a), float(b))
    pred = Predicate(j, op, float(c))
    return Always(iv, pred) if kind == "G" else Eventually(iv, pred)


def templates(n_coords, coords=None, connectives=True):
    """Structure schedule: single primitives, then two-term connectives."""
    coords = range(n_coords) if coords is None else coords
    prims = [(kind, j, op) for j in coords for kind in ("G", "F") for op in (">=", "<=")]
    out = [("prim", p) for p in prims]
    if connectives:
        for i, p in enumerate(prims):
            for q in prims[i:]:
                for conn in ("and", "or"):
                    out.append((conn, (p, q)))
    return out


def _template_name(t):
    kind, spec = t
    if kind == "prim":
        k, j, op = spec
        return f"{k}[a,b](x{j + 1} {op} c)"
    (k1, j1, o1), (k2, j2, o2) = spec
    sym = "&" if kind == "and" else "|"
    return f"{k1}[a,b](x{j1 + 1} {o1} c) {sym} {k2}[a,b](x{j2 + 1} {o2} c)"


def _build(t, params):
    kind, spec = t
    if kind == "prim":
        k, j, op = spec
        return _primitive(k, j, op, *params[:3])
    p, q = spec
    left = _primitive(p[0], p[1], p[2], *params[:3])
    right = _primitive(q[0], q[1], q[2], *params[3:6])
    return And(left, right) if kind == "and" else Or(left, right)


def _bounds(t, tubes, cfg):
    def coord_range(j):
        vals = []
        for tb in tubes:
            sig = tb.signal(cfg.step, int(math.ceil(cfg.max_horizon / cfg.step)) + 1)
            vals.append(sig.values[:, j])
        v = np.concatenate(vals)
        lo, hi = float(v.min()), float(v.max())
        pad = cfg.threshold_slack * max(hi - lo, 1e-9)
        return lo - pad, hi + pad

    kind, spec = t
    parts = [spec] if kind == "prim" else list(spec)
    lo, hi = [], []
    for _, j, _ in parts:
        clo, chi = coord_range(j)
        lo += [0.0, 0.0, clo]
        hi += [cfg.max_horizon, cfg.max_horizon, chi]
    return np.array(lo), np.array(hi)


def _pso(fitness, lo, hi, cfg, rng):
    dim = len(lo)
    span = hi - lo
    pos = lo + rng.random((cfg.swarm, dim)) * span
    vel = (rng.random((cfg.swarm, dim)) - 0.5) * span * 0.2
    pbest = pos.copy()
    pval = np.array([fitness(p) for p in pos])
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), pval[g]
    history = [gval]
    vmax = 0.5 * span
    for _ in range(cfg.iterations - 1):
        r1 = rng.random((cfg.swarm, dim))
        r2 = rng.random((cfg.swarm, dim))
        vel = (cfg.inertia * vel + cfg.cognitive * r1 * (pbest - pos)
               + cfg.social * r2 * (gbest - pos))
        vel = np.clip(vel, -vmax, vmax)
        pos = np.clip(pos + vel, lo, hi)
        vals = np.array([fitness(p) for p in pos])
        better = vals < pval
        pbest[better] = pos[better]
        pval[better] = vals[better]
        g = int(np.argmin(pval))
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), pval[g]
        history.append(gval)
    return gbest, gval, history


def pso_search(tubes, cfg=None):
    """Search templates in order and return the first zero-cost formula.

    Within a template, particle swarm optimisation minimises
    ``cost - clip(min margin, -zeta/2, zeta/2)`` over the interval endpoints
    and thresholds. If no template reaches zero cost the best formula found is
    returned with ``zero_cost`` false.
    """
    cfg = cfg or SearchConfig()
    labels = {tb.label for tb in tubes}
    if not tubes or labels != {1, -1}:
        raise InferenceError("need a nonempty tube set with both labels")
    n = tubes[0].x0.shape[0]
    coords = cfg.coordinates
    best = None
    evals = 0
    for idx, t in enumerate(templates(n, coords, cfg.connectives)):
        rng = np.random.default_rng([cfg.seed, idx])
        lo, hi = _bounds(t, tubes, cfg)

        def fitness(params, t=t):
            nonlocal evals
            evals += 1
            phi = _build(t, params)
            ms = [margin(tb, phi, cfg.step) for tb in tubes]
            j = cfg.zeta * sum(1 for m in ms if m < POSITIVE)
            return j - float(np.clip(min(ms), -cfg.zeta / 2, cfg.zeta / 2))

        params, val, history = _pso(fitness, lo, hi, cfg, rng)
        phi = _build(t, params)
        ms = [margin(tb, phi, cfg.step) for tb in tubes]
        c = cost(tubes, phi, cfg.zeta, cfg.step)
        res = SearchResult(phi, to_text(phi), c, ms, _template_name(t), c == 0, evals, history)
        if best is None or (res.cost, -min(ms)) < (best.cost, -min(best.margins)):
            best = res
        if c == 0:
            res.evaluations = evals
            return res
    best.evaluations = evals
    return best


@dataclass
class VerificationReport:
    samples: int
    violations: int
    per_tube: dict

    @property
    def ok(self):
        return self.violations == 0

    def to_dict(self):
        return {"samples": self.samples, "violations": self.violations,
                "per_tube": self.per_tube}


def verify_classification(phi, tubes, n_samples=500, seed=0, step=0.05):
    """Sample tube members and count those not weakly satisfying the label.

    Members are ``x~0 = x0 + d`` with ``d^T M d < gamma^2`` and clock times on
    the window grid; for ``c = -1`` the negated formula must hold.
    """
    rng = np.random.default_rng(seed)
    total = 0
    per = {}
    for tb in tubes:
        target = phi if tb.label == 1 else Not(phi)
        r = reach(target, step)
        k0, k1 = tb.grid(step)
        count = max(k1 + r, 0)
        bad = 0
        for d in sample_ellipsoid(tb.M, tb.gamma, n_samples, rng):
            sig = Signal(flow_grid(tb.location, tb.x0 + d, step, count), step)
            k = int(rng.integers(k0, k1 + 1))
            rob = evaluate(sig, target, k, k, WEAK)[0]
            if not rob > 0:
                bad += 1
        per[tb.name] = bad
        total += bad
    return VerificationReport(n_samples * len(tubes), total, per)


__all__ = ["TubeData", "margin", "cost", "SearchConfig", "SearchResult", "pso_search",
           "verify_classification", "gamma_hat", "templates"]
