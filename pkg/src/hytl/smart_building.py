"""Six-location smart-building occupancy model.

State ordering: x1 humidity ratio, x2 room temperature [K], x3 moisture
generation [mg/s], x4 heat generation [W]. The generation rates are constant
pseudo-states set by the door events.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .hybrid_model import Event, Guard, Halfspace, HybridAutomaton, Location


@dataclass(frozen=True)
class SmartBuildingParams:
    C: float = 42000.0  # room thermal capacitance [J/K]
    M: float = 19.0  # air mass [kg]
    G: float = 1e-4  # mass transfer conductance to ambient [kg/s]
    K: float = 20.0  # wall conductance [W/K]
    C_p: float = 1005.0  # specific heat of air [J/(kg K)]
    beta: float = 2.0e6  # effective latent heat [J/kg]
    T_s: float = 290.0
    T_inf: float = 303.0
    w_s: float = 0.01
    w_inf: float = 0.0105
    mdot: dict = field(default_factory=lambda: {
        "l0": 0.5, "l1_1": 0.5, "l1_2": 0.5, "l2_1": 0.6, "l2_2": 0.6, "l3_2": 0.8})
    thresholds: tuple = (290.4, 290.5, 290.6, 290.7, 290.8)
    one_person: tuple = (80.0, 300.0)  # (moisture, heat) added by one person
    two_person: tuple = (160.0, 600.0)

    def __post_init__(self):
        if not self.T_s < self.T_inf:
            raise ValueError("supply temperature must be below ambient")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValueError("thresholds must be ordered")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "thresholds" in d:
            d["thresholds"] = tuple(d["thresholds"])
        for key in ("one_person", "two_person"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def dynamics(p, mdot, occupied):
    """Affine pair (A, b) of one location."""
    A = np.zeros((4, 4))
    b = np.zeros(4)
    # humidity: M w' = mdot (w_s - w) - G (w - w_inf) + 1e-6 x3
    A[0, 0] = -(mdot + p.G) / p.M
    b[0] = (mdot * p.w_s + p.G * p.w_inf) / p.M
    # temperature: C T' = mdot C_p (T_s - T) + beta G (w - w_inf) - K (T - T_inf) + x4 - 1e-6 beta x3
    A[1, 0] = p.beta * p.G / p.C
    A[1, 1] = -(mdot * p.C_p + p.K) / p.C
    b[1] = (mdot * p.C_p * p.T_s - p.beta * p.G * p.w_inf + p.K * p.T_inf) / p.C
    if occupied:
        A[0, 2] = 1e-6 / p.M
        A[1, 2] = -1e-6 * p.beta / p.C
        A[1, 3] = 1.0 / p.C
    return A, b


def _band(lo, hi):
    e2 = (0.0, 1.0, 0.0, 0.0)
    return (Halfspace((0.0, -1.0, 0.0, 0.0), -lo), Halfspace(e2, hi))


def build_smart_building(params=None, initial=None):
    p = params or SmartBuildingParams()
    t4, t5, t6, t7, t8 = p.thresholds
    bands = {
        "l0": (),
        "l1_1": _band(t4, t6),
        "l1_2": _band(t4, t6),
        "l2_1": _band(t5, t7),
        "l2_2": _band(t5, t7),
        "l3_2": _band(t6, t8),
    }
    locs = {}
    for lid, inv in bands.items():
        A, b = dynamics(p, p.mdot[lid], lid != "l0")
        locs[lid] = Location(lid, A, b, inv)
    eye = np.eye(4)

    def surface(c):
        return Guard(eq=(Halfspace((0.0, 1.0, 0.0, 0.0), c),))

    w1, q1 = p.one_person
    w2, q2 = p.two_person
    events = (
        Event("e1_1", "l0", "l1_1", Guard(), eye, np.array([0, 0, w1, q1]), "door",
              "nondeterministic"),
        Event("e1_2", "l0", "l1_2", Guard(), eye, np.array([0, 0, w2, q2]), "door",
              "nondeterministic"),
        Event("e2_1", "l1_1", "l2_1", surface(t6), eye, np.zeros(4)),
        Event("e2_2", "l1_2", "l2_2", surface(t6), eye, np.zeros(4)),
        Event("e3_2", "l2_2", "l3_2", surface(t7), eye, np.zeros(4)),
    )
    if initial is None:
        x0 = empty_room_state(p)
        initial = (("l0", x0, x0),)
    return HybridAutomaton(locs, events, tuple(initial))


def empty_room_state(p=None):
    """Equilibrium of the unoccupied room."""
    p = p or SmartBuildingParams()
    A, b = dynamics(p, p.mdot["l0"], False)
    f = [0, 1]
    x = np.zeros(4)
    x[f] = np.linalg.solve(A[np.ix_(f, f)], -b[f])
    return x
