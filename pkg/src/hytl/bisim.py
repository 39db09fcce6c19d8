"""Quadratic autobisimulation functions and robust neighbourhoods.

For a location with dynamics ``x' = A x + b`` the function
``Phi(x1, x2) = sqrt((x1-x2)^T M (x1-x2))`` is nonincreasing along pairs of
trajectories whenever ``A^T M + M A`` is negative semidefinite.

Locations whose state carries constant parameters (rows of ``A`` that are
identically zero) are not Hurwitz. They are handled by splitting the state into
dynamic coordinates ``f`` and parameter coordinates ``p``: with
``T = [[I, A_ff^-1 A_fp], [0, I]]`` the change of variables ``y = T x``
decouples the system, and ``M = T^T diag(P, N) T`` is a valid certificate for
any Lyapunov matrix ``P`` of ``A_ff`` and any SPD ``N``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, solve_continuous_lyapunov
from scipy.optimize import minimize

from .errors import DegenerateError, InconsistencyError, InfeasibleError
from .hybrid_model import GUARD_TOL, flow, flow_grid

LMI_TOL = 1e-9


def phi(M, x1, x2):
    d = np.asarray(x1, float) - np.asarray(x2, float)
    return float(math.sqrt(max(d @ M @ d, 0.0)))


def is_hurwitz(A):
    return bool(np.max(np.linalg.eigvals(A).real) < 0.0)


def split_parameters(A, tol=0.0):
    """Indices of dynamic and parameter (identically zero row) coordinates."""
    A = np.asarray(A, float)
    zero = np.all(np.abs(A) <= tol, axis=1)
    return np.nonzero(~zero)[0], np.nonzero(zero)[0]


def check_semistable(A):
    """Raise ``InfeasibleError`` unless ``A`` is Hurwitz up to parameter rows."""
    f, p = split_parameters(A)
    if len(f) == 0:
        raise InfeasibleError("dynamics have no evolving coordinates")
    Aff = np.asarray(A, float)[np.ix_(f, f)]
    if not is_hurwitz(Aff):
        raise InfeasibleError("dynamics are not asymptotically stable")
    return f, p


def solve_lyapunov(A, Q):
    """Solve ``A^T M + M A = -Q`` for a Hurwitz ``A`` and SPD ``Q``."""
    A = np.asarray(A, float)
    Q = np.asarray(Q, float)
    if not is_hurwitz(A):
        raise InfeasibleError("A is not Hurwitz")
    if np.min(np.linalg.eigvalsh(0.5 * (Q + Q.T))) <= 0:
        raise InfeasibleError("Q is not positive definite")
    M = solve_continuous_lyapunov(A.T, -Q)
    M = 0.5 * (M + M.T)
    res = np.linalg.norm(A.T @ M + M @ A + Q, "fro")
    if res > 1e-8 * max(np.linalg.norm(Q, "fro"), 1.0) * max(1.0, np.linalg.norm(M, "fro")):
        raise InfeasibleError(f"Lyapunov residual too large ({res:.3g})")
    return M


def semistable_bisim(A, Q_ff, N):
    """Certificate ``M = T^T diag(P, N) T`` for parameter-augmented dynamics."""
    A = np.asarray(A, float)
    f, p = check_semistable(A)
    P = solve_lyapunov(A[np.ix_(f, f)], Q_ff)
    n = A.shape[0]
    T = np.eye(n)
    if len(p):
        T[np.ix_(f, p)] = np.linalg.solve(A[np.ix_(f, f)], A[np.ix_(f, p)])
    D = np.zeros((n, n))
    D[np.ix_(f, f)] = P
    if len(p):
        D[np.ix_(p, p)] = N
    M = T.T @ D @ T
    return 0.5 * (M + M.T)


def lyapunov_certificate(A, Q=None, N=None):
    """A valid ``M`` for ``A``: plain Lyapunov if Hurwitz, else the split form."""
    A = np.asarray(A, float)
    f, p = split_parameters(A)
    if len(p) == 0:
        return solve_lyapunov(A, np.eye(len(A)) if Q is None else Q)
    Q = np.eye(len(f)) if Q is None else Q
    N = np.eye(len(p)) if N is None else N
    return semistable_bisim(A, Q, N)


@dataclass
class BisimReport:
    positive_definite: bool
    lmi_max_eig: float
    monotone: bool
    worst_increase: float
    passed: bool


def verify_bisim(M, A, samples=100, seed=0, horizon=None, points=60):
    """Check ``M > 0``, ``A^T M + M A <= 0`` and sampled monotonicity of Phi."""
    M = np.asarray(M, float)
    A = np.asarray(A, float)
    eig_M = np.linalg.eigvalsh(M)
    pd = bool(eig_M[0] > 0)
    lmi = float(np.max(np.linalg.eigvalsh(A.T @ M + M @ A)))
    scale = max(1.0, float(eig_M[-1]))
    lmi_ok = lmi <= LMI_TOL * scale
    rng = np.random.default_rng(seed)
    if horizon is None:
        rates = np.abs(np.linalg.eigvals(A).real)
        rates = rates[rates > 1e-12]
        horizon = 5.0 / rates.min() if len(rates) else 10.0
        horizon = min(horizon, 1e4)
    taus = np.linspace(0.0, horizon, points)
    E = expm(A * (taus[1] - taus[0]))
    worst = -math.inf
    n = A.shape[0]
    for _ in range(samples):
        d = rng.normal(size=n)
        vals = []
        for _k in range(points):
            vals.append(math.sqrt(max(d @ M @ d, 0.0)))
            d = E @ d
        vals = np.array(vals)
        inc = np.max(np.diff(vals) / max(1.0, vals[0]))
        worst = max(worst, inc)
    monotone = worst <= 1e-7
    return BisimReport(pd, lmi, monotone, float(worst), bool(pd and lmi_ok and monotone))


# ---------------------------------------------------------------------------
# shaping M for a protected coordinate


def z_of(M, j):
    """Largest ``z`` with ``M - z^2 e_j e_j^T`` positive semidefinite."""
    Minv = np.linalg.inv(M)
    return 1.0 / math.sqrt(Minv[j, j])


def gamma_hat(gamma, M):
    lam = float(np.linalg.eigvalsh(M)[0])
    if lam <= 0:
        raise InfeasibleError("M is not positive definite")
    return gamma / math.sqrt(lam)


def gamma_tilde(gamma, M):
    """Per-coordinate bound ``gamma / z_j`` for every coordinate."""
    Minv = np.linalg.inv(M)
    return gamma * np.sqrt(np.diag(Minv))


@dataclass
class OptimizeResult:
    M: np.ndarray | None
    z: float
    feasible: bool
    certificate: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def _tril_from(theta, k):
    L = np.zeros((k, k))
    idx = np.tril_indices(k)
    L[idx] = theta[: len(idx[0])]
    d = np.diag_indices(k)
    L[d] = np.exp(np.clip(L[d], -30, 30))
    return L, theta[len(idx[0]):]


def _candidate(A, f, p, theta):
    Lq, rest = _tril_from(theta, len(f))
    Q = Lq @ Lq.T + 1e-9 * np.eye(len(f))
    if len(p):
        Ln, _ = _tril_from(rest, len(p))
        N = Ln @ Ln.T + 1e-12 * np.eye(len(p))
        return semistable_bisim(A, Q, N)
    return solve_lyapunov(A, Q)


def _scale_window(M, j, floor, ceilings):
    # feasible scalings s: s*M[k,k] <= eta_k for ceilings, s*M[j,j] >= floor
    s_max = min(eta / M[k, k] for k, eta in ceilings.items())
    s_min = floor / M[j, j] if floor is not None else 0.0
    return s_min, s_max


def certify(M, A, j, z, floor=None, ceilings=None, strict=None):
    A = np.asarray(A, float)
    _, p = split_parameters(A)
    if strict is None:
        strict = len(p) == 0
    lam_M = float(np.linalg.eigvalsh(M)[0])
    lmi = float(np.max(np.linalg.eigvalsh(A.T @ M + M @ A)))
    scale = float(np.linalg.eigvalsh(M)[-1])
    ez = np.zeros(len(M))
    ez[j] = 1.0
    lam_z = float(np.linalg.eigvalsh(M - z * z * np.outer(ez, ez))[0])
    caps_ok = True
    for k, eta in (ceilings or {}).items():
        caps_ok &= M[k, k] <= eta * (1 + 1e-12)
    if floor is not None:
        caps_ok &= M[j, j] >= floor * (1 - 1e-12)
    lmi_ok = lmi < 0 if strict else lmi <= LMI_TOL * max(scale, 1.0)
    cert = {
        "lambda_min_M": lam_M,
        "lambda_max_lmi": lmi,
        "lambda_min_M_minus_z": lam_z,
        "strict_lmi": bool(strict),
        "caps_ok": bool(caps_ok),
    }
    cert["ok"] = bool(lam_M > 0 and lmi_ok and lam_z >= -1e-9 * max(scale, 1.0) and caps_ok)
    return cert


def optimize_M(A, j, floor=None, ceilings=None, starts=6, seed=0, maxiter=1500):
    """Search ``M`` maximising the protected-coordinate bound ``z_j``.

    ``M`` ranges over Lyapunov solutions ``lyap(A, Q(theta))`` (or the split
    form for parameter-augmented dynamics). For a given shape the optimal
    scaling is explicit: grow ``M`` until the first ceiling is active, and
    ``z_j^2 = 1 / (M^-1)_jj``. The shape is searched by multi-start
    Nelder-Mead; the best point is certified by eigenvalue checks.
    """
    A = np.asarray(A, float)
    ceilings = dict(ceilings or {})
    if not ceilings:
        raise InfeasibleError("at least one ceiling is needed to bound the search")
    f, p = check_semistable(A)
    nf, np_ = len(f), len(p)
    dim = nf * (nf + 1) // 2 + np_ * (np_ + 1) // 2
    rng = np.random.default_rng(seed)
    history = []
    best = {"val": -math.inf, "theta": None}

    def objective(theta):
        try:
            M = _candidate(A, f, p, theta)
        except (InfeasibleError, np.linalg.LinAlgError):
            return 1e6
        if not np.all(np.isfinite(M)) or np.linalg.eigvalsh(M)[0] <= 0:
            return 1e6
        s_min, s_max = _scale_window(M, j, floor, ceilings)
        z2 = s_max / np.linalg.inv(M)[j, j]
        if not np.isfinite(z2) or z2 <= 0:
            return 1e6
        val = math.log(z2)
        if s_max < s_min:
            val -= 100.0 + math.log(s_min / s_max)
        if val > best["val"]:
            best["val"] = val
            best["theta"] = np.array(theta, float)
        return -val

    inits = [np.zeros(dim)] + [rng.normal(scale=1.5, size=dim) for _ in range(starts - 1)]
    for x0 in inits:
        minimize(objective, x0, method="Nelder-Mead",
                 options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-10})
        history.append(best["val"])
    if best["theta"] is None:
        return OptimizeResult(None, 0.0, False, {"ok": False}, history)
    M = _candidate(A, f, p, best["theta"])
    s_min, s_max = _scale_window(M, j, floor, ceilings)
    if s_max < s_min:
        return OptimizeResult(None, 0.0, False, {"ok": False, "reason": "floor unattainable"},
                              history)
    M = M * s_max * (1 - 1e-12)
    M = 0.5 * (M + M.T)
    z = z_of(M, j) * (1 - 1e-9)
    cert = certify(M, A, j, z, floor, ceilings)
    return OptimizeResult(M, z, cert["ok"], cert, history)


# ---------------------------------------------------------------------------
# robust neighbourhoods


def hyperplane_distance(M, x, w, c):
    """Phi-distance from ``x`` to the hyperplane ``w . y = c``."""
    w = np.asarray(w, float)
    return abs(float(w @ x) - c) / math.sqrt(float(w @ np.linalg.solve(M, w)))


def competing_surfaces(automaton, location_id, exit_event=None):
    """Hyperplanes a perturbed trajectory must not reach before the nominal exit.

    These are the crossing surfaces of other deterministic events and the
    invariant faces other than the nominal exit surface.
    """
    loc = automaton.locations[location_id]
    exit_planes = []
    if exit_event is not None and exit_event.guard.eq:
        exit_planes = [(np.asarray(h.w), h.c) for h in exit_event.guard.eq]

    def is_exit(w, c):
        for we, ce in exit_planes:
            scale = np.linalg.norm(we)
            if np.allclose(w / np.linalg.norm(w), we / scale) and abs(c / np.linalg.norm(w) - ce / scale) < 1e-12:
                return True
        return False

    out = []
    for e in automaton.outgoing(location_id, "deterministic"):
        if exit_event is not None and e.id == exit_event.id:
            continue
        for h in e.guard.eq:
            w = np.asarray(h.w)
            if not is_exit(w, h.c):
                out.append((w, h.c))
    for h in loc.invariant:
        w = np.asarray(h.w)
        if not is_exit(w, h.c):
            out.append((w, h.c))
    uniq = []
    for w, c in out:
        if not any(np.array_equal(w, u) and c == v for u, v in uniq):
            uniq.append((w, c))
    return uniq


def gamma_for_segment(location, x0, surfaces, M, tau_bar, gamma_max, step=0.05, safety=0.99):
    """Largest safe radius: Phi-distance from the nominal flow to competing surfaces."""
    if not surfaces:
        return gamma_max
    count = max(1, int(math.ceil(tau_bar / step)))
    states = flow_grid(location, x0, step, count)
    states = np.vstack([states, flow(location, x0, tau_bar)])
    best = math.inf
    Minv = np.linalg.inv(M)
    for w, c in surfaces:
        norm = math.sqrt(float(w @ Minv @ w))
        dist = np.abs(states @ w - c) / norm
        best = min(best, float(dist.min()))
    gamma = min(safety * best, gamma_max)
    if gamma <= 0:
        raise DegenerateError("nominal trajectory touches a competing surface")
    return gamma


def sample_ellipsoid_boundary(M, gamma, count, rng):
    """Points ``d`` with ``d^T M d = gamma^2``."""
    n = M.shape[0]
    u = rng.normal(size=(count, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    w, V = np.linalg.eigh(M)
    Mih = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
    return gamma * u @ Mih.T


def sample_ellipsoid(M, gamma, count, rng, shrink=1.0):
    """Uniform points strictly inside ``{d : d^T M d < gamma^2}``."""
    n = M.shape[0]
    bnd = sample_ellipsoid_boundary(M, 1.0, count, rng)
    r = rng.random(count) ** (1.0 / n)
    return gamma * shrink * (r * 0.999999)[:, None] * bnd


def _crossing_time(location, x0, w, c, t_max, step):
    # first time w . x - c changes sign from its initial sign, or None
    count = max(1, int(math.ceil(t_max / step)))
    states = flow_grid(location, x0, step, count)
    g = states @ w - c
    s0 = np.sign(g[0])
    idx = np.nonzero(np.sign(g[1:]) != s0)[0]
    if len(idx) == 0:
        return None
    k = idx[0] + 1
    lo, hi = (k - 1) * step, min(k * step, t_max)
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if np.sign(float(flow(location, x0, mid) @ w) - c) != s0:
            hi = mid
        else:
            lo = mid
    return hi


def lead_lag(location, x0, dwell, exit_event, surfaces, M, gamma, samples=200, seed=0,
             tau_bar=None, step=0.05, inflation=0.05, return_states=False):
    """Monte-Carlo lead/lag bounds around the nominal exit time ``dwell``.

    Every sampled trajectory on the 0.999-gamma boundary must cross the nominal
    exit surface before any competing surface; otherwise the radius is invalid.
    """
    if tau_bar is None:
        tau_bar = 2.0 * dwell + 1.0
    rng = np.random.default_rng(seed)
    h = exit_event.guard.eq[0]
    w_exit = np.asarray(h.w)
    pts = x0 + sample_ellipsoid_boundary(M, 0.999 * gamma, samples, rng)
    times = []
    ends = []
    for xs in pts:
        t = _crossing_time(location, xs, w_exit, h.c, tau_bar, step)
        if t is None:
            raise InconsistencyError(
                f"perturbed trajectory in {location.id} never triggers {exit_event.id}")
        for w, c in surfaces:
            tc = _crossing_time(location, xs, w, c, t, step)
            if tc is not None and tc < t - 1e-9:
                raise InconsistencyError(
                    f"perturbed trajectory in {location.id} reaches a competing surface first")
        xe = flow(location, xs, t)
        if not exit_event.guard.holds(xe, tol=1e-5):
            raise InconsistencyError(f"perturbed trajectory misses the guard of {exit_event.id}")
        times.append(t)
        ends.append(xe)
    times = np.array(times)
    lead = max(0.0, dwell - float(times.min())) * (1 + inflation)
    lag = max(0.0, float(times.max()) - dwell) * (1 + inflation)
    if return_states:
        return lead, lag, np.array(ends)
    return lead, lag


def image_radius(end_map, x0, M, gamma, M_next, centre_next, rel=0.25):
    """Worst ``Phi_next`` distance of the images of the ball, to first order.

    ``end_map`` sends a state of the current location to the matching state
    of the next one. Its Jacobian is taken by central differences along the
    principal axes of the ball, so the bound is exact for affine maps.
    """
    w, V = np.linalg.eigh(M)
    axes = V @ np.diag(1.0 / np.sqrt(w))  # columns map the unit ball onto {d^T M d <= 1}
    h = rel * gamma
    base = end_map(x0)
    cols = []
    for i in range(axes.shape[1]):
        u = axes[:, i]
        cols.append((end_map(x0 + h * u) - end_map(x0 - h * u)) / (2 * h))
    J = np.column_stack(cols)
    C = np.linalg.cholesky(M_next).T  # Phi_next(y, c) = |C (y - c)|
    offset = float(np.linalg.norm(C @ (base - np.asarray(centre_next))))
    return offset + gamma * float(np.linalg.norm(C @ J, 2))


def exit_map(location, exit_event, t_max, step=0.05):
    """State after the nominal exit surface is first crossed, then reset."""
    h = exit_event.guard.eq[0]
    w = np.asarray(h.w)

    def end_map(x):
        t = _crossing_time(location, x, w, h.c, t_max, step)
        if t is None:
            raise InconsistencyError(f"trajectory from {x} never triggers {exit_event.id}")
        return exit_event.reset(flow(location, x, t))
    return end_map


def check_cover(lo, hi, balls, density=5):
    """Sampled check that the box ``[lo, hi]`` lies in the union of ``balls``.

    ``balls`` holds ``(M, gamma, centre)`` triples. Returns ``(ok, witness)``.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    axes = [np.array([a]) if a == b else np.linspace(a, b, density) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    inside = np.zeros(len(grid), dtype=bool)
    for M, gamma, centre in balls:
        d = grid - np.asarray(centre, float)
        inside |= np.einsum("ij,jk,ik->i", d, M, d) < gamma * gamma
    if inside.all():
        return True, None
    return False, grid[np.argmin(inside)]


def points_covered(points, balls):
    """Boolean mask of points lying in some ball."""
    points = np.atleast_2d(points)
    inside = np.zeros(len(points), dtype=bool)
    for M, gamma, centre in balls:
        d = points - np.asarray(centre, float)
        inside |= np.einsum("ij,jk,ik->i", d, M, d) < gamma * gamma
    return inside
