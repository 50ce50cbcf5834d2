"""Unconstrained planning objective and its analytic gradients.

The objective is a weighted sum of four terms: control effort (closed-form
polynomial integral of the squared S-th derivative), total time, obstacle
clearance and dynamic feasibility.  The last two are time-integral
penalties: each piece is sampled kappa+1 times on a trapezoid rule, the
violation at each sample is pushed through a cubic hinge (C^2 smooth, as
the gradient propagation requires), and the weighted sum is scaled by
tbar_i/kappa.  Durations are optimized through an unconstrained proxy
variable tau via a scaled sigmoid, which keeps every tbar_i strictly
inside (tbar_min, tbar_max).

Because the sample times are fixed fractions of each piece duration, the
basis rows separate as unit-basis times powers of the duration; the unit
parts are cached per (kappa, degree) so an evaluation only scales them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import minco
from .errors import OutOfRange, WorldMissingDistanceField
from .minco import BandedSystem, BoundaryState, TrajParams, Trajectory


@dataclass
class CostWeights:
    """Weights of the four objective terms (effort, time, obstacle, feasibility)."""

    effort: float = 1.0
    time: float = 1.0
    obstacle: float = 10000.0
    feasibility: float = 1.0


@dataclass
class PenaltyConfig:
    """Sampling density and limits for the time-integral penalties."""

    kappa: int = 16
    d_safe: float = 0.4
    v_max: float = 1.0
    a_max: float = 2.0

    def __post_init__(self):
        if self.kappa < 4:
            raise ValueError("kappa must be >= 4")
        if self.d_safe <= 0 or self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("d_safe, v_max, a_max must be positive")


@dataclass
class TimeTransform:
    """Bounds of the sigmoid duration reparameterization."""

    t_min: float = 0.5
    t_max: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")

    @property
    def span(self) -> float:
        return self.t_max - self.t_min


def _sigmoid(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tau_to_time(tau: np.ndarray, tf: TimeTransform) -> np.ndarray:
    """Map unconstrained tau to durations in (t_min, t_max)."""
    return tf.span * _sigmoid(tau) + tf.t_min


def time_to_tau(tbar: np.ndarray, tf: TimeTransform) -> np.ndarray:
    """Exact logit inverse of tau_to_time; durations must be strictly interior."""
    tbar = np.asarray(tbar, dtype=float)
    if np.any(tbar <= tf.t_min) or np.any(tbar >= tf.t_max):
        raise OutOfRange(f"durations {tbar} not inside ({tf.t_min}, {tf.t_max})")
    u = (tbar - tf.t_min) / tf.span
    return np.log(u / (1.0 - u))


def tau_chain_factor(tau: np.ndarray, tf: TimeTransform) -> np.ndarray:
    """dtbar/dtau, used to chain duration gradients onto tau."""
    sig = _sigmoid(tau)
    return tf.span * sig * (1.0 - sig)


_FACTOR_CACHE: dict = {}
_UNIT_CACHE: dict = {}


def _deriv_factors(n: int, order: int) -> np.ndarray:
    """Column scaling j!/(j-order)! of the order-th basis derivative."""
    key = (n, order)
    if key not in _FACTOR_CACHE:
        fac = np.zeros(n)
        for j in range(order, n):
            f = 1.0
            for m in range(j, j - order, -1):
                f *= m
            fac[j] = f
        _FACTOR_CACHE[key] = fac
    return _FACTOR_CACHE[key]


def _unit_bases(kappa: int, n: int, order: int):
    """Unit sampling basis and duration exponents for fixed fractions j/kappa.

    Basis rows at s = frac*t factor as unit[k, j] * t**pw[j]; returns
    (unit (kappa+1, n), pw (n,)).
    """
    key = (kappa, n, order)
    if key not in _UNIT_CACHE:
        frac = np.arange(kappa + 1) / kappa
        fac = _deriv_factors(n, order)
        unit = np.zeros((kappa + 1, n))
        pw = np.zeros(n)
        for j in range(order, n):
            unit[:, j] = fac[j] * frac ** (j - order)
            pw[j] = j - order
        _UNIT_CACHE[key] = (unit, pw)
    return _UNIT_CACHE[key]


def _sample_basis(kappa: int, n: int, order: int, t: float) -> np.ndarray:
    unit, pw = _unit_bases(kappa, n, order)
    return unit * t**pw


def _zero_grads(traj: Trajectory):
    dk_dc = [np.zeros_like(c) for c in traj.coefficients]
    dk_dt = np.zeros(traj.n_pieces)
    return dk_dc, dk_dt


def control_effort(traj: Trajectory, s_order: int = 3):
    """Closed-form integral of the squared S-th derivative over all pieces.

    Returns (cost, dK_dC, dK_dt).
    """
    n = traj.coefficients[0].shape[0]
    dk_dc, dk_dt = _zero_grads(traj)
    fac = _deriv_factors(n, s_order)[s_order:]
    deg = n - s_order  # number of coefficients of the S-th derivative
    a_idx = np.arange(deg)
    psum = a_idx[:, None] + a_idx[None, :] + 1
    cost = 0.0
    for i, c in enumerate(traj.coefficients):
        t = traj.durations[i]
        u = fac[:, None] * c[s_order:]
        p = t**psum / psum
        cost += float(np.einsum("ad,ab,bd->", u, p, u))
        dk_dc[i][s_order:] = 2.0 * fac[:, None] * (p @ u)
        end_deriv = (t ** a_idx) @ u
        dk_dt[i] = float(end_deriv @ end_deriv)
    return cost, dk_dc, dk_dt


def time_cost(tbar: np.ndarray):
    """Total trajectory time and its gradient (all ones)."""
    tbar = np.asarray(tbar, dtype=float)
    return float(tbar.sum()), np.ones_like(tbar)


def _trapezoid_weights(kappa: int) -> np.ndarray:
    w = np.ones(kappa + 1)
    w[0] = w[-1] = 0.5
    return w


def obstacle_cost(traj: Trajectory, world, cfg: PenaltyConfig):
    """Clearance penalty accumulated along trapezoid samples of each piece.

    Penalty at a sample is max(d_safe - dist, 0)^3 with dist taken from the
    world's bilinearly interpolated distance field; out-of-bounds samples
    count as zero clearance.  Returns (cost, dK_dC, dK_dt).
    """
    if world is None or getattr(world, "field", None) is None:
        raise WorldMissingDistanceField("obstacle cost needs a distance field")
    kappa = cfg.kappa
    w = _trapezoid_weights(kappa)
    frac = np.arange(kappa + 1) / kappa
    dk_dc, dk_dt = _zero_grads(traj)
    n = traj.coefficients[0].shape[0]
    m = traj.n_pieces

    b0 = [_sample_basis(kappa, n, 0, traj.durations[i]) for i in range(m)]
    pos = np.vstack([b0[i] @ traj.coefficients[i] for i in range(m)])
    dist, dgrad = world.query_distance(pos)
    gap = np.maximum(cfg.d_safe - dist, 0.0)
    pen = gap**3
    dpen_dpos = (-3.0 * gap**2)[:, None] * dgrad

    cost = 0.0
    for i in range(m):
        t = traj.durations[i]
        sl = slice(i * (kappa + 1), (i + 1) * (kappa + 1))
        pen_i, dpen_i = pen[sl], dpen_dpos[sl]
        cost += (t / kappa) * float(w @ pen_i)
        dk_dc[i] += (t / kappa) * (b0[i].T @ (w[:, None] * dpen_i))
        vel = _sample_basis(kappa, n, 1, t) @ traj.coefficients[i]
        dot_v = np.sum(dpen_i * vel, axis=1)
        dk_dt[i] = (1.0 / kappa) * float(w @ pen_i) + (t / kappa) * float(w @ (dot_v * frac))
    return cost, dk_dc, dk_dt


def feasibility_cost(traj: Trajectory, cfg: PenaltyConfig):
    """Velocity/acceleration limit penalty with the same sampling scheme.

    Penalty is max(|v|^2 - v_max^2, 0)^3 + max(|a|^2 - a_max^2, 0)^3.
    Returns (cost, dK_dC, dK_dt).
    """
    kappa = cfg.kappa
    w = _trapezoid_weights(kappa)
    frac = np.arange(kappa + 1) / kappa
    dk_dc, dk_dt = _zero_grads(traj)
    cost = 0.0
    n = traj.coefficients[0].shape[0]
    for i in range(traj.n_pieces):
        t = traj.durations[i]
        b1 = _sample_basis(kappa, n, 1, t)
        b2 = _sample_basis(kappa, n, 2, t)
        vel = b1 @ traj.coefficients[i]
        acc = b2 @ traj.coefficients[i]
        ev = np.maximum(np.sum(vel**2, axis=1) - cfg.v_max**2, 0.0)
        ea = np.maximum(np.sum(acc**2, axis=1) - cfg.a_max**2, 0.0)
        pen = ev**3 + ea**3
        cost += (t / kappa) * float(w @ pen)
        if not pen.any():
            continue
        jrk = _sample_basis(kappa, n, 3, t) @ traj.coefficients[i]
        dk_dc[i] += (t / kappa) * (
            b1.T @ (w[:, None] * (6.0 * ev**2)[:, None] * vel)
            + b2.T @ (w[:, None] * (6.0 * ea**2)[:, None] * acc)
        )
        # sample-time dependence: d|v|^2/ds = 2 v.a, d|a|^2/ds = 2 a.jerk
        dpen_ds = 6.0 * ev**2 * np.sum(vel * acc, axis=1) + 6.0 * ea**2 * np.sum(acc * jrk, axis=1)
        dk_dt[i] = (1.0 / kappa) * float(w @ pen) + (t / kappa) * float(w @ (dpen_ds * frac))
    return cost, dk_dc, dk_dt


@dataclass
class ObjectiveSetup:
    """Everything fixed during one optimization run."""

    init: BoundaryState
    target: BoundaryState
    world: object | None
    weights: CostWeights = field(default_factory=CostWeights)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    transform: TimeTransform = field(default_factory=TimeTransform)
    s_order: int = 3


def total_objective(q: np.ndarray, tau: np.ndarray, setup: ObjectiveSetup):
    """Full objective H(Q, tau) with gradients.

    Maps tau to durations, solves the coefficient system, sums the weighted
    terms, propagates gradients back to (Q, tbar) and applies the tau chain
    rule.  Pure: identical inputs give identical outputs.

    Returns (H, dH_dQ, dH_dtau).
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    tau = np.asarray(tau, dtype=float).ravel()
    w = setup.weights
    tbar = tau_to_time(tau, setup.transform)
    params = TrajParams(q, tbar)
    system = BandedSystem(tbar, setup.s_order)
    traj = minco.solve_coeffs(setup.init, setup.target, params, setup.s_order, system)

    cost = 0.0
    dk_dc = [np.zeros_like(c) for c in traj.coefficients]
    dk_dt = np.zeros(traj.n_pieces)

    def accumulate(term_cost, term_dc, term_dt, weight):
        nonlocal cost
        cost += weight * term_cost
        for i in range(traj.n_pieces):
            dk_dc[i] += weight * term_dc[i]
        dk_dt[:] += weight * term_dt

    if w.effort != 0.0:
        accumulate(*control_effort(traj, setup.s_order), w.effort)
    if w.time != 0.0:
        tc, tg = time_cost(tbar)
        cost += w.time * tc
        dk_dt += w.time * tg
    if w.obstacle != 0.0 and setup.world is not None:
        accumulate(*obstacle_cost(traj, setup.world, setup.penalty), w.obstacle)
    if w.feasibility != 0.0:
        accumulate(*feasibility_cost(traj, setup.penalty), w.feasibility)

    dh_dq, dh_dt = minco.propagate_gradients(traj, dk_dc, dk_dt, params, setup.s_order, system)
    dh_dtau = dh_dt * tau_chain_factor(tau, setup.transform)
    return cost, dh_dq, dh_dtau
