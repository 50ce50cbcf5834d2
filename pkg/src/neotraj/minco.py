"""Minimum-control-effort polynomial trajectories.

A trajectory is M pieces of degree N = 2S-1 polynomials in D dimensions
(defaults S=3, N=5, D=2: minimum jerk).  It is fully determined by the
intermediate waypoints Q (D x (M-1)) and the piece durations tbar (M,):
the coefficients follow from a linear boundary-intermediate value problem
with, per dimension,

  * S boundary conditions at each end (position/velocity/acceleration),
  * position interpolation q_i on both sides of each interior knot,
  * derivative continuity of orders 1..2S-2 across interior knots.

That system is square (2S*M rows) and banded; with rows ordered
(start boundary, per knot [continuity 1..2S-2, position left, position
right], end boundary) the bandwidth is lower 3S-2, upper S+1, so one
banded factorization solves all D dimensions in linear time.  Because
the continuity orders extend to 2S-2, the unique solution is also the
minimizer of the integral of the squared S-th derivative among all
C^{S-1} splines through the same waypoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonPositiveDuration, OutOfDomain, ShapeMismatch, SingularSystem


_FACTORS: dict = {}


def _basis_factors(n_coeffs: int, order: int) -> np.ndarray:
    """Column scaling j!/(j-order)! of the order-th basis derivative."""
    key = (n_coeffs, order)
    if key not in _FACTORS:
        fac = np.zeros(n_coeffs)
        for j in range(order, n_coeffs):
            f = 1.0
            for m in range(j, j - order, -1):
                f *= m
            fac[j] = f
        _FACTORS[key] = fac
    return _FACTORS[key]


def basis(t: float, order: int, n_coeffs: int) -> np.ndarray:
    """Row of the natural basis [1, t, ..., t^N] differentiated `order` times."""
    out = np.zeros(n_coeffs)
    if order >= n_coeffs:
        return out
    fac = _basis_factors(n_coeffs, order)
    # d^k/dt^k t^j = j!/(j-k)! t^(j-k)
    out[order:] = fac[order:] * t ** np.arange(n_coeffs - order)
    return out


def basis_matrix(ts: np.ndarray, order: int, n_coeffs: int) -> np.ndarray:
    """Stacked basis rows for many sample times at once, shape (len(ts), n_coeffs)."""
    ts = np.asarray(ts, dtype=float).ravel()
    out = np.zeros((ts.size, n_coeffs))
    if order >= n_coeffs:
        return out
    fac = _basis_factors(n_coeffs, order)
    out[:, order:] = fac[order:] * ts[:, None] ** np.arange(n_coeffs - order)
    return out


@dataclass
class TrajParams:
    """Decision variables of the planner: waypoints and piece durations.

    waypoints: (D, M-1) interior waypoint positions, one column per knot.
    durations: (M,) strictly positive piece durations in seconds.
    """

    waypoints: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        self.durations = np.asarray(self.durations, dtype=float).ravel()
        if self.waypoints.shape[1] != self.durations.size - 1:
            raise ShapeMismatch(
                f"waypoints has {self.waypoints.shape[1]} columns, "
                f"expected {self.durations.size - 1} for {self.durations.size} pieces"
            )

    @property
    def n_pieces(self) -> int:
        return self.durations.size

    @property
    def dims(self) -> int:
        return self.waypoints.shape[0]


@dataclass
class BoundaryState:
    """Endpoint state: position, velocity and acceleration (D-vectors).

    Acceleration defaults to zero when unspecified.
    """

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).ravel()
        self.velocity = np.asarray(self.velocity, dtype=float).ravel()
        if self.acceleration is None:
            self.acceleration = np.zeros_like(self.position)
        else:
            self.acceleration = np.asarray(self.acceleration, dtype=float).ravel()
        if not (
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.velocity))
            and np.all(np.isfinite(self.acceleration))
        ):
            raise ValueError("boundary state must be finite")

    def derivative(self, order: int) -> np.ndarray:
        return (self.position, self.velocity, self.acceleration)[order]


@dataclass
class Trajectory:
    """Executable piecewise polynomial: per-piece coefficients plus durations.

    coefficients: list of M arrays, each (N+1, D); row j holds the t^j
    coefficient of every dimension, in piece-local time.
    """

    coefficients: list[np.ndarray]
    durations: np.ndarray
    start_times: np.ndarray = field(init=False)

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float).ravel()
        self.coefficients = [np.atleast_2d(np.asarray(c, dtype=float)) for c in self.coefficients]
        self.start_times = np.concatenate(([0.0], np.cumsum(self.durations)))

    @property
    def n_pieces(self) -> int:
        return len(self.coefficients)

    @property
    def dims(self) -> int:
        return self.coefficients[0].shape[1]

    @property
    def total_time(self) -> float:
        return float(self.start_times[-1])

    def piece_index(self, t: float) -> int:
        """Index of the piece owning time t; t = total_time maps to the last piece."""
        if t < 0.0 or t > self.total_time + 1e-12:
            raise OutOfDomain(f"t={t} outside [0, {self.total_time}]")
        i = int(np.searchsorted(self.start_times, t, side="right")) - 1
        return min(max(i, 0), self.n_pieces - 1)

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        """Evaluate the `order`-th derivative at global time t."""
        i = self.piece_index(t)
        s = min(t - self.start_times[i], self.durations[i])
        n = self.coefficients[i].shape[0]
        return basis(s, order, n) @ self.coefficients[i]

    def eval_piece(self, i: int, s: np.ndarray, order: int = 0) -> np.ndarray:
        """Evaluate piece i at local times s (vectorized), shape (len(s), D)."""
        n = self.coefficients[i].shape[0]
        return basis_matrix(s, order, n) @ self.coefficients[i]


def _constraint_entries(durations: np.ndarray, s_order: int):
    """Yield (row, col, value, dep) triplets of the constraint matrix A(tbar).

    dep is (piece_index, derivative_order) for entries that depend on a
    duration (basis evaluated at tbar_piece), or None for constants.
    """
    m = durations.size
    n = 2 * s_order  # coefficients per piece
    entries = []

    def add_basis_row(row, piece, t, order, sign=1.0, dep=None):
        b = basis(t, order, n)
        for j in range(n):
            if b[j] != 0.0:
                entries.append((row, n * piece + j, sign * b[j], dep))

    # start boundary: orders 0..S-1 at local time 0 of piece 0
    for k in range(s_order):
        add_basis_row(k, 0, 0.0, k)

    # interior knots
    for i in range(1, m):
        r0 = s_order + n * (i - 1)
        ti = durations[i - 1]
        for k in range(1, n - 1):  # continuity orders 1..2S-2
            add_basis_row(r0 + k - 1, i - 1, ti, k, dep=(i - 1, k))
            add_basis_row(r0 + k - 1, i, 0.0, k, sign=-1.0)
        add_basis_row(r0 + n - 2, i - 1, ti, 0, dep=(i - 1, 0))  # position left
        add_basis_row(r0 + n - 1, i, 0.0, 0)  # position right

    # end boundary: orders 0..S-1 at local time tbar_M of the last piece
    for k in range(s_order):
        add_basis_row(n * m - s_order + k, m - 1, durations[m - 1], k, dep=(m - 1, k))

    return entries


class BandedSystem:
    """Constraint matrix A(tbar) in banded form, with its transpose.

    Built once per (durations, s_order) and shared between the forward
    solve and the adjoint solve of the same objective evaluation.
    """

    def __init__(self, durations: np.ndarray, s_order: int):
        self.durations = np.asarray(durations, dtype=float).ravel()
        self.s_order = s_order
        self.size = 2 * s_order * self.durations.size
        self.lower = 3 * s_order - 2
        self.upper = s_order + 1
        entries = _constraint_entries(self.durations, s_order)
        self.ab = np.zeros((self.lower + self.upper + 1, self.size))
        self.ab_t = np.zeros((self.lower + self.upper + 1, self.size))
        self.row_deps: dict[int, tuple[int, int]] = {}
        for r, c, v, dep in entries:
            self.ab[self.upper + r - c, c] = v
            self.ab_t[self.lower + c - r, r] = v
            if dep is not None:
                self.row_deps[r] = dep  # all dep entries of a row share (piece, order)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        try:
            return scipy.linalg.solve_banded((self.lower, self.upper), self.ab, rhs)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(str(exc)) from exc

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        try:
            return scipy.linalg.solve_banded((self.upper, self.lower), self.ab_t, rhs)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise SingularSystem(str(exc)) from exc


def _build_rhs(init: BoundaryState, target: BoundaryState, params: TrajParams, s_order: int):
    m = params.n_pieces
    n = 2 * s_order
    d = init.position.size
    b = np.zeros((n * m, d))
    for k in range(s_order):
        b[k] = init.derivative(k)
        b[n * m - s_order + k] = target.derivative(k)
    for i in range(1, m):
        r0 = s_order + n * (i - 1)
        b[r0 + n - 2] = params.waypoints[:, i - 1]
        b[r0 + n - 1] = params.waypoints[:, i - 1]
    return b


def solve_coeffs(
    init: BoundaryState,
    target: BoundaryState,
    params: TrajParams,
    s_order: int = 3,
    system: BandedSystem | None = None,
) -> Trajectory:
    """Map (Q, tbar) to the unique minimum-effort coefficient matrices.

    Solves the banded boundary-intermediate value problem once per call;
    all D dimensions share the factorization input (same A, stacked rhs).
    """
    if np.any(params.durations <= 0.0):
        raise NonPositiveDuration(f"durations must be positive, got {params.durations}")
    m = params.n_pieces
    n = 2 * s_order
    if system is None:
        system = BandedSystem(params.durations, s_order)
    rhs = _build_rhs(init, target, params, s_order)
    coeffs_flat = system.solve(rhs)
    coefficients = [coeffs_flat[n * i : n * (i + 1)] for i in range(m)]
    return Trajectory(coefficients=coefficients, durations=params.durations.copy())


def propagate_gradients(
    traj: Trajectory,
    dk_dc: list[np.ndarray],
    dk_dt: np.ndarray,
    params: TrajParams,
    s_order: int = 3,
    system: BandedSystem | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Pull objective gradients from (C, tbar)-space back to (Q, tbar)-space.

    Solves the adjoint system A^T G = dK/dC; the waypoint gradient collects
    the G rows of the two position-interpolation constraints at each knot,
    and the duration gradient subtracts G^T (dA/dtbar_i) C, where dA/dtbar_i
    differentiates the basis rows evaluated at tbar_i (one extra derivative
    order on the owning piece).

    Returns (dH_dQ (D, M-1), dH_dtbar (M,)).
    """
    m = traj.n_pieces
    n = 2 * s_order
    d = traj.dims
    if len(dk_dc) != m or any(g.shape != (n, d) for g in dk_dc):
        raise ShapeMismatch("dk_dc must match the trajectory's coefficient shapes")
    dk_dt = np.asarray(dk_dt, dtype=float).ravel()
    if dk_dt.size != m:
        raise ShapeMismatch(f"dk_dt has {dk_dt.size} entries, expected {m}")

    if system is None:
        system = BandedSystem(params.durations, s_order)
    g = system.solve_transpose(np.vstack(dk_dc))

    dh_dq = np.zeros((d, max(m - 1, 0)))
    for i in range(1, m):
        r0 = s_order + n * (i - 1)
        dh_dq[:, i - 1] = g[r0 + n - 2] + g[r0 + n - 1]

    # rows of A that depend on tbar_i differentiate to the next basis order,
    # i.e. (dA/dtbar_i C)[row] = p_i^(k+1)(tbar_i)
    dh_dt = dk_dt.copy()
    for r, (piece, order) in system.row_deps.items():
        ti = params.durations[piece]
        dvec = basis(ti, order + 1, n) @ traj.coefficients[piece]
        dh_dt[piece] -= float(g[r] @ dvec)

    return dh_dq, dh_dt
