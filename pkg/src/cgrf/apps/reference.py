"""Finite-difference reference solvers for the heat and Burgers equations.

Boundary conditions are ``a * u_x + b * u = g(t)`` at each end of the
interval.  Dirichlet ends (``a == 0``) are imposed directly; ends with a
derivative term use a ghost node eliminated by the centred difference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded


class ConvergenceError(RuntimeError):
    """Halving the grid steps changed the solution by more than allowed."""


@dataclass(frozen=True)
class EndCondition:
    """``a * u_x + b * u = g(t)`` at one end of the interval."""

    a: float = 0.0
    b: float = 1.0
    g: Callable = lambda t: 0.0

    def __post_init__(self):
        if self.a == 0 and self.b == 0:
            raise ValueError("end condition needs a != 0 or b != 0")

    @property
    def dirichlet(self):
        return self.a == 0.0


@dataclass
class ReferenceSolution:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray  # (len(t), len(x))
    refinement_change: float


def _ghosts(u, h, left, right, t):
    """Ghost values ``u[-1]`` and ``u[n]`` from the Robin/Neumann conditions."""
    gl = gr = None
    if not left.dirichlet:
        gl = u[1] - 2 * h * (left.g(t) - left.b * u[0]) / left.a
    if not right.dirichlet:
        gr = u[-2] + 2 * h * (right.g(t) - right.b * u[-1]) / right.a
    return gl, gr


def _heat_cn(ic, left, right, length, x0, nx, times, dt_max):
    """Crank-Nicolson on ``nx`` nodes; returns the states at ``times``."""
    x = np.linspace(x0, x0 + length, nx)
    h = x[1] - x[0]
    u = np.asarray(ic(x), dtype=float)
    out = []
    t = 0.0
    for target in times:
        steps = int(np.ceil((target - t) / dt_max - 1e-9))
        if steps > 0:
            dt = (target - t) / steps
            for _ in range(steps):
                u = _cn_step(u, t, dt, h, left, right)
                t += dt
        out.append(u.copy())
    return x, np.array(out)


def _cn_step(u, t, dt, h, left, right):
    n = len(u)
    r = dt / h ** 2
    # Laplacian with ghost nodes folded in: A u + c(t)
    lower = np.ones(n) * r
    upper = np.ones(n) * r
    diag = np.full(n, -2.0 * r)

    def bc_terms(tt):
        c = np.zeros(n)
        if not left.dirichlet:
            c[0] = r * (-2 * h * left.g(tt) / left.a)
        if not right.dirichlet:
            c[-1] = r * (2 * h * right.g(tt) / right.a)
        return c

    up = upper.copy()
    lo = lower.copy()
    dg = diag.copy()
    if not left.dirichlet:
        up[0] = 2 * r
        dg[0] += r * 2 * h * left.b / left.a
    if not right.dirichlet:
        lo[-1] = 2 * r
        dg[-1] -= r * 2 * h * right.b / right.a

    def apply(v):
        w = dg * v
        w[:-1] += up[:-1] * v[1:]
        w[1:] += lo[1:] * v[:-1]
        return w

    rhs = u + 0.5 * apply(u) + 0.5 * (bc_terms(t) + bc_terms(t + dt))
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * up[:-1]
    ab[1] = 1.0 - 0.5 * dg
    ab[2, :-1] = -0.5 * lo[1:]
    if left.dirichlet:
        ab[1, 0], ab[0, 1] = 1.0, 0.0
        rhs[0] = left.g(t + dt) / left.b
    if right.dirichlet:
        ab[1, -1], ab[2, -2] = 1.0, 0.0
        rhs[-1] = right.g(t + dt) / right.b
    return solve_banded((1, 1), ab, rhs)


def _burgers_rhs(u, t, h, left, right):
    gl, gr = _ghosts(u, h, left, right, t)
    ext = np.concatenate([[gl if gl is not None else 0.0], u, [gr if gr is not None else 0.0]])
    uxx = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / h ** 2
    ux = (ext[2:] - ext[:-2]) / (2 * h)
    # second-order upwind for the convective derivative where a stencil fits
    up = np.empty_like(u)
    up[:] = ux
    pos = u > 0
    i = np.arange(len(u))
    okp = pos & (i >= 2)
    okn = ~pos & (i <= len(u) - 3)
    up[okp] = (3 * u[okp] - 4 * u[i[okp] - 1] + u[i[okp] - 2]) / (2 * h)
    up[okn] = (-3 * u[okn] + 4 * u[i[okn] + 1] - u[i[okn] + 2]) / (2 * h)
    du = uxx - u * up
    if left.dirichlet:
        du[0] = 0.0
    if right.dirichlet:
        du[-1] = 0.0
    return du


def _burgers_rk4(ic, left, right, length, x0, nx, times, dt_max):
    x = np.linspace(x0, x0 + length, nx)
    h = x[1] - x[0]
    dt_max = min(dt_max, 0.4 * h * h)
    u = np.asarray(ic(x), dtype=float)
    if left.dirichlet:
        u[0] = left.g(0.0) / left.b
    if right.dirichlet:
        u[-1] = right.g(0.0) / right.b
    out = []
    t = 0.0
    for target in times:
        steps = int(np.ceil((target - t) / dt_max - 1e-9))
        if steps > 0:
            dt = (target - t) / steps
            for _ in range(steps):
                k1 = _burgers_rhs(u, t, h, left, right)
                k2 = _burgers_rhs(u + 0.5 * dt * k1, t + 0.5 * dt, h, left, right)
                k3 = _burgers_rhs(u + 0.5 * dt * k2, t + 0.5 * dt, h, left, right)
                k4 = _burgers_rhs(u + dt * k3, t + dt, h, left, right)
                u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += dt
                if left.dirichlet:
                    u[0] = left.g(t) / left.b
                if right.dirichlet:
                    u[-1] = right.g(t) / right.b
        out.append(u.copy())
    return x, np.array(out)


_SOLVERS = {"heat": _heat_cn, "burgers": _burgers_rk4}


def reference_pde_solve(equation, ic, left, right, t_eval, x_eval, x_range=(0.0, 1.0),
                        nx=401, dt_max=None, check_tol=1e-4):
    """Dense reference solution evaluated at ``t_eval`` x ``x_eval``.

    The solve is repeated with halved space and time steps; if the two
    differ by more than ``check_tol`` at the evaluation points a
    :class:`ConvergenceError` is raised.
    """
    try:
        solver = _SOLVERS[equation]
    except KeyError:
        raise ValueError(f"unknown equation {equation!r}") from None
    t_eval = np.asarray(t_eval, dtype=float)
    x_eval = np.asarray(x_eval, dtype=float)
    order = np.argsort(t_eval)
    times = t_eval[order]
    length = x_range[1] - x_range[0]
    h = length / (nx - 1)
    dt_max = dt_max or (h if equation == "heat" else 0.4 * h * h)

    def run(n, dt):
        x, U = solver(ic, left, right, length, x_range[0], n, times, dt)
        return np.array([CubicSpline(x, row)(x_eval) for row in U])

    coarse = run(nx, dt_max)
    fine = run(2 * nx - 1, dt_max / 2)
    change = float(np.max(np.abs(fine - coarse))) if fine.size else 0.0
    if change > check_tol:
        raise ConvergenceError(f"{equation} reference changed by {change:.3e} under refinement (tol {check_tol:g})")
    U = np.empty_like(fine)
    U[order] = fine
    return ReferenceSolution(t_eval, x_eval, U, change)
