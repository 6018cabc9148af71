"""Dirichlet solvers for -Lap u + g(u) = mu with measure data.

The linear problem is solved by a sparse direct factorization on small
grids (n^dim <= 10_000) and by conjugate gradients on the SPD stencil
matrix otherwise.  The semilinear problem uses damped Newton steps with
an Armijo backtracking line search on the discrete energy

    E(u) = 0.5 <u, -Lap_h u>_h + sum G(u_i) h^dim - <rhs, u>_h,

whose gradient is exactly the PDE residual.  A monotone sub- and
supersolution iteration is available as an independent solve mode.
Residuals are always measured in the quadrature-weighted discrete L1
norm, matching the measure-space reading of the right-hand side.
"""
from __future__ import annotations

import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .grid import Grid, ScalarField, _lp
from .measures import DiscreteMeasure, negate, rasterize, tv_norm
from .nonlinearity import Nonlinearity

DEFAULT_TOL = 1e-10
DIRECT_LIMIT = 10_000       # n^dim at or below this uses a sparse LU
CG_RTOL = 1e-12
NEWTON_MAX = 100
ADMISSIBILITY_TOL = 1e-8    # slack for sub/supersolution sign checks


@dataclass
class SolveReport:
    iterations: int
    final_residual: float
    converged: bool
    wall_time: float
    method: str = "newton"
    inner_iterations: int = 0


class ConvergenceError(RuntimeError):
    """Raised when an iteration cap is hit; carries the partial result."""

    def __init__(self, message, report=None, field=None, trace=None):
        super().__init__(message)
        self.report = report
        self.field = field
        self.trace = trace


@functools.lru_cache(maxsize=32)
def _stencil_csc(dim: int, n: int):
    h2 = (n + 1.0) ** 2
    e = np.ones(n)
    a1 = sp.diags([-e[:-1], 2.0 * e, -e[:-1]], [-1, 0, 1], format="csr")
    eye = sp.identity(n, format="csr")
    if dim == 1:
        a = a1
    elif dim == 2:
        a = sp.kron(a1, eye) + sp.kron(eye, a1)
    else:
        a = (sp.kron(sp.kron(a1, eye), eye) + sp.kron(sp.kron(eye, a1), eye)
             + sp.kron(sp.kron(eye, eye), a1))
    return (h2 * a).tocsc()


def _solve_shifted(grid: Grid, diag, rhs, atol_l1: float, x0=None):
    """Solve (-Lap_h + diag) x = rhs; returns (x, inner_iterations, method)."""
    diag_arr = np.asarray(diag, dtype=np.float64)
    if diag_arr.ndim == 0:
        diag_arr = np.full(grid.total_interior, float(diag_arr))
    if grid.total_interior <= DIRECT_LIMIT:
        a = _stencil_csc(grid.dim, grid.n)
        if np.any(diag_arr):
            a = (a + sp.diags(diag_arr)).tocsc()
        return spla.splu(a).solve(rhs), 1, "direct"
    if x0 is None:
        x0 = np.zeros(grid.total_interior)
    x, iters, res_l1, converged = kernels.cg_shifted(
        rhs, diag_arr, grid.dim, grid.n, grid.h, x0,
        atol_l1, CG_RTOL, maxiter=40 * grid.n + 200)
    if not converged:
        raise ConvergenceError(
            f"no convergence: cg stalled at weighted-L1 residual {res_l1:.3e}",
            report=SolveReport(iters, res_l1, False, 0.0, method="cg"))
    return x, iters, "cg"


def _neg_lap(grid: Grid, values: np.ndarray) -> np.ndarray:
    return kernels.neg_laplacian(values, grid.dim, grid.n, 1.0 / grid.h ** 2)


def solve_linear(grid: Grid, m: DiscreteMeasure, tol: float = DEFAULT_TOL):
    """Solve -Lap_h u = m on the grid.

    Returns
    -------
    (ScalarField, SolveReport); the report residual is the weighted-L1
    norm of -Lap_h u - rasterize(m).
    """
    t0 = time.perf_counter()
    rhs = rasterize(m, grid).values
    x, inner, method = _solve_shifted(grid, 0.0, rhs, atol_l1=tol)
    res = _lp(_neg_lap(grid, x) - rhs, 1.0, grid)
    report = SolveReport(1, res, res <= tol, time.perf_counter() - t0,
                         method=method, inner_iterations=inner)
    if not report.converged:
        raise ConvergenceError(f"no convergence: linear residual {res:.3e} > {tol:.1e}",
                               report=report, field=ScalarField(grid, x))
    return ScalarField(grid, x), report


def _energy_parts(grid: Grid, g: Nonlinearity, rhs: np.ndarray, u: np.ndarray):
    lap_u = _neg_lap(grid, u)
    hd = grid.cell_volume
    quad = 0.5 * float(u @ lap_u) * hd
    return lap_u, quad + float(g.primitive(u).sum()) * hd - float(rhs @ u) * hd


def solve_semilinear(grid: Grid, g: Nonlinearity, m: DiscreteMeasure,
                     tol: float = DEFAULT_TOL):
    """Solve -Lap_h u + g(u) = m by damped Newton iteration.

    The initial iterate is the linear solution clipped to [-M, M] with
    M the sup of the linear solve against |m|; steps are accepted by an
    Armijo test on the discrete energy, so the energy never increases.
    After the residual tolerance is reached one extra full step polishes
    the iterate to essentially machine accuracy, which the maximum
    principle and gradient checks downstream rely on.
    """
    t0 = time.perf_counter()
    hd = grid.cell_volume
    rhs = rasterize(m, grid).values
    inner_total = 0

    u0, inner, method = _solve_shifted(grid, 0.0, rhs, atol_l1=min(tol, 1e-10))
    inner_total += inner
    if np.any(rhs < 0.0):
        abs_measure = _abs_measure(m)
        cap_vals, inner, _ = _solve_shifted(grid, 0.0, rasterize(abs_measure, grid).values,
                                            atol_l1=min(tol, 1e-10))
        inner_total += inner
        cap = float(np.abs(cap_vals).max()) if cap_vals.size else 0.0
    else:
        cap = float(np.abs(u0).max()) if u0.size else 0.0
    u = np.clip(u0, -cap, cap)

    lap_u, energy = _energy_parts(grid, g, rhs, u)
    newton_its = 0
    polished = False
    residual = math.inf
    for _ in range(NEWTON_MAX):
        res_vec = lap_u + np.asarray(g(u)) - rhs
        residual = float(np.abs(res_vec).sum()) * hd
        if residual <= tol and polished:
            break
        if residual <= tol:
            polished = True  # one more full step to push toward machine precision
        dg = np.asarray(g.derivative(u))
        if np.any(dg < -1e-12):
            raise ValueError("invalid nonlinearity: negative derivative detected during solve")
        dg = np.maximum(dg, 0.0)
        try:
            delta, inner, method = _solve_shifted(grid, dg, -res_vec,
                                                  atol_l1=max(tol * 1e-2, 1e-14))
        except ConvergenceError as exc:
            exc.field = ScalarField(grid, u)
            raise
        inner_total += inner
        lap_delta = _neg_lap(grid, delta)
        # quadratic expansion of the Laplacian energy along the step
        quad_ud = float(u @ lap_delta) * hd
        quad_dd = float(delta @ lap_delta) * hd
        lin_rhs = float(rhs @ delta) * hd
        base_quad = 0.5 * float(u @ lap_u) * hd
        rhs_u = float(rhs @ u) * hd
        slope = float(res_vec @ delta) * hd
        tau = 1.0
        accepted = False
        while tau >= 1e-12:
            cand = u + tau * delta
            cand_energy = (base_quad + tau * quad_ud + 0.5 * tau * tau * quad_dd
                           + float(g.primitive(cand).sum()) * hd - rhs_u
                           - tau * lin_rhs)
            if cand_energy <= energy + 1e-4 * tau * slope:
                accepted = True
                break
            if tau == 1.0:
                # near the fixed point the energy decrement drops below
                # rounding; accept the full step on residual contraction
                cand_res = lap_u + lap_delta + np.asarray(g(cand)) - rhs
                if float(np.abs(cand_res).sum()) * hd < residual:
                    accepted = True
                    break
            tau *= 0.5
        if not accepted:
            break  # neither energy nor residual can improve; keep the iterate
        u = u + tau * delta
        lap_u = lap_u + tau * lap_delta
        energy = cand_energy
        newton_its += 1
        if polished and tau == 1.0:
            res_vec = lap_u + np.asarray(g(u)) - rhs
            residual = float(np.abs(res_vec).sum()) * hd
            break

    res_vec = _neg_lap(grid, u) + np.asarray(g(u)) - rhs
    residual = float(np.abs(res_vec).sum()) * hd
    report = SolveReport(newton_its, residual, residual <= tol,
                         time.perf_counter() - t0, method=f"newton+{method}",
                         inner_iterations=inner_total)
    out = ScalarField(grid, u)
    if not report.converged:
        raise ConvergenceError(
            f"no convergence: newton residual {residual:.3e} > {tol:.1e} "
            f"after {newton_its} iterations", report=report, field=out)
    return out, report


def _abs_measure(m: DiscreteMeasure) -> DiscreteMeasure:
    density = None
    if m.density is not None:
        density = ScalarField(m.density.grid, np.abs(m.density.values))
    return DiscreteMeasure(m.dim, atoms=tuple((loc, abs(w)) for loc, w in m.atoms),
                           density=density)


def solve_by_sub_supersolution(grid: Grid, g: Nonlinearity, m: DiscreteMeasure,
                               lower: ScalarField, upper: ScalarField,
                               tol: float = DEFAULT_TOL, max_iter: int = 20000):
    """Monotone iteration between an ordered sub/supersolution pair.

    Iterates u_{k+1} = (-Lap_h + lam I)^{-1}(rhs + lam u_k - g(u_k))
    from the supersolution with lam >= max g' on the bracket; iterates
    decrease pointwise and stay above the subsolution.
    """
    t0 = time.perf_counter()
    rhs = rasterize(m, grid).values
    lo, hi = lower.values, upper.values
    if np.any(lo > hi + 1e-12):
        raise ValueError("invalid bracket: lower exceeds upper somewhere")
    res_lo = _neg_lap(grid, lo) + np.asarray(g(lo)) - rhs
    if np.any(res_lo > ADMISSIBILITY_TOL):
        raise ValueError("invalid bracket: lower bound is not a subsolution")
    res_hi = _neg_lap(grid, hi) + np.asarray(g(hi)) - rhs
    if np.any(res_hi < -ADMISSIBILITY_TOL):
        raise ValueError("invalid bracket: upper bound is not a supersolution")
    lam = g.max_derivative(float(lo.min()), float(hi.max()))

    u = hi.copy()
    inner_total = 0
    for it in range(1, max_iter + 1):
        target = rhs + lam * u - np.asarray(g(u))
        nxt, inner, method = _solve_shifted(grid, lam, target,
                                            atol_l1=max(tol * 1e-2, 1e-14), x0=u)
        inner_total += inner
        if np.any(nxt > u + 1e-10):
            raise ConvergenceError("monotone iteration failed to decrease",
                                   field=ScalarField(grid, nxt))
        if np.any(nxt < lo - 1e-10):
            raise ConvergenceError("monotone iteration left the bracket",
                                   field=ScalarField(grid, nxt))
        u = nxt
        res = _neg_lap(grid, u) + np.asarray(g(u)) - rhs
        residual = _lp(res, 1.0, grid)
        if residual <= tol:
            report = SolveReport(it, residual, True, time.perf_counter() - t0,
                                 method=f"monotone+{method}", inner_iterations=inner_total)
            return ScalarField(grid, u), report
    report = SolveReport(max_iter, residual, False, time.perf_counter() - t0,
                         method="monotone", inner_iterations=inner_total)
    raise ConvergenceError(f"no convergence: monotone iteration residual {residual:.3e}",
                           report=report, field=ScalarField(grid, u))


def residual_measure(grid: Grid, g: Nonlinearity, u: ScalarField) -> DiscreteMeasure:
    """The measure datum -Lap_h u + g(u) that u solves exactly."""
    vals = _neg_lap(grid, u.values) + np.asarray(g(u.values))
    return DiscreteMeasure.from_density(ScalarField(grid, vals))


# ---------------------------------------------------------------------------
# truncation against supersolutions
# ---------------------------------------------------------------------------

def truncate_min(u: ScalarField, w: ScalarField, g: Nonlinearity):
    """Truncate u from above by a nonnegative supersolution w.

    Returns (z, residual_measure(z)) with z = min(u, w) pointwise.  The
    total variation of the new datum never exceeds that of u's datum,
    which is what makes the truncation admissible in the control loop.
    """
    grid = u.grid
    if grid != w.grid:
        raise ValueError("invalid supersolution: grids differ")
    if np.any(w.values < -1e-12):
        raise ValueError("invalid supersolution: w must be nonnegative")
    res_w = _neg_lap(grid, w.values) + np.asarray(g(w.values))
    if np.any(res_w < -ADMISSIBILITY_TOL):
        raise ValueError("invalid supersolution: -Lap w + g(w) must be >= 0")
    z = ScalarField(grid, np.minimum(u.values, w.values))
    return z, residual_measure(grid, g, z)


def truncate_max(u: ScalarField, w: ScalarField, g: Nonlinearity):
    """Mirror truncation from below by a nonpositive subsolution w.

    Implemented exactly as the reflection of truncate_min through
    t -> -t with the reflected nonlinearity -g(-t).
    """
    z_neg, m_neg = truncate_min(ScalarField(u.grid, -u.values),
                                ScalarField(w.grid, -w.values), g.reflected())
    return ScalarField(u.grid, -z_neg.values), negate(m_neg)


@dataclass
class TruncationCheck:
    lhs: float
    rhs: float
    slack: float
    excess_nodes: int


def lemma_truncation_check(u1: ScalarField, u2: ScalarField,
                           a1: ScalarField, a2: ScalarField) -> TruncationCheck:
    """Evaluate the interior truncation inequality on one instance.

    With u = min(u1, u2) and a = a1 where u1 <= u2, a2 elsewhere,
    compares lhs = ||-Lap u + a||_L1 against
    rhs = ||-Lap u1 + a1||_L1 + integral over {u1 > u2} of (a2 - a1).
    Requires -Lap u2 + a2 >= 0 (up to admissibility slack).
    """
    grid = u1.grid
    if not (grid == u2.grid == a1.grid == a2.grid):
        raise ValueError("invalid input: all fields must share one grid")
    super_res = _neg_lap(grid, u2.values) + a2.values
    if np.any(super_res < -ADMISSIBILITY_TOL):
        raise ValueError("invalid supersolution: -Lap u2 + a2 must be >= 0")
    hd = grid.cell_volume
    excess = u1.values > u2.values
    z = np.minimum(u1.values, u2.values)
    a = np.where(excess, a2.values, a1.values)
    lhs = float(np.abs(_neg_lap(grid, z) + a).sum()) * hd
    rhs = (float(np.abs(_neg_lap(grid, u1.values) + a1.values).sum()) * hd
           + float((a2.values[excess] - a1.values[excess]).sum()) * hd)
    return TruncationCheck(lhs, rhs, rhs - lhs, int(excess.sum()))


# ---------------------------------------------------------------------------
# reduced-limit driver
# ---------------------------------------------------------------------------

@dataclass
class LevelRecord:
    level: int
    n: int
    h: float
    tv_mu: float
    u_l1: float
    g_u_l1: float
    w11_u: float
    w11_tv_ratio: float
    cauchy_l1: float
    iterations: int
    residual: float


@dataclass
class ReducedLimitResult:
    u_sharp: ScalarField
    mu_sharp: DiscreteMeasure
    trace: list = field(default_factory=list)


def reduced_limit(grid_schedule, measure_schedule, g: Nonlinearity,
                  tol: float = DEFAULT_TOL) -> ReducedLimitResult:
    """Solve along a coupled grid/measure refinement schedule.

    Each level k solves -Lap u_k + g(u_k) = measure_schedule(k) on
    grid_schedule[k]; coarse solutions are injected onto the finest grid
    by multilinear interpolation to report L1 Cauchy differences.  The
    returned mu_sharp is the residual measure of the finest solution.
    The trace also carries the empirical ratio w11(u)/tv(mu), for which
    no sharp constant is asserted.
    """
    from .grid import interpolate_to, w11_norm

    grids = list(grid_schedule)
    if not grids:
        raise ValueError("invalid config: empty grid schedule")
    if any(b.n <= a.n for a, b in zip(grids, grids[1:])) or \
       any(gr.dim != grids[0].dim for gr in grids):
        raise ValueError("invalid config: grids must refine in one dimension")
    finest = grids[-1]
    trace = []
    prev_injected = None
    u = None
    for k, grid in enumerate(grids):
        mu = measure_schedule(k)
        try:
            u, report = solve_semilinear(grid, g, mu, tol=tol)
        except ConvergenceError as exc:
            exc.trace = trace
            raise
        injected = interpolate_to(u, finest) if grid != finest else u
        cauchy = math.nan
        if prev_injected is not None:
            cauchy = _lp(injected.values - prev_injected.values, 1.0, finest)
        prev_injected = injected
        tv_mu = tv_norm(mu)
        w11 = w11_norm(u)
        trace.append(LevelRecord(
            level=k, n=grid.n, h=grid.h, tv_mu=tv_mu,
            u_l1=_lp(u.values, 1.0, grid),
            g_u_l1=_lp(np.asarray(g(u.values)), 1.0, grid),
            w11_u=w11,
            w11_tv_ratio=w11 / tv_mu if tv_mu > 0.0 else math.nan,
            cauchy_l1=cauchy,
            iterations=report.iterations,
            residual=report.final_residual))
    return ReducedLimitResult(u_sharp=u, mu_sharp=residual_measure(finest, g, u),
                              trace=trace)
