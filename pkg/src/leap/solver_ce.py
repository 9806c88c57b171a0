"""Certainty-equivalent IoT control (IoTC-CE).

Every interfering edge gets a bivariate Gaussian fit of its (serving loss,
loss to victim) pair in natural-log scale. The random interference
constraint is then replaced by its closed form

    ln(sum_e a_e exp(pi_e + b'm + b'Cb / 2) + N0) <= theta_c,   b = [alpha_e, -1]

which by Jensen's inequality is never looser than the expectation it
replaces. The resulting deterministic convex program is solved by an
augmented-Lagrangian method whose box-constrained subproblems go to
L-BFGS-B. The same driver also solves the exact program on enumerable
instances, which makes a reference optimum for tests.
"""

from dataclasses import dataclass, field
import io
import json
import math

import numpy as np
from scipy.optimize import minimize

from . import optcore
from .measurements import MeasurementStatistics
from .solver_sl import decode_solution

EPS = 1e-6


class InnerNonConvergence(RuntimeError):
    """The deterministic solver ran out of iterations before meeting its tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


# ------------------------------------------------------------------ fitting

def fit_moments(x1, x2, prob, eps=EPS):
    """Weighted mean and covariance of one 2-D histogram.

    Returns ``(mean, cov, degenerate)``; a single-bin histogram gives
    ``cov = eps * I`` and ``degenerate = True``.
    """
    x = np.column_stack((np.atleast_1d(x1), np.atleast_1d(x2))).astype(float)
    p = np.asarray(prob, dtype=float)
    p = p / p.sum()
    m = p @ x
    if len(p) == 1:
        return m, eps * np.eye(2), True
    d = x - m
    cov = (d * p[:, None]).T @ d
    cov = 0.5 * (cov + cov.T) + eps * np.eye(2)
    return m, cov, False


@dataclass(frozen=True, eq=False)
class GaussianFit:
    """Per-edge log-normal fits, aligned with the instance's edge order."""
    src: np.ndarray          # interferer cell index per edge
    dst: np.ndarray          # victim cell index per edge
    mean: np.ndarray         # (E, 2)
    cov: np.ndarray          # (E, 2, 2)
    degenerate: np.ndarray   # (E,) bool
    cell_ids: tuple = ()

    def to_dict(self):
        rows = []
        for j in range(len(self.src)):
            rows.append({"interferer": self.cell_ids[self.src[j]],
                         "victim": self.cell_ids[self.dst[j]],
                         "mean": [float(v) for v in self.mean[j]],
                         "cov": [[float(v) for v in r] for r in self.cov[j]],
                         "degenerate": bool(self.degenerate[j])})
        return {"schema_version": 1, "kind": "gaussian_fit", "epsilon": EPS, "edges": rows}

    def to_text(self):
        return json.dumps(self.to_dict(), indent=1)


def fit_gaussians(source, eps=EPS):
    """Fit every interfering edge of an instance (or of raw statistics)."""
    inst = optcore.build_instance(source) if isinstance(source, MeasurementStatistics) else source
    E = inst.n_edges
    mean = np.zeros((E, 2))
    cov = np.zeros((E, 2, 2))
    degen = np.zeros(E, dtype=bool)
    off = inst.edge_offsets
    for j in range(E):
        lo, hi = off[j], off[j + 1]
        mean[j], cov[j], degen[j] = fit_moments(inst.xi1[lo:hi], inst.xi2[lo:hi],
                                                inst.jprob[lo:hi], eps)
    return GaussianFit(inst.src.copy(), inst.dst.copy(), mean, cov, degen, tuple(inst.cell_ids))


def g_hat(pi_e, alpha_e, mean, cov):
    """Expected linear interference of one edge under its Gaussian fit."""
    b = np.array([alpha_e, -1.0])
    return float(np.exp(pi_e + b @ mean + 0.5 * b @ cov @ b))


def _exponents(fit, pi, alpha):
    al = alpha[fit.src]
    m, C = fit.mean, fit.cov
    quad = C[:, 0, 0] * al * al - 2.0 * C[:, 0, 1] * al + C[:, 1, 1]
    s = pi[fit.src] + al * m[:, 0] - m[:, 1] + 0.5 * quad
    ds_dalpha = m[:, 0] + C[:, 0, 0] * al - C[:, 0, 1]
    return s, ds_dalpha


def block2_ce(instance, fit, pi, alpha):
    """Closed-form log interference per cell with per-edge partials.

    Same ``(G, dG/dpi, dG/dalpha)`` interface as the other block2 models;
    ``a_e`` enters as a weight on each edge's expected contribution.
    """
    C = instance.n_cells
    if instance.n_edges == 0:
        z = np.zeros(0)
        return np.full(C, math.log(instance.n0)), z, z
    s, ds = _exponents(fit, pi, alpha)
    t = instance.occ * np.exp(s)
    total = np.bincount(instance.dst, weights=t, minlength=C) + instance.n0
    w = t / total[instance.dst]
    return np.log(total), w, w * ds


# ------------------------------------------------------------------ solver

@dataclass(frozen=True)
class InnerConfig:
    tol: float = 1e-6
    max_iterations: int = 200_000
    penalty: float = 10.0
    penalty_growth: float = 10.0
    max_penalty: float = 1e10
    max_outer: int = 60


@dataclass
class SolveTrace:
    """One row per outer (multiplier) iteration."""
    rows: list = field(default_factory=list)
    inner_iterations: int = 0
    kkt: float = math.inf
    duals: object = None

    def to_csv(self):
        buf = io.StringIO()
        buf.write("outer,penalty,inner_iterations,objective,max_violation,kkt\n")
        for r in self.rows:
            buf.write("{},{:.6e},{},{:.12e},{:.12e},{:.12e}\n".format(*r))
        return buf.getvalue()


def _unpack(x, C):
    return optcore.PrimalState(x[:C], x[C:2 * C], x[2 * C:3 * C], x[3 * C:])


def _constraints(instance, z, block2):
    G, dpi, dal = block2(z.pi, z.alpha)
    return optcore.constraint_from_block2(instance, z, G), dpi, dal


def _lagrangian_grad(instance, z, nu, dpi, dal, scale):
    """Gradient of (objective / scale - nu . h) as a flat vector."""
    K, C = instance.n_bins, instance.n_cells
    dual = optcore.DualState(nu[:K] * scale, nu[K:K + C] * scale, nu[K + C:] * scale)
    g = optcore.lagrangian_gradient_from_block2(instance, z, dual, dpi, dal)
    return g.vector() / scale


def kkt_residual(instance, x, nu, block2, lo, hi, scale):
    """Max of projected-gradient, feasibility and complementarity residuals."""
    z = _unpack(x, instance.n_cells)
    h, dpi, dal = _constraints(instance, z, block2)
    g = _lagrangian_grad(instance, z, nu, dpi, dal, scale)
    stat = np.abs(np.clip(x + g, lo, hi) - x).max(initial=0.0)
    feas = max(float(h.max(initial=0.0)), 0.0)
    comp = float(np.abs(nu * h).max(initial=0.0))
    return max(stat, feas, comp)


class _Reduced:
    """The program with gamma eliminated.

    gamma only enters the objective (increasing) and block1, so at the
    optimum gamma_c(b) = pi_c - (1 - alpha_c) lambda_c(b) - theta_c. Of the
    per-bin lower bounds on gamma and power caps only the cell's largest
    loss can bind, which leaves 3C variables and 3C constraints.
    """

    def __init__(self, instance):
        self.inst = instance
        C = instance.n_cells
        bc, lam = instance.bin_cell, instance.lam
        self.has = np.bincount(bc, minlength=C) > 0
        order = np.lexsort((lam, bc))
        last = np.r_[bc[order][1:] != bc[order][:-1], True] if len(bc) else np.zeros(0, bool)
        self.top = np.full(C, -1)
        self.top[bc[order][last]] = order[last]   # bin with the largest loss per cell
        self.lmax = np.where(self.has, lam[np.maximum(self.top, 0)] if len(lam) else 0.0, 0.0)
        self.ln_pmax = math.log(instance.p_max)
        self.gmin = instance.bounds.gamma_min

    def gamma(self, pi, al, th):
        bc = self.inst.bin_cell
        return pi[bc] - (1.0 - al[bc]) * self.inst.lam - th[bc]

    def objective(self, pi, al, th):
        """Objective value and its (pi, alpha, theta) gradient."""
        inst, C = self.inst, self.inst.n_cells
        g = self.gamma(pi, al, th)
        dv = inst.weight * optcore.utility_derivative(g)
        gp = np.bincount(inst.bin_cell, weights=dv, minlength=C)
        ga = np.bincount(inst.bin_cell, weights=dv * inst.lam, minlength=C)
        return float(np.dot(inst.weight, optcore.utility(g))), gp, ga, -gp

    def constraints(self, pi, al, th, block2):
        G, dpi, dal = block2(pi, al)
        r1 = np.where(self.has, self.gmin - pi + (1.0 - al) * self.lmax + th, -1.0)
        r3 = np.where(self.has, pi + al * self.lmax - self.ln_pmax, -1.0)
        return np.concatenate((r1, G - th, r3)), dpi, dal

    def penalty_grad(self, t, dpi, dal):
        """sum_i t_i grad r_i as (pi, alpha, theta) parts."""
        inst, C = self.inst, self.inst.n_cells
        t1, t2, t3 = t[:C], t[C:2 * C], t[2 * C:]
        gp = t3 - t1
        ga = (t3 - t1) * self.lmax
        gt = t1 - t2
        if inst.n_edges:
            md = t2[inst.dst]
            gp = gp + np.bincount(inst.src, weights=md * dpi, minlength=C)
            ga = ga + np.bincount(inst.src, weights=md * dal, minlength=C)
        return gp, ga, gt

    def expand(self, pi, al, th, nu, scale):
        """Full primal point and scaled full multipliers."""
        inst, C, K = self.inst, self.inst.n_cells, self.inst.n_bins
        b = inst.bounds
        g = np.clip(self.gamma(pi, al, th), b.gamma_min, b.gamma_max)
        z = optcore.PrimalState(pi.copy(), al.copy(), th.copy(), g)
        mu1 = inst.weight * optcore.utility_derivative(g) / scale
        mu3 = np.zeros(K)
        cells = np.flatnonzero(self.has)
        mu1[self.top[cells]] += nu[cells]
        mu3[self.top[cells]] = nu[2 * C + cells]
        return z, np.concatenate((mu1, nu[C:2 * C], mu3))


def solve_program(instance, block2, config=None, initial=None):
    """Maximise the objective under ``block2`` by augmented Lagrangian.

    ``block2(pi, alpha)`` returns ``(G, dG/dpi, dG/dalpha)``. Works on the
    gamma-eliminated program (see :class:`_Reduced`) with the objective
    divided by the total bin weight so tolerances are scale free; the
    stopping test is the KKT residual of the full program at the expanded
    point. Returns ``(primal, trace)``; raises :class:`InnerNonConvergence`
    when the residual is still above ``config.tol`` after the budget.
    """
    cfg = config or InnerConfig()
    C = instance.n_cells
    red = _Reduced(instance)
    b = instance.bounds
    lo = np.concatenate((np.full(C, b.pi_min), np.zeros(C), np.full(C, b.theta_min)))
    hi = np.concatenate((np.full(C, b.pi_max), np.ones(C), np.full(C, b.theta_max)))
    full_lo, full_hi = optcore.box_arrays(instance)
    # the solver sees alpha multiplied by the cell's largest serving log
    # loss, so alpha moves in the same units as pi (better conditioned)
    d = np.ones(3 * C)
    d[C:2 * C] = np.maximum(red.lmax, 1.0)
    bounds = list(zip(lo * d, hi * d))
    scale = max(float(instance.weight.sum()), 1e-300)
    z0 = initial or optcore.initial_primal(instance)
    x = np.clip(np.concatenate((z0.pi, z0.alpha, z0.theta)), lo, hi)
    nu = np.zeros(3 * C)
    rho = cfg.penalty
    trace = SolveTrace()
    last_viol = math.inf

    def fun(y):
        v = np.clip(y / d, lo, hi)
        pi, al, th = v[:C], v[C:2 * C], v[2 * C:]
        f, gp, ga, gt = red.objective(pi, al, th)
        r, dpi, dal = red.constraints(pi, al, th, block2)
        t = np.maximum(nu + rho * r, 0.0)
        pp, pa, pt = red.penalty_grad(t, dpi, dal)
        val = -f / scale + float((t * t - nu * nu).sum()) / (2 * rho)
        grad = np.concatenate((pp - gp / scale, pa - ga / scale, pt - gt / scale)) / d
        return val, grad

    z = None
    for outer in range(cfg.max_outer):
        budget = cfg.max_iterations - trace.inner_iterations
        if budget <= 0:
            break
        res = minimize(fun, x * d, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": budget, "maxfun": 2 * budget, "ftol": 0.0,
                                "gtol": 0.1 * cfg.tol / d.max(), "maxcor": 30})
        x = np.clip(res.x / d, lo, hi)
        trace.inner_iterations += int(res.nit)
        pi, al, th = x[:C], x[C:2 * C], x[2 * C:]
        r, _, _ = red.constraints(pi, al, th, block2)
        nu = np.maximum(nu + rho * r, 0.0)
        viol = max(float(r.max(initial=0.0)), 0.0)
        z, nu_full = red.expand(pi, al, th, nu, scale)
        kkt = kkt_residual(instance, z.vector(), nu_full, block2, full_lo, full_hi, scale)
        trace.rows.append((outer, rho, int(res.nit), optcore.objective(instance, z), viol, kkt))
        trace.kkt = kkt
        if kkt < cfg.tol:
            break
        if viol > 0.25 * last_viol and rho < cfg.max_penalty:
            rho *= cfg.penalty_growth
        last_viol = viol
    if trace.kkt >= cfg.tol:
        raise InnerNonConvergence(
            f"KKT residual {trace.kkt:.3e} above {cfg.tol:g} after "
            f"{trace.inner_iterations} inner iterations (max constraint violation "
            f"{last_viol:.3e}; a persistent violation means the instance is infeasible)", trace.kkt)
    trace.duals = optcore.DualState.from_vector(nu_full * scale, C, instance.n_bins)
    return _cleanup(instance, z, block2), trace


def _cleanup(instance, z, block2):
    """Remove residual infeasibility left at solver tolerance.

    pi is lowered to the power cap, theta raised to the block2 value and
    gamma lowered onto block1; each move changes the point by at most the
    residual.
    """
    b = instance.bounds
    z.pi = np.clip(np.minimum(z.pi, math.log(instance.p_max) - z.alpha * instance.lam_max()),
                   b.pi_min, b.pi_max)
    G, _, _ = block2(z.pi, z.alpha)
    z.theta = np.clip(np.maximum(z.theta, G), b.theta_min, b.theta_max)
    bc = instance.bin_cell
    tight = z.pi[bc] - (1.0 - z.alpha[bc]) * instance.lam - z.theta[bc]
    z.gamma = np.clip(np.minimum(z.gamma, tight), b.gamma_min, b.gamma_max)
    return z


def solve_ce(instance, fit=None, config=None):
    """IoTC-CE: returns ``(PowerControlSolution, SolveTrace)``."""
    fit = fit or fit_gaussians(instance)
    primal, trace = solve_program(instance, lambda pi, al: block2_ce(instance, fit, pi, al), config)
    trace.primal = primal
    flags = {instance.cell_ids[int(j)]: "degenerate_fit"
             for j in np.unique(fit.src[fit.degenerate])} if fit.degenerate.any() else {}
    return decode_solution(primal, instance, "ce", optcore.objective(instance, primal), flags), trace


def solve_exact(instance, config=None, cap=optcore.ENUMERATION_CAP):
    """Optimum of the exact program on an enumerable instance (reference solver)."""
    def block2(pi, al):
        return optcore.block2_exact(instance, pi, al, cap=cap)
    primal, trace = solve_program(instance, block2, config)
    trace.primal = primal
    return decode_solution(primal, instance, "exact", optcore.objective(instance, primal)), trace
