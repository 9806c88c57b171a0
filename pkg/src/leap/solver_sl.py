"""Stochastic primal-dual saddle-point solver (IoTC-SL).

Each iteration draws occupancy coins and joint path-loss samples for every
interfering edge, takes a projected gradient-ascent step on the primal
variables and a projected descent step on the multipliers of the sampled
Lagrangian, and folds the primal/dual iterates into running averages. The
averaged primal is the output.

By default the deterministic constraints are eliminated first (see
:class:`ReducedProgram`) and only the expectation constraint is dualised;
the iteration with all three blocks dualised is kept as the ``"full"``
formulation.
"""

from dataclasses import dataclass, field, asdict
import io
import logging
import math

import numpy as np

from . import optcore
from . import rng as _rng
from .evaluate import PowerControlSolution, sinr_target as _sinr_target

log = logging.getLogger(__name__)


class NumericalFailure(FloatingPointError):
    """A primal or dual iterate became NaN or infinite."""


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 50_000
    zeta: float = 0.51
    seed: int = 0
    step_scale: float = 1.0
    diagnostics_every: int = 500
    mc_samples_diag: int = 2000
    alpha_init: float = 0.8
    dual_cap: float = 1e9
    polish: bool = True
    polish_mc_samples: int = 4000
    check_projection: bool = False
    average_from: float = 0.5   # fraction of the run discarded before averaging
    formulation: str = "reduced"  # reduced | full
    batch: int = 0              # joint draws averaged per iteration, 0 = automatic
    # step preconditioning of the full formulation only
    scaling: str = "diagonal"   # none | alpha | diagonal
    objective_scale: float = 3.0  # divides primal steps, multiplies dual steps

    def __post_init__(self):
        if not 0.5 < self.zeta <= 1.0:
            raise ValueError("zeta must lie in (0.5, 1]")
        if not 0.0 <= self.average_from < 1.0:
            raise ValueError("average_from must lie in [0, 1)")
        if self.objective_scale <= 0:
            raise ValueError("objective_scale must be positive")
        if self.iterations < 1 or self.step_scale <= 0:
            raise ValueError("iterations and step_scale must be positive")
        if self.formulation not in ("reduced", "full"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.batch < 0:
            raise ValueError("batch must be non-negative")

    def step(self, n):
        return self.step_scale / n ** self.zeta


@dataclass
class Checkpoint:
    iteration: int
    objective: float
    max_violation: float
    se: float
    dual_norm: float
    step: float


@dataclass
class SolverTrace:
    checkpoints: list = field(default_factory=list)
    polished_objective: float = None
    raw_objective: float = None
    dual_cap_hits: int = 0
    primal: object = None      # decoded (averaged, possibly polished) primal point
    raw_primal: object = None  # averaged primal before polishing
    last_primal: object = None
    last_dual: object = None
    dual: object = None        # averaged multipliers

    def append(self, cp):
        if self.checkpoints and cp.iteration <= self.checkpoints[-1].iteration:
            raise ValueError("checkpoint iterations must increase")
        self.checkpoints.append(cp)

    def column(self, name):
        return np.array([getattr(c, name) for c in self.checkpoints])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("iteration,objective,max_violation,se,dual_norm,step\n")
        for c in self.checkpoints:
            buf.write(f"{c.iteration},{c.objective:.12e},{c.max_violation:.12e},"
                      f"{c.se:.12e},{c.dual_norm:.12e},{c.step:.12e}\n")
        return buf.getvalue()


def decode_solution(primal, instance, provenance="sl", objective=None, flags=None):
    """Linear-scale (P0, alpha, I*) per cell from a log-scale primal point."""
    return PowerControlSolution(tuple(instance.cell_ids), np.exp(primal.pi), primal.alpha.copy(),
                                np.exp(primal.theta), instance.p_max, provenance, objective,
                                dict(flags or {}))


def sinr_target(solution, cell_id, loss):
    """SINR target of a UE with linear loss ``loss`` in ``cell_id``."""
    return solution.sinr_target(cell_id, loss)


def _diagnose(instance, zhat, p, n, a_n, g, samples):
    C = instance.n_cells
    pr = optcore.PrimalState.from_vector(zhat, C)
    obj = optcore.objective(instance, pr)
    b1, b3 = optcore._blocks_13(instance, pr)
    est, se = optcore.mc_block2_all(instance, pr.pi, pr.alpha, samples, g)
    v2 = est - pr.theta
    worst, worst_se = -np.inf, 0.0
    if len(b1):
        worst = max(float(b1.max()), float(b3.max()))
    k = int(np.argmax(v2 - 3.0 * se)) if C else 0
    if C and v2[k] > worst:
        worst, worst_se = float(v2[k]), float(se[k])
    return Checkpoint(n, obj, worst, worst_se, float(np.linalg.norm(p)), a_n)


def alpha_unit(instance):
    """Per-cell scale that puts alpha * unit in the same units as pi.

    The mean serving log loss of the cell (at least 1). Running the
    iteration in the variable alpha * unit is a change of variables of the
    program; in the original coordinates it divides alpha's step by unit**2.
    """
    C = instance.n_cells
    cnt = np.bincount(instance.bin_cell, minlength=C)
    tot = np.bincount(instance.bin_cell, weights=instance.lam, minlength=C)
    return np.maximum(np.where(cnt > 0, tot / np.maximum(cnt, 1), 1.0), 1.0)


def step_gains(instance, cfg):
    """Per-coordinate primal and dual step multipliers.

    Both are diagonal rescalings of the program (of the variables and of
    the constraint rows), so the iteration targets the same optimum.

    * ``"none"``: every multiplier is 1.
    * ``"alpha"``: alpha's step is divided by :func:`alpha_unit` squared.
    * ``"diagonal"``: primal gain 1 / (absolute column sum) and dual gain
      1 / (absolute row sum) of the constraint Jacobian, evaluated with
      each victim's interference shared equally among its interferers.
    """
    C, K = instance.n_cells, instance.n_bins
    gain = np.ones(3 * C + K)
    dgain = np.ones(2 * K + C)
    if cfg.scaling == "none":
        return gain, dgain
    if cfg.scaling == "alpha":
        gain[C:2 * C] = 1.0 / alpha_unit(instance) ** 2
        return gain, dgain
    if cfg.scaling != "diagonal":
        raise ValueError(f"unknown scaling {cfg.scaling!r}")
    # Jacobian sums in the variable u = alpha * unit, where alpha's
    # coefficients are O(1) like everyone else's
    bc, lam = instance.bin_cell, instance.lam
    unit = alpha_unit(instance)
    rel = lam / unit[bc]
    n_in = np.bincount(instance.dst, minlength=C)
    share = 1.0 / np.maximum(n_in[instance.dst], 1)     # per edge
    x1 = np.zeros(instance.n_edges)
    if instance.n_edges:
        x1 = np.add.reduceat(instance.xi1 * instance.jprob, instance.edge_offsets[:-1])
        x1 = np.abs(x1) / unit[instance.src]
    col_pi = 2.0 * np.bincount(bc, minlength=C) + np.bincount(instance.src, weights=share, minlength=C)
    col_u = 2.0 * np.bincount(bc, weights=rel, minlength=C) + np.bincount(
        instance.src, weights=share * x1, minlength=C)
    col_th = np.bincount(bc, minlength=C) + 1.0
    gain[:C] = 1.0 / np.maximum(col_pi, 1.0)
    gain[C:2 * C] = 1.0 / (np.maximum(col_u, 1.0) * unit ** 2)
    gain[2 * C:3 * C] = 1.0 / col_th
    dgain[:K] = 1.0 / (3.0 + rel)
    dgain[K:K + C] = 1.0 / (1.0 + np.bincount(instance.dst, weights=share * (1.0 + x1),
                                              minlength=C))
    dgain[K + C:] = 1.0 / (1.0 + rel)
    return gain, dgain


class ReducedProgram:
    """The program with its deterministic constraints eliminated.

    The objective increases in gamma, so block1 is tight at the optimum and
    gamma_c(b) = pi_c - (1 - alpha_c) lambda_b - theta_c. With
    v_c = pi_c + alpha_c L_c (L_c the cell's largest serving log loss),
    block3 reduces to v_c <= ln P_max and gamma >= gamma_min to
    theta_c <= v_c - L_c - gamma_min; together with the theta box these form
    a polygon in (v_c, theta_c) that is projected onto exactly. Only the
    stochastic block2 keeps a multiplier. The remaining box bounds of
    pi and gamma are implied by the polygon.
    """

    def __init__(self, instance):
        self.instance = instance
        b, C = instance.bounds, instance.n_cells
        bc, w = instance.bin_cell, instance.weight
        self.L = instance.lam_max()
        self.dl = self.L[bc] - instance.lam           # >= 0
        has = np.bincount(bc, minlength=C) > 0
        self.load = np.bincount(bc, weights=w, minlength=C)
        self.v_hi = np.full(C, math.log(instance.p_max))
        self.v_lo = np.where(has, b.gamma_min + self.L + b.theta_min, b.pi_min)
        self.t_lo = np.full(C, b.theta_min)
        self.t_hi = np.full(C, b.theta_max)
        self.c = np.where(has, -self.L - b.gamma_min, np.inf)   # theta - v <= c
        self._flat = {}

    def gamma(self, v, alpha, theta):
        bc = self.instance.bin_cell
        return v[bc] - self.instance.lam - alpha[bc] * self.dl - theta[bc]

    def from_primal(self, primal):
        v, theta = self.project(primal.pi + primal.alpha * self.L, primal.theta)
        return v, np.clip(primal.alpha, 0.0, 1.0), theta

    def to_primal(self, v, alpha, theta):
        return optcore.PrimalState(v - alpha * self.L, alpha.copy(), theta.copy(),
                                   self.gamma(v, alpha, theta))

    def project(self, v, theta):
        """Euclidean projection of (v, theta) onto the per-cell polygon."""
        pv = np.clip(v, self.v_lo, self.v_hi)
        pt = np.clip(theta, self.t_lo, self.t_hi)
        bad = pt - pv > self.c
        if bad.any():
            # the box projection violates the diagonal edge, so the nearest
            # polygon point lies on that edge
            c = self.c[bad]
            lo = np.maximum(self.v_lo[bad], self.t_lo[bad] - c)
            hi = np.minimum(self.v_hi[bad], self.t_hi[bad] - c)
            nv = np.clip(0.5 * (v[bad] + theta[bad] - c), lo, hi)
            pv[bad] = nv
            pt[bad] = nv + c
        return pv, pt

    def sample_terms(self, v, alpha, chi, x1, x2):
        """Batch-averaged G, edge weights and weight * xi1 for (M, E) draws."""
        inst = self.instance
        C, src, dst = inst.n_cells, inst.src, inst.dst
        if inst.n_edges == 0:
            z = np.zeros(0)
            return np.full(C, math.log(inst.n0)), z, z
        chi, x1, x2 = np.atleast_2d(chi, x1, x2)
        M = chi.shape[0]
        idx = self._flat.get(M)
        if idx is None:
            idx = self._flat[M] = (np.arange(M)[:, None] * C + dst).ravel()
        pi = v - alpha * self.L
        term = np.exp(pi[src] + alpha[src] * x1 - x2)
        term *= chi
        total = np.bincount(idx, weights=term.ravel(), minlength=M * C).reshape(M, C)
        total += inst.n0
        wgt = term / total[:, dst]
        if M == 1:
            return np.log(total[0]), wgt[0], wgt[0] * x1[0]
        k = 1.0 / M
        return (np.log(total).sum(axis=0) * k, wgt.sum(axis=0) * k,
                np.einsum("me,me->e", wgt, x1) * k)

    def lagrangian(self, v, alpha, theta, mu, chi, x1, x2):
        G, _, _ = self.sample_terms(v, alpha, chi, x1, x2)
        obj = float(np.dot(self.instance.weight, optcore.utility(self.gamma(v, alpha, theta))))
        return obj - float(np.dot(mu, G - theta))

    def gradient(self, v, alpha, theta, mu, chi, x1, x2):
        """Primal gradient (v, alpha, theta) of the sampled Lagrangian and block2 values."""
        inst = self.instance
        C, bc, src, dst = inst.n_cells, inst.bin_cell, inst.src, inst.dst
        G, wgt, wx = self.sample_terms(v, alpha, chi, x1, x2)
        d = inst.weight * optcore.utility_derivative(self.gamma(v, alpha, theta))
        gv = np.bincount(bc, weights=d, minlength=C)
        ga = -np.bincount(bc, weights=d * self.dl, minlength=C)
        gt = mu - gv
        if inst.n_edges:
            md = mu[dst]
            gv = gv - np.bincount(src, weights=md * wgt, minlength=C)
            # d/d alpha_e of the exponent pi_e + alpha_e xi1 = v_e + alpha_e (xi1 - L_e)
            ga = ga - np.bincount(src, weights=md * (wx - wgt * self.L[src]), minlength=C)
        return gv, ga, gt, G - theta

    def gains(self):
        """Per-cell step multipliers for (v, alpha, theta) and the multiplier.

        Gradients scale with the cell load, so primal steps are divided by
        it and the multiplier (in objective units) is stepped with it.
        alpha's step is further divided by the load-weighted mean of
        (L - lambda)^2, the square of its lever arm on gamma.
        """
        inst = self.instance
        load = np.maximum(self.load, 1e-3)
        arm = np.bincount(inst.bin_cell, weights=inst.weight * self.dl ** 2,
                          minlength=inst.n_cells) / load
        gv = 1.0 / load
        return gv, gv / np.maximum(arm, 1.0), load


def draws_per_iteration(instance, cfg):
    """Joint draws averaged per iteration; ``cfg.batch`` 0 picks one.

    The automatic choice keeps the sampled edge count per iteration near
    4096 (at most 256 draws): per-iteration overhead dominates on small
    instances, so the extra draws are nearly free variance reduction there,
    while large instances keep a single draw. An instance whose draws are
    all the same (full occupancy, one joint bin per edge) needs only one.
    """
    if cfg.batch:
        return cfg.batch
    if np.all(instance.occ >= 1.0) and np.all(np.diff(instance.edge_offsets) == 1):
        return 1
    return int(min(256, max(1, 4096 // max(instance.n_edges, 1))))


def solve(instance, config=None, initial=None):
    """Run IoTC-SL and return ``(PowerControlSolution, SolverTrace)``.

    ``config.formulation`` selects the iteration: ``"reduced"`` (default)
    runs it on :class:`ReducedProgram`, ``"full"`` on the Lagrangian with
    all three constraint blocks dualised. With ``config.polish`` the
    averaged primal is moved onto the constraint set before decoding (see
    :func:`optcore.restore_feasibility`); the raw averaged objective is kept
    in the trace.
    """
    cfg = config or SolverConfig()
    trace = SolverTrace()
    run = _solve_reduced if cfg.formulation == "reduced" else _solve_full
    avg = run(instance, cfg, initial, trace)
    if trace.dual_cap_hits:
        log.warning("dual variables hit the cap %g in %d iterations; instance may be infeasible",
                    cfg.dual_cap, trace.dual_cap_hits)
    trace.raw_primal = avg.copy()
    trace.raw_objective = optcore.objective(instance, avg)
    if cfg.polish:
        avg = optcore.restore_feasibility(instance, avg, cfg.polish_mc_samples,
                                          _rng.derive_seed(cfg.seed, "polish"))
        trace.polished_objective = optcore.objective(instance, avg)
    trace.primal = avg
    sol = decode_solution(avg, instance, "sl", optcore.objective(instance, avg))
    return sol, trace


def _solve_reduced(instance, cfg, initial, trace):
    C = instance.n_cells
    red = ReducedProgram(instance)
    v, alpha, theta = red.from_primal(initial or optcore.initial_primal(instance, cfg.alpha_init))
    # start the multiplier where it cancels theta's gradient (positive, as
    # the algorithm asks of its initial values)
    mu = np.bincount(instance.bin_cell, minlength=C, weights=instance.weight
                     * optcore.utility_derivative(red.gamma(v, alpha, theta)))
    gv, ga, gd = red.gains()
    vh, ah, th, muh = v.copy(), alpha.copy(), theta.copy(), mu.copy()
    sampler = optcore.JointSampler.for_instance(instance)
    M = draws_per_iteration(instance, cfg)
    g = _rng.stream(cfg.seed, "iotc-sl")
    g_diag = _rng.stream(cfg.seed, "iotc-sl-diagnostics")
    n_burn = int(cfg.average_from * cfg.iterations)
    E = instance.n_edges
    chi = x1 = x2 = None

    for n in range(1, cfg.iterations + 1):
        a_n = cfg.step(n)
        if E:
            chi, x1, x2 = sampler.draw(g, size=M)
        dv, da, dt, h = red.gradient(v, alpha, theta, mu, chi, x1, x2)
        m = n - n_burn
        if m >= 1:
            vh += (v - vh) / m
            ah += (alpha - ah) / m
            th += (theta - th) / m
            muh += (mu - muh) / m
        v, theta = red.project(v + a_n * gv * dv, theta + a_n * gv * dt)
        alpha = np.clip(alpha + a_n * ga * da, 0.0, 1.0)
        mu = np.maximum(mu + a_n * gd * h, 0.0)
        if mu.max(initial=0.0) > cfg.dual_cap:
            trace.dual_cap_hits += 1
            np.minimum(mu, cfg.dual_cap, out=mu)

        if not (math.isfinite(v.sum() + alpha.sum() + theta.sum()) and math.isfinite(mu.sum())):
            z = red.to_primal(v, alpha, theta).vector()
            p = np.concatenate((np.zeros(instance.n_bins), mu, np.zeros(instance.n_bins)))
            _raise_nonfinite(z, p, C, instance.n_bins, n)
        if cfg.check_projection:
            z = red.to_primal(v, alpha, theta).vector()
            lo, hi = optcore.box_arrays(instance)
            assert np.all(z >= lo - 1e-9) and np.all(z <= hi + 1e-9) and np.all(mu >= 0)
        if cfg.diagnostics_every and n % cfg.diagnostics_every == 0:
            zhat = red.to_primal(vh, ah, th).vector()
            trace.append(_diagnose(instance, zhat, mu, n, a_n, g_diag, cfg.mc_samples_diag))

    trace.last_primal = red.to_primal(v, alpha, theta)
    avg = red.to_primal(vh, ah, th)
    # block1's multiplier is implied by the tight constraint; block3 is
    # handled by projection and has none
    implied = instance.weight * optcore.utility_derivative(avg.gamma)
    zero = np.zeros(instance.n_bins)
    trace.dual = optcore.DualState(implied, muh, zero)
    trace.last_dual = optcore.DualState(zero.copy(), mu, zero.copy())
    return avg


def _solve_full(instance, cfg, initial, trace):
    C, K, E = instance.n_cells, instance.n_bins, instance.n_edges
    z0 = initial or optcore.initial_primal(instance, cfg.alpha_init)
    z = z0.vector()
    zhat = z.copy()
    p = np.zeros(2 * K + C)
    phat = p.copy()
    lo, hi = optcore.box_arrays(instance)

    pi, alpha, theta, gamma = z[:C], z[C:2 * C], z[2 * C:3 * C], z[3 * C:]
    m1, m2, m3 = p[:K], p[K:K + C], p[K + C:]
    src, dst, bc, lam, w = instance.src, instance.dst, instance.bin_cell, instance.lam, instance.weight
    ln_pmax, n0 = math.log(instance.p_max), instance.n0
    sampler = optcore.JointSampler.for_instance(instance)
    g = _rng.stream(cfg.seed, "iotc-sl")
    g_diag = _rng.stream(cfg.seed, "iotc-sl-diagnostics")
    n_burn = int(cfg.average_from * cfg.iterations)
    grad = np.empty_like(z)
    h = np.empty_like(p)
    gain, dgain = step_gains(instance, cfg)
    # dividing the objective by k is the same as these two step changes
    gain /= cfg.objective_scale
    dgain *= cfg.objective_scale

    for n in range(1, cfg.iterations + 1):
        a_n = cfg.step(n)
        # 1. sample interferers
        if E:
            chi, x1, x2 = sampler.draw(g)
            term = np.where(chi, np.exp(pi[src] + alpha[src] * x1 - x2), 0.0)
            total = np.bincount(dst, weights=term, minlength=C) + n0
            wgt = term / total[dst]
            G = np.log(total)
        else:
            G = np.full(C, math.log(n0))
        # constraint values and Lagrangian gradient at (z_n, p_n)
        pib, alb, thb = pi[bc], alpha[bc], theta[bc]
        h[:K] = gamma - pib + (1.0 - alb) * lam + thb
        h[K:K + C] = G - theta
        h[K + C:] = pib + alb * lam - ln_pmax
        d13 = m1 - m3
        gp = np.bincount(bc, weights=d13, minlength=C)
        ga = np.bincount(bc, weights=d13 * lam, minlength=C)
        if E:
            md = m2[dst] * wgt
            gp -= np.bincount(src, weights=md, minlength=C)
            ga -= np.bincount(src, weights=md * x1, minlength=C)
        grad[:C] = gp
        grad[C:2 * C] = ga
        grad[2 * C:3 * C] = m2 - np.bincount(bc, weights=m1, minlength=C)
        grad[3 * C:] = w * optcore.utility_derivative(gamma) - m1

        # 4. averages use the pre-update iterates
        m = n - n_burn
        if m >= 1:
            zhat += (z - zhat) / m
            phat += (p - phat) / m
        # 2. primal ascent + projection, 3. dual descent + projection
        z += a_n * gain * grad
        np.clip(z, lo, hi, out=z)
        p += a_n * dgain * h
        np.maximum(p, 0.0, out=p)
        if p.max(initial=0.0) > cfg.dual_cap:
            trace.dual_cap_hits += 1
            np.minimum(p, cfg.dual_cap, out=p)

        if not (math.isfinite(z.sum()) and math.isfinite(p.sum())):
            _raise_nonfinite(z, p, C, K, n)
        if cfg.check_projection:
            assert np.all(z >= lo) and np.all(z <= hi) and np.all(p >= 0)
        if cfg.diagnostics_every and n % cfg.diagnostics_every == 0:
            trace.append(_diagnose(instance, zhat, p, n, a_n, g_diag, cfg.mc_samples_diag))

    trace.last_primal = optcore.PrimalState.from_vector(z, C)
    trace.dual = optcore.DualState.from_vector(phat, C, K)
    trace.last_dual = optcore.DualState.from_vector(p, C, K)
    return optcore.PrimalState.from_vector(zhat, C)


def _raise_nonfinite(z, p, C, K, n):
    names = ["pi"] * C + ["alpha"] * C + ["theta"] * C + ["gamma"] * (len(z) - 3 * C)
    bad = np.flatnonzero(~np.isfinite(z))
    if len(bad):
        i = int(bad[0])
        off = {"pi": 0, "alpha": C, "theta": 2 * C, "gamma": 3 * C}[names[i]]
        raise NumericalFailure(f"{names[i]}[{i - off}] became {z[i]} at iteration {n}")
    i = int(np.flatnonzero(~np.isfinite(p))[0])
    block = "block1" if i < K else ("block2" if i < K + C else "block3")
    raise NumericalFailure(f"dual {block} entry {i} became {p[i]} at iteration {n}")


@dataclass
class Verdict:
    converged: bool
    reasons: list


def convergence_diagnostics(trace, window=10, rel_tol=1e-4, dual_rel_tol=1e-2):
    """Converged when the last ``window`` checkpoints are steady and feasible.

    Steady means the averaged objective varies by less than ``rel_tol``
    (relative) and the dual norm by less than ``dual_rel_tol``; feasible
    means each checkpoint's worst constraint violation is within three
    standard errors.
    """
    cps = trace.checkpoints[-window:]
    reasons = []
    if len(cps) < window:
        return Verdict(False, [f"only {len(cps)} checkpoints"])
    obj = np.array([c.objective for c in cps])
    scale = max(abs(float(np.mean(obj))), 1e-12)
    if (obj.max() - obj.min()) / scale >= rel_tol:
        reasons.append("objective still moving")
    dn = np.array([c.dual_norm for c in cps])
    if (dn.max() - dn.min()) / max(dn.max(), 1e-12) >= dual_rel_tol:
        reasons.append("dual norm still moving")
    if any(c.max_violation > 3.0 * c.se + 1e-9 for c in cps):
        reasons.append("constraint violation above 3 SE")
    return Verdict(not reasons, reasons)
