"""The IoT-control convex program in log scale.

Primal variables (all natural-log scale): per-cell nominal power ``pi``,
compensation factor ``alpha``, interference level ``theta`` and per
serving-bin log-SINR ``gamma``. The constraint function has three blocks

* block1[(c, b)] = gamma_c(b) - pi_c + (1 - alpha_c) lambda_c(b) + theta_c
* block2[c]      = log interference at c (random, or an expectation of it) - theta_c
* block3[(c, b)] = pi_c + alpha_c lambda_c(b) - ln P_max

and a point is feasible when every entry is <= 0. Block2 comes in several
flavours that share one interface, ``(G, dG/dpi, dG/dalpha)`` with the
partials given per interfering edge: a single random draw
(:func:`block2_sample`), exact enumeration (:func:`block2_exact`) and the
log-normal closed form used by the certainty-equivalent solver.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.special import expit

from . import rng as _rng
from .measurements import DB_TO_LN, db_to_ln

LN10_OVER_10 = DB_TO_LN
ENUMERATION_CAP = 10_000_000


class EnumerationInfeasible(RuntimeError):
    """Exact enumeration would exceed the outcome cap."""


def thermal_noise_dbm_per_rb(rb_hz=180e3, noise_figure_db=5.0):
    return -174.0 + 10.0 * math.log10(rb_hz) + noise_figure_db


def dbm_to_w(x):
    return 10.0 ** ((x - 30.0) / 10.0)


@dataclass(frozen=True)
class Constants:
    """Physical constants of the program (linear units, per RB)."""
    p_max: float = 0.1
    n0: float = dbm_to_w(thermal_noise_dbm_per_rb())
    iot_cap_db: float = 20.0
    gamma_min_db: float = -10.0
    # bins that cannot reach gamma_min at full power with interference this
    # far above noise are treated as out of coverage
    coverage_margin_db: float = 3.0
    i_max: float = None  # derived from iot_cap_db and bin width when None

    @classmethod
    def from_config(cls, n0_dbm_per_rb=None, p_max_w_per_rb=0.1, iot_cap_db=20.0,
                    gamma_min_db=-10.0, coverage_margin_db=3.0):
        n0 = dbm_to_w(thermal_noise_dbm_per_rb() if n0_dbm_per_rb is None else n0_dbm_per_rb)
        return cls(p_max_w_per_rb, n0, iot_cap_db, gamma_min_db, coverage_margin_db)

    def resolve_i_max(self, bin_width_db):
        if self.i_max is not None:
            return self.i_max
        return self.n0 * 10.0 ** ((self.iot_cap_db - 2.0 * bin_width_db) / 10.0)


@dataclass(frozen=True)
class Bounds:
    pi_min: float
    pi_max: float
    gamma_min: float
    gamma_max: float
    theta_min: float
    theta_max: float
    alpha_min: float = 0.0
    alpha_max: float = 1.0

    @classmethod
    def from_constants(cls, p_max, n0, i_max, gamma_min):
        if i_max < n0:
            raise ValueError("I_max must be at least N0")
        ln_n0 = math.log(n0)
        return cls(pi_min=gamma_min + ln_n0, pi_max=math.log(p_max),
                   gamma_min=gamma_min, gamma_max=math.log(p_max) - ln_n0,
                   theta_min=ln_n0, theta_max=math.log(i_max))


@dataclass(eq=False)
class PrimalState:
    pi: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray

    def vector(self):
        return np.concatenate((self.pi, self.alpha, self.theta, self.gamma))

    @classmethod
    def from_vector(cls, z, n_cells):
        c = n_cells
        return cls(z[:c].copy(), z[c:2 * c].copy(), z[2 * c:3 * c].copy(), z[3 * c:].copy())

    def copy(self):
        return PrimalState(self.pi.copy(), self.alpha.copy(), self.theta.copy(), self.gamma.copy())


@dataclass(eq=False)
class DualState:
    block1: np.ndarray
    block2: np.ndarray
    block3: np.ndarray

    def vector(self):
        return np.concatenate((self.block1, self.block2, self.block3))

    @classmethod
    def from_vector(cls, p, n_cells, n_bins):
        return cls(p[:n_bins].copy(), p[n_bins:n_bins + n_cells].copy(), p[n_bins + n_cells:].copy())

    @classmethod
    def zeros(cls, n_cells, n_bins):
        return cls(np.zeros(n_bins), np.zeros(n_cells), np.zeros(n_bins))


@dataclass(eq=False)
class ProblemInstance:
    """Flattened problem data.

    Cells are indexed 0..C-1 in sorted-id order. Serving bins are flattened
    to K entries (``bin_cell``, ``lam``, ``weight`` = rho_c p_c(b)); edges to
    E entries ``src -> dst`` with occupancy ``occ``; joint-histogram bins to
    a flat array grouped by edge via ``edge_offsets``.
    """
    cell_ids: tuple
    rho: np.ndarray
    bin_cell: np.ndarray
    lam: np.ndarray
    weight: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    occ: np.ndarray
    edge_offsets: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    jprob: np.ndarray
    bounds: Bounds
    p_max: float
    n0: float
    i_max: float
    bin_width_db: float = 1.0
    bin_db: np.ndarray = None          # serving-bin midpoints in dB, for reports
    excluded_bins: dict = field(default_factory=dict)  # cell id -> list of (midpoint dB, prob)
    statistics: object = None

    @property
    def n_cells(self):
        return len(self.cell_ids)

    @property
    def n_bins(self):
        return len(self.lam)

    @property
    def n_edges(self):
        return len(self.src)

    @property
    def edge_of_jbin(self):
        return np.repeat(np.arange(self.n_edges), np.diff(self.edge_offsets))

    def cell_index(self, cell_id):
        return self.cell_ids.index(cell_id)

    def edges_into(self, c):
        return np.flatnonzero(self.dst == c)

    def lam_max(self):
        out = np.zeros(self.n_cells)
        np.maximum.at(out, self.bin_cell, self.lam)
        return out


def build_instance(statistics, constants=None):
    """Flatten measurement statistics into a :class:`ProblemInstance`."""
    k = constants or Constants()
    w = statistics.bin_width_db
    i_max = k.resolve_i_max(w)
    gamma_min = k.gamma_min_db * LN10_OVER_10
    bounds = Bounds.from_constants(k.p_max, k.n0, i_max, gamma_min)
    # serving bins beyond this log loss cannot decode even at P_max
    lam_cover = bounds.gamma_max - gamma_min - k.coverage_margin_db * LN10_OVER_10

    ids = tuple(sorted(statistics.cells or statistics.load))
    pos = {c: i for i, c in enumerate(ids)}
    rho = np.array([float(statistics.load.get(c, 0.0)) for c in ids])
    bin_cell, lam, weight, bin_db = [], [], [], []
    excluded = {}
    for c in ids:
        h = statistics.serving.get(c)
        if h is None:
            continue
        mids = h.midpoints_db
        l = db_to_ln(mids)
        p = h.probability
        keep = l <= lam_cover
        if (~keep).any():
            excluded[c] = [(float(m), float(q)) for m, q in zip(mids[~keep], p[~keep])]
        n = int(keep.sum())
        bin_cell.extend([pos[c]] * n)
        lam.extend(l[keep])
        weight.extend(rho[pos[c]] * p[keep])
        bin_db.extend(mids[keep])

    src, dst, occ, offsets, xi1, xi2, jp = [], [], [], [0], [], [], []
    for (e, c) in sorted(statistics.joint, key=lambda ec: (pos[ec[1]], pos[ec[0]])):
        a = statistics.graph.occupancy[(e, c)]
        if a <= 0:
            continue
        h = statistics.joint[(e, c)]
        m = db_to_ln(h.midpoints_db)
        src.append(pos[e])
        dst.append(pos[c])
        occ.append(a)
        xi1.extend(m[:, 0])
        xi2.extend(m[:, 1])
        jp.extend(h.probability)
        offsets.append(len(xi1))

    return ProblemInstance(
        ids, rho, np.array(bin_cell, dtype=np.int64), np.array(lam, dtype=float),
        np.array(weight, dtype=float), np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64), np.array(occ, dtype=float),
        np.array(offsets, dtype=np.int64), np.array(xi1, dtype=float),
        np.array(xi2, dtype=float), np.array(jp, dtype=float), bounds,
        k.p_max, k.n0, i_max, w, np.array(bin_db, dtype=float), excluded, statistics)


def synthetic_instance(serving, edges=None, load=None, constants=None, bin_width_db=1.0):
    """Instance built directly from natural-log arrays (tests, small studies).

    ``serving[c]`` is ``(lam, prob)`` for cell ``c`` (ids 0..C-1);
    ``edges[(e, c)]`` is ``(occupancy, xi1, xi2, prob)``. Loads default to 1.
    """
    k = constants or Constants()
    C = len(serving)
    i_max = k.resolve_i_max(bin_width_db)
    bounds = Bounds.from_constants(k.p_max, k.n0, i_max, k.gamma_min_db * LN10_OVER_10)
    rho = np.ones(C) if load is None else np.asarray(load, dtype=float)
    bin_cell, lam, weight = [], [], []
    if isinstance(serving, dict):
        serving = [serving[c] for c in range(C)]
    for c, (l, p) in enumerate(serving):
        l, p = np.atleast_1d(np.asarray(l, float)), np.atleast_1d(np.asarray(p, float))
        bin_cell.extend([c] * len(l))
        lam.extend(l)
        weight.extend(rho[c] * p / p.sum())
    src, dst, occ, offsets, xi1, xi2, jp = [], [], [], [0], [], [], []
    for (e, c) in sorted(edges or {}, key=lambda ec: (ec[1], ec[0])):
        a, x1, x2, p = edges[(e, c)]
        p = np.atleast_1d(np.asarray(p, float))
        src.append(e)
        dst.append(c)
        occ.append(float(a))
        xi1.extend(np.atleast_1d(x1))
        xi2.extend(np.atleast_1d(x2))
        jp.extend(p / p.sum())
        offsets.append(len(xi1))
    lam = np.array(lam, dtype=float)
    return ProblemInstance(
        tuple(range(C)), rho, np.array(bin_cell, dtype=np.int64), lam,
        np.array(weight, dtype=float), np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64), np.array(occ, dtype=float),
        np.array(offsets, dtype=np.int64), np.array(xi1, dtype=float),
        np.array(xi2, dtype=float), np.array(jp, dtype=float), bounds,
        k.p_max, k.n0, i_max, bin_width_db, lam / LN10_OVER_10)


# ---------------------------------------------------------------- utility

def utility(gamma):
    """V(gamma) = ln ln(1 + e^gamma), stable for all real gamma."""
    g = np.asarray(gamma, dtype=float)
    out = np.empty_like(g)
    lo, hi = g < -30.0, g > 30.0
    mid = ~(lo | hi)
    out[mid] = np.log(np.logaddexp(0.0, g[mid]))
    out[lo] = g[lo] - 0.5 * np.exp(g[lo])
    out[hi] = np.log(g[hi]) + np.exp(-g[hi]) / g[hi]
    return out if out.ndim else float(out)


def utility_derivative(gamma):
    """V'(gamma) = sigmoid(gamma) / ln(1 + e^gamma)."""
    g = np.asarray(gamma, dtype=float)
    out = np.empty_like(g)
    lo, hi = g < -30.0, g > 30.0
    mid = ~(lo | hi)
    gm = g[mid]
    out[mid] = expit(gm) / np.logaddexp(0.0, gm)
    out[lo] = 1.0 - 0.5 * np.exp(g[lo])
    out[hi] = 1.0 / g[hi]
    return out if out.ndim else float(out)


def objective(instance, primal):
    """Sum over serving bins of rho_c p_c(b) V(gamma_c(b))."""
    if instance.n_bins == 0:
        return 0.0
    return float(np.dot(instance.weight, utility(primal.gamma)))


# ------------------------------------------------------------- block2 models

def block2_sample(instance, pi, alpha, chi, xi1, xi2):
    """Log interference for one per-edge draw (chi, xi1, xi2).

    Returns ``(G, dG/dpi per edge, dG/dalpha per edge)`` where
    G[c] = ln(sum_{e->c} chi exp(pi_e + alpha_e xi1 - xi2) + N0).
    """
    s = pi[instance.src] + alpha[instance.src] * xi1 - xi2
    term = np.where(chi, np.exp(s), 0.0)
    total = np.bincount(instance.dst, weights=term, minlength=instance.n_cells) + instance.n0
    w = term / total[instance.dst]
    return np.log(total), w, w * xi1


def _edge_outcomes(instance, j):
    lo, hi = instance.edge_offsets[j], instance.edge_offsets[j + 1]
    a = instance.occ[j]
    return lo, hi, a


def block2_exact(instance, pi, alpha, cells=None, cap=ENUMERATION_CAP, with_grad=True):
    """Exact E[ln(sum chi e^(pi+alpha L1-L2) + N0)] by enumerating outcomes.

    Each edge contributes "absent" with probability 1 - a plus one outcome
    per joint bin with probability a p(b); outcomes multiply across edges.
    """
    C = instance.n_cells
    G = np.full(C, math.log(instance.n0))
    dpi = np.zeros(instance.n_edges)
    dal = np.zeros(instance.n_edges)
    for c in (range(C) if cells is None else cells):
        edges = instance.edges_into(c)
        if len(edges) == 0:
            continue
        size = 1
        for j in edges:
            size *= int(instance.edge_offsets[j + 1] - instance.edge_offsets[j]) + 1
            if size > cap:
                raise EnumerationInfeasible(
                    f"cell {instance.cell_ids[c]}: more than {cap:.0e} outcomes")
        prob = np.ones(1)
        total = np.zeros(1)
        parts = []  # per edge: (value index per outcome) via repeat structure
        for j in edges:
            lo, hi, a = _edge_outcomes(instance, j)
            e = instance.src[j]
            vals = np.concatenate(([0.0], np.exp(pi[e] + alpha[e] * instance.xi1[lo:hi]
                                                 - instance.xi2[lo:hi])))
            ps = np.concatenate(([1.0 - a], a * instance.jprob[lo:hi]))
            xs = np.concatenate(([0.0], instance.xi1[lo:hi]))
            m = len(vals)
            prob = (prob[:, None] * ps[None, :]).ravel()
            total = (total[:, None] + vals[None, :]).ravel()
            if with_grad:
                parts = [(np.repeat(v, m), np.repeat(x, m)) for v, x in parts]
                parts.append((np.tile(vals, len(prob) // m), np.tile(xs, len(prob) // m)))
        total = total + instance.n0
        G[c] = float(np.dot(prob, np.log(total)))
        if with_grad:
            pw = prob / total
            for j, (v, x) in zip(edges, parts):
                dpi[j] = float(np.dot(pw, v))
                dal[j] = float(np.dot(pw, v * x))
    return G, dpi, dal


def expected_log_interference_exact(instance, primal, c, cap=ENUMERATION_CAP):
    """Exact expected log interference-plus-noise at cell index ``c``."""
    G, _, _ = block2_exact(instance, primal.pi, primal.alpha, cells=[c], cap=cap, with_grad=False)
    return float(G[c])


class JointSampler:
    """Vectorised draws from the per-edge joint histograms.

    Each edge gets a Walker alias table so one draw costs O(1) regardless of
    the number of bins.
    """

    def __init__(self, instance):
        self.instance = instance
        n = len(instance.jprob)
        self.accept = np.ones(n)
        self.alias = np.arange(n)
        for j in range(instance.n_edges):
            lo, hi = int(instance.edge_offsets[j]), int(instance.edge_offsets[j + 1])
            self._build(lo, hi)
        self.n_bins = np.diff(instance.edge_offsets)
        self.offsets = instance.edge_offsets[:-1]

    def _build(self, lo, hi):
        m = hi - lo
        if m == 1:
            return
        q = self.instance.jprob[lo:hi] * (m / self.instance.jprob[lo:hi].sum())
        small = [i for i in range(m) if q[i] < 1.0]
        large = [i for i in range(m) if q[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            self.accept[lo + s] = q[s]
            self.alias[lo + s] = lo + l
            q[l] -= 1.0 - q[s]
            (small if q[l] < 1.0 else large).append(l)
        for i in small + large:
            self.accept[lo + i] = 1.0

    @classmethod
    def for_instance(cls, instance):
        sampler = getattr(instance, "_sampler", None)
        if sampler is None:
            sampler = cls(instance)
            instance._sampler = sampler
        return sampler

    def draw(self, g, edges=None, size=None):
        """Return (chi, xi1, xi2) for ``edges`` (all by default).

        With ``size`` the arrays get a leading sample axis.
        """
        inst = self.instance
        if edges is None:
            occ, nb, off = inst.occ, self.n_bins, self.offsets
        else:
            idx = np.asarray(edges)
            occ, nb, off = inst.occ[idx], self.n_bins[idx], self.offsets[idx]
        shape = occ.shape if size is None else (size, len(occ))
        chi = g.random(shape) < occ
        u = g.random(shape) * nb
        k = u.astype(np.int64)
        frac = u - k
        k += off
        k = np.where(frac < self.accept[k], k, self.alias[k])
        return chi, inst.xi1[k], inst.xi2[k]

    def draw_index(self, g, size):
        """``size`` joint draws of every edge as flat bin indices.

        Returns ``(chi, k)``; ``chi`` is None when every occupancy is 1.
        """
        inst = self.instance
        shape = (size, inst.n_edges)
        partial = inst.occ < 1.0
        chi = None
        if partial.any():
            chi = np.ones(shape, dtype=bool)
            chi[:, partial] = g.random((size, int(partial.sum()))) < inst.occ[partial]
        u = g.random(shape) * self.n_bins
        k = u.astype(np.int64)
        frac = u - k
        k += self.offsets
        return chi, np.where(frac < self.accept[k], k, self.alias[k])


def expected_log_interference_mc(instance, primal, c, samples, seed, chunk=20000):
    """Monte Carlo estimate of the expected log interference at cell ``c``.

    Returns ``(estimate, standard_error)``.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    edges = instance.edges_into(c)
    if len(edges) == 0:
        return math.log(instance.n0), 0.0
    sampler = JointSampler.for_instance(instance)
    g = _rng.stream(seed, "mc-block2", c)
    e = instance.src[edges]
    base = primal.pi[e]
    al = primal.alpha[e]
    acc = 0.0
    acc2 = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        chi, x1, x2 = sampler.draw(g, edges, size=n)
        val = np.log(np.where(chi, np.exp(base + al * x1 - x2), 0.0).sum(axis=1) + instance.n0)
        acc += val.sum()
        acc2 += np.dot(val, val)
        done += n
    mean = acc / samples
    if samples == 1:
        return mean, 0.0
    var = max(acc2 / samples - mean * mean, 0.0) * samples / (samples - 1)
    se = math.sqrt(var / samples)
    if se < 1e-12 * max(1.0, abs(mean)):
        se = 0.0
    return mean, se


# ------------------------------------------------------- constraints / Lagrangian

def _blocks_13(instance, primal):
    bc = instance.bin_cell
    b1 = primal.gamma - primal.pi[bc] + (1.0 - primal.alpha[bc]) * instance.lam + primal.theta[bc]
    b3 = primal.pi[bc] + primal.alpha[bc] * instance.lam - math.log(instance.p_max)
    return b1, b3


def constraint_h(instance, primal, chi, xi):
    """Constraint vector [block1, block2, block3] for one draw.

    ``chi`` is the per-edge 0/1 occupancy draw and ``xi`` an (E, 2) array of
    natural-log (serving loss, loss to victim) draws.
    """
    xi = np.asarray(xi, dtype=float).reshape(-1, 2)
    G, _, _ = block2_sample(instance, primal.pi, primal.alpha, np.asarray(chi, bool),
                            xi[:, 0], xi[:, 1])
    b1, b3 = _blocks_13(instance, primal)
    return np.concatenate((b1, G - primal.theta, b3))


def split_h(instance, h):
    K, C = instance.n_bins, instance.n_cells
    return h[:K], h[K:K + C], h[K + C:]


def constraint_from_block2(instance, primal, G):
    b1, b3 = _blocks_13(instance, primal)
    return np.concatenate((b1, G - primal.theta, b3))


def lagrangian_gradient_from_block2(instance, primal, dual, dG_dpi, dG_dalpha):
    """Gradient of objective - dual.h with respect to every primal coordinate."""
    C = instance.n_cells
    bc, lam = instance.bin_cell, instance.lam
    m1, m2, m3 = dual.block1, dual.block2, dual.block3
    g_gamma = instance.weight * utility_derivative(primal.gamma) - m1
    g_pi = np.bincount(bc, weights=m1 - m3, minlength=C)
    g_alpha = np.bincount(bc, weights=(m1 - m3) * lam, minlength=C)
    g_theta = m2 - np.bincount(bc, weights=m1, minlength=C)
    if instance.n_edges:
        md = m2[instance.dst]
        g_pi -= np.bincount(instance.src, weights=md * dG_dpi, minlength=C)
        g_alpha -= np.bincount(instance.src, weights=md * dG_dalpha, minlength=C)
    return PrimalState(g_pi, g_alpha, g_theta, g_gamma)


def lagrangian(instance, primal, dual, chi, xi):
    """objective - dual . h for one draw."""
    h = constraint_h(instance, primal, chi, xi)
    return objective(instance, primal) - float(np.dot(dual.vector(), h))


def lagrangian_gradient_primal(instance, primal, dual, chi, xi):
    xi = np.asarray(xi, dtype=float).reshape(-1, 2)
    _, dpi, dal = block2_sample(instance, primal.pi, primal.alpha, np.asarray(chi, bool),
                                xi[:, 0], xi[:, 1])
    return lagrangian_gradient_from_block2(instance, primal, dual, dpi, dal)


# ------------------------------------------------------------------ bounds

def project(instance, primal):
    """Clip every coordinate into its bounding box (in place) and return it."""
    b = instance.bounds
    np.clip(primal.pi, b.pi_min, b.pi_max, out=primal.pi)
    np.clip(primal.alpha, 0.0, 1.0, out=primal.alpha)
    np.clip(primal.theta, b.theta_min, b.theta_max, out=primal.theta)
    np.clip(primal.gamma, b.gamma_min, b.gamma_max, out=primal.gamma)
    return primal


def box_arrays(instance):
    """Lower/upper bounds matching :meth:`PrimalState.vector` ordering."""
    b, C, K = instance.bounds, instance.n_cells, instance.n_bins
    lo = np.concatenate((np.full(C, b.pi_min), np.zeros(C), np.full(C, b.theta_min),
                         np.full(K, b.gamma_min)))
    hi = np.concatenate((np.full(C, b.pi_max), np.ones(C), np.full(C, b.theta_max),
                         np.full(K, b.gamma_max)))
    return lo, hi


def initial_primal(instance, alpha0=0.8):
    """Start point: pi mid-box, given alpha, theta mid-box, gamma tight on block1."""
    b, C = instance.bounds, instance.n_cells
    pi = np.full(C, 0.5 * (b.pi_min + b.pi_max))
    alpha = np.full(C, alpha0)
    theta = np.full(C, b.theta_min + 0.5 * (b.theta_max - b.theta_min))
    bc = instance.bin_cell
    gamma = pi[bc] - (1.0 - alpha[bc]) * instance.lam - theta[bc]
    return project(instance, PrimalState(pi, alpha, theta, gamma))


# ------------------------------------------------------------- feasibility

@dataclass
class FeasibilityReport:
    block1: np.ndarray          # violation (h), positive = violated
    block3: np.ndarray
    block2: np.ndarray          # estimate - theta per cell
    block2_se: np.ndarray
    block2_exact: np.ndarray    # bool per cell
    tol: float = 1e-6

    @property
    def block2_ok(self):
        margin = np.where(self.block2_exact, self.tol, 3.0 * self.block2_se + self.tol)
        return self.block2 <= margin

    @property
    def feasible(self):
        return (bool(np.all(self.block1 <= self.tol)) and bool(np.all(self.block3 <= self.tol))
                and bool(np.all(self.block2_ok)))

    @property
    def max_violation(self):
        parts = [self.block1, self.block2, self.block3]
        return max((float(p.max()) for p in parts if len(p)), default=0.0)


def enumerable_cells(instance, cap=ENUMERATION_CAP):
    """Boolean mask of cells whose interference outcomes number at most ``cap``."""
    sizes = np.log(np.diff(instance.edge_offsets) + 1.0)
    logsize = np.bincount(instance.dst, weights=sizes, minlength=instance.n_cells)
    return logsize <= math.log(cap) + 1e-9


def expected_block2(instance, primal, mc_samples=20000, seed=0, cap=ENUMERATION_CAP):
    """Per-cell expected log interference: exact where enumerable, else MC.

    Returns (estimate, standard error, exact flag) arrays.
    """
    exact = enumerable_cells(instance, cap)
    est, se = np.full(instance.n_cells, math.log(instance.n0)), np.zeros(instance.n_cells)
    if not exact.all():
        g = _rng.stream(seed, "mc-block2")
        est, se = mc_block2_all(instance, primal.pi, primal.alpha, mc_samples, g)
        se[exact] = 0.0
    cells = np.flatnonzero(exact)
    if len(cells):
        G, _, _ = block2_exact(instance, primal.pi, primal.alpha, cells=cells,
                               cap=float("inf"), with_grad=False)
        est[cells] = G[cells]
    return est, se, exact


def feasibility_check(instance, primal, mc_samples=20000, seed=0, cap=ENUMERATION_CAP):
    """Evaluate every constraint at ``primal``; block2 by its expectation."""
    b1, b3 = _blocks_13(instance, primal)
    est, se, exact = expected_block2(instance, primal, mc_samples, seed, cap)
    return FeasibilityReport(b1, b3, est - primal.theta, se, exact)


def restore_feasibility(instance, primal, mc_samples=20000, seed=0, cap=ENUMERATION_CAP,
                        rounds=30, tol=1e-8, overshoot=1.3):
    """Move a near-feasible point onto the constraint set.

    pi is lowered until the power cap holds for every bin, theta is set to
    the expected log interference (plus three standard errors when it had to
    be estimated by Monte Carlo) and gamma is set tight on block1. Two
    repairs are iterated, with the same random draws in every round: when
    that theta would exceed its upper bound every pi is lowered by the
    excess, and a cell whose weakest bin would fall below gamma_min has its
    pi raised (up to the cap). Steps are stretched by ``overshoot``, which
    usually ends the loop in a few rounds. Returns a new state; anything
    left unrepaired shows up in :func:`feasibility_check`.
    """
    z = project(instance, primal.copy())
    b = instance.bounds
    bc, lam = instance.bin_cell, instance.lam
    for _ in range(rounds):
        cap_pi = math.log(instance.p_max) - z.alpha * instance.lam_max()
        z.pi = np.clip(np.minimum(z.pi, cap_pi), b.pi_min, b.pi_max)
        est, se, exact = expected_block2(instance, z, mc_samples, seed, cap)
        target = est + np.where(exact, 0.0, 3.0 * se)
        excess = max(float(np.max(target - b.theta_max)), 0.0)
        z.theta = np.clip(target, b.theta_min, b.theta_max)
        slack = z.pi[bc] - (1.0 - z.alpha[bc]) * lam - z.theta[bc] - b.gamma_min
        deficit = _cell_deficit(instance, slack)
        if excess <= tol and deficit.max(initial=0.0) <= tol:
            break
        z.pi = np.clip(z.pi - overshoot * excess
                       + np.minimum(overshoot * deficit, np.maximum(cap_pi - z.pi, 0.0)),
                       b.pi_min, b.pi_max)
    else:
        est, se, exact = expected_block2(instance, z, mc_samples, seed, cap)
        z.theta = np.clip(est + np.where(exact, 0.0, 3.0 * se), b.theta_min, b.theta_max)
    z.gamma = np.clip(z.pi[bc] - (1.0 - z.alpha[bc]) * lam - z.theta[bc],
                      b.gamma_min, b.gamma_max)
    return z


def _cell_deficit(instance, slack):
    """Per cell, how far its weakest bin is below gamma_min (0 if none)."""
    out = np.zeros(instance.n_cells)
    np.maximum.at(out, instance.bin_cell, -slack)
    return out


def mc_block2_all(instance, pi, alpha, samples, g, chunk=None):
    """Monte Carlo expected log interference for every cell at once.

    Uses ``samples`` joint draws of the whole edge set. Returns per-cell
    (estimate, standard error); cells without interferers get ln N0 and 0.
    """
    C, E = instance.n_cells, instance.n_edges
    est = np.full(C, math.log(instance.n0))
    se = np.zeros(C)
    if E == 0 or samples < 1:
        return est, se
    sampler = JointSampler.for_instance(instance)
    has = np.bincount(instance.dst, minlength=C) > 0
    starts = np.searchsorted(instance.dst, np.flatnonzero(has))
    chunk = chunk or max(1, 4_000_000 // E)
    # every joint bin's interference term, looked up by the sampled index
    e = instance.src[instance.edge_of_jbin]
    vals = np.exp(pi[e] + alpha[e] * instance.xi1 - instance.xi2)
    acc = np.zeros(has.sum())
    acc2 = np.zeros(has.sum())
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        chi, k = sampler.draw_index(g, n)
        term = vals[k] if chi is None else np.where(chi, vals[k], 0.0)
        # accumulate ln(1 + I/N0): small next to ln N0, so the one-pass
        # variance does not cancel away
        val = np.log1p(np.add.reduceat(term, starts, axis=1) / instance.n0)
        acc += val.sum(axis=0)
        acc2 += (val * val).sum(axis=0)
        done += n
    mean = acc / samples
    est[has] = math.log(instance.n0) + mean
    if samples > 1:
        var = np.maximum(acc2 / samples - mean * mean, 0.0) * samples / (samples - 1)
        se[has] = np.sqrt(var / samples)
    return est, se
