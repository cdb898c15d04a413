"""Error-exponent numerics for the diameter test.

Everything is in bits.  Two families of distributions are supported for
the minimizations that define Delta_0 and Delta_1:

``joint``
    any distribution on X^K whose marginals satisfy the diameter
    constraint;
``product``
    products of K marginals satisfying the constraint (independent
    sensors).

The binary two-sensor closed forms hold for the product family, and the
K=2, |X|=2 curve machinery (``BinaryPairSolver``) works in that family.
There the constraint sets have a simple shape in angle coordinates
``phi = arcsin(sqrt(q))``: the diameter is ``2 (1 - cos(phi1 - phi2))``,
so ``d <= c`` is the band ``|phi1 - phi2| <= arccos(1 - c/2)``.  Because
KL divergence is convex, the minimizer for an infeasible point lies on the
band edge, and the solver minimizes over a fine discretization of it.

Other small instances (K <= 3, |X| <= 4) go through a multi-start SLSQP
solve over the chosen family.
"""

from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .errors import CapabilityError, InputError, ParameterError
from .typestat import diameter_max, hellinger_diameter, marginals_of

MAX_K = 3
MAX_ALPHABET = 4
HALF_PI = math.pi / 2


# ---------------------------------------------------------------------------
# information measures
# ---------------------------------------------------------------------------


def _as_pmf(p, name="p") -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.size == 0 or np.any(~np.isfinite(arr)) or np.any(arr < -1e-12):
        raise InputError(f"{name} is not a probability vector")
    if abs(arr.sum() - 1) > 1e-9:
        raise InputError(f"{name} sums to {arr.sum()}, not 1")
    return np.clip(arr, 0.0, None)


def kl_divergence(p, q) -> float:
    """D(p || q) in bits; +inf when p puts mass where q has none."""
    p = _as_pmf(p, "p").ravel()
    q = _as_pmf(q, "q").ravel()
    if p.shape != q.shape:
        raise InputError("p and q differ in size")
    s = p > 0
    if np.any(q[s] == 0):
        return math.inf
    return max(0.0, float(np.sum(p[s] * np.log2(p[s] / q[s]))))


def binary_entropy(q):
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(q > 0, -q * np.log2(np.where(q > 0, q, 1)), 0.0)
        b = np.where(q < 1, -(1 - q) * np.log2(np.where(q < 1, 1 - q, 1)), 0.0)
    out = a + b
    return float(out) if out.ndim == 0 else out


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    s = p > 0
    return float(-np.sum(p[s] * np.log2(p[s])))


def mutual_information(p_joint) -> float:
    """Total correlation sum_k H(p_k) - H(p), zero iff p is a product."""
    p = np.asarray(p_joint, dtype=np.float64)
    return max(0.0, sum(entropy(m) for m in marginals_of(p)) - entropy(p))


# ---------------------------------------------------------------------------
# closed forms (K=2, |X|=2, product family, d0 = 0)
# ---------------------------------------------------------------------------


def delta0_closed_form(q1, q2):
    return 2 * binary_entropy((np.asarray(q1) + np.asarray(q2)) / 2) - binary_entropy(q1) - binary_entropy(q2)


def alpha_star_closed_form(gamma):
    g = np.asarray(gamma, dtype=np.float64)
    out = 2 * binary_entropy(g / 2 * (1 - g / 4)) - binary_entropy(g * (1 - g / 4))
    return out


def binary_pair_diameter(q1, q2):
    return 2 * (1 - np.sqrt(q1 * q2) - np.sqrt((1 - q1) * (1 - q2)))


# ---------------------------------------------------------------------------
# problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentProblem:
    K: int
    alphabet_size: int
    d0: float
    d1: float
    family: str = "product"

    def __post_init__(self):
        if self.K < 2 or self.alphabet_size < 2:
            raise ParameterError("need K >= 2 and |X| >= 2")
        if self.family not in ("product", "joint"):
            raise ParameterError(f"family must be 'product' or 'joint', got {self.family!r}")
        dm = diameter_max(self.K, self.alphabet_size)
        if not 0 <= self.d0 < self.d1 <= dm:
            raise ParameterError(f"need 0 <= d0 < d1 <= d_max={dm}, got d0={self.d0}, d1={self.d1}")

    @property
    def d_max(self) -> int:
        return diameter_max(self.K, self.alphabet_size)

    @property
    def is_binary_pair(self) -> bool:
        return self.K == 2 and self.alphabet_size == 2 and self.family == "product"

    def check_capability(self) -> None:
        if self.K > MAX_K or self.alphabet_size > MAX_ALPHABET:
            raise CapabilityError(
                f"exponent solver supports K <= {MAX_K} and |X| <= {MAX_ALPHABET}; "
                f"got K={self.K}, |X|={self.alphabet_size}")


def _joint_array(p_joint, problem: ExponentProblem) -> np.ndarray:
    p = np.asarray(p_joint, dtype=np.float64)
    shape = (problem.alphabet_size,) * problem.K
    if p.shape != shape:
        if p.size == math.prod(shape):
            p = p.reshape(shape)
        else:
            raise InputError(f"joint distribution must have shape {shape}, got {p.shape}")
    return _as_pmf(p, "p_joint").reshape(shape)


# ---------------------------------------------------------------------------
# binary pair: boundary minimization in angle coordinates
# ---------------------------------------------------------------------------


def _delta_of(c: float) -> float:
    """Angle gap on the boundary d = c."""
    return math.acos(min(1.0, max(-1.0, 1 - c / 2)))


def _boundary_candidates(c: float, step: float):
    """(r1, r2) on the curve d(r) = c, both orientations, spacing ~``step``."""
    delta = _delta_of(c)
    span = HALF_PI - delta
    n = max(2, int(math.ceil(span / step)) + 1)
    psi = np.linspace(0.0, span, n)
    a = np.sin(psi) ** 2
    b = np.sin(psi + delta) ** 2
    if delta == 0.0:
        return a, b
    return np.concatenate([a, b]), np.concatenate([b, a])


def _logs(r):
    with np.errstate(divide="ignore"):
        return np.log2(r), np.log2(1 - r)


def _kl_min(q1, q2, r1, r2):
    lr1, l1r1 = _logs(r1)
    lr2, l1r2 = _logs(r2)
    return kernels.kl_min_over_candidates(q1, q2, lr1, l1r1, lr2, l1r2)


def _pair_delta(q1, q2, c: float, which: int, step: float):
    """Delta_0 (which=0, set d <= c) or Delta_1 (which=1, set d >= c)."""
    q1 = np.atleast_1d(np.asarray(q1, dtype=np.float64))
    q2 = np.atleast_1d(np.asarray(q2, dtype=np.float64))
    d = binary_pair_diameter(q1, q2)
    feasible = d <= c + 1e-15 if which == 0 else d >= c - 1e-15
    out = np.zeros(q1.shape)
    todo = ~feasible
    if np.any(todo):
        r1, r2 = _boundary_candidates(c, step)
        out[todo] = np.maximum(_kl_min(q1[todo], q2[todo], r1, r2), 0.0)
    return out


@dataclass
class BinaryPairSolver:
    """Curve machinery for K = 2, |X| = 2 over the product family.

    ``step`` is the angle spacing (radians) of both the evaluation grid and
    the boundary discretization.
    """

    d0: float
    d1: float
    step: float = 1e-3
    _grid: dict = field(default=None, init=False, repr=False)

    def __post_init__(self):
        ExponentProblem(2, 2, self.d0, self.d1)
        if not 0 < self.step < 0.1:
            raise ParameterError("grid step must be in (0, 0.1)")

    # pointwise ---------------------------------------------------------
    def delta0(self, q1, q2):
        return _pair_delta(q1, q2, self.d0, 0, self.step / 10)

    def delta1(self, q1, q2):
        return _pair_delta(q1, q2, self.d1, 1, self.step / 10)

    # grid ----------------------------------------------------------------
    @property
    def grid(self) -> dict:
        if self._grid is None:
            self._grid = self._build_grid()
        return self._grid

    def _build_grid(self) -> dict:
        n = int(math.ceil(HALF_PI / self.step)) + 1
        phi = np.linspace(0.0, HALF_PI, n)
        q = np.sin(phi) ** 2
        iu, ju = np.triu_indices(n)
        q1, q2 = q[iu], q[ju]
        D0 = np.empty((n, n))
        D1 = np.empty((n, n))
        v0 = _pair_delta(q1, q2, self.d0, 0, self.step)
        v1 = _pair_delta(q1, q2, self.d1, 1, self.step)
        D0[iu, ju] = v0
        D0[ju, iu] = v0
        D1[iu, ju] = v1
        D1[ju, iu] = v1
        diff = phi[:, None] - phi[None, :]
        D = 2 * (1 - np.cos(diff))
        return {"phi": phi, "q": q, "D0": D0, "D1": D1, "d": D}

    def _row_points(self, c: float):
        return _boundary_candidates(c, self.step)

    # curves ----------------------------------------------------------------
    def alpha_star(self, gamma: float) -> float:
        """min Delta_0 over {d >= gamma}; +inf past d_max."""
        if gamma <= self.d0:
            return 0.0
        if gamma > 2 + 1e-12:
            return math.inf
        g = self.grid
        mask = g["d"] >= gamma
        best = float(g["D0"][mask].min()) if mask.any() else math.inf
        r1, r2 = self._row_points(min(gamma, 2.0))
        best = min(best, float(self.delta0(r1, r2).min()))
        return best

    def gamma_star(self, alpha: float, tol: float = 1e-10) -> float:
        """inf{gamma : alpha_star(gamma) >= alpha}, by bisection."""
        if alpha <= 0:
            return 0.0
        if self.alpha_star(2.0) < alpha:
            return 2.0
        lo, hi = self.d0, 2.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if self.alpha_star(mid) >= alpha:
                hi = mid
            else:
                lo = mid
        return hi

    def beta_star_lower(self, alpha: float) -> float:
        """inf Delta_1 over {d < gamma_star(alpha)}."""
        if alpha <= 0:
            return math.inf
        gs = self.gamma_star(alpha)
        if gs >= self.d1:
            return 0.0
        g = self.grid
        mask = g["d"] <= gs
        best = float(g["D1"][mask].min()) if mask.any() else math.inf
        r1, r2 = self._row_points(gs)
        return min(best, float(self.delta1(r1, r2).min()))

    def beta_star_upper(self, alpha: float) -> float:
        """inf Delta_1 over {Delta_0 < alpha}, with level-set crossings
        located by linear interpolation between grid neighbours."""
        if alpha <= 0:
            return math.inf
        g = self.grid
        D0, D1 = g["D0"], g["D1"]
        inside = D0 < alpha
        best = float(D1[inside].min()) if inside.any() else math.inf
        for axis in (0, 1):
            a0 = np.moveaxis(D0, axis, 0)
            a1 = np.moveaxis(D1, axis, 0)
            lo0, hi0 = a0[:-1], a0[1:]
            cross = (lo0 < alpha) != (hi0 < alpha)
            if not cross.any():
                continue
            t = (alpha - lo0[cross]) / (hi0[cross] - lo0[cross])
            vals = a1[:-1][cross] + t * (a1[1:][cross] - a1[:-1][cross])
            best = min(best, float(vals.min()))
        return best


@functools.lru_cache(maxsize=8)
def binary_solver(d0: float, d1: float, step: float = 1e-3) -> BinaryPairSolver:
    return BinaryPairSolver(d0, d1, step)


# ---------------------------------------------------------------------------
# general small instances: multi-start SLSQP
# ---------------------------------------------------------------------------


def _diam_and_grad(marg: np.ndarray):
    s = np.sqrt(np.maximum(marg, 1e-300))
    col = s.sum(axis=0)
    K = marg.shape[0]
    d = K * K - float(col @ col)
    grad = -col[None, :] / s
    return d, grad


def _solve_general(p: np.ndarray, problem: ExponentProblem, which: int, starts: int,
                   seed: int) -> float:
    K, X = problem.K, problem.alphabet_size
    c = problem.d0 if which == 0 else problem.d1
    sign = 1.0 if which == 0 else -1.0
    lo = 1e-12
    flat = p.ravel()
    supp = flat > 0
    rng = np.random.default_rng(seed)
    neg_h = -entropy(flat)
    pm = marginals_of(p)

    if problem.family == "joint":
        nvar = flat.size

        def to_marg(v):
            return marginals_of(v.reshape(p.shape))

        def obj(v):
            return float(np.sum(flat[supp] * np.log2(flat[supp] / v[supp])))

        def obj_grad(v):
            g = np.zeros_like(v)
            g[supp] = -flat[supp] / (v[supp] * math.log(2))
            return g

        def cons(v):
            d, _ = _diam_and_grad(to_marg(v))
            return sign * (c - d)

        def cons_grad(v):
            _, gm = _diam_and_grad(to_marg(v))
            # d/dv[j] of marginal k at x = 1 if index j has coordinate k equal to x
            idx = np.indices(p.shape).reshape(K, -1)
            g = np.zeros(nvar)
            for k in range(K):
                g += gm[k, idx[k]]
            return -sign * g

        eqs = [{"type": "eq", "fun": lambda v: v.sum() - 1, "jac": lambda v: np.ones_like(v)}]
        base_starts = [np.full(nvar, 1.0 / nvar), np.clip(flat, 1e-3, None) / np.clip(flat, 1e-3, None).sum()]
        prod_mean = functools.reduce(np.multiply.outer, [pm.mean(axis=0)] * K).ravel()
        base_starts.append(prod_mean)
        rand_starts = [rng.dirichlet(np.full(nvar, 0.5)) for _ in range(starts)]
    else:
        nvar = K * X

        def obj(v):
            r = v.reshape(K, X)
            with np.errstate(divide="ignore"):
                cross = np.where(pm > 0, pm * np.log2(np.maximum(r, 1e-300)), 0.0).sum()
            return float(neg_h - cross)

        def obj_grad(v):
            r = v.reshape(K, X)
            return (-np.where(pm > 0, pm / (np.maximum(r, 1e-300) * math.log(2)), 0.0)).ravel()

        def cons(v):
            d, _ = _diam_and_grad(v.reshape(K, X))
            return sign * (c - d)

        def cons_grad(v):
            _, gm = _diam_and_grad(v.reshape(K, X))
            return (-sign * gm).ravel()

        eqs = []
        for k in range(K):
            sel = np.zeros(nvar)
            sel[k * X:(k + 1) * X] = 1
            eqs.append({"type": "eq", "fun": (lambda v, s=sel: s @ v - 1), "jac": (lambda v, s=sel: s)})
        base_starts = [np.full(nvar, 1.0 / X), np.tile(pm.mean(axis=0), K),
                       (np.clip(pm, 1e-3, None) / np.clip(pm, 1e-3, None).sum(axis=1, keepdims=True)).ravel()]
        rand_starts = [rng.dirichlet(np.full(X, 0.5), size=K).ravel() for _ in range(starts)]

    constraints = eqs + [{"type": "ineq", "fun": cons, "jac": cons_grad}]
    best = math.inf
    for x0 in base_starts + rand_starts:
        x0 = np.clip(x0, lo, 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(obj, x0, jac=obj_grad, method="SLSQP", bounds=[(lo, 1.0)] * nvar,
                           constraints=constraints, options={"maxiter": 500, "ftol": 1e-13})
        v = np.clip(res.x, lo, 1)
        if cons(v) < -1e-7 or any(abs(e["fun"](v)) > 1e-7 for e in eqs):
            continue
        best = min(best, obj(v))
    return max(best, 0.0)


def _delta(p_joint, problem: ExponentProblem, which: int, starts: int = 12, seed: int = 0,
           step: float = 1e-4) -> float:
    problem.check_capability()
    p = _joint_array(p_joint, problem)
    d = hellinger_diameter(marginals_of(p))
    if (which == 0 and d <= problem.d0) or (which == 1 and d >= problem.d1):
        # p itself is feasible in the joint family; in the product family only if it is a product
        if problem.family == "joint" or mutual_information(p) < 1e-15:
            return 0.0
    if problem.is_binary_pair:
        m = marginals_of(p)
        c = problem.d0 if which == 0 else problem.d1
        base = float(_pair_delta(m[0, 1], m[1, 1], c, which, step)[0])
        return base + mutual_information(p)
    return _solve_general(p, problem, which, starts, seed)


def delta0(p_joint, problem: ExponentProblem, **kw) -> float:
    """min D(p || p0) over p0 in the family with diameter <= d0."""
    return _delta(p_joint, problem, 0, **kw)


def delta1(p_joint, problem: ExponentProblem, **kw) -> float:
    """min D(p || p1) over p1 in the family with diameter >= d1."""
    return _delta(p_joint, problem, 1, **kw)


def product_joint(*marginals) -> np.ndarray:
    return functools.reduce(np.multiply.outer, [np.asarray(m, dtype=np.float64) for m in marginals])


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------


def _solver_for(problem: ExponentProblem, step: float) -> BinaryPairSolver:
    if not problem.is_binary_pair:
        raise CapabilityError("exponent curves are implemented for K=2, |X|=2 over the product family")
    return binary_solver(float(problem.d0), float(problem.d1), float(step))


def alpha_star(gamma: float, problem: ExponentProblem, step: float = 1e-3) -> float:
    return _solver_for(problem, step).alpha_star(gamma)


def gamma_star(alpha: float, problem: ExponentProblem, step: float = 1e-3) -> float:
    return _solver_for(problem, step).gamma_star(alpha)


def beta_star_lower(alpha: float, problem: ExponentProblem, step: float = 1e-3) -> float:
    return _solver_for(problem, step).beta_star_lower(alpha)


def beta_star_upper(alpha: float, problem: ExponentProblem, step: float = 1e-3) -> float:
    return _solver_for(problem, step).beta_star_upper(alpha)


CURVES = {
    "alpha_star": alpha_star,
    "gamma_star": gamma_star,
    "beta_star_lower": beta_star_lower,
    "beta_star_upper": beta_star_upper,
}

_DIRECTION = {"alpha_star": 1, "gamma_star": 1, "beta_star_lower": -1, "beta_star_upper": -1}


@dataclass(frozen=True)
class ExponentCurve:
    name: str
    arguments: tuple
    values: tuple
    grid_step: float

    @classmethod
    def compute(cls, name: str, arguments, problem: ExponentProblem, step: float = 1e-3):
        if name not in CURVES:
            raise ParameterError(f"unknown curve {name!r}; known: {sorted(CURVES)}")
        fn = CURVES[name]
        args = tuple(float(a) for a in arguments)
        return cls(name, args, tuple(fn(a, problem, step) for a in args), step)

    def is_monotone(self, slack: float = 1e-9) -> bool:
        order = np.argsort(self.arguments)
        v = np.asarray(self.values)[order]
        finite = np.isfinite(v)
        v = v[finite]
        sign = _DIRECTION[self.name]
        return bool(np.all(sign * np.diff(v) >= -slack))

    def rows(self):
        return [(a, v, self.grid_step) for a, v in zip(self.arguments, self.values)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["argument", "value", "grid_step"])
            for a, v, s in self.rows():
                w.writerow([repr(a), repr(v), repr(s)])


# ---------------------------------------------------------------------------
# gap check
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapRow:
    alpha: float
    gamma_star: float
    beta_lower: float
    beta_upper: float
    tol_lower: float
    tol_upper: float

    @property
    def margin(self) -> float:
        return self.beta_upper - self.beta_lower

    @property
    def tolerance(self) -> float:
        return self.tol_lower + self.tol_upper

    @property
    def verdict(self) -> str:
        if not (math.isfinite(self.beta_lower) and math.isfinite(self.beta_upper)):
            return "skipped"
        if self.margin > self.tolerance:
            return "gap"
        if self.margin < -self.tolerance:
            return "violation"
        return "inconclusive"


@dataclass(frozen=True)
class GapTable:
    d0: float
    d1: float
    step: float
    alpha_max: float
    rows: tuple

    @property
    def all_gap(self) -> bool:
        return all(r.verdict == "gap" for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "gamma_star", "beta_lower", "beta_upper", "margin", "tolerance",
                        "verdict", "grid_step"])
            for r in self.rows:
                w.writerow([f"{r.alpha:.6f}", f"{r.gamma_star:.6f}", f"{r.beta_lower:.6f}",
                            f"{r.beta_upper:.6f}", f"{r.margin:.6f}", f"{r.tolerance:.6f}",
                            r.verdict, self.step])


def interior_alphas(problem: ExponentProblem, count: int, step: float = 1e-3) -> list:
    """``count`` equally spaced points strictly inside (0, alpha*(d1))."""
    top = alpha_star(problem.d1, problem, step)
    return [top * i / (count + 1) for i in range(1, count + 1)]


def verify_gap(problem: ExponentProblem, alphas=None, step: float = 1e-3, count: int = 5) -> GapTable:
    """Compute beta_* and beta^* at each alpha and compare them.

    The tolerance of each curve value is its change when the grid step is
    doubled.  A row is a ``gap`` when beta^* - beta_* exceeds the sum of
    the two tolerances, ``inconclusive`` when it does not.
    """
    fine = _solver_for(problem, step)
    coarse = _solver_for(problem, 2 * step)
    top = fine.alpha_star(problem.d1)
    if alphas is None:
        alphas = [top * i / (count + 1) for i in range(1, count + 1)]
    rows = []
    for a in alphas:
        if not 0 < a < top:
            raise ParameterError(f"alpha={a} is not inside (0, alpha*(d1)={top})")
        bl, bu = fine.beta_star_lower(a), fine.beta_star_upper(a)
        tl = abs(bl - coarse.beta_star_lower(a))
        tu = abs(bu - coarse.beta_star_upper(a))
        rows.append(GapRow(a, fine.gamma_star(a), bl, bu, tl, tu))
    return GapTable(problem.d0, problem.d1, step, top, tuple(rows))
