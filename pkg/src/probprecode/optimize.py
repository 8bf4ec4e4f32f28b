"""Power-minimizing stationary joint PMFs under a conditional-entropy floor.

The program solved here is

    minimize    sum_A P(A) |g^T A|^2
    subject to  H(a_m | a_{m-1}, ..., a_{m-L+1}) >= R
                leading (L-1)-marginal == trailing (L-1)-marginal
                sum P = 1,  P >= 0

with a primal log-barrier method, finished by Newton's method on the
optimality conditions once the barrier iterate is close. The objective and every constraint except
the entropy floor are affine, and conditional entropy is concave in the joint
PMF, so the barrier method converges to the global optimum.

With a single-tap filter the problem collapses to i.i.d. shaping whose
solution is the Maxwell-Boltzmann family ``P(a) ~ exp(-lambda a^2)``;
:func:`solve_maxwell_boltzmann` computes it directly.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import functools
import logging
import math

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .core import (
    Constellation,
    JointPmf,
    PrecodingFilter,
    conditional_entropy,
    entropy,
    power_tensor,
    stationarity_residual,
    transmit_power,
)
from .errors import ConvergenceError, InfeasibleRateError, InvalidArgumentError

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
MAX_VARIABLES = 2 ** 20
# interior floor for the probabilities; keeps log P finite
EPS_INTERIOR = 1e-12
RATE_SLACK = 1e-12
# a step may shrink any probability, or the entropy slack, by at most this factor
BOUNDARY_FRACTION = 0.5
REFINE_SWEEPS = 3
# multiplier systems up to this size are factored densely
DENSE_SCHUR = 2048
# smallest probability kept during the final polish
TINY = 1e-300
# barrier gap below which the optimality-condition polish is attempted
POLISH_GAP = 1e-1


@dataclass(frozen=True)
class ShapingProblem:
    constellation: Constellation
    filter: PrecodingFilter
    rate: float
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        if not math.isfinite(self.rate) or self.rate <= 0:
            raise InvalidArgumentError(f"rate must be positive, got {self.rate}")
        if self.rate > math.log2(self.constellation.m_b) + RATE_SLACK:
            raise InfeasibleRateError(
                f"rate {self.rate} exceeds log2({self.constellation.m_b}) bits/symbol")


@dataclass(frozen=True)
class ShapingSolution:
    pmf: JointPmf
    power: float
    entropy: float
    kkt_residual: float
    iterations: int
    converged: bool = True

    def to_dict(self):
        return {
            "pmf": self.pmf.to_dict(),
            "power": float(self.power),
            "entropy": float(self.entropy),
            "kkt_residual": float(self.kkt_residual),
            "iterations": int(self.iterations),
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls(
                pmf=JointPmf.from_dict(obj["pmf"]),
                power=float(obj["power"]),
                entropy=float(obj["entropy"]),
                kkt_residual=float(obj["kkt_residual"]),
                iterations=int(obj["iterations"]),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"malformed solution object: {exc}") from None

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MBDistribution:
    """Maxwell-Boltzmann PMF ``K(lambda) exp(-lambda a^2)`` on an ASK alphabet."""

    alphabet: Constellation
    lam: float
    probs: np.ndarray
    normalizer: float

    @property
    def power(self):
        return float(np.sum(self.probs * self.alphabet.array ** 2))


def _mb_probs(points, lam):
    # shifted exponent avoids underflow for large lambda; points closest to 0 have a^2 == 1
    w = np.exp(-lam * (points ** 2 - 1.0))
    return w / w.sum()


def solve_maxwell_boltzmann(c, rate, tol=1e-12):
    """Maxwell-Boltzmann distribution on ``c`` whose entropy equals ``rate``.

    ``lambda`` is found by bisection. As ``lambda`` grows the distribution
    concentrates on ``{-1, +1}``, so rates must lie in ``(1, log2 m_b]``.
    """
    hmax = math.log2(c.m_b)
    if not (1.0 < rate <= hmax + RATE_SLACK):
        raise InfeasibleRateError(
            f"Maxwell-Boltzmann rate must lie in (1, {hmax}], got {rate}")
    pts = c.array
    if rate >= hmax - RATE_SLACK:
        lam = 0.0
    else:
        lo, hi = 0.0, 1.0
        while entropy(_mb_probs(pts, hi)) > rate:
            lo, hi = hi, 2.0 * hi
        for _ in range(200):
            lam = 0.5 * (lo + hi)
            h = entropy(_mb_probs(pts, lam))
            if abs(h - rate) <= tol or hi - lo <= 1e-300:
                break
            if h > rate:
                lo = lam
            else:
                hi = lam
    probs = _mb_probs(pts, lam)
    normalizer = float(1.0 / np.sum(np.exp(-lam * pts ** 2))) if lam < 700 else float("inf")
    return MBDistribution(c, float(lam), probs, normalizer)


def _equality_constraints(m_b, order):
    """Stationarity rows (one redundant row dropped) and the normalization row."""
    n = m_b ** order
    ones = np.ones(n)
    if order == 1:
        return sp.csr_matrix(ones[None, :]), np.ones(1)
    n_states = n // m_b
    idx = np.arange(n)
    lead = idx // m_b
    trail = idx % n_states
    rows = np.concatenate([trail, lead])
    cols = np.concatenate([idx, idx])
    vals = np.concatenate([ones, -ones])
    stat = sp.coo_matrix((vals, (rows, cols)), shape=(n_states, n)).tocsr()
    A = sp.vstack([stat[:-1], sp.csr_matrix(ones[None, :])]).tocsr()
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    return A, b


class _Barrier:
    """Barrier function ``t c^T x - log(H(x) - R) - sum log x`` and its Newton system."""

    def __init__(self, cost, m_b, rate, A, b):
        self.cost = cost
        self.m_b = m_b
        self.rate = rate
        self.A = A
        self.At = A.T.tocsr()
        self.b = b
        self.n = cost.size

    def entropy(self, x):
        blocks = x.reshape(-1, self.m_b)
        pi = blocks.sum(axis=1)
        return float((-np.sum(x * np.log(x)) + np.sum(pi * np.log(pi))) / LN2)

    def entropy_grad(self, x):
        blocks = x.reshape(-1, self.m_b)
        pi = blocks.sum(axis=1, keepdims=True)
        return (-np.log(blocks / pi) / LN2).ravel()

    def feasible(self, x):
        return bool(np.all(x > EPS_INTERIOR)) and self.entropy(x) > self.rate

    def admissible(self, x, x_new):
        """Strictly feasible and not closer to the boundary than the fraction rule allows."""
        if not (np.all(x_new >= BOUNDARY_FRACTION * x) and self.feasible(x_new)):
            return False
        return self.entropy(x_new) - self.rate >= BOUNDARY_FRACTION * (self.entropy(x) - self.rate)

    def value(self, x, t):
        return t * float(self.cost @ x) - math.log(self.entropy(x) - self.rate) - float(np.sum(np.log(x)))

    def gradient(self, x, t):
        h = self.entropy(x) - self.rate
        gH = self.entropy_grad(x)
        return t * self.cost - gH / h - 1.0 / x, gH, h

    def _block_ops(self, x, h):
        """Hessian part in the variables ``y = dx / x`` and its inverse.

        Block ``s`` is ``diag(1 + x/(h ln2)) - x x^T / (pi_s h ln2)``; the
        inverse follows from Sherman-Morrison with the denominator summed in
        a cancellation-free form, which matters once ``h`` is tiny.
        """
        m_b = self.m_b
        blocks = x.reshape(-1, m_b)
        pi = blocks.sum(axis=1, keepdims=True)
        hl = h * LN2
        idx = np.arange(m_b)
        hess = -blocks[:, :, None] * blocks[:, None, :] / (pi * hl)[:, :, None]
        hess[:, idx, idx] += 1.0 + blocks / hl
        dinv = hl / (hl + blocks)
        v = dinv * blocks / np.sqrt(pi * hl)
        den = np.sum(blocks / pi * dinv, axis=1)
        inv = v[:, :, None] * v[:, None, :] / den[:, None, None]
        inv[:, idx, idx] += dinv
        return _block_diag(hess), _block_diag(inv)

    def newton_step(self, x, t):
        """Solve the equality-constrained Newton system.

        The rank-one term of the entropy barrier is kept as an extra unknown
        and all variables are scaled by ``x``; forming the rank-one update
        explicitly loses too much precision once ``H - R`` is tiny. The
        block-diagonal Hessian is eliminated, leaving a small system in the
        multipliers, and the full system is used for refinement sweeps.
        Returns ``(dx, w, grad)`` with ``w`` the equality multipliers.
        """
        grad, gH, h = self.gradient(x, t)
        n, k = self.n, self.A.shape[0]
        hess, hinv = self._block_ops(x, h)
        C = sp.vstack([self.A @ sp.diags(x), sp.csr_matrix((x * gH)[None, :])], format="csr")
        Ct = C.T.tocsr()
        e = np.zeros(k + 1)
        e[-1] = h * h
        schur = C @ hinv @ Ct + sp.diags(e)
        if k + 1 <= DENSE_SCHUR:
            lu = sla.lu_factor(schur.toarray())
            solve_s = functools.partial(sla.lu_solve, lu)
        else:
            solve_s = spla.splu(schur.tocsc()).solve

        def solve(q1, q2):
            lam = solve_s(C @ (hinv @ q1) - q2)
            return hinv @ (q1 - Ct @ lam), lam

        r1 = -x * grad
        r2 = np.concatenate([self.b - self.A @ x, [0.0]])
        y, lam = solve(r1, r2)
        for _ in range(REFINE_SWEEPS):
            dy, dl = solve(r1 - hess @ y - Ct @ lam, r2 - C @ y + e * lam)
            y, lam = y + dy, lam + dl
        return x * y, lam[:k], grad


def _block_diag(dense):
    """CSR matrix with the square blocks ``dense[s]`` on its diagonal."""
    nb, m, _ = dense.shape
    cols = np.arange(nb)[:, None, None] * m + np.arange(m)[None, None, :]
    indices = np.broadcast_to(cols, dense.shape).ravel()
    indptr = np.arange(0, nb * m * m + 1, m)
    return sp.csr_matrix((dense.ravel(), indices, indptr), shape=(nb * m, nb * m))


def _uniform_solution(problem):
    c, g = problem.constellation, problem.filter
    pmf = JointPmf.uniform(c, g.L)
    return ShapingSolution(pmf, transmit_power(pmf, g), conditional_entropy(pmf), 0.0, 0)


def _project_equalities(A, b, x):
    """Least-norm correction of ``x`` onto ``{A x = b}``."""
    r = b - A @ x
    if not np.any(r):
        return x
    AAt = (A @ A.T).toarray() if A.shape[0] <= 4096 else (A @ A.T).tocsc()
    y = np.linalg.solve(AAt, r) if isinstance(AAt, np.ndarray) else spla.spsolve(AAt, r)
    return x + A.T @ y


def _initial_multipliers(bar, x):
    """Least-squares multipliers of the stationarity condition, rows weighted by ``x``."""
    gH = bar.entropy_grad(x)
    G = sp.hstack([sp.csr_matrix(-gH[:, None]), bar.At], format="csr")
    Gw = sp.diags(x) @ G
    normal = (Gw.T @ Gw).tocsc()
    rhs = Gw.T @ (-x * bar.cost)
    if normal.shape[0] <= DENSE_SCHUR:
        coef = np.linalg.lstsq(normal.toarray(), rhs, rcond=None)[0]
    else:
        coef = spla.spsolve(normal, rhs)
    return float(coef[0]), coef[1:]


def _kkt_residual(bar, x, mu, nu, scale):
    """Residual of the optimality conditions with the entropy floor active.

    Bound multipliers are ``z = max(f1, 0)``, so entries pushed to zero count
    through complementarity ``x z`` rather than through ``f1`` itself.
    """
    gH = bar.entropy_grad(x)
    f1 = bar.cost - mu * gH + bar.At @ nu
    f2 = bar.A @ x - bar.b
    f3 = bar.entropy(x) - bar.rate
    z = np.maximum(f1, 0.0)
    parts = np.concatenate([(f1 - z) / scale, x * z / scale, f2, [f3]])
    return float(np.max(np.abs(parts))), float(np.linalg.norm(parts)), f1, f2, f3, gH


def _refine_kkt(bar, x, iters=40, tol=1e-14):
    """Newton's method on the optimality conditions with the entropy floor active.

    Solves ``c - mu grad H(x) + A^T nu = 0``, ``A x = b``, ``H(x) = R`` starting
    from a barrier iterate. Steps are taken in ``log x``, which keeps the
    iterate positive and lets probabilities that belong at zero decay
    geometrically. Returns ``(x, residual)`` or ``None`` when ``mu`` turns
    negative or the residual stalls above ``tol`` (the floor is then not
    strictly active).
    """
    A, m_b = bar.A, bar.m_b
    n, k = bar.n, A.shape[0]
    scale = max(1.0, float(np.max(np.abs(bar.cost))))
    mu, nu = _initial_multipliers(bar, x)
    best, merit, f1, f2, f3, gH = _kkt_residual(bar, x, mu, nu, scale)
    idx = np.arange(m_b)
    for _ in range(iters):
        if best <= tol:
            break
        # Jacobian in z = log x; rows of the stationarity block are left
        # unscaled so that probabilities near zero keep a well-posed equation
        blocks = x.reshape(-1, m_b)
        w = blocks / blocks.sum(axis=1, keepdims=True)
        dense = -np.broadcast_to(w[:, None, :], (w.shape[0], m_b, m_b)).copy()
        dense[:, idx, idx] += 1.0
        jac = sp.bmat([
            [_block_diag(dense * (mu / LN2)), bar.At, sp.csr_matrix(-gH[:, None])],
            [A @ sp.diags(x), None, None],
            [sp.csr_matrix((x * gH)[None, :]), None, None],
        ], format="csc")
        rhs = -np.concatenate([f1, f2, [f3]])
        try:
            d = spla.splu(jac).solve(rhs)
        except RuntimeError:
            return None
        if not np.all(np.isfinite(d)):
            return None
        step, accepted = 1.0, None
        while step >= 1.0 / 64:
            x_new = np.maximum(x * np.exp(np.minimum(step * d[:n], 50.0)), TINY)
            mu_new, nu_new = mu + step * d[-1], nu + step * d[n:n + k]
            trial = _kkt_residual(bar, x_new, mu_new, nu_new, scale)
            if trial[1] < merit:
                accepted = (x_new, mu_new, nu_new, trial)
                break
            step *= 0.5
        if accepted is None:
            break
        x, mu, nu, (best, merit, f1, f2, f3, gH) = accepted
    if mu < 0 or best > 1e-11:
        return None
    return x, float(best)


def _finalize(problem, bar, x, t, iterations, converged, refined=None):
    if refined is None and converged:
        refined = _refine_kkt(bar, x)
    if refined is not None:
        x, kkt = refined
    else:
        # barrier certificate: surrogate duality gap of the last centering
        x = _project_equalities(bar.A, bar.b, x)
        kkt = (bar.n + 1) / t
    x = np.where((x < 0) & (x >= -1e-12), 0.0, x)
    x = np.clip(x, 0.0, None)
    x = x / x.sum()
    m_b, L = problem.constellation.m_b, problem.filter.L
    pmf = JointPmf(problem.constellation, x.reshape((m_b,) * L))
    return ShapingSolution(pmf, transmit_power(pmf, problem.filter),
                           conditional_entropy(pmf), float(kkt), int(iterations), converged)


def solve_markov_shaping(problem, t0=1.0, mu=2.0, newton_tol=1e-10):
    """Minimum-power stationary joint PMF meeting the entropy floor.

    Deterministic: the barrier path starts from the uniform joint PMF, which
    is strictly feasible whenever ``R < log2 m_b``. At ``R = log2 m_b`` the
    uniform i.i.d. PMF is the only feasible point and is returned directly.

    The barrier weight grows by ``mu`` per outer step. Once the surrogate gap
    ``(n + 1) / t`` drops below ``POLISH_GAP`` each centered point is handed
    to Newton's method on the optimality conditions; the first polish that
    meets ``gap_tol`` ends the solve and its residual is reported as
    ``kkt_residual``. If no polish succeeds the barrier runs on until the
    surrogate gap itself is below ``gap_tol``.

    ``max_iter`` bounds the Newton iterations of each centering step; the
    returned ``iterations`` counts barrier Newton iterations. Raises
    :class:`ConvergenceError` carrying the best iterate if a centering step
    runs out of iterations or the final KKT residual exceeds ``gap_tol``.
    """
    c, g, R = problem.constellation, problem.filter, problem.rate
    m_b, L = c.m_b, g.L
    n = m_b ** L
    if n > MAX_VARIABLES:
        raise InvalidArgumentError(f"{m_b}**{L} joint probabilities exceed the cap of {MAX_VARIABLES}")
    if R >= math.log2(m_b) - RATE_SLACK:
        return _uniform_solution(problem)

    cost = power_tensor(c, g).ravel()
    A, b = _equality_constraints(m_b, L)
    bar = _Barrier(cost, m_b, R, A, b)
    x = np.full(n, 1.0 / n)
    t = t0
    total = 0
    refined = None
    while True:
        reason = None
        for _ in range(problem.max_iter):
            dx, _, grad = bar.newton_step(x, t)
            total += 1
            slope = float(grad @ dx)
            # decrement in objective units: what incomplete centering can cost
            if -slope / 2.0 <= newton_tol * t:
                reason = "decrement"
                break
            step = 1.0
            while step > 1e-20 and not bar.admissible(x, x + step * dx):
                step *= 0.5
            f0 = bar.value(x, t)
            while step > 1e-3 and bar.value(x + step * dx, t) > f0 + 0.01 * step * slope:
                step *= 0.5
            if step <= 1e-3:
                # decrease no longer resolvable in floating point at this weight
                reason = "armijo"
                break
            x_new = x + step * dx
            if np.array_equal(x_new, x):
                reason = "stalled"
                break
            x = x_new
        centered = reason is not None
        log.debug("t=%.3g newton=%d exit=%s decrement=%.3g slack=%.3g", t, total, reason,
                  -slope / 2.0, bar.entropy(x) - bar.rate)
        if not centered:
            sol = _finalize(problem, bar, x, t, total, converged=False)
            raise ConvergenceError(
                f"centering did not converge in {problem.max_iter} iterations", sol)
        gap = (n + 1) / t
        if gap <= POLISH_GAP:
            # hand over to Newton on the optimality conditions, which stays
            # well conditioned where the barrier system no longer is
            refined = _refine_kkt(bar, x)
            if refined is not None and refined[1] <= problem.gap_tol:
                log.debug("polished at t=%.3g residual=%.3g", t, refined[1])
                break
        if gap < problem.gap_tol:
            refined = None
            break
        t *= mu
    sol = _finalize(problem, bar, x, t, total, converged=True, refined=refined)
    if sol.kkt_residual > problem.gap_tol or stationarity_residual(sol.pmf) > problem.feas_tol:
        flagged = ShapingSolution(sol.pmf, sol.power, sol.entropy, sol.kkt_residual,
                                  sol.iterations, converged=False)
        raise ConvergenceError(f"KKT residual {sol.kkt_residual:.3g} above tolerance", flagged)
    return sol


def _binary_cond_entropy(p00, p11):
    """Conditional entropy of the stationary 2x2 joint with the given diagonal."""
    p01 = np.clip((1.0 - p00 - p11) / 2.0, 0.0, None)

    def xlogx(p):
        safe = np.where(p > 0, p, 1.0)
        return np.where(p > 0, p * np.log2(safe), 0.0)

    return (-(xlogx(p00) + 2 * xlogx(p01) + xlogx(p11))
            + xlogx(p00 + p01) + xlogx(p11 + p01))


def _boundary_points(p00, rate, slope):
    """Cheapest feasible ``P(+1,+1)`` on each line of fixed ``P(-1,-1)``.

    Conditional entropy is concave along each line, so its feasible part is
    an interval; the linear objective picks the left end for ``slope > 0``
    and the right end otherwise. Lines with no feasible point give NaN.
    """
    lo = np.zeros_like(p00)
    hi = 1.0 - p00
    # golden-section search for the entropy peak on each line
    a, b = lo.copy(), hi.copy()
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    for _ in range(80):
        c1 = b - ratio * (b - a)
        c2 = a + ratio * (b - a)
        left = _binary_cond_entropy(p00, c1) > _binary_cond_entropy(p00, c2)
        b = np.where(left, c2, b)
        a = np.where(left, a, c1)
    peak = (a + b) / 2.0
    feasible = _binary_cond_entropy(p00, peak) >= rate
    if slope > 0:
        out_, in_ = lo.copy(), peak.copy()
    else:
        out_, in_ = hi.copy(), peak.copy()
    edge_ok = _binary_cond_entropy(p00, out_) >= rate
    for _ in range(100):
        mid = (out_ + in_) / 2.0
        ok = _binary_cond_entropy(p00, mid) >= rate
        in_ = np.where(ok, mid, in_)
        out_ = np.where(ok, out_, mid)
    root = np.where(edge_ok, lo if slope > 0 else hi, in_)
    return np.where(feasible, root, np.nan)


def grid_oracle(c, g, rate, resolution=1e-3, refine_boundary=True):
    """Exhaustive search over stationary 2x2 joint PMFs.

    Only binary alphabets with two-tap filters are supported. A stationary
    2x2 joint has ``P(-1,+1) == P(+1,-1)``, leaving the diagonal
    ``(P(-1,-1), P(+1,+1))`` free. Every diagonal pair on a grid of step
    ``resolution`` is scanned. With ``refine_boundary`` each grid line of
    fixed ``P(-1,-1)`` also contributes its exact cheapest feasible point,
    found by bisection on the entropy floor; a bare grid is off by up to
    ``resolution`` times the objective slope.
    """
    if c.m_b != 2 or g.L != 2:
        raise InvalidArgumentError("grid oracle supports only 2-ASK with a 2-tap filter")
    steps = int(round(1.0 / resolution))
    grid = np.arange(steps + 1) / steps
    p00, p11 = np.meshgrid(grid, grid, indexing="ij")
    keep = p00 + p11 <= 1.0 + 1e-15
    p00, p11 = p00[keep], p11[keep]
    cost = power_tensor(c, g)

    if refine_boundary:
        slope = cost[1, 1] - cost[0, 1]
        extra = _boundary_points(grid, rate, slope)
        ok = ~np.isnan(extra)
        p00 = np.concatenate([p00, grid[ok]])
        p11 = np.concatenate([p11, extra[ok]])

    p01 = np.clip((1.0 - p00 - p11) / 2.0, 0.0, None)
    h = _binary_cond_entropy(p00, p11)
    power = p00 * cost[0, 0] + p01 * (cost[0, 1] + cost[1, 0]) + p11 * cost[1, 1]
    feasible = h >= rate
    if not feasible.any():
        raise InfeasibleRateError(f"no grid point reaches rate {rate}")
    power = np.where(feasible, power, np.inf)
    best = int(np.argmin(power))
    probs = np.array([[p00[best], p01[best]], [p01[best], p11[best]]])
    pmf = JointPmf(c, probs / probs.sum())
    return ShapingSolution(pmf, transmit_power(pmf, g), conditional_entropy(pmf), 0.0, 0)


def kl_divergence(p, q):
    """Kullback-Leibler divergence ``D(p || q)`` in bits."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise InvalidArgumentError("distributions must have the same length")
    if np.any((q == 0) & (p > 0)):
        raise InvalidArgumentError("p is not absolutely continuous with respect to q")
    pos = p > 0
    return float(max(np.sum(p[pos] * np.log2(p[pos] / q[pos])), 0.0))
