"""Domain types and the evaluable quantities of the Markov shaping model.

Symbol tuples are indexed oldest-first: axis 0 of a joint PMF tensor is
``a[m-L+1]`` and the last axis is ``a[m]``. Filter taps are stored
newest-first, so ``taps[0]`` multiplies ``a[m]``.

All entropies are in bits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .errors import InvalidArgumentError

MAX_ALPHABET = 64
# States with less stationary mass than this have no meaningful conditional.
STATE_EPS = 1e-12
SUM_TOL = 1e-12


def _readonly(arr):
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Constellation:
    """Real ``m_b``-ASK alphabet ``{-(m_b-1), ..., -1, +1, ..., m_b-1}``."""

    m_b: int
    points: tuple = field(init=False)

    def __post_init__(self):
        m_b = self.m_b
        if isinstance(m_b, bool) or not isinstance(m_b, (int, np.integer)):
            raise InvalidArgumentError(f"alphabet size must be an integer, got {m_b!r}")
        if m_b < 2 or m_b > MAX_ALPHABET or m_b % 2:
            raise InvalidArgumentError(
                f"alphabet size must be even and in [2, {MAX_ALPHABET}], got {m_b}")
        object.__setattr__(self, "m_b", int(m_b))
        object.__setattr__(self, "points", tuple(range(-(m_b - 1), m_b, 2)))

    def __len__(self):
        return self.m_b

    @property
    def array(self):
        return np.array(self.points, dtype=float)


def make_constellation(m_b):
    """Build the ``m_b``-ASK constellation; ``m_b`` must be even and at most 64."""
    return Constellation(m_b)


@dataclass(frozen=True)
class PrecodingFilter:
    """FIR precoding filter with taps ``[g0, g1, ..., g_{L-1}]`` (``g0`` newest)."""

    taps: tuple

    def __post_init__(self):
        taps = tuple(float(t) for t in np.atleast_1d(np.asarray(self.taps, dtype=float)))
        if len(taps) < 1:
            raise InvalidArgumentError("a precoding filter needs at least one tap")
        if not all(math.isfinite(t) for t in taps):
            raise InvalidArgumentError(f"filter taps must be finite, got {taps}")
        object.__setattr__(self, "taps", taps)

    @property
    def L(self):
        return len(self.taps)

    def output(self, window):
        """Filter output for a symbol window given oldest-first."""
        window = np.asarray(window, dtype=float)
        if window.shape[-1] != self.L:
            raise InvalidArgumentError("window length must equal the number of taps")
        return window @ np.asarray(self.taps[::-1])


@dataclass(frozen=True)
class ChannelSpec:
    """Monic all-pole channel ``H(z) = 1 / (denom[0] + denom[1] z^-1 + ...)``."""

    denom: tuple

    def __post_init__(self):
        denom = tuple(float(d) for d in np.atleast_1d(np.asarray(self.denom, dtype=float)))
        if not denom:
            raise InvalidArgumentError("channel denominator is empty")
        if denom[0] != 1.0:
            raise InvalidArgumentError(f"channel must be monic (denom[0] == 1), got {denom[0]}")
        if not all(math.isfinite(d) for d in denom):
            raise InvalidArgumentError("channel coefficients must be finite")
        object.__setattr__(self, "denom", denom)

    @classmethod
    def from_cd(cls, c, d=0.0):
        """Second-order channel ``1 / (1 + c z^-1 + d z^-2)``.

        The ``d`` tap is dropped when it is zero so that the precoder stays
        two taps long.
        """
        return cls((1.0, c, d)) if d != 0.0 else cls((1.0, c))

    @property
    def L(self):
        return len(self.denom)


def precoder_from_channel(ch):
    """Precoding filter ``G(z) = 1/H(z)``: the channel denominator read as FIR taps."""
    if not isinstance(ch, ChannelSpec):
        ch = ChannelSpec(tuple(ch))
    return PrecodingFilter(ch.denom)


@dataclass(frozen=True)
class JointPmf:
    """PMF over ``L`` consecutive symbols, an ``(m_b,)*L`` tensor, oldest axis first."""

    alphabet: Constellation
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        m_b = self.alphabet.m_b
        if probs.ndim < 1 or any(n != m_b for n in probs.shape):
            raise InvalidArgumentError(
                f"probability tensor shape {probs.shape} does not match alphabet size {m_b}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidArgumentError("probabilities must be finite and non-negative")
        total = probs.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidArgumentError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", _readonly(probs))

    @property
    def order(self):
        return self.probs.ndim

    @property
    def m_b(self):
        return self.alphabet.m_b

    @classmethod
    def uniform(cls, alphabet, order):
        m_b = alphabet.m_b
        return cls(alphabet, np.full((m_b,) * order, 1.0 / m_b ** order))

    @classmethod
    def iid(cls, alphabet, marginal, order):
        """Product PMF of ``order`` independent draws from ``marginal``."""
        marginal = np.asarray(marginal, dtype=float)
        probs = marginal
        for _ in range(order - 1):
            probs = np.multiply.outer(probs, marginal)
        return cls(alphabet, probs / probs.sum())

    def to_dict(self):
        return {"m_b": self.m_b, "order": self.order,
                "probs": [float(p) for p in self.probs.ravel()]}

    @classmethod
    def from_dict(cls, obj):
        try:
            m_b, order, flat = int(obj["m_b"]), int(obj["order"]), obj["probs"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgumentError(f"malformed joint PMF object: {exc}") from None
        if order < 1 or len(flat) != m_b ** order:
            raise InvalidArgumentError(
                f"expected {m_b}**{order} probabilities, got {len(flat)}")
        return cls(Constellation(m_b), np.asarray(flat, dtype=float).reshape((m_b,) * order))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class MarkovShapingModel:
    """Stationary Markov source over states of ``order - 1`` previous symbols.

    ``state_dist`` and the rows of ``transitions`` are indexed by the
    row-major flattening of the state tuple (oldest symbol slowest). Rows of
    states that are never visited are set to uniform and flagged in
    ``reachable``.
    """

    alphabet: Constellation
    order: int
    state_dist: np.ndarray
    transitions: np.ndarray
    reachable: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "state_dist", _readonly(self.state_dist))
        object.__setattr__(self, "transitions", _readonly(self.transitions))
        reach = np.array(self.reachable, dtype=bool, copy=True)
        reach.setflags(write=False)
        object.__setattr__(self, "reachable", reach)

    @property
    def m_b(self):
        return self.alphabet.m_b

    @property
    def n_states(self):
        return self.state_dist.shape[0]

    def next_state(self, state, symbol):
        """Flattened index of the state reached from ``state`` by emitting ``symbol``."""
        if self.order == 1:
            return 0
        return (state * self.m_b + symbol) % self.n_states

    def step(self, dist):
        """Push a distribution over states through one transition."""
        m_b, n = self.m_b, self.n_states
        flow = np.asarray(dist)[:, None] * self.transitions  # (state, symbol)
        if self.order == 1:
            return np.array([flow.sum()])
        # new state = (old state without its oldest symbol, symbol)
        return flow.reshape(m_b, n).sum(axis=0)


def symbol_tuples(alphabet, order):
    """Array of shape ``(m_b**order, order)`` with the symbol values of every tuple."""
    pts = alphabet.array
    grids = np.meshgrid(*([pts] * order), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def filter_output_tensor(alphabet, g):
    """Tensor of filter outputs ``sum_k g_k a[m-k]`` indexed by oldest-first tuples."""
    L = g.L
    pts = alphabet.array
    out = np.zeros((alphabet.m_b,) * L)
    for k, tap in enumerate(g.taps):
        axis = L - 1 - k
        shape = [1] * L
        shape[axis] = alphabet.m_b
        out = out + tap * pts.reshape(shape)
    return out


def power_tensor(alphabet, g):
    """Per-tuple instantaneous power ``|g^T A|^2``."""
    return filter_output_tensor(alphabet, g) ** 2


def transmit_power(pmf, g):
    """Average precoded power: the expectation of ``|g^T A|^2`` under ``pmf``."""
    if pmf.order != g.L:
        raise InvalidArgumentError(
            f"PMF order {pmf.order} does not match filter length {g.L}")
    return float(np.sum(pmf.probs * power_tensor(pmf.alphabet, g)))


def _xlog2x(p):
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log2(p[pos])
    return out


def entropy(p):
    """Shannon entropy in bits of a probability vector (``0 log 0 = 0``)."""
    return float(-_xlog2x(p).sum())


def conditional_entropy(pmf):
    """Entropy of the newest symbol given the ``L-1`` previous ones, in bits.

    For ``L = 1`` this is the marginal entropy.
    """
    probs = pmf.probs
    if pmf.order == 1:
        return entropy(probs)
    prefix = probs.sum(axis=-1)
    value = -_xlog2x(probs).sum() + _xlog2x(prefix).sum()
    return float(max(value, 0.0))


def leading_marginal(pmf):
    """Marginal of the oldest ``L-1`` symbols (the newest one summed out)."""
    return pmf.probs.sum(axis=-1)


def trailing_marginal(pmf):
    """Marginal of the newest ``L-1`` symbols (the oldest one summed out)."""
    return pmf.probs.sum(axis=0)


def stationarity_residual(pmf):
    """Largest gap between the leading and trailing ``(L-1)``-marginals."""
    if pmf.order == 1:
        return 0.0
    return float(np.max(np.abs(trailing_marginal(pmf) - leading_marginal(pmf))))


def joint_to_markov(pmf, tol=1e-8):
    """Split a stationary joint PMF into state distribution and transition rows."""
    if pmf.order > 1:
        resid = stationarity_residual(pmf)
        if resid > tol:
            raise InvalidArgumentError(f"joint PMF is not stationary (residual {resid:.3g})")
    m_b = pmf.m_b
    flat = pmf.probs.reshape(-1, m_b)
    state = flat.sum(axis=1)
    reachable = state > STATE_EPS
    trans = np.full_like(flat, 1.0 / m_b)
    trans[reachable] = flat[reachable] / state[reachable, None]
    return MarkovShapingModel(pmf.alphabet, pmf.order, state, trans, reachable)


def markov_to_joint(model):
    """Rebuild the joint PMF ``pi(s) * P(a | s)`` from a Markov model."""
    flat = model.state_dist[:, None] * model.transitions
    flat = flat / flat.sum()
    return JointPmf(model.alphabet, flat.reshape((model.m_b,) * model.order))


def stationary_distribution(transitions, m_b, order):
    """Stationary state distribution of a transition table over ``(order-1)``-tuples.

    Solves ``pi = pi T`` on the de Bruijn state graph. The chain is assumed
    irreducible, which holds whenever every row has full support.
    """
    transitions = np.asarray(transitions, dtype=float)
    n = transitions.shape[0]
    if order == 1:
        return np.ones(1)
    big = np.zeros((n, n))
    for s in range(n):
        nxt = (s * m_b + np.arange(m_b)) % n
        np.add.at(big[s], nxt, transitions[s])
    lhs = big.T - np.eye(n)
    lhs[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(lhs, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
