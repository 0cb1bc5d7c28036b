"""Q-guided weight allocation for fusing several restorations of one image.

Candidates are ranked by ascending Q. Every round moves weight from the
duller candidates towards sharper ones by the relative Q gap, and rounds are
repeated while the blended image keeps getting sharper.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_image, check_same_shape
from .sharpness import QConfig, metric_q


class NegativeWeightError(ValueError):
    """A round would drive some weight below zero."""


@dataclass(frozen=True)
class BlendConfig:
    eta: float = 1e-4
    epsilon_w: float = 1e-3
    max_rounds_cap: int = 1000

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta!r}")
        if not self.epsilon_w > 0:
            raise ValueError(f"epsilon_w must be > 0, got {self.epsilon_w!r}")
        if self.max_rounds_cap < 1:
            raise ValueError("max_rounds_cap must be at least 1")


@dataclass(frozen=True)
class BlendState:
    candidates: tuple
    q_values: np.ndarray
    weights: np.ndarray
    round: int = 0
    order: tuple = ()
    q_history: tuple = ()
    weight_history: tuple = ()
    rejected_q: float | None = None
    termination: str | None = None
    ties: bool = False

    @property
    def n(self):
        return len(self.q_values)


def delta(q_p, q_q):
    """Relative Q gain of ``q_q`` over ``q_p``."""
    if q_p == 0:
        raise ZeroDivisionError("delta is undefined for a zero reference Q")
    return (q_q - q_p) / q_p


def initial_state(candidates, q_values):
    """Sort candidates by ascending Q (stable) and give them equal weights."""
    q = np.asarray(q_values, dtype=np.float64)
    order = np.argsort(q, kind="stable")
    n = len(q)
    weights = np.full(n, 1.0 / n)
    q_sorted = q[order]
    return BlendState(
        candidates=tuple(candidates[i] for i in order),
        q_values=q_sorted,
        weights=weights,
        order=tuple(int(i) for i in order),
        weight_history=(weights.copy(),),
        ties=bool(np.any(np.diff(q_sorted) == 0)),
    )


def apply_round(weights, q_values):
    """One round of updates on a weight vector; ``q_values`` ascending.

    Iteration ``i`` takes the candidate at position ``N - i`` as reference:
    each lower weight ``w_k`` loses ``delta(Q_k, Q_ref)`` and the reference
    weight gains their sum, so the total stays exactly 1.
    """
    w = np.array(weights, dtype=np.float64)
    n = len(w)
    for i in range(1, n):
        ref = n - i
        steps = np.array([delta(q_values[k], q_values[ref]) for k in range(ref)])
        w[:ref] -= steps
        w[ref] += steps.sum()
    return w


def round_increment(q_values):
    """Constant per-round weight change (candidates never change between rounds)."""
    n = len(q_values)
    return apply_round(np.zeros(n), q_values)


def run_round(state):
    if np.any(state.q_values <= 0):
        raise ValueError("all candidate Q values must be positive")
    # the per-round change is constant, so round m sits on an arithmetic progression
    start = state.weight_history[0] if state.weight_history else state.weights
    w = start + (state.round + 1) * round_increment(state.q_values)
    # round-off when a weight lands exactly on zero
    w[(w < 0) & (w > -1e-12)] = 0.0
    if np.any(w < 0):
        raise NegativeWeightError(f"round {state.round + 1} would give negative weights {w}")
    return replace(
        state,
        weights=w,
        round=state.round + 1,
        weight_history=state.weight_history + (w.copy(),),
    )


def compose(state):
    """Weighted sum of the candidates, clamped to [0, 1]."""
    ref = state.candidates[0]
    out = np.zeros_like(ref, dtype=np.float64)
    for w, cand in zip(state.weights, state.candidates):
        if cand.shape != ref.shape:
            raise ValueError("candidate images differ in shape")
        out += w * cand
    return np.clip(out, 0.0, 1.0)


def rounds_until_exhausted(w0, decrement, cap):
    if decrement <= 0:
        return cap
    # tolerance keeps exact ratios such as 0.25 / 0.05 from flooring to 4
    return min(cap, int(math.floor(w0 / decrement + 1e-9)))


def max_rounds(state, cap=1000):
    """Rounds after which the lowest-Q weight would reach zero."""
    if state.n < 2:
        return cap
    decrement = -round_increment(state.q_values)[0]
    return rounds_until_exhausted(state.weight_history[0][0], decrement, cap)


def blend(candidates, config=None, qconfig=None):
    """Fuse candidate restorations; returns ``(image, state)``.

    ``state.termination`` names the stopping rule that fired:
    ``q_decreased`` (the next round lost sharpness and is discarded),
    ``gain_below_eta``, ``w0_exhausted``, ``negative_weight``,
    ``max_rounds``, ``static_weights`` or ``nonpositive_q``.
    """
    config = config or BlendConfig()
    qconfig = qconfig or QConfig()
    if isinstance(candidates, np.ndarray) and candidates.ndim == 2:
        candidates = [candidates]
    candidates = [check_image(c, f"candidates[{i}]") for i, c in enumerate(candidates)]
    if len(candidates) < 2:
        raise ValueError("blending needs at least two candidates")
    for c in candidates[1:]:
        check_same_shape(candidates[0], c, ("candidates[0]", "candidate"))

    state = initial_state(candidates, [metric_q(c, qconfig) for c in candidates])
    image = compose(state)
    state = replace(state, q_history=(metric_q(image, qconfig),))
    if np.any(state.q_values <= 0):
        return image, replace(state, termination="nonpositive_q")
    if not np.any(round_increment(state.q_values)):
        return image, replace(state, termination="static_weights")

    limit = max_rounds(state, config.max_rounds_cap)
    termination = "max_rounds"
    while state.round < limit:
        try:
            nxt = run_round(state)
        except NegativeWeightError:
            termination = "negative_weight"
            break
        nxt_image = compose(nxt)
        q_next = metric_q(nxt_image, qconfig)
        q_prev = state.q_history[-1]
        if q_next < q_prev:
            state = replace(state, rejected_q=q_next)
            termination = "q_decreased"
            break
        state = replace(nxt, q_history=state.q_history + (q_next,))
        image = nxt_image
        if q_next - q_prev < config.eta:
            termination = "gain_below_eta"
            break
        if state.weights[0] <= config.epsilon_w:
            termination = "w0_exhausted"
            break
    return image, replace(state, termination=termination)


def report_lines(state):
    """Line-oriented ``key=value`` description of a finished blend."""
    lines = [
        f"candidates={state.n}",
        "order=" + ",".join(str(i) for i in state.order),
        "q_candidates=" + ",".join(f"{q:.6f}" for q in state.q_values),
        f"rounds={state.round}",
        f"selected_round={state.round}",
        f"termination={state.termination}",
        f"ties={'true' if state.ties else 'false'}",
    ]
    for r, w in enumerate(state.weight_history):
        lines.append(f"round.{r}.weights=" + ",".join(f"{x:.6f}" for x in w))
        if r < len(state.q_history):
            lines.append(f"round.{r}.q={state.q_history[r]:.6f}")
    if state.rejected_q is not None:
        lines.append(f"round.{state.round + 1}.q_rejected={state.rejected_q:.6f}")
    lines.append("weights=" + ",".join(f"{x:.6f}" for x in state.weights))
    return lines
