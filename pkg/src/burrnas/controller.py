"""Recurrent controller that proposes architectures, trained with REINFORCE.

The controller is a single tanh RNN cell unrolled for ``3 * T`` steps, one
per decision (input a, input b, op for each block). Each step is fed the
embedding of the previous decision and emits a masked softmax over the
choices that are legal at that point, so every sampled architecture is
valid. Gradients of the summed log-probabilities are computed by hand with
backpropagation through time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .archspace import NUM_BACKBONE, OPS, Architecture, canonical_block, encode
from .errors import NonFiniteGradient, SearchError

HEADS = ("a", "b", "op")
PARAM_NAMES = ("E", "W_x", "W_h", "b_h", "V_a", "c_a", "V_b", "c_b", "V_op", "c_op")


@dataclass
class ControllerState:
    params: dict[str, np.ndarray]
    T: int
    H: int
    rng_seed: int
    hidden: np.ndarray = None
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.hidden is None:
            self.hidden = np.zeros(self.H)
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    @property
    def max_pool(self) -> int:
        return NUM_BACKBONE + self.T - 1

    @property
    def start_token(self) -> int:
        return self.max_pool + len(OPS)

    def copy(self) -> "ControllerState":
        return replace(self, params={k: v.copy() for k, v in self.params.items()}, hidden=self.hidden.copy())


@dataclass
class ActionTrace:
    actions: list[int]
    logprobs: list[float]
    arch: Architecture

    @property
    def total_logprob(self) -> float:
        return float(sum(self.logprobs))


@dataclass
class BaselineState:
    b: float = 0.0
    alpha: float = 0.8
    initialized: bool = False


@dataclass
class SearchConfig:
    T: int = 7
    trials: int = 500
    lr: float = 0.1
    m: int = 1
    child_iters: int = 3000
    seed: int = 0
    hidden: int = 32

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.m != 1:
            raise ValueError("only one architecture per controller update (m=1) is supported")
        if self.T < 1:
            raise ValueError("T must be >= 1")


def init_controller(T: int, H: int = 32, seed: int = 0) -> ControllerState:
    if T < 1 or H < 1:
        raise ValueError(f"need T >= 1 and H >= 1, got T={T}, H={H}")
    rng = np.random.default_rng(seed)
    P = NUM_BACKBONE + T - 1
    vocab = P + len(OPS) + 1
    shapes = {
        "E": (vocab, H),
        "W_x": (H, H),
        "W_h": (H, H),
        "b_h": (H,),
        "V_a": (P, H),
        "c_a": (P,),
        "V_b": (P, H),
        "c_b": (P,),
        "V_op": (len(OPS), H),
        "c_op": (len(OPS),),
    }
    params = {name: rng.uniform(-0.1, 0.1, size=shapes[name]) for name in PARAM_NAMES}
    # sampling stream is separate from the init stream
    return ControllerState(params=params, T=T, H=H, rng_seed=seed, rng=np.random.default_rng([seed, 1]))


def _step_layout(state: ControllerState, t: int):
    """Head name and legal-choice mask at decision ``t`` (chosen ``a`` is masked later)."""
    k, kind = divmod(t, 3)
    head = HEADS[kind]
    if head == "op":
        return head, np.ones(len(OPS), dtype=bool)
    mask = np.zeros(state.max_pool, dtype=bool)
    mask[: NUM_BACKBONE + k] = True
    return head, mask


def _token(state: ControllerState, t: int, action: int) -> int:
    """Embedding row for the action taken at step ``t``."""
    return state.max_pool + action if t % 3 == 2 else action


def _masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    zmax = z[mask].max()
    lse = zmax + math.log(np.exp(z[mask] - zmax).sum())
    return z - lse


def _forward(state: ControllerState, actions=None, rng=None):
    """Unroll the controller. Samples when ``actions`` is None, else scores them."""
    p = state.params
    h = np.zeros(state.H)
    prev = state.start_token
    cache = []
    taken, logprobs = [], []
    for t in range(3 * state.T):
        head, mask = _step_layout(state, t)
        if head == "b":
            mask[taken[-1]] = False
        x = p["E"][prev]
        h_prev = h
        h = np.tanh(p["W_x"] @ x + p["W_h"] @ h_prev + p["b_h"])
        logits = p["V_" + head] @ h + p["c_" + head]
        logp = _masked_log_softmax(logits, mask)
        if actions is None:
            probs = np.where(mask, np.exp(logp), 0.0)
            cdf = np.cumsum(probs)
            u = rng.random() * cdf[-1]
            a = int(np.searchsorted(cdf, u, side="right"))
        else:
            a = int(actions[t])
            if not mask[a]:
                raise ValueError(f"action {a} at step {t} is not legal")
        taken.append(a)
        logprobs.append(float(logp[a]))
        cache.append((head, mask, x, prev, h_prev, h, logp))
        prev = _token(state, t, a)
    return taken, logprobs, cache


def actions_to_arch(actions) -> Architecture:
    blocks = []
    for k in range(len(actions) // 3):
        a, b, op = actions[3 * k : 3 * k + 3]
        blocks.append(canonical_block(a, b, OPS[op]))
    return Architecture(blocks)


def sample_architecture(state: ControllerState, rng: np.random.Generator | None = None) -> ActionTrace:
    """Draw one architecture; uses (and advances) ``state.rng`` unless ``rng`` is given."""
    actions, logprobs, cache = _forward(state, rng=rng if rng is not None else state.rng)
    state.hidden = cache[-1][5].copy()
    return ActionTrace(actions, logprobs, actions_to_arch(actions))


def score_actions(state: ControllerState, actions) -> float:
    """Total log-probability of an action sequence under the current parameters."""
    _, logprobs, _ = _forward(state, actions=actions)
    return float(sum(logprobs))


def logprob_gradient(state: ControllerState, actions) -> tuple[float, dict[str, np.ndarray]]:
    """Sum of log P(a_t | a_<t) and its gradient w.r.t. every parameter (BPTT)."""
    p = state.params
    _, logprobs, cache = _forward(state, actions=actions)
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dh_next = np.zeros(state.H)
    for t in range(len(cache) - 1, -1, -1):
        head, mask, x, prev, h_prev, h, logp = cache[t]
        dlogits = -np.where(mask, np.exp(logp), 0.0)
        dlogits[actions[t]] += 1.0
        grads["V_" + head] += np.outer(dlogits, h)
        grads["c_" + head] += dlogits
        dh = p["V_" + head].T @ dlogits + dh_next
        dpre = dh * (1.0 - h * h)
        grads["W_x"] += np.outer(dpre, x)
        grads["E"][prev] += p["W_x"].T @ dpre
        grads["W_h"] += np.outer(dpre, h_prev)
        grads["b_h"] += dpre
        dh_next = p["W_h"].T @ dpre
    return float(sum(logprobs)), grads


def reinforce_update(state: ControllerState, trace: ActionTrace, R: float, baseline: BaselineState,
                     lr: float, trial: int | None = None) -> ControllerState:
    """One policy-gradient ascent step: theta += lr * (R - b) * grad log P(actions)."""
    if not math.isfinite(R):
        raise ValueError(f"reward must be finite, got {R}")
    b = baseline.b if baseline.initialized else R
    advantage = R - b
    new = state.copy()
    if advantage == 0.0:
        return new
    _, grads = logprob_gradient(state, trace.actions)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"gradient of {name} is not finite", trial=trial)
        new.params[name] += lr * advantage * g
    return new


def update_baseline(baseline: BaselineState, R: float) -> BaselineState:
    if not math.isfinite(R):
        raise ValueError(f"reward must be finite, got {R}")
    if not baseline.initialized:
        return BaselineState(b=float(R), alpha=baseline.alpha, initialized=True)
    return BaselineState(b=baseline.alpha * baseline.b + (1 - baseline.alpha) * R, alpha=baseline.alpha,
                         initialized=True)


# --------------------------------------------------------------------------
# search loop


@dataclass(frozen=True)
class LogEntry:
    trial: int
    arch: str
    reward: float
    baseline: float
    best_so_far: float


@dataclass
class SearchLog:
    entries: list[LogEntry] = field(default_factory=list)
    child_iters: int = 0

    @property
    def best(self) -> LogEntry:
        return max(self.entries, key=lambda e: (e.reward, -e.trial))

    @property
    def rewards(self) -> list[float]:
        return [e.reward for e in self.entries]

    @property
    def cumulative_child_iters(self) -> int:
        return self.child_iters * len(self.entries)

    def converged_at(self, tol: float = 0.01) -> int | None:
        """First trial after which the best-so-far curve never moves by more than ``tol``."""
        if not self.entries:
            return None
        best = [e.best_so_far for e in self.entries]
        last_jump = 0
        for i in range(1, len(best)):
            if best[i] - best[i - 1] > tol:
                last_jump = i
        return self.entries[last_jump].trial

    def to_text(self) -> str:
        lines = ["# trial, arch_encoding, reward, baseline, best_so_far"]
        for e in self.entries:
            lines.append(f"{e.trial}, {e.arch}, {e.reward:.6f}, {e.baseline:.6f}, {e.best_so_far:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "SearchLog":
        entries = []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            trial, arch, r, b, best = (f.strip() for f in line.split(","))
            entries.append(LogEntry(int(trial), arch, float(r), float(b), float(best)))
        return cls(entries)


def run_search(cfg: SearchConfig, evaluator: Callable[[Architecture], float],
               state: ControllerState | None = None, progress: Callable[[LogEntry], None] | None = None
               ) -> SearchLog:
    """Sample -> evaluate -> baseline -> policy-gradient update, ``cfg.trials`` times."""
    if state is None:
        state = init_controller(cfg.T, cfg.hidden, cfg.seed)
    baseline = BaselineState()
    log = SearchLog(child_iters=cfg.child_iters)
    best = -math.inf
    for trial in range(1, cfg.trials + 1):
        trace = sample_architecture(state)
        try:
            R = float(evaluator(trace.arch))
        except Exception as exc:
            raise SearchError(trial, exc) from exc
        first = not baseline.initialized
        if first:
            baseline = update_baseline(baseline, R)
        state = reinforce_update(state, trace, R, baseline, cfg.lr, trial=trial)
        if not first:
            baseline = update_baseline(baseline, R)
        best = max(best, R)
        entry = LogEntry(trial, encode(trace.arch), R, baseline.b, best)
        log.entries.append(entry)
        if progress is not None:
            progress(entry)
    return log
