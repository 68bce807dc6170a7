"""Online learner stack.

A forward-ridge base learner for bounded linear classes, a bucketed
swap-regret wrapper that keeps one base learner per own-prediction bucket,
and a conversation wrapper that routes each round of a two-party exchange
to an independent swap wrapper keyed by the counterparty's previous
message bucket.

Learner state is single-owner mutable: one instance drives one run at a
time; distinct instances may run in parallel threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import bucket_index, round_to_grid

__all__ = ["LinearClassSpec", "VawState", "SwapWrapper", "ConversationWrapper"]

_REFRESH_EVERY = 256  # periodic exact re-inversion to curb rank-one drift


@dataclass(frozen=True)
class LinearClassSpec:
    """Norm-bounded linear predictors: {x ↦ θᵀx (+ b) : ‖θ‖₂ ≤ C}."""

    d: int
    C: float = 1.0
    with_intercept: bool = True

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.C < 0.5:
            raise ValueError("norm bound C must be at least 1/2")


class VawState:
    """Forward ridge regression: predict clip₀¹(xᵀ(G + xxᵀ)⁻¹ s).

    G accumulates a·I + Σ x_s x_sᵀ and s accumulates Σ y_s x_s. The
    prediction incorporates the current feature vector into the Gram term
    before solving, which is what yields the 2d·ln(T+1) + ‖θ‖² regret
    guarantee for squared loss.
    """

    def __init__(self, d: int, a: float = 1.0):
        if d < 1:
            raise ValueError("dimension must be positive")
        if a <= 0:
            raise ValueError("regularizer must be positive")
        self.d = d
        self.a = a
        self.gram = a * np.eye(d)
        self.moment = np.zeros(d)
        self.steps = 0

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"feature dimension {x.shape} != ({self.d},)")
        return x

    def predict(self, x) -> float:
        x = self._check(x)
        theta = np.linalg.solve(self.gram + np.outer(x, x), self.moment)
        return float(np.clip(x @ theta, 0.0, 1.0))

    def update(self, x, y: float) -> "VawState":
        x = self._check(x)
        if not 0.0 <= y <= 1.0:
            raise ValueError(f"label {y} outside [0,1]")
        self.gram += np.outer(x, x)
        self.moment += y * x
        self.steps += 1
        return self

    def ridge_solution(self) -> np.ndarray:
        """Batch ridge fit argmin a‖θ‖² + Σ(θᵀx_s − y_s)² on the data seen so far."""
        return np.linalg.solve(self.gram, self.moment)


class SwapWrapper:
    """Bucketed self-consistency reduction from swap regret to external regret.

    Keeps m independent forward-ridge experts, one per prediction bucket
    [(i−1)/m, i/m). Each step every expert proposes its grid-rounded
    prediction; the wrapper plays the proposal closest to its own bucket
    (ties to the lowest index) and later routes the observed outcome only
    to that expert.
    """

    def __init__(self, m: int, d: int, a: float = 1.0):
        if m < 1:
            raise ValueError("bucket count m must be ≥ 1")
        self.m = m
        self.d = d
        self.a = a
        self.grams = np.broadcast_to(a * np.eye(d), (m, d, d)).copy()
        self.inv_grams = np.broadcast_to(np.eye(d) / a, (m, d, d)).copy()
        self.moments = np.zeros((m, d))
        self.steps = np.zeros(m, dtype=int)
        self.last_active: Optional[int] = None
        self.update_log: Optional[List[Tuple[np.ndarray, float]]] = None

    def proposals(self, x) -> np.ndarray:
        """Grid-rounded predictions of all m experts at x."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"feature dimension {x.shape} != ({self.d},)")
        u = self.inv_grams @ x                      # (m, d)
        s = u @ x                                   # (m,)
        raw = np.einsum("md,md->m", u, self.moments)
        preds = raw / (1.0 + s)
        return round_to_grid(preds, self.m)

    @staticmethod
    def select_index(proposals, m: int) -> int:
        """Index of the proposal closest to its own bucket; ties to the lowest."""
        props = np.asarray(proposals, dtype=float)
        lo = np.arange(m) / m
        hi = (np.arange(m) + 1) / m
        dist = np.maximum(0.0, np.maximum(lo - props, props - hi))
        return int(np.argmin(dist))

    def predict(self, x) -> float:
        props = self.proposals(x)
        i_star = self.select_index(props, self.m)
        self.last_active = i_star
        return float(props[i_star])

    def update(self, x, y: float) -> "SwapWrapper":
        if self.last_active is None:
            raise RuntimeError("update without a preceding predict")
        x = np.asarray(x, dtype=float)
        i = self.last_active
        self.grams[i] += np.outer(x, x)
        u = self.inv_grams[i] @ x
        self.inv_grams[i] -= np.outer(u, u) / (1.0 + x @ u)
        self.moments[i] += y * x
        self.steps[i] += 1
        if self.steps[i] % _REFRESH_EVERY == 0:
            self.inv_grams[i] = np.linalg.inv(self.grams[i])
        if self.update_log is not None:
            self.update_log.append((x.copy(), float(y)))
        self.last_active = None
        return self

    def expert_state(self, i: int) -> VawState:
        """Standalone copy of expert i's accumulator state."""
        st = VawState(self.d, self.a)
        st.gram = self.grams[i].copy()
        st.moment = self.moments[i].copy()
        st.steps = int(self.steps[i])
        return st

    def regret_envelope(self, C: float = 1.0) -> float:
        """Reported envelope on this instance's swap regret.

        Sums each activated expert's forward-ridge bound 2d·ln(n_j+1) + C²
        and adds the grid-rounding mass; the self-consistency selection
        carries no formal guarantee of its own, so treat this as an
        empirical envelope rather than a certified bound.
        """
        active = self.steps[self.steps > 0]
        per_expert = float(np.sum(2.0 * self.d * np.log(active + 1.0) + C * C))
        n = int(self.steps.sum())
        rounding = n * (1.0 / self.m + 1.0 / (4.0 * self.m * self.m))
        return per_expert + rounding


class ConversationWrapper:
    """Routes each own round of a conversation to an independent swap wrapper.

    Instance (k, i) only ever sees the subsequence of days on which the
    counterparty's round-(k−1) message fell in bucket i; the first round of
    the protocol (Alice's round 1) has a single unconditioned instance.
    Identical seeds and inputs reproduce bit-identical transcripts.
    """

    def __init__(self, d: int, C: float = 1.0, a: float = 1.0, m: int = 10,
                 g: float = 0.1, trace: bool = False):
        self.spec = LinearClassSpec(d=d, C=C, with_intercept=True)
        self.d = d
        self.a = a
        self.m = m
        self.g = g
        self.trace = trace
        self.instances: Dict[Tuple[int, int], SwapWrapper] = {}

    def _instance(self, k: int, prev_message: Optional[float]) -> SwapWrapper:
        if k == 1:
            key = (1, 0)
        else:
            if prev_message is None:
                raise ValueError(f"round {k} requires the counterparty's previous message")
            key = (k, bucket_index(prev_message, self.g))
        inst = self.instances.get(key)
        if inst is None:
            inst = SwapWrapper(self.m, self.d, self.a)
            if self.trace:
                inst.update_log = []
            self.instances[key] = inst
        return inst

    def predict(self, k: int, prev_message: Optional[float], x) -> float:
        return self._instance(k, prev_message).predict(x)

    def update(self, k: int, prev_message: Optional[float], x, y: float) -> "ConversationWrapper":
        self._instance(k, prev_message).update(x, y)
        return self

    def regret_envelopes(self) -> Dict[Tuple[int, int], float]:
        """Per-(round, bucket) reported regret envelopes of all instances."""
        return {key: inst.regret_envelope(self.spec.C) for key, inst in self.instances.items()}
