"""Action-mediated collaboration: best responses and decision audits.

Parties predict a d-dimensional outcome but communicate only the
utility-maximizing action for their prediction. The audits (decision
calibration, decision cross calibration, decision swap regret and their
conversation-conditioned variants) are exact functions of the transcript
and hold regardless of which forecaster produced it; the bundled baseline
forecaster is a per-key running outcome mean.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "DecisionTask",
    "DecisionSequence",
    "DecisionTranscript",
    "PolicySet",
    "best_response",
    "decision_cal_error",
    "decision_cross_cal_error",
    "decision_swap_regret",
    "decision_conv_cal_error",
    "decision_conv_swap_regret",
    "BaselineForecaster",
    "run_decision_protocol",
    "utility_round_profile",
]


@dataclass(frozen=True)
class DecisionTask:
    """Finite action set with a utility linear in the outcome vector.

    The raw |A|×d matrix is rescaled (per-column shift shared by all
    actions, then a positive scale) so that u(a,y) ∈ [0,1] for y ∈ [0,1]^d
    while staying strictly linear in y and preserving every best response.
    """

    actions: Tuple[str, ...]
    matrix: np.ndarray          # rescaled, nonnegative, rows sum ≤ 1
    lipschitz: float
    column_offsets: np.ndarray  # recorded affine rescaling
    scale: float

    @classmethod
    def from_matrix(cls, matrix, actions: Optional[Sequence[str]] = None) -> "DecisionTask":
        raw = np.atleast_2d(np.asarray(matrix, dtype=float))
        n_actions, d = raw.shape
        if actions is None:
            actions = tuple(f"a{i}" for i in range(n_actions))
        else:
            actions = tuple(actions)
            if len(actions) != n_actions:
                raise ValueError("action names must match the matrix rows")
        offsets = raw.min(axis=0)
        shifted = raw - offsets
        scale = float(shifted.sum(axis=1).max())
        if scale <= 0.0:
            scale = 1.0
        rescaled = shifted / scale
        lip = float((rescaled.max(axis=1) - rescaled.min(axis=1)).max())
        rescaled.setflags(write=False)
        offsets.setflags(write=False)
        return cls(actions=actions, matrix=rescaled, lipschitz=lip,
                   column_offsets=offsets, scale=scale)

    @property
    def n_actions(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def utility(self, action: int, y) -> float:
        return float(self.matrix[action] @ np.asarray(y, dtype=float))

    def utilities(self, y) -> np.ndarray:
        return self.matrix @ np.asarray(y, dtype=float)

    def to_json_dict(self) -> dict:
        return {
            "d": self.d,
            "actions": list(self.actions),
            "utility": [list(map(float, row)) for row in self.matrix],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "DecisionTask":
        return cls.from_matrix(np.array(data["utility"], dtype=float), data.get("actions"))


def best_response(task: DecisionTask, y) -> int:
    """Utility-maximizing action for outcome estimate y; ties take the lowest index."""
    return int(np.argmax(task.utilities(y)))


@dataclass(frozen=True)
class DecisionSequence:
    """A single prediction/action/outcome sequence (one round across days)."""

    predictions: np.ndarray  # (T, d)
    actions: np.ndarray      # (T,)
    outcomes: np.ndarray     # (T, d)

    @property
    def T(self) -> int:
        return self.actions.shape[0]


class DecisionTranscript:
    """Per-day, per-round predictions, communicated actions, and outcomes.

    Every stored action is the best response to the stored prediction.
    """

    def __init__(self, predictions, actions, outcomes, task: DecisionTask):
        self.predictions = np.asarray(predictions, dtype=float)   # (T, K, d)
        self.actions = np.asarray(actions, dtype=int)             # (T, K)
        self.outcomes = np.asarray(outcomes, dtype=float)         # (T, d)
        self.task = task
        if self.predictions.ndim != 3 or self.actions.shape != self.predictions.shape[:2]:
            raise ValueError("transcript arrays are misaligned")

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    @property
    def K(self) -> int:
        return self.actions.shape[1]

    def round(self, k: int) -> DecisionSequence:
        return DecisionSequence(
            predictions=self.predictions[:, k - 1, :],
            actions=self.actions[:, k - 1],
            outcomes=self.outcomes,
        )

    def rounds_of(self, side: str) -> List[int]:
        start = 1 if side == "alice" else 2
        return list(range(start, self.K + 1, 2))


class PolicySet:
    """Named finite policies given as explicit per-row action labels.

    All constant policies are always included.
    """

    def __init__(self, n_actions: int, T: int, named: Optional[Dict[str, np.ndarray]] = None):
        self.n_actions = n_actions
        self.T = T
        self.policies: Dict[str, np.ndarray] = {}
        for a in range(n_actions):
            self.policies[f"const:{a}"] = np.full(T, a, dtype=int)
        for name, labels in (named or {}).items():
            labels = np.asarray(labels, dtype=int)
            if labels.shape != (T,):
                raise ValueError(f"policy {name!r} must label all {T} rows")
            if labels.min() < 0 or labels.max() >= n_actions:
                raise ValueError(f"policy {name!r} uses out-of-range actions")
            self.policies[name] = labels

    def items(self):
        return self.policies.items()


def decision_cal_error(seq: DecisionSequence, task: DecisionTask):
    """Per-action ℓ∞ prediction bias conditioned on the chosen action.

    Returns (per-action dict, max over actions).
    """
    per_action: Dict[int, float] = {}
    for a in range(task.n_actions):
        mask = seq.actions == a
        if not mask.any():
            per_action[a] = 0.0
            continue
        bias = np.sum(seq.predictions[mask] - seq.outcomes[mask], axis=0)
        per_action[a] = float(np.abs(bias).max())
    return per_action, max(per_action.values())


def decision_cross_cal_error(seq: DecisionSequence, task: DecisionTask,
                             policies: PolicySet):
    """ℓ∞ bias conditioned on (own action, policy, policy's action).

    Returns (dict keyed by (a, policy name, a'), max).
    """
    out: Dict[Tuple[int, str, int], float] = {}
    worst = 0.0
    for name, labels in policies.items():
        for a in range(task.n_actions):
            mask_a = seq.actions == a
            for a2 in range(task.n_actions):
                mask = mask_a & (labels == a2)
                if not mask.any():
                    out[(a, name, a2)] = 0.0
                    continue
                bias = np.sum(seq.predictions[mask] - seq.outcomes[mask], axis=0)
                val = float(np.abs(bias).max())
                out[(a, name, a2)] = val
                worst = max(worst, val)
    return out, worst


def decision_swap_regret(seq: DecisionSequence, task: DecisionTask,
                         policies: PolicySet) -> float:
    """Σ over actions of the best policy's conditional utility minus realized utility."""
    realized = 0.0
    for t in range(seq.T):
        realized += task.utility(int(seq.actions[t]), seq.outcomes[t])
    total = 0.0
    util_by_policy = {}
    # per-day utility of following each policy, computed once
    all_utils = seq.outcomes @ task.matrix.T  # (T, n_actions)
    for name, labels in policies.items():
        util_by_policy[name] = all_utils[np.arange(seq.T), labels]
    for a in range(task.n_actions):
        mask = seq.actions == a
        if not mask.any():
            continue
        best = max(float(np.sum(u[mask])) for u in util_by_policy.values())
        total += best
    return total - realized


def decision_conv_cal_error(transcript: DecisionTranscript, side: str):
    """Per (round, own action, previous action) ℓ∞ bias for the given side."""
    task = transcript.task
    out: Dict[Tuple[int, int, int], float] = {}
    for k in transcript.rounds_of(side):
        if k < 2:
            continue
        seq = transcript.round(k)
        prev_actions = transcript.actions[:, k - 2]
        for a in range(task.n_actions):
            for a_prev in range(task.n_actions):
                mask = (seq.actions == a) & (prev_actions == a_prev)
                if not mask.any():
                    out[(k, a, a_prev)] = 0.0
                    continue
                bias = np.sum(seq.predictions[mask] - seq.outcomes[mask], axis=0)
                out[(k, a, a_prev)] = float(np.abs(bias).max())
    return out


def decision_conv_swap_regret(transcript: DecisionTranscript, task: DecisionTask,
                              policies: PolicySet, side: str) -> Dict[Tuple[int, int], float]:
    """Decision swap regret of each round restricted to previous-action subsequences."""
    out: Dict[Tuple[int, int], float] = {}
    for k in transcript.rounds_of(side):
        if k < 2:
            continue
        seq = transcript.round(k)
        prev_actions = transcript.actions[:, k - 2]
        for a_prev in range(task.n_actions):
            mask = prev_actions == a_prev
            if not mask.any():
                out[(k, a_prev)] = 0.0
                continue
            sub = DecisionSequence(
                predictions=seq.predictions[mask],
                actions=seq.actions[mask],
                outcomes=seq.outcomes[mask],
            )
            sub_policies = PolicySet(task.n_actions, sub.T)
            for name, labels in policies.items():
                if not name.startswith("const:"):
                    sub_policies.policies[name] = labels[mask]
            out[(k, a_prev)] = decision_swap_regret(sub, task, sub_policies)
    return out


class BaselineForecaster:
    """Running outcome mean per (round, previous action) key, starting at 0.5."""

    def __init__(self, d: int):
        self.d = d
        self.counts: Dict[Tuple[int, Optional[int]], int] = {}
        self.sums: Dict[Tuple[int, Optional[int]], np.ndarray] = {}

    def predict(self, k: int, prev_action: Optional[int], x=None) -> np.ndarray:
        key = (k, prev_action)
        c = self.counts.get(key, 0)
        if c == 0:
            return np.full(self.d, 0.5)
        return self.sums[key] / c

    def update(self, k: int, prev_action: Optional[int], x, y) -> "BaselineForecaster":
        key = (k, prev_action)
        self.counts[key] = self.counts.get(key, 0) + 1
        if key not in self.sums:
            self.sums[key] = np.zeros(self.d)
        self.sums[key] += np.asarray(y, dtype=float)
        return self


def run_decision_protocol(dataset, task: DecisionTask, alice, bob, K: int) -> DecisionTranscript:
    """Run the action-exchange protocol: only best-response actions travel.

    Each side's forecaster is keyed by (round, previous action); round 1
    has no previous action. Out-of-range forecasts are clipped with a
    warning.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    T = len(dataset)
    preds = np.empty((T, K, task.d))
    acts = np.empty((T, K), dtype=int)
    outcomes = np.empty((T, task.d))
    for t, ex in enumerate(dataset):
        prev_action: Optional[int] = None
        day_actions = []
        for k in range(1, K + 1):
            side = alice if k % 2 == 1 else bob
            x = ex.x_a if k % 2 == 1 else ex.x_b
            yhat = np.asarray(side.predict(k, prev_action, x), dtype=float)
            if yhat.min() < 0.0 or yhat.max() > 1.0:
                warnings.warn(f"forecast clipped to [0,1]^d at day {t + 1}, round {k}")
                yhat = np.clip(yhat, 0.0, 1.0)
            a = best_response(task, yhat)
            preds[t, k - 1] = yhat
            acts[t, k - 1] = a
            day_actions.append(a)
            prev_action = a
        y = np.asarray(ex.y, dtype=float)
        outcomes[t] = y
        prev_action = None
        for k in range(1, K + 1):
            side = alice if k % 2 == 1 else bob
            x = ex.x_a if k % 2 == 1 else ex.x_b
            side.update(k, prev_action, x, y)
            prev_action = day_actions[k - 1]
    return DecisionTranscript(preds, acts, outcomes, task)


@dataclass
class UtilityRoundProfile:
    utility_by_round: Dict[int, float]
    disagreements: Dict[int, int]
    slack_by_round: Dict[int, float]
    violations: Tuple[int, ...]


def utility_round_profile(transcript: DecisionTranscript, eps: float) -> UtilityRoundProfile:
    """Round-over-round utility gains versus the measured calibration slack.

    A day counts as an ε-disagreement at round k when the acting side's
    prediction rates the previous action more than ε below its own best
    response. The gain from round k−1 to k must be at least
    ε·(#disagreements) − 2L|A|²·f̂ with f̂ the side's worst measured
    conversation-calibration bias at round k.
    """
    task = transcript.task
    util = {}
    for k in range(1, transcript.K + 1):
        seq = transcript.round(k)
        util[k] = float(
            sum(task.utility(int(seq.actions[t]), seq.outcomes[t]) for t in range(seq.T))
        )
    cal_a = decision_conv_cal_error(transcript, "alice")
    cal_b = decision_conv_cal_error(transcript, "bob")
    disagreements = {}
    slack = {}
    violations = []
    for k in range(2, transcript.K + 1):
        seq = transcript.round(k)
        prev_actions = transcript.actions[:, k - 2]
        count = 0
        for t in range(transcript.T):
            own = task.utility(int(seq.actions[t]), seq.predictions[t])
            prev = task.utility(int(prev_actions[t]), seq.predictions[t])
            if own - prev > eps:
                count += 1
        disagreements[k] = count
        cal = cal_a if k % 2 == 1 else cal_b
        f_hat = max((v for (kk, _a, _ap), v in cal.items() if kk == k), default=0.0)
        slack[k] = 2.0 * task.lipschitz * task.n_actions**2 * f_hat
        if util[k] - util[k - 1] < eps * count - slack[k] - 1e-9:
            violations.append(k)
    return UtilityRoundProfile(
        utility_by_round=util,
        disagreements=disagreements,
        slack_by_round=slack,
        violations=tuple(violations),
    )
