"""Weak-learning extraction for bounded star-shaped linear classes.

Also houses the exact constrained least-squares oracle and generators plus
checkers for the lower-bound instances: the scaled-noise family D_ρ, the
product instance showing external regret does not aggregate, the XOR
instances, and the information-substitutes comparison.

Labels in this module are analysis-scale (often ±1); an affine map to the
[0,1] protocol scale is recorded on each generated distribution. Gains are
scale-covariant and always reported in the analysis scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .learners import LinearClassSpec

__all__ = [
    "FiniteDistribution",
    "WeakLearnResult",
    "LsqFit",
    "JointFit",
    "constrained_lsq",
    "joint_lsq",
    "weak_learner_extract",
    "gen_counterexample_rho",
    "gen_swap_necessity",
    "gen_xor_counterexamples",
    "information_substitutes_check",
]

_PGD_ITERS = 10_000
_PGD_GRAD_TOL = 1e-8
_PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteDistribution:
    """Finitely supported joint distribution over (x_a, x_b, y)."""

    xa: np.ndarray          # (n, d_a)
    xb: np.ndarray          # (n, d_b)
    y: np.ndarray           # (n,)
    p: np.ndarray           # (n,) probabilities
    label_map: Optional[Tuple[float, float]] = None  # y_protocol = offset + scale·y

    def __post_init__(self):
        xa = np.atleast_2d(np.asarray(self.xa, dtype=float))
        xb = np.atleast_2d(np.asarray(self.xb, dtype=float))
        y = np.asarray(self.y, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if xa.ndim == 2 and xa.shape[0] != y.shape[0]:
            xa = xa.T
        if xb.ndim == 2 and xb.shape[0] != y.shape[0]:
            xb = xb.T
        if p.min() < -_PROB_TOL:
            raise ValueError("negative atom probability")
        if abs(p.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"probabilities sum to {p.sum()}, not 1")
        for arr in (xa, xb, y, p):
            arr.setflags(write=False)
        object.__setattr__(self, "xa", xa)
        object.__setattr__(self, "xb", xb)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def joint_features(self) -> np.ndarray:
        return np.hstack([self.xa, self.xb])

    def mean_label(self) -> float:
        return float(self.p @ self.y)

    def constant_error(self) -> float:
        mu = self.mean_label()
        return float(self.p @ (mu - self.y) ** 2)

    def to_json_dict(self) -> dict:
        out = {
            "atoms": [
                {
                    "xa": list(map(float, self.xa[i])),
                    "xb": list(map(float, self.xb[i])),
                    "y": float(self.y[i]),
                    "p": float(self.p[i]),
                }
                for i in range(self.n)
            ]
        }
        if self.label_map is not None:
            out["label_map"] = {"offset": self.label_map[0], "scale": self.label_map[1]}
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "FiniteDistribution":
        atoms = data["atoms"]
        lm = data.get("label_map")
        return cls(
            xa=np.array([a["xa"] for a in atoms], dtype=float),
            xb=np.array([a["xb"] for a in atoms], dtype=float),
            y=np.array([a["y"] for a in atoms], dtype=float),
            p=np.array([a["p"] for a in atoms], dtype=float),
            label_map=None if lm is None else (lm["offset"], lm["scale"]),
        )


@dataclass
class LsqFit:
    """One-sided fit: coefficients, intercept and weighted squared error."""

    theta: np.ndarray
    intercept: float
    error: float
    projected: bool = False

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x @ self.theta + self.intercept


@dataclass
class JointFit:
    """Additive two-block fit h_A(x_a) + h_B(x_b) (+ shared intercept)."""

    theta_a: np.ndarray
    theta_b: np.ndarray
    intercept: float
    error: float
    converged: bool = True

    def predict(self, xa, xb) -> np.ndarray:
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        xb = np.atleast_2d(np.asarray(xb, dtype=float))
        return xa @ self.theta_a + xb @ self.theta_b + self.intercept


def _weighted_lstsq(Z: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    sol, *_ = np.linalg.lstsq(Z * sw[:, None], y * sw, rcond=None)
    return sol


def _pgd(Z, y, w, project, seed, iters=_PGD_ITERS, grad_tol=_PGD_GRAD_TOL):
    """Projected gradient with fixed step 1/L on Σ w_i (z_iᵀv − y_i)²."""
    G = 2.0 * (Z * w[:, None]).T @ Z
    L = float(np.linalg.eigvalsh(G).max())
    if L <= 0:
        return project(seed), True
    step = 1.0 / L
    b = 2.0 * (Z * w[:, None]).T @ y
    v = project(seed)
    best_v, best_obj = v, float(w @ (Z @ v - y) ** 2)
    converged = False
    for _ in range(iters):
        grad = G @ v - b
        if np.linalg.norm(grad) < grad_tol:
            converged = True
            break
        v_new = project(v - step * grad)
        if np.linalg.norm(v_new - v) < 1e-16:
            v = v_new
            converged = True
            break
        v = v_new
        obj = float(w @ (Z @ v - y) ** 2)
        if obj < best_obj:
            best_obj, best_v = obj, v
    obj = float(w @ (Z @ v - y) ** 2)
    if obj <= best_obj:
        return v, converged
    return best_v, converged


def constrained_lsq(x, y, weights=None, spec: LinearClassSpec = None) -> LsqFit:
    """Weighted least squares over {θᵀx (+ b) : ‖θ‖₂ ≤ C}.

    Solved exactly in closed form; if the unconstrained minimizer violates
    the norm bound, a projected-gradient refinement is run from its
    projection. Degenerate designs fall back to the minimum-norm solution.
    Error is Σ w_i·(residual)², so unit weights give a plain sum and
    probability weights give an expectation.
    """
    if spec is None:
        raise ValueError("LinearClassSpec required")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != spec.d and X.shape[0] == spec.d:
        X = X.T
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty support")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    Z = np.hstack([X, np.ones((n, 1))]) if spec.with_intercept else X

    sol = _weighted_lstsq(Z, y, w)
    theta, b = (sol[:-1], float(sol[-1])) if spec.with_intercept else (sol, 0.0)
    projected = False
    if np.linalg.norm(theta) > spec.C + 1e-12:
        projected = True

        def project(v):
            v = v.copy()
            t = v[: spec.d]
            norm = np.linalg.norm(t)
            if norm > spec.C:
                v[: spec.d] = t * (spec.C / norm)
            return v

        sol, _ = _pgd(Z, y, w, project, sol)
        theta, b = (sol[:-1], float(sol[-1])) if spec.with_intercept else (sol, 0.0)
    err = float(w @ (Z @ sol - y) ** 2)
    return LsqFit(theta=theta, intercept=b, error=err, projected=projected)


def joint_lsq(xa, xb, y, weights=None, spec_a: LinearClassSpec = None,
              spec_b: LinearClassSpec = None) -> JointFit:
    """Best additive predictor h_A + h_B with per-block norm bounds.

    Shared intercept constrained to |b| ≤ 1 when both specs carry one. If
    the unconstrained least-squares solution is feasible it is returned
    exactly; otherwise projected gradient (fixed step 1/L, 10k iterations)
    refines from the projected seed. Error is in the weight scale (sum for
    unit weights, expectation for probabilities).
    """
    if spec_a.with_intercept != spec_b.with_intercept:
        raise ValueError("specs must share the intercept convention")
    Xa = np.atleast_2d(np.asarray(xa, dtype=float))
    Xb = np.atleast_2d(np.asarray(xb, dtype=float))
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    if Xa.shape[0] != n:
        Xa = Xa.T
    if Xb.shape[0] != n:
        Xb = Xb.T
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    da, db = Xa.shape[1], Xb.shape[1]
    with_b = spec_a.with_intercept
    Z = np.hstack([Xa, Xb, np.ones((n, 1))]) if with_b else np.hstack([Xa, Xb])

    def split(v):
        ta, tb = v[:da], v[da:da + db]
        b = float(v[-1]) if with_b else 0.0
        return ta, tb, b

    def feasible(v):
        ta, tb, b = split(v)
        return (np.linalg.norm(ta) <= spec_a.C + 1e-12
                and np.linalg.norm(tb) <= spec_b.C + 1e-12
                and abs(b) <= 1.0 + 1e-12)

    def project(v):
        v = v.copy()
        ta = v[:da]
        na = np.linalg.norm(ta)
        if na > spec_a.C:
            v[:da] = ta * (spec_a.C / na)
        tb = v[da:da + db]
        nb = np.linalg.norm(tb)
        if nb > spec_b.C:
            v[da:da + db] = tb * (spec_b.C / nb)
        if with_b:
            v[-1] = np.clip(v[-1], -1.0, 1.0)
        return v

    sol = _weighted_lstsq(Z, y, w)
    converged = True
    if not feasible(sol):
        sol, converged = _pgd(Z, y, w, project, sol)
    ta, tb, b = split(sol)
    err = float(w @ (Z @ sol - y) ** 2)
    return JointFit(theta_a=ta, theta_b=tb, intercept=b, error=err, converged=converged)


@dataclass
class WeakLearnResult:
    """Outcome of turning a joint improvement into a one-sided improvement."""

    side: str                      # "A" or "B"
    alpha: float
    coef: np.ndarray               # scaled one-sided linear part α·f
    intercept: float               # label mean μ
    achieved_gain: float
    required_gain: float
    gamma: float


def weak_learner_extract(dist: FiniteDistribution, f_a: np.ndarray, f_b: np.ndarray,
                         b: float, C: float) -> WeakLearnResult:
    """Extract a single-side predictor h = α·f + μ beating the constant baseline.

    The supplied joint predictor h_J(x) = f_a·x_a + f_b·x_b + b must improve
    over the best constant by some γ > 0 (computed here; otherwise an error
    is raised). The side whose centered-label correlation reaches γ/4 is
    scaled by α = γ/(4C²), which guarantees a gain of at least γ²/(16C²)
    whenever the parts are C-bounded on the support.
    """
    if C < 0.5:
        raise ValueError("C must be at least 1/2")
    f_a = np.asarray(f_a, dtype=float)
    f_b = np.asarray(f_b, dtype=float)
    mu = dist.mean_label()
    ybar = dist.y - mu
    preds_j = dist.xa @ f_a + dist.xb @ f_b + b
    gamma = float(dist.p @ ybar**2 - dist.p @ (preds_j - dist.y) ** 2)
    if gamma <= 0:
        raise ValueError(f"no joint improvement: gamma = {gamma:.3g}")

    vals_a = dist.xa @ f_a
    vals_b = dist.xb @ f_b
    corr_a = float(dist.p @ (vals_a * ybar))
    corr_b = float(dist.p @ (vals_b * ybar))
    side = "A" if corr_a >= corr_b else "B"
    vals = vals_a if side == "A" else vals_b
    coef_side = f_a if side == "A" else f_b

    alpha = gamma / (4.0 * C * C)
    h_vals = alpha * vals + mu
    achieved = float(dist.p @ ybar**2 - dist.p @ (h_vals - dist.y) ** 2)
    return WeakLearnResult(
        side=side,
        alpha=alpha,
        coef=alpha * coef_side,
        intercept=mu,
        achieved_gain=achieved,
        required_gain=gamma * gamma / (16.0 * C * C),
        gamma=gamma,
    )


# --- lower-bound instances ------------------------------------------------


def gen_counterexample_rho(rho: float) -> FiniteDistribution:
    """Four-atom scaled-noise instance: x_a = ξ_a/2, x_b = x_a + ξ_b/(2ρ), y = ξ_b.

    Individually, the A side has zero gain over the constant predictor and
    the B side gains 1/(ρ²+1), while the norm-1 joint class gains
    (4ρ−1)/4ρ², quadratically more. Labels are ±1; the recorded affine map
    (y+1)/2 moves them to [0,1] for protocol use.
    """
    if rho < 1.0:
        raise ValueError("rho must be at least 1")
    atoms = []
    for xi_a in (-1.0, 1.0):
        for xi_b in (-1.0, 1.0):
            xa = 0.5 * xi_a
            xb = xa + xi_b / (2.0 * rho)
            atoms.append((xa, xb, xi_b))
    arr = np.array(atoms)
    return FiniteDistribution(
        xa=arr[:, 0:1], xb=arr[:, 1:2], y=arr[:, 2], p=np.full(4, 0.25),
        label_map=(0.5, 0.5),
    )


def rho_gains(rho: float, C: float = 1.0) -> Dict[str, float]:
    """Exact per-side and bounded-joint gains of D_ρ via the solvers."""
    dist = gen_counterexample_rho(rho)
    spec = LinearClassSpec(d=1, C=C, with_intercept=True)
    const_err = dist.constant_error()
    fit_a = constrained_lsq(dist.xa, dist.y, dist.p, spec)
    fit_b = constrained_lsq(dist.xb, dist.y, dist.p, spec)
    joint = joint_lsq(dist.xa, dist.xb, dist.y, dist.p, spec, spec)
    return {
        "constant_error": const_err,
        "gain_a": const_err - fit_a.error,
        "gain_b": const_err - fit_b.error,
        "gain_joint": const_err - joint.error,
        "slope_b": float(fit_b.theta[0]),
        "error_b": fit_b.error,
        "joint_error": joint.error,
    }


def gen_swap_necessity() -> Tuple[FiniteDistribution, np.ndarray]:
    """Product-label instance with the prediction rule ŷ = x_a/2.

    x_a, x_b independent uniform on {0,1} and y = x_a·x_b. The rule has no
    external regret to either one-sided linear class yet positive external
    regret (1/16) to the joint class.
    """
    atoms = []
    for a in (0.0, 1.0):
        for b_ in (0.0, 1.0):
            atoms.append((a, b_, a * b_))
    arr = np.array(atoms)
    dist = FiniteDistribution(
        xa=arr[:, 0:1], xb=arr[:, 1:2], y=arr[:, 2], p=np.full(4, 0.25)
    )
    predictions = arr[:, 0] / 2.0
    return dist, predictions


def swap_necessity_regrets(C: float = 1.0) -> Dict[str, float]:
    """External regrets of the ŷ = x_a/2 rule against H_A, H_B and the joint class."""
    dist, preds = gen_swap_necessity()
    spec = LinearClassSpec(d=1, C=C, with_intercept=True)
    rule_err = float(dist.p @ (preds - dist.y) ** 2)
    fit_a = constrained_lsq(dist.xa, dist.y, dist.p, spec)
    fit_b = constrained_lsq(dist.xb, dist.y, dist.p, spec)
    joint = joint_lsq(dist.xa, dist.xb, dist.y, dist.p, spec, spec)
    return {
        "rule_error": rule_err,
        "regret_a": rule_err - fit_a.error,
        "regret_b": rule_err - fit_b.error,
        "regret_joint": rule_err - joint.error,
        "joint_error": joint.error,
    }


def gen_xor_counterexamples() -> Tuple[FiniteDistribution, FiniteDistribution]:
    """Two agreement-without-aggregation instances.

    (i) independent uniform bits with y = x_a ⊕ x_b: both marginal optima
    are the constant 1/2, yet the parties would know y exactly by pooling.
    (ii) independent ±1 signs with y = x_a·x_b: the multiplicative joint
    predictor is perfect while every additive combination gains nothing.
    """
    bits = []
    for a in (0.0, 1.0):
        for b_ in (0.0, 1.0):
            bits.append((a, b_, float(int(a) ^ int(b_))))
    arr = np.array(bits)
    xor_dist = FiniteDistribution(
        xa=arr[:, 0:1], xb=arr[:, 1:2], y=arr[:, 2], p=np.full(4, 0.25)
    )
    signs = []
    for a in (-1.0, 1.0):
        for b_ in (-1.0, 1.0):
            signs.append((a, b_, a * b_))
    arr2 = np.array(signs)
    prod_dist = FiniteDistribution(
        xa=arr2[:, 0:1], xb=arr2[:, 1:2], y=arr2[:, 2], p=np.full(4, 0.25),
        label_map=(0.5, 0.5),
    )
    return xor_dist, prod_dist


def information_substitutes_check(dist: FiniteDistribution, spec_a: LinearClassSpec,
                                  spec_b: LinearClassSpec) -> Tuple[bool, float, float]:
    """Marginal value of B's features on top of A vs B's standalone value.

    Returns (holds, lhs, rhs) for
    lhs = min_A err − min_J err  and  rhs = const err − min_B err,
    with holds ⇔ lhs ≤ rhs + 1e-9.
    """
    fit_a = constrained_lsq(dist.xa, dist.y, dist.p, spec_a)
    fit_b = constrained_lsq(dist.xb, dist.y, dist.p, spec_b)
    joint = joint_lsq(dist.xa, dist.xb, dist.y, dist.p, spec_a, spec_b)
    lhs = fit_a.error - joint.error
    rhs = dist.constant_error() - fit_b.error
    return (lhs <= rhs + 1e-9, lhs, rhs)
