"""Seeded dataset and prior generators for the experiment harness."""

from __future__ import annotations

import numpy as np

from .bayes import PriorTable
from .batch import BatchSample
from .core import LabeledExample, SequenceDataset
from .weaklearn import gen_counterexample_rho

__all__ = [
    "additive_linear_noise",
    "sample_rho_dataset",
    "xor_dataset",
    "swap_necessity_dataset",
    "decision_iid_dataset",
    "xor_prior",
    "additive_prior",
    "rho_prior",
    "dataset_to_json",
    "dataset_from_json",
    "GENERATORS",
]


def _unit_features(rng: np.random.Generator, T: int, d: int, radius: float = 0.8,
                   const: float = 0.6) -> np.ndarray:
    """Random vectors with a fixed constant coordinate, total norm ≤ 1.

    The raw part fills a ball of the given radius; the appended constant
    coordinate lets norm-bounded linear classes express intercepts.
    """
    raw = rng.standard_normal((T, d))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scale = radius * rng.uniform(0.2, 1.0, size=(T, 1)) ** (1.0 / d)
    raw = raw / norms * scale
    return np.hstack([raw, np.full((T, 1), const)])


def additive_linear_noise(T: int, seed: int, d_a: int = 2, d_b: int = 2,
                          signal_a: float = 0.25, signal_b: float = 0.25,
                          noise: float = 0.1) -> SequenceDataset:
    """y = 0.5 + θ_aᵀx_a + θ_bᵀx_b + η, clipped to [0,1].

    Both parties' raw feature blocks carry signal; a constant coordinate is
    appended to each block so the emitted dimension is d+1 per side.
    """
    rng = np.random.default_rng(seed)
    xa = _unit_features(rng, T, d_a)
    xb = _unit_features(rng, T, d_b)
    theta_a = rng.standard_normal(d_a)
    theta_a *= signal_a / np.linalg.norm(theta_a)
    theta_b = rng.standard_normal(d_b)
    theta_b *= signal_b / np.linalg.norm(theta_b)
    y = 0.5 + xa[:, :d_a] @ theta_a + xb[:, :d_b] @ theta_b + noise * rng.standard_normal(T)
    y = np.clip(y, 0.0, 1.0)
    examples = tuple(
        LabeledExample(x_a=xa[t], x_b=xb[t], y=float(y[t])) for t in range(T)
    )
    return SequenceDataset(examples=examples, seed=seed)


def additive_batch_sample(n: int, seed: int, d_a: int = 3, d_b: int = 3,
                          signal_a: float = 0.2, signal_b: float = 0.2) -> BatchSample:
    """Noiseless additive instance for batch training: realizable by the joint class."""
    rng = np.random.default_rng(seed)
    xa = _unit_features(rng, n, d_a)
    xb = _unit_features(rng, n, d_b)
    theta_a = rng.standard_normal(d_a)
    theta_a *= signal_a / np.linalg.norm(theta_a)
    theta_b = rng.standard_normal(d_b)
    theta_b *= signal_b / np.linalg.norm(theta_b)
    y = np.clip(0.5 + xa[:, :d_a] @ theta_a + xb[:, :d_b] @ theta_b, 0.0, 1.0)
    return BatchSample(x_a=xa, x_b=xb, y=y)


def sample_rho_dataset(T: int, seed: int, rho: float = 2.0) -> SequenceDataset:
    """I.i.d. draws from the scaled-noise instance, labels mapped to {0,1}."""
    dist = gen_counterexample_rho(rho)
    rng = np.random.default_rng(seed)
    idx = rng.choice(dist.n, size=T, p=dist.p)
    off, sc = dist.label_map
    examples = tuple(
        LabeledExample(x_a=dist.xa[i], x_b=dist.xb[i], y=float(off + sc * dist.y[i]))
        for i in idx
    )
    return SequenceDataset(examples=examples, seed=seed)


def xor_dataset(T: int, seed: int) -> SequenceDataset:
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=T).astype(float)
    b = rng.integers(0, 2, size=T).astype(float)
    y = np.logical_xor(a > 0.5, b > 0.5).astype(float)
    examples = tuple(
        LabeledExample(x_a=np.array([a[t]]), x_b=np.array([b[t]]), y=float(y[t]))
        for t in range(T)
    )
    return SequenceDataset(examples=examples, seed=seed)


def swap_necessity_dataset(T: int, seed: int) -> SequenceDataset:
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 2, size=T).astype(float)
    b = rng.integers(0, 2, size=T).astype(float)
    examples = tuple(
        LabeledExample(x_a=np.array([a[t]]), x_b=np.array([b[t]]), y=float(a[t] * b[t]))
        for t in range(T)
    )
    return SequenceDataset(examples=examples, seed=seed)


def decision_iid_dataset(T: int, seed: int, d: int = 3) -> SequenceDataset:
    """Vector-label exchangeable stream for the action-exchange protocol."""
    rng = np.random.default_rng(seed)
    means = rng.uniform(0.2, 0.8, size=d)
    y = np.clip(means + 0.15 * rng.standard_normal((T, d)), 0.0, 1.0)
    xa = _unit_features(rng, T, 2)
    xb = _unit_features(rng, T, 2)
    examples = tuple(
        LabeledExample(x_a=xa[t], x_b=xb[t], y=y[t]) for t in range(T)
    )
    return SequenceDataset(examples=examples, seed=seed)


def xor_prior() -> PriorTable:
    """Independent uniform bits, y = a ⊕ b: agreement without aggregation."""
    sa, sb, ys = [], [], []
    for a in (0, 1):
        for b in (0, 1):
            sa.append(f"a{a}")
            sb.append(f"b{b}")
            ys.append(float(a ^ b))
    return PriorTable(
        signals_a=tuple(sa), signals_b=tuple(sb),
        y=np.array(ys), p=np.full(4, 0.25),
        encoding_a={"a0": np.array([-1.0]), "a1": np.array([1.0])},
        encoding_b={"b0": np.array([-1.0]), "b1": np.array([1.0])},
    )


def additive_prior() -> PriorTable:
    """Independent uniform bits, y = (a + b)/2: realizable by two rounds."""
    sa, sb, ys = [], [], []
    for a in (0, 1):
        for b in (0, 1):
            sa.append(f"a{a}")
            sb.append(f"b{b}")
            ys.append((a + b) / 2.0)
    return PriorTable(
        signals_a=tuple(sa), signals_b=tuple(sb),
        y=np.array(ys), p=np.full(4, 0.25),
        encoding_a={"a0": np.array([0.0]), "a1": np.array([1.0])},
        encoding_b={"b0": np.array([0.0]), "b1": np.array([1.0])},
    )


def rho_prior(rho: float = 2.0) -> PriorTable:
    """The scaled-noise instance as a common prior, labels mapped to [0,1]."""
    dist = gen_counterexample_rho(rho)
    off, sc = dist.label_map
    sa = tuple(f"{dist.xa[i, 0]:+.6f}" for i in range(dist.n))
    sb = tuple(f"{dist.xb[i, 0]:+.6f}" for i in range(dist.n))
    return PriorTable(
        signals_a=sa, signals_b=sb,
        y=off + sc * dist.y, p=dist.p,
        encoding_a={s: np.array([float(s)]) for s in set(sa)},
        encoding_b={s: np.array([float(s)]) for s in set(sb)},
    )


def encode_prior(data: dict) -> PriorTable:
    """Attach canonical numeric encodings to a bare atoms table.

    Distinct signal labels on each side are sorted and mapped to evenly
    spaced scalars in [−1, 1], so downstream linear benchmarks have a
    deterministic feature space.
    """
    atoms = data["atoms"]

    def spread(labels):
        uniq = sorted(set(labels))
        if len(uniq) == 1:
            return {uniq[0]: np.array([0.0])}
        return {
            s: np.array([-1.0 + 2.0 * i / (len(uniq) - 1)])
            for i, s in enumerate(uniq)
        }

    sa = tuple(str(a["a"]) for a in atoms)
    sb = tuple(str(a["b"]) for a in atoms)
    return PriorTable(
        signals_a=sa,
        signals_b=sb,
        y=np.array([a["y"] for a in atoms], dtype=float),
        p=np.array([a["p"] for a in atoms], dtype=float),
        encoding_a=spread(sa),
        encoding_b=spread(sb),
    )


def dataset_to_json(dataset: SequenceDataset) -> dict:
    return {
        "seed": dataset.seed,
        "examples": [
            {
                "xa": list(map(float, ex.x_a)),
                "xb": list(map(float, ex.x_b)),
                "y": (float(ex.y) if np.ndim(ex.y) == 0 else list(map(float, ex.y))),
            }
            for ex in dataset
        ],
    }


def dataset_from_json(data: dict) -> SequenceDataset:
    examples = tuple(
        LabeledExample(
            x_a=np.array(e["xa"], dtype=float),
            x_b=np.array(e["xb"], dtype=float),
            y=(np.array(e["y"], dtype=float) if isinstance(e["y"], list) else float(e["y"])),
        )
        for e in data["examples"]
    )
    return SequenceDataset(examples=examples, seed=int(data.get("seed", 0)))


GENERATORS = {
    "additive-linear-noise": additive_linear_noise,
    "d-rho": sample_rho_dataset,
    "xor": xor_dataset,
    "swap-necessity": swap_necessity_dataset,
    "decision-iid": decision_iid_dataset,
}
