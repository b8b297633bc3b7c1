"""Shared builders and independent oracles for the test suite.

Everything here recomputes expected values from first principles
(plain loops, closed forms, brute force) so the tests never certify
the library with its own machinery.
"""
from __future__ import annotations

import numpy as np

from zslada.ada import LabeledBatch
from zslada.base_model import BaseZslModel, PretrainConfig, pretrain, pseudo_labels
from zslada.data import ClassAttributeTable
from zslada.nn.mlp import MlpNetwork, MlpSpec, init_network
from zslada.rng import named_seed
from zslada.synthetic import SyntheticWorld, SyntheticWorldSpec, make_synthetic_world


def numeric_grad(fn, params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time, no shortcuts."""
    params = np.asarray(params, dtype=np.float64)
    out = np.zeros_like(params)
    for i in range(params.size):
        up = params.copy()
        dn = params.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (fn(up) - fn(dn)) / (2.0 * h)
    return out


def max_rel_err(a, b) -> float:
    """Max entrywise |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale)) if a.size else 0.0


def toy_table(S: int = 2, U: int = 2, attr_dim: int = 3,
              seed: int = 0) -> ClassAttributeTable:
    rng = np.random.default_rng(seed)
    n = S + U
    return ClassAttributeTable(
        attributes=rng.uniform(-1.0, 1.0, (n, attr_dim)),
        class_ids=list(range(n)),
        seen_mask=np.array([i < S for i in range(n)]),
    )


def exact_net(spec: MlpSpec, params: np.ndarray, mode: str = "eval") -> MlpNetwork:
    return MlpNetwork(spec, np.asarray(params, dtype=np.float64),
                      np.zeros(spec.n_stats()), mode=mode)


def zero_param_model(table: ClassAttributeTable, d: int,
                     include_logdet: bool = True) -> BaseZslModel:
    """Both heads all-zero: every mean is 0, every precision exactly 1."""
    spec = MlpSpec.dense((table.attr_dim, d))
    return BaseZslModel(
        mean_net=exact_net(spec, np.zeros(spec.n_params())),
        prec_net=exact_net(spec, np.zeros(spec.n_params())),
        attribute_table=table,
        include_logdet=include_logdet,
    )


def table_model(means, precisions, n_seen: int = 1,
                include_logdet: bool = True) -> BaseZslModel:
    """Model whose class parameters equal the given rows exactly.

    Attributes are one-hot, the heads are single linear layers, so class
    c reads off row c of each weight matrix; precisions must lie strictly
    inside (0.5, 1.5) for the bounded head to reach them.
    """
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    precisions = np.atleast_2d(np.asarray(precisions, dtype=np.float64))
    n, d = means.shape
    table = ClassAttributeTable(
        attributes=np.eye(n),
        class_ids=list(range(n)),
        seen_mask=np.array([i < n_seen for i in range(n)]),
    )
    spec = MlpSpec.dense((n, d))
    raw = np.log((precisions - 0.5) / (1.5 - precisions))
    return BaseZslModel(
        mean_net=exact_net(spec, np.concatenate([means.ravel(), np.zeros(d)])),
        prec_net=exact_net(spec, np.concatenate([raw.ravel(), np.zeros(d)])),
        attribute_table=table,
        include_logdet=include_logdet,
    )


def identity_generator(d: int, u: int,
                       offset: np.ndarray | float = 0.0) -> MlpNetwork:
    """Bitwise-exact identity-plus-offset on features through one relu layer.

    relu(v) - relu(-v) = v holds exactly in floats (negation is exact and
    all weights are +-1), so hidden weights [I; -I] and output weights
    [I; -I] reproduce the input bit for bit; one-hot columns are wired
    to zero.
    """
    spec = MlpSpec.dense((d + u, 2 * d, d), activation="relu")
    W0 = np.zeros((d + u, 2 * d))
    W0[:d, :d] = np.eye(d)
    W0[:d, d:] = -np.eye(d)
    W1 = np.zeros((2 * d, d))
    W1[:d, :] = np.eye(d)
    W1[d:, :] = -np.eye(d)
    bias = np.zeros(d) + np.asarray(offset, dtype=np.float64)
    params = np.concatenate([W0.ravel(), np.zeros(2 * d), W1.ravel(), bias])
    return exact_net(spec, params)


def constant_critic(d: int, value: float = 0.0) -> MlpNetwork:
    spec = MlpSpec.dense((d, 1))
    params = np.zeros(d + 1)
    params[-1] = value
    return exact_net(spec, params)


def linear_critic(d: int, weights, bias: float = 0.0) -> MlpNetwork:
    spec = MlpSpec.dense((d, 1))
    params = np.concatenate([np.asarray(weights, dtype=np.float64).ravel(), [bias]])
    return exact_net(spec, params)


def biased_classifier(d: int, u: int, favored: int, margin: float = 500.0) -> MlpNetwork:
    """Log-softmax head that puts essentially all mass on one index."""
    spec = MlpSpec.dense((d, u), out_activation="log_softmax")
    params = np.zeros(d * u + u)
    params[d * u + favored] = margin
    return exact_net(spec, params)


def uniform_classifier(d: int, u: int) -> MlpNetwork:
    spec = MlpSpec.dense((d, u), out_activation="log_softmax")
    return exact_net(spec, np.zeros(d * u + u))


def batch(features, labels, origin: str = "source") -> LabeledBatch:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if np.isscalar(labels):
        labels = np.full(features.shape[0], labels, dtype=np.int64)
    return LabeledBatch(features=features,
                        labels=np.asarray(labels, dtype=np.int64),
                        origin=origin)


# The four-seen/four-unseen 16-d benchmark every slow test shares.  The
# bounded precision head cannot represent arbitrary spreads, so worlds
# keep the default precision range inside (0.5, 1.5).
def bench_spec(seed: int, shift_magnitude: float = 0.0, **overrides) -> SyntheticWorldSpec:
    base = dict(S=8, U=4, d=16, attr_dim=4, samples_per_class=500,
                attribute_map="linear",
                shift_kind="affine" if shift_magnitude else "none",
                shift_magnitude=shift_magnitude, seed=seed)
    base.update(overrides)
    return SyntheticWorldSpec(**base)


RECOVERY_PRETRAIN = dict(learning_rate=1e-2, batch_size=128, max_epochs=300,
                         patience=60)


def linear_model(table: ClassAttributeTable, d: int, seed: int = 11,
                 include_logdet: bool = True) -> BaseZslModel:
    """Zero-hidden-layer heads: exact for linearly generated worlds and
    convex, so recovery does not depend on interpolation luck."""
    spec = MlpSpec.dense((table.attr_dim, d))
    return BaseZslModel(
        mean_net=init_network(spec, named_seed(seed, "mean_net")),
        prec_net=init_network(spec, named_seed(seed, "prec_net")),
        attribute_table=table,
        include_logdet=include_logdet,
    )


def train_linear_model(world: SyntheticWorld, seed: int = 11, **overrides):
    cfg = PretrainConfig(**{**RECOVERY_PRETRAIN, "seed": seed, **overrides})
    model = linear_model(world.attributes, world.dataset.dim, seed=seed)
    return pretrain(model, world.dataset, cfg)


def calibrate_shift(world_seed: int, model_seed: int = 11,
                    band: tuple[float, float] = (0.6, 0.85),
                    start: float = 4.0):
    """World whose pseudo-label agreement lands inside ``band``.

    Seen-class rows are never shifted, so one pretrained model per world
    seed scores every candidate magnitude.  Grows the magnitude by x1.5
    until agreement drops below the band's top, then bisects.
    Returns (world, model, agreement).
    """
    lo_a, hi_a = band

    def world_at(m: float) -> SyntheticWorld:
        return make_synthetic_world(bench_spec(world_seed, shift_magnitude=m))

    world = world_at(start)
    model, _ = train_linear_model(world, seed=model_seed)

    def agreement_at(m: float):
        w = world_at(m)
        return w, pseudo_labels(model, w.dataset).mean_agreement

    m_lo, m_hi = 0.0, start
    w, a = agreement_at(start)
    for _ in range(12):
        if a < hi_a:
            break
        m_lo, m_hi = m_hi, m_hi * 1.5
        w, a = agreement_at(m_hi)
    if a >= lo_a:
        return w, model, a
    for _ in range(40):
        mid = 0.5 * (m_lo + m_hi)
        w, a = agreement_at(mid)
        if a > hi_a:
            m_lo = mid
        elif a < lo_a:
            m_hi = mid
        else:
            return w, model, a
    raise AssertionError(
        f"could not place agreement in {band} for world seed {world_seed}")
