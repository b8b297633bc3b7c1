"""Cycle-consistent adversarial adaptation of unseen-class features.

Six networks: G_T maps generated (source) samples into the real test
(target) domain, G_S maps the other way, D_T / D_S are Wasserstein
critics with weight clipping, and C_T / C_S are classifiers over the
unseen classes.  Generator inputs carry the class label as a one-hot
appended to the feature vector.  Minibatches are class-aligned: each
batch draws one pseudo-class and pairs real rows of that class with
fresh class-conditional draws of the same class.

The reported total objective is the weighted sum
``L_adv_T + L_adv_S + chi * L_cyc + xi * L_clf_T + xi * L_clf_S`` with
``L_adv = L_G + L_D`` per side.  Optimization is alternating: one
RMSprop step on the generator-side objective (generators plus
classifiers), then ``n_critic`` RMSprop steps on the critic objective
with weight clipping.  Differentiating the summed min-max value
directly would cancel the adversarial signal, so the two objectives
are separated exactly as in standard adversarial training.

Classifier terms follow a two-phase schedule: during warmup only the
real-data terms train the classifiers; after the recovery trigger
fires, the generator-transformed terms join, letting classifier
gradients reach the generators.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .base_model import BaseZslModel, pseudo_labels, sample_class
from .data import FeatureDataset
from .errors import ConfigError, DataError, NumericalDivergence
from .nn.checkpoint import load_container, save_container
from .nn.mlp import MlpNetwork, MlpSpec, forward_eval, init_network, mlp_backward, mlp_forward
from .nn.optim import OptimizerState, init_optimizer, rmsprop_step
from .rng import named_seed, named_stream

VARIANTS = ("full", "vanilla_ada", "cyclegan_wo", "std_da")
CYCLE_FORMS = ("cross_domain", "within_domain")
TRIGGERS = ("accuracy_crossover", "fixed_fraction")
PHASES = ("warmup", "recovery")
ROLES = ("g_t", "g_s", "d_t", "d_s", "c_t", "c_s")
LOG_COLUMNS = ("iter", "L_adv_T", "L_adv_S", "L_cyc", "L_clf_T", "L_clf_S", "phase")


@dataclass(frozen=True)
class LabeledBatch:
    """Features plus unseen-class indices, tagged by where they came from."""

    features: np.ndarray
    labels: np.ndarray
    origin: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "features",
                           np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2:
            raise ConfigError("batch features must be a matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigError("batch needs one label per row")
        if self.origin not in ("source", "target"):
            raise ConfigError(f"origin must be source or target, got {self.origin!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class AdaConfig:
    cycle_weight: float = 10.0
    identity_weight: float = 5.0
    classifier_weight: float = 1e-4
    n_critic: int = 5
    clip_c: float = 0.01
    n_steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-5
    recovery_trigger: str = "accuracy_crossover"
    recovery_fraction: float = 0.5
    crossover_interval: int = 200
    crossover_samples: int = 32
    seed: int = 100
    variant: str = "full"
    cycle_form: str = "cross_domain"
    mismatched_pairs: bool = False
    mismatched_weight: float = 0.1
    relabel_interval: int = 0
    gen_hidden: tuple[int, ...] = (1200, 1200)
    disc_hidden: tuple[int, ...] = (1600,)
    gen_dropout: float = 0.0
    use_batchnorm: bool = True

    def __post_init__(self) -> None:
        if min(self.cycle_weight, self.identity_weight, self.classifier_weight) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.n_critic < 1:
            raise ConfigError("n_critic must be >= 1")
        if self.clip_c <= 0:
            raise ConfigError("clip_c must be positive")
        if self.n_steps < 1 or self.batch_size < 1:
            raise ConfigError("n_steps and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.recovery_trigger not in TRIGGERS:
            raise ConfigError(f"recovery_trigger must be one of {TRIGGERS}")
        if not 0 < self.recovery_fraction <= 1:
            raise ConfigError("recovery_fraction must lie in (0, 1]")
        if self.crossover_interval < 1 or self.crossover_samples < 1:
            raise ConfigError("crossover interval and sample count must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.cycle_form not in CYCLE_FORMS:
            raise ConfigError(f"cycle_form must be one of {CYCLE_FORMS}")
        if self.relabel_interval < 0:
            raise ConfigError("relabel_interval must be >= 0")
        if not 0 <= self.gen_dropout < 1:
            raise ConfigError("gen_dropout must lie in [0, 1)")
        object.__setattr__(self, "gen_hidden", tuple(int(w) for w in self.gen_hidden))
        object.__setattr__(self, "disc_hidden", tuple(int(w) for w in self.disc_hidden))

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "AdaConfig":
        unknown = set(payload) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown adaptation config keys: {sorted(unknown)}")
        kwargs = dict(payload)
        for key in ("gen_hidden", "disc_hidden"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class AdaState:
    nets: dict[str, MlpNetwork]
    optimizers: dict[str, OptimizerState]
    unseen_ids: list[int]
    variant: str
    phase: str = "warmup"
    iteration: int = 0
    pseudo: np.ndarray | None = None
    agreement_estimate: float | None = None
    loss_history: deque = field(default_factory=lambda: deque(maxlen=100))

    def __post_init__(self) -> None:
        missing = set(ROLES) - set(self.nets)
        if missing:
            raise ConfigError(f"state is missing networks: {sorted(missing)}")
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}")
        self.unseen_ids = sorted(int(c) for c in self.unseen_ids)

    @property
    def n_unseen(self) -> int:
        return len(self.unseen_ids)

    @property
    def g_t(self) -> MlpNetwork:
        return self.nets["g_t"]

    @property
    def g_s(self) -> MlpNetwork:
        return self.nets["g_s"]

    @property
    def d_t(self) -> MlpNetwork:
        return self.nets["d_t"]

    @property
    def d_s(self) -> MlpNetwork:
        return self.nets["d_s"]

    @property
    def c_t(self) -> MlpNetwork:
        return self.nets["c_t"]

    @property
    def c_s(self) -> MlpNetwork:
        return self.nets["c_s"]


def augment_label(x: np.ndarray, c: int, n_unseen: int) -> np.ndarray:
    """Append the one-hot of unseen-class index ``c`` to a feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ConfigError("augment_label takes a single feature vector")
    if not 0 <= c < n_unseen:
        raise ConfigError(f"class index {c} out of range for {n_unseen} unseen classes")
    onehot = np.zeros(n_unseen)
    onehot[c] = 1.0
    return np.concatenate([x, onehot])


def augment_batch(X: np.ndarray, labels: np.ndarray, n_unseen: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= n_unseen):
        raise ConfigError(f"class index out of range for {n_unseen} unseen classes")
    onehot = np.zeros((X.shape[0], n_unseen))
    onehot[np.arange(X.shape[0]), labels] = 1.0
    return np.hstack([X, onehot])


def _unseen_count(g: MlpNetwork, d: int) -> int:
    u = g.spec.in_dim - d
    if u < 1:
        raise ConfigError("generator input is not wider than the feature dim")
    return u


def _fw(net: MlpNetwork, X: np.ndarray, commit: bool, rng_seed: int | None):
    return mlp_forward(net, X, rng_seed=rng_seed, update_stats=commit)


def _mean_l1(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch mean of per-row L1 norms, and its gradient wrt ``pred``."""
    diff = pred - target
    return float(np.abs(diff).sum(axis=1).mean()), np.sign(diff) / diff.shape[0]


def _ce(log_probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy from log-softmax outputs, and its gradient."""
    n = log_probs.shape[0]
    if np.any(labels < 0) or np.any(labels >= log_probs.shape[1]):
        raise ConfigError("classifier label out of range")
    rows = np.arange(n)
    loss = -float(log_probs[rows, labels].mean())
    grad = np.zeros_like(log_probs)
    grad[rows, labels] = -1.0 / n
    return loss, grad


def _check_batches(source: LabeledBatch, target: LabeledBatch) -> None:
    if source.n == 0 or target.n == 0:
        raise ConfigError("empty batch")
    if source.features.shape[1] != target.features.shape[1]:
        raise ConfigError("source and target feature dims differ")


def generator_loss_T(g_t: MlpNetwork, d_t: MlpNetwork, source: LabeledBatch,
                     target: LabeledBatch, beta: float,
                     rng_seed: int | None = None) -> float:
    """Identity L1 on real target rows minus mean critic score on fakes."""
    _check_batches(source, target)
    d = target.features.shape[1]
    u = _unseen_count(g_t, d)
    ident, _ = _mean_l1(
        _fw(g_t, augment_batch(target.features, target.labels, u), False, rng_seed)[0],
        target.features)
    fakes = _fw(g_t, augment_batch(source.features, source.labels, u), False, rng_seed)[0]
    return beta * ident - float(_fw(d_t, fakes, False, rng_seed)[0].mean())


def generator_loss_S(g_s: MlpNetwork, d_s: MlpNetwork, source: LabeledBatch,
                     target: LabeledBatch, beta: float,
                     rng_seed: int | None = None) -> float:
    """Mirror of :func:`generator_loss_T` with the domains swapped."""
    _check_batches(source, target)
    d = source.features.shape[1]
    u = _unseen_count(g_s, d)
    ident, _ = _mean_l1(
        _fw(g_s, augment_batch(source.features, source.labels, u), False, rng_seed)[0],
        source.features)
    fakes = _fw(g_s, augment_batch(target.features, target.labels, u), False, rng_seed)[0]
    return beta * ident - float(_fw(d_s, fakes, False, rng_seed)[0].mean())


def critic_loss_T(d_t: MlpNetwork, g_t: MlpNetwork, source: LabeledBatch,
                  target: LabeledBatch, rng_seed: int | None = None) -> float:
    """Mean critic score on translated fakes minus score on real targets."""
    _check_batches(source, target)
    d = target.features.shape[1]
    u = _unseen_count(g_t, d)
    fakes = _fw(g_t, augment_batch(source.features, source.labels, u), False, rng_seed)[0]
    return (float(_fw(d_t, fakes, False, rng_seed)[0].mean())
            - float(_fw(d_t, target.features, False, rng_seed)[0].mean()))


def critic_loss_S(d_s: MlpNetwork, g_s: MlpNetwork, source: LabeledBatch,
                  target: LabeledBatch, rng_seed: int | None = None) -> float:
    _check_batches(source, target)
    d = source.features.shape[1]
    u = _unseen_count(g_s, d)
    fakes = _fw(g_s, augment_batch(target.features, target.labels, u), False, rng_seed)[0]
    return (float(_fw(d_s, fakes, False, rng_seed)[0].mean())
            - float(_fw(d_s, source.features, False, rng_seed)[0].mean()))


def cycle_loss(g_t: MlpNetwork, g_s: MlpNetwork, source: LabeledBatch,
               target: LabeledBatch, cycle_form: str = "cross_domain",
               rng_seed: int | None = None) -> float:
    """Two-leg L1 reconstruction over class-aligned pairs.

    The printed cross-domain form compares each reconstruction with the
    paired row from the OTHER domain; ``within_domain`` compares with
    the leg's own starting row.
    """
    _check_batches(source, target)
    if source.n != target.n:
        raise ConfigError("cycle loss needs equally sized, class-aligned batches")
    if cycle_form not in CYCLE_FORMS:
        raise ConfigError(f"cycle_form must be one of {CYCLE_FORMS}")
    d = target.features.shape[1]
    u = _unseen_count(g_t, d)
    gt_src = _fw(g_t, augment_batch(source.features, source.labels, u), False, rng_seed)[0]
    back_s = _fw(g_s, augment_batch(gt_src, source.labels, u), False, rng_seed)[0]
    gs_tgt = _fw(g_s, augment_batch(target.features, target.labels, u), False, rng_seed)[0]
    back_t = _fw(g_t, augment_batch(gs_tgt, target.labels, u), False, rng_seed)[0]
    if cycle_form == "cross_domain":
        ref1, ref2 = target.features, source.features
    else:
        ref1, ref2 = source.features, target.features
    return _mean_l1(back_s, ref1)[0] + _mean_l1(back_t, ref2)[0]


def classifier_loss_T(c_t: MlpNetwork, g_t: MlpNetwork, source: LabeledBatch,
                      target: LabeledBatch, phase: str,
                      rng_seed: int | None = None) -> float:
    """Cross-entropy on real pseudo-labeled rows, plus the transformed
    source term once the recovery phase starts."""
    _check_batches(source, target)
    if phase not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}")
    loss, _ = _ce(_fw(c_t, target.features, False, rng_seed)[0], target.labels)
    if phase == "recovery":
        d = target.features.shape[1]
        u = _unseen_count(g_t, d)
        fakes = _fw(g_t, augment_batch(source.features, source.labels, u),
                    False, rng_seed)[0]
        loss += _ce(_fw(c_t, fakes, False, rng_seed)[0], source.labels)[0]
    return loss


def classifier_loss_S(c_s: MlpNetwork, g_s: MlpNetwork, source: LabeledBatch,
                      target: LabeledBatch, phase: str,
                      rng_seed: int | None = None) -> float:
    _check_batches(source, target)
    if phase not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}")
    loss, _ = _ce(_fw(c_s, source.features, False, rng_seed)[0], source.labels)
    if phase == "recovery":
        d = source.features.shape[1]
        u = _unseen_count(g_s, d)
        fakes = _fw(g_s, augment_batch(target.features, target.labels, u),
                    False, rng_seed)[0]
        loss += _ce(_fw(c_s, fakes, False, rng_seed)[0], target.labels)[0]
    return loss


def total_loss(state: AdaState, source: LabeledBatch, target: LabeledBatch,
               config: AdaConfig) -> tuple[float, dict[str, float]]:
    """Weighted sum of every term the variant trains, plus its breakdown.

    Breakdown values are the weighted contributions, so they sum to the
    total exactly.  ``adv_T`` / ``adv_S`` each combine the generator and
    critic sides of that domain's adversarial game.
    """
    if state.variant == "std_da":
        raise ConfigError("std_da has no adversarial objective")
    beta = 0.0 if state.variant == "vanilla_ada" else config.identity_weight
    breakdown = {
        "adv_T": (generator_loss_T(state.g_t, state.d_t, source, target, beta)
                  + critic_loss_T(state.d_t, state.g_t, source, target)),
    }
    if state.variant != "vanilla_ada":
        breakdown["adv_S"] = (
            generator_loss_S(state.g_s, state.d_s, source, target, beta)
            + critic_loss_S(state.d_s, state.g_s, source, target))
        breakdown["cyc"] = config.cycle_weight * cycle_loss(
            state.g_t, state.g_s, source, target, config.cycle_form)
    if state.variant != "cyclegan_wo":
        breakdown["clf_T"] = config.classifier_weight * classifier_loss_T(
            state.c_t, state.g_t, source, target, state.phase)
        if state.variant != "vanilla_ada":
            breakdown["clf_S"] = config.classifier_weight * classifier_loss_S(
                state.c_s, state.g_s, source, target, state.phase)
    return float(sum(breakdown.values())), breakdown


def init_ada_state(base_model: BaseZslModel, config: AdaConfig) -> AdaState:
    """Fresh networks and RMSprop states sized from the base model."""
    d = base_model.dim
    unseen = base_model.attribute_table.unseen_ids
    if not unseen:
        raise DataError("EMPTY_CLASS_SET", "adaptation needs at least one unseen class")
    u = len(unseen)
    specs = {
        "g_t": MlpSpec.dense((d + u, *config.gen_hidden, d), activation="leaky_relu:0.2",
                             batchnorm=config.use_batchnorm, dropout=config.gen_dropout),
        "g_s": MlpSpec.dense((d + u, *config.gen_hidden, d), activation="leaky_relu:0.2",
                             batchnorm=config.use_batchnorm, dropout=config.gen_dropout),
        "d_t": MlpSpec.dense((d, *config.disc_hidden, 1), activation="leaky_relu:0.2",
                             batchnorm=config.use_batchnorm),
        "d_s": MlpSpec.dense((d, *config.disc_hidden, 1), activation="leaky_relu:0.2",
                             batchnorm=config.use_batchnorm),
        "c_t": MlpSpec.dense((d, u), out_activation="log_softmax"),
        "c_s": MlpSpec.dense((d, u), out_activation="log_softmax"),
    }
    nets = {role: init_network(spec, seed=named_seed(config.seed, "init", role))
            for role, spec in specs.items()}
    optimizers = {role: init_optimizer("rmsprop", nets[role].params.size,
                                       learning_rate=config.learning_rate,
                                       param_layout=list(nets[role].spec.param_layout()))
                  for role in specs}
    return AdaState(nets=nets, optimizers=optimizers, unseen_ids=list(unseen),
                    variant=config.variant)


def generator_objective(state: AdaState, config: AdaConfig, source: LabeledBatch,
                        target: LabeledBatch, commit_stats: bool = False,
                        rng_seed: int | None = None,
                        ) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Generator-step objective: value, raw term breakdown, and exact
    gradients for every net updated in this step.

    Critic parameters are frozen (their scores still shape the
    gradient); the breakdown also carries value-only critic losses so a
    training log can report the full adversarial terms per iteration.
    """
    _check_batches(source, target)
    if source.n != target.n:
        raise ConfigError("generator step needs equally sized class-aligned batches")
    variant = state.variant
    if variant == "std_da":
        raise ConfigError("std_da has no generator objective")
    has_s = variant in ("full", "cyclegan_wo")
    has_clf = variant in ("full", "vanilla_ada")
    # vanilla keeps only the plain adversarial game: both the cycle and
    # the identity anchor are the constrained-translation additions.
    beta = 0.0 if variant == "vanilla_ada" else config.identity_weight
    chi = config.cycle_weight
    xi = config.classifier_weight
    n = source.n
    d = target.features.shape[1]
    u = state.n_unseen
    labels = source.labels

    def seed_for(tag: str):
        return None if rng_seed is None else named_seed(rng_seed, tag)

    ya = augment_batch(source.features, labels, u)
    xa = augment_batch(target.features, target.labels, u)

    grads = {role: np.zeros_like(state.nets[role].params)
             for role in (("g_t", "g_s", "c_t", "c_s") if has_s else ("g_t", "c_t"))
             if has_clf or role in ("g_t", "g_s")}
    breakdown: dict[str, float] = {}

    # T-side generator terms
    gt_src, cache_gt_src = _fw(state.g_t, ya, commit_stats, seed_for("gt_src"))
    d_fake_t, cache_d_fake_t = _fw(state.d_t, gt_src, False, seed_for("d_fake_t"))
    gt_id, cache_gt_id = _fw(state.g_t, xa, commit_stats, seed_for("gt_id"))
    ident_t, ident_t_grad = _mean_l1(gt_id, target.features)
    breakdown["L_G_T"] = beta * ident_t - float(d_fake_t.mean())
    breakdown["L_D_T"] = (float(d_fake_t.mean())
                          - float(_fw(state.d_t, target.features, False,
                                      seed_for("d_real_t"))[0].mean()))

    g_at_gt_src = np.zeros((n, d))
    pg, _ = mlp_backward(state.g_t, cache_gt_id, beta * ident_t_grad)
    grads["g_t"] += pg
    _, gin = mlp_backward(state.d_t, cache_d_fake_t, np.full((n, 1), -1.0 / n))
    g_at_gt_src += gin

    g_at_gs_tgt = None
    cache_gs_tgt = None
    if has_s:
        gs_tgt, cache_gs_tgt = _fw(state.g_s, xa, commit_stats, seed_for("gs_tgt"))
        d_fake_s, cache_d_fake_s = _fw(state.d_s, gs_tgt, False, seed_for("d_fake_s"))
        gs_id, cache_gs_id = _fw(state.g_s, ya, commit_stats, seed_for("gs_id"))
        ident_s, ident_s_grad = _mean_l1(gs_id, source.features)
        breakdown["L_G_S"] = beta * ident_s - float(d_fake_s.mean())
        breakdown["L_D_S"] = (float(d_fake_s.mean())
                              - float(_fw(state.d_s, source.features, False,
                                          seed_for("d_real_s"))[0].mean()))
        g_at_gs_tgt = np.zeros((n, d))
        pg, _ = mlp_backward(state.g_s, cache_gs_id, beta * ident_s_grad)
        grads["g_s"] += pg
        _, gin = mlp_backward(state.d_s, cache_d_fake_s, np.full((n, 1), -1.0 / n))
        g_at_gs_tgt += gin

        # cycle legs
        back_s, cache_back_s = _fw(state.g_s, augment_batch(gt_src, labels, u),
                                   commit_stats, seed_for("cyc_back_s"))
        back_t, cache_back_t = _fw(state.g_t, augment_batch(gs_tgt, target.labels, u),
                                   commit_stats, seed_for("cyc_back_t"))
        if config.cycle_form == "cross_domain":
            ref1, ref2 = target.features, source.features
        else:
            ref1, ref2 = source.features, target.features
        leg1, leg1_grad = _mean_l1(back_s, ref1)
        leg2, leg2_grad = _mean_l1(back_t, ref2)
        breakdown["L_cyc"] = leg1 + leg2
        pg, gin = mlp_backward(state.g_s, cache_back_s, chi * leg1_grad)
        grads["g_s"] += pg
        g_at_gt_src += gin[:, :d]
        pg, gin = mlp_backward(state.g_t, cache_back_t, chi * leg2_grad)
        grads["g_t"] += pg
        g_at_gs_tgt += gin[:, :d]
    else:
        breakdown["L_G_S"] = 0.0
        breakdown["L_D_S"] = 0.0
        breakdown["L_cyc"] = 0.0

    if has_clf:
        ct_real, cache_ct_real = _fw(state.c_t, target.features, commit_stats,
                                     seed_for("ct_real"))
        clf_t, ce_grad = _ce(ct_real, target.labels)
        pg, _ = mlp_backward(state.c_t, cache_ct_real, xi * ce_grad)
        grads["c_t"] += pg
        if state.phase == "recovery":
            ct_gen, cache_ct_gen = _fw(state.c_t, gt_src, commit_stats,
                                       seed_for("ct_gen"))
            term, ce_grad = _ce(ct_gen, labels)
            clf_t += term
            pg, gin = mlp_backward(state.c_t, cache_ct_gen, xi * ce_grad)
            grads["c_t"] += pg
            g_at_gt_src += gin
        if config.mismatched_pairs and u > 1:
            wrong = _mismatched_labels(target.labels, u, config.seed, state.iteration)
            ct_wrong, cache_ct_wrong = _fw(state.c_t, target.features, False,
                                           seed_for("ct_wrong"))
            term, ce_grad = _ce(ct_wrong, wrong)
            clf_t -= config.mismatched_weight * term
            pg, _ = mlp_backward(state.c_t, cache_ct_wrong,
                                 -config.mismatched_weight * xi * ce_grad)
            grads["c_t"] += pg
        breakdown["L_clf_T"] = clf_t

        if has_s:
            cs_real, cache_cs_real = _fw(state.c_s, source.features, commit_stats,
                                         seed_for("cs_real"))
            clf_s, ce_grad = _ce(cs_real, labels)
            pg, _ = mlp_backward(state.c_s, cache_cs_real, xi * ce_grad)
            grads["c_s"] += pg
            if state.phase == "recovery":
                cs_gen, cache_cs_gen = _fw(state.c_s, gs_tgt, commit_stats,
                                           seed_for("cs_gen"))
                term, ce_grad = _ce(cs_gen, target.labels)
                clf_s += term
                pg, gin = mlp_backward(state.c_s, cache_cs_gen, xi * ce_grad)
                grads["c_s"] += pg
                g_at_gs_tgt += gin
            breakdown["L_clf_S"] = clf_s
        else:
            breakdown["L_clf_S"] = 0.0
    else:
        breakdown["L_clf_T"] = 0.0
        breakdown["L_clf_S"] = 0.0

    pg, _ = mlp_backward(state.g_t, cache_gt_src, g_at_gt_src)
    grads["g_t"] += pg
    if has_s:
        pg, _ = mlp_backward(state.g_s, cache_gs_tgt, g_at_gs_tgt)
        grads["g_s"] += pg

    value = breakdown["L_G_T"] + breakdown["L_G_S"] + chi * breakdown["L_cyc"]
    value += xi * (breakdown["L_clf_T"] + breakdown["L_clf_S"])
    return float(value), breakdown, grads


def _mismatched_labels(labels: np.ndarray, u: int, seed: int,
                       iteration: int) -> np.ndarray:
    offsets = named_stream(seed, "mismatch", iteration).integers(1, u, labels.shape[0])
    return (labels + offsets) % u


def critic_objective(state: AdaState, config: AdaConfig, source: LabeledBatch,
                     target: LabeledBatch, commit_stats: bool = False,
                     rng_seed: int | None = None,
                     ) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Critic-step objective with generators frozen."""
    _check_batches(source, target)
    if state.variant == "std_da":
        raise ConfigError("std_da has no critic objective")
    has_s = state.variant in ("full", "cyclegan_wo")
    u = state.n_unseen

    def seed_for(tag: str):
        return None if rng_seed is None else named_seed(rng_seed, tag)

    grads = {}
    breakdown = {}
    ya = augment_batch(source.features, source.labels, u)
    fakes_t = _fw(state.g_t, ya, False, seed_for("gt_src"))[0]
    nf, nr = fakes_t.shape[0], target.n
    out_f, cache_f = _fw(state.d_t, fakes_t, commit_stats, seed_for("d_fake_t"))
    out_r, cache_r = _fw(state.d_t, target.features, commit_stats, seed_for("d_real_t"))
    breakdown["L_D_T"] = float(out_f.mean()) - float(out_r.mean())
    pg_f, _ = mlp_backward(state.d_t, cache_f, np.full((nf, 1), 1.0 / nf))
    pg_r, _ = mlp_backward(state.d_t, cache_r, np.full((nr, 1), -1.0 / nr))
    grads["d_t"] = pg_f + pg_r

    if has_s:
        xa = augment_batch(target.features, target.labels, u)
        fakes_s = _fw(state.g_s, xa, False, seed_for("gs_tgt"))[0]
        out_f, cache_f = _fw(state.d_s, fakes_s, commit_stats, seed_for("d_fake_s"))
        out_r, cache_r = _fw(state.d_s, source.features, commit_stats,
                             seed_for("d_real_s"))
        breakdown["L_D_S"] = float(out_f.mean()) - float(out_r.mean())
        pg_f, _ = mlp_backward(state.d_s, cache_f,
                               np.full((fakes_s.shape[0], 1), 1.0 / fakes_s.shape[0]))
        pg_r, _ = mlp_backward(state.d_s, cache_r, np.full((source.n, 1), -1.0 / source.n))
        grads["d_s"] = pg_f + pg_r
    else:
        breakdown["L_D_S"] = 0.0

    return float(sum(breakdown.values())), breakdown, grads


def _draw_batches(base_model: BaseZslModel, test_X: np.ndarray, pseudo: np.ndarray,
                  state: AdaState, config: AdaConfig, *path,
                  ) -> tuple[LabeledBatch, LabeledBatch]:
    """One class-aligned (source, target) pair, deterministic in path."""
    nonempty = [j for j, cid in enumerate(state.unseen_ids)
                if np.any(pseudo == cid)]
    stream = named_stream(config.seed, "batch", *path)
    j = nonempty[int(stream.integers(len(nonempty)))]
    cid = state.unseen_ids[j]
    rows = np.flatnonzero(pseudo == cid)
    picks = rows[stream.integers(rows.size, size=config.batch_size)]
    labels = np.full(config.batch_size, j, dtype=np.int64)
    y = sample_class(base_model, cid, config.batch_size,
                     seed=named_seed(config.seed, "src", *path))
    return (LabeledBatch(features=y, labels=labels, origin="source"),
            LabeledBatch(features=test_X[picks], labels=labels, origin="target"))


def classify(net: MlpNetwork, X: np.ndarray, unseen_ids: Sequence[int]) -> np.ndarray:
    """Eval-mode classifier predictions mapped back to class ids."""
    log_probs = forward_eval(net, np.asarray(X, dtype=np.float64))
    ids = np.asarray(sorted(int(c) for c in unseen_ids), dtype=np.int64)
    return ids[np.argmax(log_probs, axis=1)]


def _crossover_accuracy(state: AdaState, base_model: BaseZslModel,
                        config: AdaConfig, iteration: int) -> float:
    """C_T accuracy on freshly generated, G_T-transformed labeled draws."""
    correct = []
    for j, cid in enumerate(state.unseen_ids):
        draws = sample_class(base_model, cid, config.crossover_samples,
                             seed=named_seed(config.seed, "xover", iteration))
        labels = np.full(config.crossover_samples, j, dtype=np.int64)
        moved = forward_eval(state.g_t, augment_batch(draws, labels, state.n_unseen))
        picks = classify(state.c_t, moved, state.unseen_ids)
        correct.append(float(np.mean(picks == cid)))
    return float(np.mean(correct))


def _maybe_switch_phase(state: AdaState, base_model: BaseZslModel,
                        config: AdaConfig) -> None:
    if state.phase == "recovery" or state.variant == "cyclegan_wo":
        return
    it = state.iteration
    if it + 1 >= int(config.recovery_fraction * config.n_steps):
        state.phase = "recovery"
        return
    if (config.recovery_trigger == "accuracy_crossover"
            and state.agreement_estimate is not None
            and it > 0 and it % config.crossover_interval == 0):
        acc = _crossover_accuracy(state, base_model, config, it)
        if acc >= state.agreement_estimate:
            state.phase = "recovery"


def adapt(base_model: BaseZslModel, test_data: FeatureDataset,
          config: AdaConfig) -> tuple[AdaState, list[tuple]]:
    """Full alternating adversarial adaptation loop.

    Pseudo-labels are computed once up front and frozen (unless
    ``relabel_interval`` asks the current classifier to refresh them).
    Each outer iteration takes one generator+classifier RMSprop step,
    then ``n_critic`` critic steps with weight clipping.  The returned
    log has one row per iteration matching ``LOG_COLUMNS``.
    """
    if config.variant == "std_da":
        return train_std_da(base_model, test_data, config)
    state = init_ada_state(base_model, config)
    report = pseudo_labels(base_model, test_data)
    state.pseudo = report.labels.copy()
    state.agreement_estimate = report.mean_agreement
    test_X, _ = test_data.test_rows()
    log: list[tuple] = []

    for it in range(config.n_steps):
        state.iteration = it
        _maybe_switch_phase(state, base_model, config)
        src, tgt = _draw_batches(base_model, test_X, state.pseudo, state, config,
                                 "gen", it)
        value, bd, grads = generator_objective(
            state, config, src, tgt, commit_stats=True,
            rng_seed=named_seed(config.seed, "drop", it, "gen"))
        _abort_if_nonfinite(value, bd, it)
        for role, g in grads.items():
            params, state.optimizers[role] = rmsprop_step(
                state.nets[role].params, g, state.optimizers[role])
            state.nets[role].set_params(params)

        for inner in range(config.n_critic):
            src2, tgt2 = _draw_batches(base_model, test_X, state.pseudo, state,
                                       config, "critic", it, inner)
            cval, cbd, cgrads = critic_objective(
                state, config, src2, tgt2, commit_stats=True,
                rng_seed=named_seed(config.seed, "drop", it, "critic", inner))
            _abort_if_nonfinite(cval, cbd, it)
            for role, g in cgrads.items():
                params, state.optimizers[role] = rmsprop_step(
                    state.nets[role].params, g, state.optimizers[role])
                state.nets[role].set_params(
                    np.clip(params, -config.clip_c, config.clip_c))

        if config.relabel_interval and (it + 1) % config.relabel_interval == 0 \
                and state.variant in ("full", "vanilla_ada"):
            state.pseudo = classify(state.c_t, test_X, state.unseen_ids)

        row = (it,
               bd["L_G_T"] + bd["L_D_T"],
               bd["L_G_S"] + bd["L_D_S"],
               bd["L_cyc"], bd["L_clf_T"], bd["L_clf_S"], state.phase)
        state.loss_history.append(row)
        log.append(row)
    state.iteration = config.n_steps
    return state, log


def _abort_if_nonfinite(value: float, breakdown: dict[str, float],
                        iteration: int) -> None:
    if np.isfinite(value) and all(np.isfinite(v) for v in breakdown.values()):
        return
    raise NumericalDivergence("non-finite adaptation loss", iteration=iteration,
                              breakdown=dict(breakdown))


def train_std_da(base_model: BaseZslModel, test_data: FeatureDataset,
                 config: AdaConfig) -> tuple[AdaState, list[tuple]]:
    """No-adversary baseline: trains C_T on class-conditional draws plus
    pseudo-labeled test rows.  Other networks stay at initialization."""
    config = replace(config, variant="std_da")
    state = init_ada_state(base_model, config)
    report = pseudo_labels(base_model, test_data)
    state.pseudo = report.labels.copy()
    state.agreement_estimate = report.mean_agreement
    test_X, _ = test_data.test_rows()
    log: list[tuple] = []
    half = max(1, config.batch_size // 2)
    for it in range(config.n_steps):
        state.iteration = it
        stream = named_stream(config.seed, "batch", "std", it)
        j = int(stream.integers(state.n_unseen))
        cid = state.unseen_ids[j]
        synth = sample_class(base_model, cid, half,
                             seed=named_seed(config.seed, "src", "std", it))
        rows = np.flatnonzero(state.pseudo == cid)
        if rows.size:
            picks = rows[stream.integers(rows.size, size=half)]
            X = np.vstack([synth, test_X[picks]])
        else:
            X = synth
        labels = np.full(X.shape[0], j, dtype=np.int64)
        out, cache = _fw(state.c_t, X, True,
                         named_seed(config.seed, "drop", "std", it))
        loss, ce_grad = _ce(out, labels)
        if not np.isfinite(loss):
            raise NumericalDivergence("non-finite classifier loss", iteration=it,
                                      breakdown={"L_clf_T": loss})
        pg, _ = mlp_backward(state.c_t, cache, ce_grad)
        params, state.optimizers["c_t"] = rmsprop_step(
            state.c_t.params, pg, state.optimizers["c_t"])
        state.c_t.set_params(params)
        row = (it, 0.0, 0.0, 0.0, loss, 0.0, state.phase)
        state.loss_history.append(row)
        log.append(row)
    state.iteration = config.n_steps
    return state, log


def map_prototypes(state: AdaState, base_model: BaseZslModel, n_samples: int,
                   seed: int) -> dict[int, np.ndarray]:
    """Per-class mean of G_T over label-augmented class-conditional draws.

    Covariances are deliberately left at the base model's values; only
    the class means move."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    out: dict[int, np.ndarray] = {}
    for j, cid in enumerate(state.unseen_ids):
        draws = sample_class(base_model, cid, n_samples,
                             seed=named_seed(seed, "proto"))
        labels = np.full(n_samples, j, dtype=np.int64)
        moved = forward_eval(state.g_t, augment_batch(draws, labels, state.n_unseen))
        out[cid] = moved.mean(axis=0)
    return out


def save_ada_state(path: str | Path, state: AdaState, config: AdaConfig) -> None:
    meta = {
        "kind": "ada_state",
        "config": config.to_dict(),
        "variant": state.variant,
        "phase": state.phase,
        "iteration": state.iteration,
        "unseen_ids": list(state.unseen_ids),
        "agreement_estimate": state.agreement_estimate,
        "specs": {role: state.nets[role].spec.to_dict() for role in ROLES},
        "seeds": {role: state.nets[role].seed for role in ROLES},
    }
    arrays = {}
    for role in ROLES:
        arrays[f"{role}_params"] = state.nets[role].params
        arrays[f"{role}_stats"] = state.nets[role].stats
    if state.pseudo is not None:
        arrays["pseudo"] = state.pseudo.astype(np.float64)
    save_container(path, meta, arrays)


def load_ada_state(path: str | Path) -> tuple[AdaState, AdaConfig]:
    """Rebuilds an adapted state for evaluation; optimizer moments are
    not persisted, so resumed training starts with fresh accumulators."""
    meta, arrays = load_container(path)
    if meta.get("kind") != "ada_state":
        raise DataError("BAD_CHECKPOINT",
                        f"expected an adaptation checkpoint, found {meta.get('kind')!r}")
    config = AdaConfig.from_dict(meta["config"])
    nets = {}
    for role in ROLES:
        spec = MlpSpec.from_dict(meta["specs"][role])
        nets[role] = MlpNetwork(spec=spec, params=arrays[f"{role}_params"],
                                stats=arrays[f"{role}_stats"],
                                seed=meta["seeds"][role], mode="eval")
    optimizers = {role: init_optimizer("rmsprop", nets[role].params.size,
                                       learning_rate=config.learning_rate)
                  for role in ROLES}
    state = AdaState(nets=nets, optimizers=optimizers,
                     unseen_ids=meta["unseen_ids"], variant=meta["variant"],
                     phase=meta["phase"], iteration=int(meta["iteration"]),
                     agreement_estimate=meta.get("agreement_estimate"))
    if "pseudo" in arrays:
        state.pseudo = arrays["pseudo"].astype(np.int64)
    return state, config
