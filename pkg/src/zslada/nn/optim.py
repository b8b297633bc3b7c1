"""First-order optimizers over flat parameter vectors.

Both update rules share one state container so a training loop can swap
optimizers without touching its bookkeeping.  Weight decay is decoupled:
the ``weight_decay * theta`` term is added to the scaled update directly
and never enters the moment accumulators.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, NonFiniteGradient

_KINDS = ("adam", "rmsprop")


@dataclass(frozen=True)
class OptimizerHyper:
    """Hyperparameters shared by both update rules.

    ``beta1``/``beta2`` are the Adam moment decays; rmsprop reads only
    ``beta2`` (its squared-gradient smoothing, default overridden to 0.99
    by :func:`init_optimizer`) and ignores ``beta1``.
    """

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name, value, lo, hi in (
            ("beta1", self.beta1, 0.0, 1.0),
            ("beta2", self.beta2, 0.0, 1.0),
        ):
            if not lo <= value < hi:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class OptimizerState:
    kind: str
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    hyper: OptimizerHyper
    # Optional (label, start, stop) triples used to name the offending
    # slice when a non-finite gradient aborts a step.
    param_layout: list[tuple[str, int, int]] | None = field(default=None)

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            kind=self.kind,
            step_count=self.step_count,
            first_moment=self.first_moment.copy(),
            second_moment=self.second_moment.copy(),
            hyper=self.hyper,
            param_layout=None if self.param_layout is None else list(self.param_layout),
        )


def init_optimizer(
    kind: str,
    n_params: int,
    hyper: OptimizerHyper | None = None,
    learning_rate: float | None = None,
    param_layout: list[tuple[str, int, int]] | None = None,
) -> OptimizerState:
    """Fresh zeroed state.

    With no explicit hyper, adam defaults to (lr 1e-3, 0.9, 0.999) and
    rmsprop to (lr 1e-5, smoothing 0.99).  ``learning_rate`` overrides
    just the rate on top of whichever hyper block applies.
    """
    if kind not in _KINDS:
        raise ConfigError(f"unknown optimizer kind {kind!r}, expected one of {_KINDS}")
    if n_params <= 0:
        raise ConfigError(f"n_params must be positive, got {n_params}")
    if hyper is None:
        if kind == "adam":
            hyper = OptimizerHyper(learning_rate=1e-3)
        else:
            hyper = OptimizerHyper(learning_rate=1e-5, beta2=0.99)
    if learning_rate is not None:
        hyper = replace(hyper, learning_rate=learning_rate)
    return OptimizerState(
        kind=kind,
        step_count=0,
        first_moment=np.zeros(n_params, dtype=np.float64),
        second_moment=np.zeros(n_params, dtype=np.float64),
        hyper=hyper,
        param_layout=param_layout,
    )


def _check_finite(grads: np.ndarray, state: OptimizerState) -> None:
    bad = ~np.isfinite(grads)
    if not bad.any():
        return
    index = int(np.argmax(bad))
    where = f"parameter index {index}"
    if state.param_layout:
        for label, start, stop in state.param_layout:
            if start <= index < stop:
                where = f"{label} (flat index {index})"
                break
    raise NonFiniteGradient(where)


def _prepare(params: np.ndarray, grads: np.ndarray, state: OptimizerState, kind: str):
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if state.kind != kind:
        raise ConfigError(f"state was initialized for {state.kind!r}, not {kind!r}")
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ConfigError(
            "parameter/gradient/state length mismatch: "
            f"{params.shape} vs {grads.shape} vs {state.first_moment.shape}")
    _check_finite(grads, state)
    return params, grads


def adam_step(
    params: np.ndarray, grads: np.ndarray, state: OptimizerState
) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam update.  Returns (new_params, new_state)."""
    params, grads = _prepare(params, grads, state, "adam")
    hp = state.hyper
    t = state.step_count + 1
    m = hp.beta1 * state.first_moment + (1.0 - hp.beta1) * grads
    v = hp.beta2 * state.second_moment + (1.0 - hp.beta2) * grads * grads
    m_hat = m / (1.0 - hp.beta1 ** t)
    v_hat = v / (1.0 - hp.beta2 ** t)
    update = m_hat / (np.sqrt(v_hat) + hp.epsilon)
    if hp.weight_decay:
        update = update + hp.weight_decay * params
    new_params = params - hp.learning_rate * update
    new_state = OptimizerState(
        kind="adam",
        step_count=t,
        first_moment=m,
        second_moment=v,
        hyper=hp,
        param_layout=state.param_layout,
    )
    return new_params, new_state


def rmsprop_step(
    params: np.ndarray, grads: np.ndarray, state: OptimizerState
) -> tuple[np.ndarray, OptimizerState]:
    """One rmsprop update with ``beta2`` as the squared-gradient decay.

    ``first_moment`` stays zero; it is kept so the state shape matches
    adam and checkpoints can store either interchangeably.
    """
    params, grads = _prepare(params, grads, state, "rmsprop")
    hp = state.hyper
    v = hp.beta2 * state.second_moment + (1.0 - hp.beta2) * grads * grads
    update = grads / (np.sqrt(v) + hp.epsilon)
    if hp.weight_decay:
        update = update + hp.weight_decay * params
    new_params = params - hp.learning_rate * update
    new_state = OptimizerState(
        kind="rmsprop",
        step_count=state.step_count + 1,
        first_moment=state.first_moment,
        second_moment=v,
        hyper=hp,
        param_layout=state.param_layout,
    )
    return new_params, new_state
