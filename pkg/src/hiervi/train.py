"""Stochastic optimization of any bound.

Two-phase protocol: a plain-ELBO pretraining phase produces the
initialization, then the requested bound is maximized with Adam.  Everything
is a deterministic function of (model, spec, config, seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (GLOBAL, UHA, VI, BoundSpec, NoiseStreams, estimate)
from .family import (VariationalState, flat_to_state, init_state,
                     num_parameters, state_to_flat)
from .model import ModelInstance
from .uha import default_uha_params


@dataclass
class AdamState:
    """Adam moments for gradient ascent."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    t: int = 0
    eta: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def for_dim(cls, dim: int, eta: float = 0.001) -> "AdamState":
        return cls(first_moment=np.zeros(dim), second_moment=np.zeros(dim),
                   eta=eta)


def adam_step(adam: AdamState, params: np.ndarray,
              grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam ascent step; returns the updated parameters."""
    if params.shape != grad.shape or params.shape != adam.first_moment.shape:
        raise ValueError("parameter/gradient/moment lengths differ")
    adam.t += 1
    adam.first_moment = (adam.beta1 * adam.first_moment
                         + (1.0 - adam.beta1) * grad)
    adam.second_moment = (adam.beta2 * adam.second_moment
                          + (1.0 - adam.beta2) * grad * grad)
    m_hat = adam.first_moment / (1.0 - adam.beta1 ** adam.t)
    v_hat = adam.second_moment / (1.0 - adam.beta2 ** adam.t)
    return params + adam.eta * m_hat / (np.sqrt(v_hat) + adam.eps_hat)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 50000
    minibatch: int = 10
    pretrain_steps: int = 5000
    eval_samples: int = 1000
    log_every: int = 100
    step_size: float = 0.001
    seeds: tuple = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be positive")


def _effective_minibatch(config_minibatch, spec: BoundSpec,
                         model: ModelInstance):
    if spec.scope == GLOBAL or config_minibatch is None:
        return None
    m = min(config_minibatch, model.num_groups)
    return None if m == model.num_groups else m


def _optimize(state: VariationalState, model: ModelInstance, spec: BoundSpec,
              steps: int, step_size: float, log_every: int,
              streams: NoiseStreams):
    flat = state_to_flat(state)
    adam = AdamState.for_dim(flat.shape[0], eta=step_size)
    trace = []
    for step in range(steps):
        est = estimate(state, model, spec, streams, want_grad=True)
        if step % log_every == 0 or step == steps - 1:
            trace.append((step, est.value))
        flat = adam_step(adam, flat, est.gradient)
        state = flat_to_state(flat, state)
    return state, trace


def train(model: ModelInstance, spec: BoundSpec, config: TrainConfig,
          seed: int, initial_state: VariationalState = None):
    """Run the two-phase protocol for one seed.

    Phase 1 maximizes the plain-VI objective (skipped when an
    ``initial_state`` is supplied, e.g. a shared ELBO maximizer); phase 2
    maximizes the requested bound.  Returns (state, trace) where trace holds
    (step, stochastic estimate) rows from phase 2.
    """
    root = np.random.SeedSequence(seed)
    pre_seed, main_seed = root.spawn(2)

    if initial_state is None:
        state = init_state(model)
        if config.pretrain_steps > 0:
            pre_spec = BoundSpec(operator=VI, scope="local",
                                 minibatch=_effective_minibatch(
                                     config.minibatch,
                                     BoundSpec(operator=VI), model))
            state, _ = _optimize(state, model, pre_spec,
                                 config.pretrain_steps, config.step_size,
                                 config.log_every, NoiseStreams(pre_seed))
    else:
        state = initial_state

    if spec.operator == UHA and state.uha is None:
        state = VariationalState(
            global_q=state.global_q, locals_q=state.locals_q,
            uha=default_uha_params(model.d_z, spec.num_samples,
                                   step_size=spec.init_step_size,
                                   damping=spec.init_damping,
                                   leapfrog_steps=spec.leapfrog_steps))
    elif spec.operator != UHA and state.uha is not None:
        state = VariationalState(global_q=state.global_q,
                                 locals_q=state.locals_q, uha=None)

    run_spec = replace(spec, minibatch=_effective_minibatch(
        config.minibatch, spec, model))
    state, trace = _optimize(state, model, run_spec, config.steps,
                             config.step_size, config.log_every,
                             NoiseStreams(main_seed))
    return state, trace


def pretrain_elbo(model: ModelInstance, config: TrainConfig,
                  seed: int) -> VariationalState:
    """Just the phase-1 ELBO maximization, for sharing across methods."""
    root = np.random.SeedSequence(seed)
    pre_seed, _ = root.spawn(2)
    state = init_state(model)
    if config.pretrain_steps > 0:
        pre_spec = BoundSpec(operator=VI, scope="local",
                             minibatch=_effective_minibatch(
                                 config.minibatch, BoundSpec(operator=VI),
                                 model))
        state, _ = _optimize(state, model, pre_spec, config.pretrain_steps,
                             config.step_size, config.log_every,
                             NoiseStreams(pre_seed))
    return state


def evaluate_final(state: VariationalState, model: ModelInstance,
                   spec: BoundSpec, eval_samples: int, seed: int):
    """Mean and standard error of ``eval_samples`` independent full-batch
    estimates of the bound (no subsampling, values only)."""
    if eval_samples < 1:
        raise ValueError("eval_samples must be at least 1")
    eval_spec = replace(spec, minibatch=None)
    streams = NoiseStreams(np.random.SeedSequence((int(seed), 0x5EED)))
    vals = np.empty(eval_samples)
    for s in range(eval_samples):
        vals[s] = estimate(state, model, eval_spec, streams,
                           want_grad=False).value
    mean = float(vals.mean())
    if eval_samples == 1:
        return mean, 0.0
    return mean, float(vals.std(ddof=1) / math.sqrt(eval_samples))
