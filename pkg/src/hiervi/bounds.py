"""The bound algebra.

A bounding operator maps (q, p) to a quantity whose expectation is at most
log p(y).  This module provides the per-group VI, importance-weighted and
UHA operators, composes them into the locally-enhanced bound

    E_{q(theta)}[ log p(theta)/q(theta)
                  + (M/|I|) sum_{i in I} L(q(z_i) || p(z_i, y_i | theta)) ]

with unbiased uniform-without-replacement subsampling of the groups, and the
full-model (global) importance-weighted objective, which does not admit
subsampling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .family import (GaussianParams, VariationalState, log_density,
                     num_parameters, sample_reparam)
from .model import (ModelInstance, analytic_log_marginal, log_group_joint,
                    log_prior_global, oracle_global_posterior,
                    oracle_group_log_marginal, kl_diag_gaussian_to_full)
from .uha import UhaParams, uha_operator

VI = "vi"
IW = "iw"
UHA = "uha"
LOCAL = "local"
GLOBAL = "global"


@dataclass(frozen=True)
class BoundSpec:
    """Which bounding operator to use, at which scope.

    ``num_samples`` is the K of IW (samples) or UHA (annealing
    distributions); it must be 1 for plain VI.  ``minibatch`` requests
    subsampled group sums and is only legal at local scope.
    """

    operator: str
    scope: str = LOCAL
    num_samples: int = 1
    minibatch: int = None
    leapfrog_steps: int = 1
    init_step_size: float = 0.1
    init_damping: float = 0.8

    def __post_init__(self):
        if self.operator not in (VI, IW, UHA):
            raise ValueError(f"unknown operator {self.operator!r}")
        if self.scope not in (LOCAL, GLOBAL):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be at least 1")
        if self.operator == VI and self.num_samples != 1:
            raise ValueError("plain VI has no sample count")
        if self.scope == GLOBAL and self.operator == UHA:
            raise ValueError("global UHA is not implemented")
        if self.minibatch is not None:
            if self.scope == GLOBAL:
                raise ValueError(
                    "global importance weighting is incompatible with subsampling")
            if self.minibatch < 1:
                raise ValueError("minibatch must be positive")

    def label(self) -> str:
        if self.operator == VI:
            return "vi"
        return f"{self.operator}-{self.scope}-K{self.num_samples}"


@dataclass
class BoundEstimate:
    """One stochastic estimate: value, parameter gradient (when requested),
    the sampled group subset, and per-term diagnostics."""

    value: float
    gradient: np.ndarray = None
    minibatch_indices: list = None
    global_term: float = None
    group_terms: list = None


class NoiseStreams:
    """Named independent RNG streams spawned from one root seed.

    Keeping theta-noise, local-noise, momentum-noise and minibatch draws on
    separate streams lets bound variants share the draws the reduction
    identities need (e.g. UHA with step size 0 consumes the same z-noise as
    plain VI) while remaining a deterministic function of the seed.
    """

    def __init__(self, seed) -> None:
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        kids = seed.spawn(4)
        self.theta = np.random.default_rng(kids[0])
        self.local = np.random.default_rng(kids[1])
        self.momentum = np.random.default_rng(kids[2])
        self.minibatch = np.random.default_rng(kids[3])


def draw_minibatch(rng: np.random.Generator, num_groups: int, size: int) -> list:
    """Uniform subset of group indices without replacement, in sorted order."""
    if size > num_groups:
        raise ValueError(
            f"minibatch size {size} exceeds group count {num_groups}")
    if size == num_groups:
        return list(range(num_groups))
    return sorted(int(i) for i in rng.choice(num_groups, size=size,
                                             replace=False))


# ---------------------------------------------------------------------------
# Per-group operators.
# ---------------------------------------------------------------------------

def vi_local_operator(q_i: GaussianParams, model: ModelInstance, theta,
                      group_index: int, noise):
    """Single-sample ELBO term: log p(z, y_i | theta) - log q_i(z)."""
    z = sample_reparam(q_i, noise)
    return (log_group_joint(model, theta, group_index, z)
            - log_density(q_i, z))


def iw_local_operator(q_i: GaussianParams, model: ModelInstance, theta,
                      group_index: int, noises):
    """K-sample importance-weighted term: logmeanexp of the log weights."""
    ws = []
    for noise in noises:
        z = sample_reparam(q_i, noise)
        ws.append(log_group_joint(model, theta, group_index, z)
                  - log_density(q_i, z))
    return tp.logsumexp(ws) - math.log(len(ws))


def _lifted_uha(uha_params: UhaParams, tape):
    if tape is None:
        eps = [math.exp(v) for v in uha_params.log_step_size]
        eta = tp.sigmoid(float(uha_params.raw_damping))
    else:
        # create every leaf before any derived node so that leaf handle
        # stays equal to flat parameter index
        ls_leaves = [tape.leaf(v) for v in uha_params.log_step_size]
        damp_leaf = tape.leaf(uha_params.raw_damping)
        eps = [tp.exp(v) for v in ls_leaves]
        eta = tp.sigmoid(damp_leaf)
    return eps, eta


def _lift_state(state: VariationalState, spec_needs_uha: bool, tape):
    """Turn a numpy-backed state into tape leaves (or plain floats).

    Leaves are created in flat-layout order on a fresh tape, so leaf handle
    equals flat parameter index and gradient assembly is a plain slice.
    """

    def lift_vec(arr):
        if tape is None:
            return [float(v) for v in arr]
        return [tape.leaf(v) for v in arr]

    g = GaussianParams(mean=lift_vec(state.global_q.mean),
                       log_scale=lift_vec(state.global_q.log_scale))
    locals_q = [GaussianParams(mean=lift_vec(q.mean),
                               log_scale=lift_vec(q.log_scale))
                for q in state.locals_q]
    eps = eta = None
    if state.uha is not None:
        eps, eta = _lifted_uha(state.uha, tape)
    elif spec_needs_uha:
        raise ValueError("UHA bound requested but the state carries no "
                         "annealing parameters")
    return g, locals_q, eps, eta


def _group_operator(spec: BoundSpec, state: VariationalState, q_lifted,
                    model, theta, i, streams, eps, eta):
    d_z = model.d_z
    if spec.operator == VI:
        noise = list(streams.local.standard_normal(d_z))
        return vi_local_operator(q_lifted, model, theta, i, noise)
    if spec.operator == IW:
        noises = [list(streams.local.standard_normal(d_z))
                  for _ in range(spec.num_samples)]
        return iw_local_operator(q_lifted, model, theta, i, noises)
    u = state.uha
    z_noise = list(streams.local.standard_normal(d_z))
    rho_noise = list(streams.momentum.standard_normal(d_z))
    refresh = [list(streams.momentum.standard_normal(d_z))
               for _ in range(u.num_dists - 1)]
    return uha_operator(q_lifted, model, theta, i, eps, eta, u.num_dists,
                        u.leapfrog_steps, u.schedule, z_noise, rho_noise,
                        refresh)


def local_bound_estimate(state: VariationalState, model: ModelInstance,
                         spec: BoundSpec, streams: NoiseStreams,
                         want_grad: bool = True) -> BoundEstimate:
    """One stochastic estimate of the locally-enhanced bound.

    Draws a single theta ~ q(theta) by reparameterization, applies the
    per-group operator to every group in the (possibly subsampled) index set
    I and scales the sum by M/|I|.
    """
    if spec.scope != LOCAL:
        raise ValueError("local_bound_estimate requires a local-scope spec")
    M = model.num_groups
    if spec.minibatch is not None and spec.minibatch > M:
        raise ValueError(
            f"minibatch size {spec.minibatch} exceeds group count {M}")
    tape = tp.Tape() if want_grad else None
    g_q, locals_q, eps, eta = _lift_state(state, spec.operator == UHA, tape)
    n_params = num_parameters(state)

    theta_noise = list(streams.theta.standard_normal(model.d_theta))
    theta = sample_reparam(g_q, theta_noise)
    glob = log_prior_global(model, theta) - log_density(g_q, theta)

    if spec.minibatch is not None:
        indices = draw_minibatch(streams.minibatch, M, spec.minibatch)
    else:
        indices = list(range(M))
    terms = [_group_operator(spec, state, locals_q[i], model, theta, i,
                             streams, eps, eta)
             for i in indices]
    scale = M / len(indices)
    total = glob + scale * tp.vsum(terms)

    grad = None
    if want_grad:
        adj = tape.backward(total)
        grad = np.array(adj[:n_params], dtype=float)
    return BoundEstimate(value=tp.value_of(total), gradient=grad,
                         minibatch_indices=indices,
                         global_term=tp.value_of(glob),
                         group_terms=[tp.value_of(t) for t in terms])


def global_iw_estimate(state: VariationalState, model: ModelInstance,
                       num_samples: int, streams: NoiseStreams,
                       want_grad: bool = True,
                       minibatch: int = None) -> BoundEstimate:
    """One estimate of the full-model importance-weighted bound.

    K joint copies of (theta, z_1..z_M) are drawn from q; the estimate is
    the logmeanexp of the K full-model log weights.  Subsampling requests
    are rejected: there is no unbiased subsampled version of this objective.
    """
    if minibatch is not None:
        raise ValueError(
            "global importance weighting is incompatible with subsampling")
    tape = tp.Tape() if want_grad else None
    g_q, locals_q, _, _ = _lift_state(state, False, tape)
    n_params = num_parameters(state)
    M = model.num_groups

    ws = []
    for _ in range(num_samples):
        theta_noise = list(streams.theta.standard_normal(model.d_theta))
        theta = sample_reparam(g_q, theta_noise)
        glob = log_prior_global(model, theta) - log_density(g_q, theta)
        terms = [vi_local_operator(locals_q[i], model, theta, i,
                                   list(streams.local.standard_normal(model.d_z)))
                 for i in range(M)]
        ws.append(glob + 1.0 * tp.vsum(terms))
    total = tp.logsumexp(ws) - math.log(num_samples)

    grad = None
    if want_grad:
        adj = tape.backward(total)
        grad = np.array(adj[:n_params], dtype=float)
    return BoundEstimate(value=tp.value_of(total), gradient=grad)


def estimate(state: VariationalState, model: ModelInstance, spec: BoundSpec,
             streams: NoiseStreams, want_grad: bool = True) -> BoundEstimate:
    """Dispatch on the spec's scope."""
    if spec.scope == GLOBAL:
        return global_iw_estimate(state, model, spec.num_samples, streams,
                                  want_grad=want_grad, minibatch=spec.minibatch)
    return local_bound_estimate(state, model, spec, streams,
                                want_grad=want_grad)


def gap_decomposition(state: VariationalState, model: ModelInstance,
                      spec: BoundSpec, streams: NoiseStreams,
                      num_samples: int = 1000, operator_fn=None):
    """Monte Carlo estimate of the two gap terms of the locally-enhanced
    bound on the conjugate oracle.

    Returns (kl_term, per-group gap means, per-group gap standard errors).
    kl_term = KL(q(theta) || p(theta | y)) is analytic; each local gap is
    E_{q(theta)}[ log p(y_i | theta) - L(q(z_i) || p(z_i, y_i | theta)) ],
    estimated with ``num_samples`` fresh draws.  ``operator_fn(theta, i)``
    substitutes an arbitrary per-group operator for the one named by the
    spec (useful for checking the decomposition against a perfect
    operator).
    """
    post_mean, post_cov = oracle_global_posterior(model)
    kl_term = kl_diag_gaussian_to_full(state.global_q.mean,
                                       state.global_q.log_scale,
                                       post_mean, post_cov)
    M = model.num_groups
    samples = np.empty((num_samples, M))
    g_q, locals_q, eps, eta = _lift_state(state, spec.operator == UHA, None)
    for s in range(num_samples):
        theta_noise = list(streams.theta.standard_normal(model.d_theta))
        theta = sample_reparam(g_q, theta_noise)
        theta_np = np.array(theta, dtype=float)
        for i in range(M):
            if operator_fn is not None:
                op = operator_fn(theta_np, i)
            else:
                op = _group_operator(spec, state, locals_q[i], model, theta,
                                     i, streams, eps, eta)
            samples[s, i] = (oracle_group_log_marginal(model, theta_np, i)
                             - tp.value_of(op))
    gaps = samples.mean(axis=0)
    ses = samples.std(axis=0, ddof=1) / math.sqrt(num_samples)
    return kl_term, gaps, ses
