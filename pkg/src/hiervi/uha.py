"""Uncorrected Hamiltonian annealing as a differentiable bounding operator.

A per-group UHA estimate samples z1 ~ q_i and rho1 ~ N(0, I), then alternates
partial momentum refreshes with uncorrected leapfrog transitions through
geometric bridging densities pi_k = q^(1-beta_k) p^(beta_k), and returns

    log p(zK, y_i | theta) - log q_i(z1)
        + sum_k [ log m(rho_{k+1}) - log m(rho~_k) ]

with m the standard normal momentum density.  With K = 1 (no transitions) or
step size 0 this collapses exactly to the single-sample ELBO.

``ais_evaluate`` runs the Metropolis-corrected Hamiltonian AIS analogue on
plain floats; it is an evaluation oracle, not a training objective.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .tape import LOG_2PI
from .family import GaussianParams, grad_log_density, log_density, sample_reparam
from .model import ModelInstance, grad_log_group_joint_z, log_group_joint


@dataclass(frozen=True)
class AnnealingSchedule:
    """Strictly increasing inverse temperatures in (0, 1), one per bridge."""

    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        for b in betas:
            if not 0.0 < b < 1.0:
                raise ValueError(f"beta {b} outside the open interval (0, 1)")
        for lo, hi in zip(betas, betas[1:]):
            if lo >= hi:
                raise ValueError("betas must be strictly increasing")
        object.__setattr__(self, "betas", betas)

    @classmethod
    def linear(cls, num_dists: int) -> "AnnealingSchedule":
        """beta_k = k / K for k = 1 .. K-1."""
        return cls(tuple(k / num_dists for k in range(1, num_dists)))


@dataclass
class UhaParams:
    """Optimizable annealing parameters, shared across groups.

    ``log_step_size`` is per position dimension; ``raw_damping`` maps to the
    refresh coefficient through a sigmoid so it can be optimized
    unconstrained.
    """

    num_dists: int
    log_step_size: np.ndarray
    raw_damping: float
    leapfrog_steps: int = 1
    schedule: AnnealingSchedule = None

    def __post_init__(self):
        if self.num_dists < 1:
            raise ValueError("need at least one distribution")
        if self.leapfrog_steps < 1:
            raise ValueError("need at least one leapfrog step")
        self.log_step_size = np.asarray(self.log_step_size, dtype=float)
        if self.schedule is None:
            self.schedule = AnnealingSchedule.linear(self.num_dists)
        if len(self.schedule.betas) != self.num_dists - 1:
            raise ValueError("schedule length must be num_dists - 1")

    @property
    def damping(self) -> float:
        return tp.sigmoid(self.raw_damping)


def default_uha_params(d_z: int, num_dists: int, step_size: float = 0.1,
                       damping: float = 0.8, leapfrog_steps: int = 1) -> UhaParams:
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must be in (0, 1)")
    raw = math.log(damping / (1.0 - damping))
    return UhaParams(num_dists=num_dists,
                     log_step_size=np.full(d_z, math.log(step_size)),
                     raw_damping=raw,
                     leapfrog_steps=leapfrog_steps)


def bridging_logdensity(k: int, z, q_params: GaussianParams,
                        model: ModelInstance, theta, group_index: int,
                        schedule: AnnealingSchedule):
    """(1 - beta_k) log q_i(z) + beta_k log p(z, y_i | theta)."""
    if not 1 <= k <= len(schedule.betas):
        raise ValueError(f"bridging level {k} out of range")
    b = schedule.betas[k - 1]
    return ((1.0 - b) * log_density(q_params, z)
            + b * log_group_joint(model, theta, group_index, z))


def bridging_grad(k: int, z, q_params: GaussianParams, model: ModelInstance,
                  theta, group_index: int, schedule: AnnealingSchedule):
    if not 1 <= k <= len(schedule.betas):
        raise ValueError(f"bridging level {k} out of range")
    b = schedule.betas[k - 1]
    gq = grad_log_density(q_params, z)
    gp = grad_log_group_joint_z(model, theta, group_index, z)
    return [(1.0 - b) * a + b * c for a, c in zip(gq, gp)]


def leapfrog(z, rho, eps, num_steps, grad_fn):
    """Standard leapfrog: half kick, drift, half kick, ``num_steps`` times.

    ``eps`` is per-dimension; everything stays on the tape when the inputs
    are Vars, so the map is differentiable end to end.
    """
    z = list(z)
    rho = list(rho)
    for _ in range(num_steps):
        g = grad_fn(z)
        rho = [r + 0.5 * e * gi for r, e, gi in zip(rho, eps, g)]
        z = [zi + e * r for zi, e, r in zip(z, eps, rho)]
        g = grad_fn(z)
        rho = [r + 0.5 * e * gi for r, e, gi in zip(rho, eps, g)]
    return z, rho


def momentum_refresh(rho, eta_damp, xi):
    """rho~ = eta * rho + sqrt(1 - eta^2) * xi; leaves N(0, I) invariant."""
    if len(rho) != len(xi):
        raise ValueError("momentum and noise dimensions differ")
    w = tp.sqrt(1.0 - eta_damp * eta_damp)
    return [eta_damp * r + w * x for r, x in zip(rho, xi)]


def _momentum_logpdf(rho):
    return tp.vsum([-0.5 * (LOG_2PI + r * r) for r in rho])


def uha_operator(q_params: GaussianParams, model: ModelInstance, theta,
                 group_index: int, eps, eta_damp, num_dists: int,
                 leapfrog_steps: int, schedule: AnnealingSchedule,
                 z_noise, rho_noise, refresh_noises):
    """Single-sample UHA estimate of a lower bound on log p(y_i | theta).

    ``eps`` and ``eta_damp`` may be Vars (they are optimized jointly with the
    variational parameters).  ``refresh_noises`` must hold num_dists - 1
    standard-normal vectors.
    """
    z = sample_reparam(q_params, z_noise)
    log_q1 = log_density(q_params, z)
    if num_dists == 1:
        return log_group_joint(model, theta, group_index, z) - log_q1
    if len(refresh_noises) != num_dists - 1:
        raise ValueError("need num_dists - 1 refresh noise vectors")
    rho = [float(r) for r in rho_noise]
    ratio_terms = []
    for k in range(1, num_dists):
        rho_t = momentum_refresh(rho, eta_damp, refresh_noises[k - 1])
        log_m_before = _momentum_logpdf(rho_t)
        z, rho = leapfrog(
            z, rho_t, eps, leapfrog_steps,
            lambda zz: bridging_grad(k, zz, q_params, model, theta,
                                     group_index, schedule))
        ratio_terms.append(_momentum_logpdf(rho) - log_m_before)
    return (log_group_joint(model, theta, group_index, z) - log_q1
            + tp.vsum(ratio_terms))


def ais_evaluate(q_params: GaussianParams, model: ModelInstance,
                 theta, group_index: int, num_dists: int,
                 step_size, leapfrog_steps: int,
                 rng: np.random.Generator,
                 schedule: AnnealingSchedule = None,
                 return_accept_rate: bool = False):
    """Metropolis-corrected Hamiltonian AIS estimate of log p(y_i | theta).

    Float-only single chain: z1 ~ q_i, then for each bridge a full momentum
    refresh, a leapfrog proposal targeting pi_k, and an accept/reject step.
    The weight accumulates log pi_k(z) - log pi_{k-1}(z) at the current
    point before each transition, which telescopes to log p(y_i | theta)
    exactly when q_i equals the conditional posterior.
    """
    if schedule is None:
        schedule = AnnealingSchedule.linear(num_dists)
    if len(schedule.betas) != num_dists - 1:
        raise ValueError("schedule length must be num_dists - 1")
    theta = [float(t) for t in theta]
    q_vals = GaussianParams(mean=[float(m) for m in q_params.mean],
                            log_scale=[float(s) for s in q_params.log_scale])
    eps = list(np.broadcast_to(np.asarray(step_size, dtype=float), (model.d_z,)))
    d = model.d_z

    def level_logdensity(level, zz):
        # level 0 is q, level num_dists is the target joint
        if level == 0:
            return log_density(q_vals, zz)
        if level == num_dists:
            return log_group_joint(model, theta, group_index, zz)
        return bridging_logdensity(level, zz, q_vals, model, theta,
                                   group_index, schedule)

    def level_grad(level, zz):
        return bridging_grad(level, zz, q_vals, model, theta, group_index,
                             schedule)

    z = sample_reparam(q_vals, list(rng.standard_normal(d)))
    weight = 0.0
    accepted = 0
    for k in range(1, num_dists + 1):
        weight += level_logdensity(k, z) - level_logdensity(k - 1, z)
        if k == num_dists:
            break
        rho = list(rng.standard_normal(d))
        z_new, rho_new = leapfrog(z, rho, eps, leapfrog_steps,
                                  lambda zz: level_grad(k, zz))
        h_old = level_logdensity(k, z) - 0.5 * sum(r * r for r in rho)
        h_new = level_logdensity(k, z_new) - 0.5 * sum(r * r for r in rho_new)
        if math.log(rng.uniform()) < h_new - h_old:
            z = z_new
            accepted += 1
    if return_accept_rate:
        rate = accepted / max(num_dists - 1, 1)
        return weight, rate
    return weight
