"""Factorized-Gaussian variational families.

q(theta, z) = q(theta) prod_i q(z_i), every factor a diagonal Gaussian
parameterized by mean and log-scale (log standard deviation).  The stored
:class:`VariationalState` holds numpy arrays; estimators lift it onto a tape
(or to plain floats) before sampling.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .tape import LOG_2PI
from .model import ModelInstance


@dataclass
class GaussianParams:
    """Mean / log-scale pair.  Entries are numpy arrays in a stored state and
    lists of tape Vars (or floats) once lifted."""

    mean: object
    log_scale: object

    def __post_init__(self):
        if len(self.mean) != len(self.log_scale):
            raise ValueError("mean and log_scale must have equal length")

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass
class VariationalState:
    """All optimized parameters: q(theta), every q(z_i), and (optionally)
    the annealing parameters shared across groups."""

    global_q: GaussianParams
    locals_q: list
    uha: object = None  # UhaParams, set when the trained bound is UHA

    @property
    def num_groups(self) -> int:
        return len(self.locals_q)


def sample_reparam(params: GaussianParams, noise):
    """mean + exp(log_scale) * noise, elementwise; differentiable in params."""
    if len(noise) != params.dim:
        raise ValueError(
            f"noise has length {len(noise)}, expected {params.dim}")
    return [m + tp.exp(ls) * e
            for m, ls, e in zip(params.mean, params.log_scale, noise)]


def log_density(params: GaussianParams, point):
    """Exact diagonal-Gaussian log density at ``point``."""
    if len(point) != params.dim:
        raise ValueError(
            f"point has length {len(point)}, expected {params.dim}")
    terms = []
    for m, ls, x in zip(params.mean, params.log_scale, point):
        d = (x - m) * tp.exp(-ls)
        terms.append(-ls - 0.5 * LOG_2PI - 0.5 * (d * d))
    return tp.vsum(terms)


def grad_log_density(params: GaussianParams, point):
    """Gradient of log q with respect to the point: -(x - m) / scale^2."""
    return [-((x - m) * tp.exp(-2.0 * ls))
            for m, ls, x in zip(params.mean, params.log_scale, point)]


def init_state(model: ModelInstance, mode: str = "std_normal") -> VariationalState:
    """Fresh state: mean 0, log-scale 0 everywhere.

    ``prior_matched`` copies prior means/scales where defined; every prior in
    the implemented models is standard normal, so both modes coincide.
    """
    if mode not in ("std_normal", "prior_matched"):
        raise ValueError(f"unknown init mode {mode!r}")
    g = GaussianParams(mean=np.zeros(model.d_theta),
                       log_scale=np.zeros(model.d_theta))
    locals_q = [GaussianParams(mean=np.zeros(model.d_z),
                               log_scale=np.zeros(model.d_z))
                for _ in range(model.num_groups)]
    return VariationalState(global_q=g, locals_q=locals_q)


# ---------------------------------------------------------------------------
# Flat parameter vector <-> state (layout used by the optimizer and by
# gradient assembly: global mean, global log-scale, then per group mean and
# log-scale, then UHA log-step-size and raw damping when present).
# ---------------------------------------------------------------------------

def num_parameters(state: VariationalState) -> int:
    n = 2 * state.global_q.dim
    for q in state.locals_q:
        n += 2 * q.dim
    if state.uha is not None:
        n += len(state.uha.log_step_size) + 1
    return n


def state_to_flat(state: VariationalState) -> np.ndarray:
    parts = [state.global_q.mean, state.global_q.log_scale]
    for q in state.locals_q:
        parts.append(q.mean)
        parts.append(q.log_scale)
    if state.uha is not None:
        parts.append(state.uha.log_step_size)
        parts.append(np.array([state.uha.raw_damping]))
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def flat_to_state(flat: np.ndarray, template: VariationalState) -> VariationalState:
    flat = np.asarray(flat, dtype=float)
    if flat.shape[0] != num_parameters(template):
        raise ValueError("flat vector does not match state layout")
    pos = 0

    def take(n):
        nonlocal pos
        out = flat[pos:pos + n].copy()
        pos += n
        return out

    dg = template.global_q.dim
    g = GaussianParams(mean=take(dg), log_scale=take(dg))
    locals_q = []
    for q in template.locals_q:
        locals_q.append(GaussianParams(mean=take(q.dim), log_scale=take(q.dim)))
    uha = None
    if template.uha is not None:
        from .uha import UhaParams
        d = len(template.uha.log_step_size)
        uha = UhaParams(num_dists=template.uha.num_dists,
                        log_step_size=take(d),
                        raw_damping=float(take(1)[0]),
                        leapfrog_steps=template.uha.leapfrog_steps,
                        schedule=template.uha.schedule)
    return VariationalState(global_q=g, locals_q=locals_q, uha=uha)


# ---------------------------------------------------------------------------
# JSON persistence.
# ---------------------------------------------------------------------------

def state_to_dict(state: VariationalState) -> dict:
    doc = {
        "global": {"mean": list(map(float, state.global_q.mean)),
                   "log_scale": list(map(float, state.global_q.log_scale))},
        "locals": [{"mean": list(map(float, q.mean)),
                    "log_scale": list(map(float, q.log_scale))}
                   for q in state.locals_q],
        "uha": None,
    }
    if state.uha is not None:
        doc["uha"] = {
            "num_dists": state.uha.num_dists,
            "log_step_size": list(map(float, state.uha.log_step_size)),
            "raw_damping": float(state.uha.raw_damping),
            "leapfrog_steps": state.uha.leapfrog_steps,
            "betas": list(map(float, state.uha.schedule.betas)),
        }
    return doc


def state_from_dict(doc: dict) -> VariationalState:
    g = GaussianParams(mean=np.array(doc["global"]["mean"], dtype=float),
                       log_scale=np.array(doc["global"]["log_scale"], dtype=float))
    locals_q = [GaussianParams(mean=np.array(e["mean"], dtype=float),
                               log_scale=np.array(e["log_scale"], dtype=float))
                for e in doc["locals"]]
    uha = None
    if doc.get("uha") is not None:
        from .uha import AnnealingSchedule, UhaParams
        u = doc["uha"]
        uha = UhaParams(num_dists=int(u["num_dists"]),
                        log_step_size=np.array(u["log_step_size"], dtype=float),
                        raw_damping=float(u["raw_damping"]),
                        leapfrog_steps=int(u["leapfrog_steps"]),
                        schedule=AnnealingSchedule(tuple(u["betas"])))
    return VariationalState(global_q=g, locals_q=locals_q, uha=uha)


def save_state(state: VariationalState, path) -> None:
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_state(path) -> VariationalState:
    with open(path) as fh:
        return state_from_dict(json.load(fh))
