"""Two-level hierarchical models.

A model is p(theta) prod_i p(z_i, y_i | theta) with a global latent theta,
per-group local latents z_i and observed groups (features, outcomes).

Three concrete instances:

* ``synthetic_linear``   -- Gaussian linear regression per group; theta packs
  (mu_z, psi_z, psi_y) where the psi's are log-variances.
* ``movielens_logistic`` -- Bernoulli(sigmoid(z^T x)) likelihood; theta packs
  (mu_z, psi_z), each 18-dimensional.
* ``conjugate_oracle``   -- fully Gaussian with all variances fixed to 1 and
  theta = mu_z only, so log p(y) and all conditionals are available in closed
  form.  Exists to give tests an exact target.

All log densities accept theta/z entries that are either tape Vars or floats.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tape as tp
from .tape import LOG_2PI

SYNTHETIC_LINEAR = "synthetic_linear"
MOVIELENS_LOGISTIC = "movielens_logistic"
CONJUGATE_ORACLE = "conjugate_oracle"


@dataclass(frozen=True)
class GroupData:
    """One group's covariates (N_i x d_x) and outcomes (length N_i)."""

    features: np.ndarray
    outcomes: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        o = np.asarray(self.outcomes, dtype=float)
        if f.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if o.ndim != 1:
            raise ValueError("outcomes must be a 1-D array")
        if f.shape[0] != o.shape[0]:
            raise ValueError(
                f"feature rows ({f.shape[0]}) must match outcomes ({o.shape[0]})")
        if f.shape[0] < 1:
            raise ValueError("a group needs at least one observation")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "outcomes", o)

    @property
    def size(self) -> int:
        return self.outcomes.shape[0]

    # Plain-float views: the scalar estimators run much faster on Python
    # floats than on numpy scalars.
    @cached_property
    def feature_rows(self) -> list:
        return [list(map(float, row)) for row in self.features]

    @cached_property
    def outcome_list(self) -> list:
        return [float(v) for v in self.outcomes]


@dataclass(frozen=True)
class HierarchicalDataset:
    """Observed groups plus latent dimensions."""

    groups: tuple
    d_z: int
    d_theta: int

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if len(self.groups) < 1:
            raise ValueError("need at least one group")
        if self.d_z < 1 or self.d_theta < 1:
            raise ValueError("latent dimensions must be positive")

    @property
    def num_groups(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class ModelInstance:
    kind: str
    dataset: HierarchicalDataset
    fixed_params: dict = field(default_factory=dict)

    @property
    def d_z(self) -> int:
        return self.dataset.d_z

    @property
    def d_theta(self) -> int:
        return self.dataset.d_theta

    @property
    def num_groups(self) -> int:
        return self.dataset.num_groups


def _check_feature_width(groups, d_z):
    for g in groups:
        if g.features.shape[1] != d_z:
            raise ValueError(
                f"feature width {g.features.shape[1]} does not match d_z={d_z}")


def synthetic_linear(groups, d_z: int) -> ModelInstance:
    """Gaussian model: theta = (mu_z, psi_z, psi_y), d_theta = 2*d_z + 1."""
    _check_feature_width(groups, d_z)
    ds = HierarchicalDataset(groups=tuple(groups), d_z=d_z, d_theta=2 * d_z + 1)
    return ModelInstance(kind=SYNTHETIC_LINEAR, dataset=ds)


def movielens_logistic(groups, d_z: int = 18) -> ModelInstance:
    """Bernoulli model: theta = (mu_z, psi_z), d_theta = 2*d_z."""
    _check_feature_width(groups, d_z)
    for g in groups:
        if not np.all((g.outcomes == 0.0) | (g.outcomes == 1.0)):
            raise ValueError("Bernoulli outcomes must be exactly 0 or 1")
    ds = HierarchicalDataset(groups=tuple(groups), d_z=d_z, d_theta=2 * d_z)
    return ModelInstance(kind=MOVIELENS_LOGISTIC, dataset=ds)


def conjugate_oracle(groups, d_z: int) -> ModelInstance:
    """Fully conjugate Gaussian model: theta = mu_z, all variances fixed to 1."""
    _check_feature_width(groups, d_z)
    ds = HierarchicalDataset(groups=tuple(groups), d_z=d_z, d_theta=d_z)
    return ModelInstance(kind=CONJUGATE_ORACLE, dataset=ds,
                         fixed_params={"variance": 1.0})


def _std_normal_logpdf(x):
    return -0.5 * (LOG_2PI + x * x)


def _normal_logpdf_logvar(x, mean, log_var, inv_var):
    # log N(x | mean, e^{log_var}); caller supplies exp(-log_var)
    d = x - mean
    return -0.5 * (LOG_2PI + log_var + d * d * inv_var)


def _normal_logpdf_unit(x, mean):
    d = x - mean
    return -0.5 * (LOG_2PI + d * d)


def log_prior_global(model: ModelInstance, theta) -> "tp.Var | float":
    """log p(theta): standard normal over every global coordinate."""
    if len(theta) != model.d_theta:
        raise ValueError(
            f"theta has length {len(theta)}, expected {model.d_theta}")
    return tp.vsum([_std_normal_logpdf(t) for t in theta])


def _theta_parts(model: ModelInstance, theta):
    d = model.d_z
    if model.kind == SYNTHETIC_LINEAR:
        return theta[:d], theta[d:2 * d], theta[2 * d]
    if model.kind == MOVIELENS_LOGISTIC:
        return theta[:d], theta[d:2 * d], None
    if model.kind == CONJUGATE_ORACLE:
        return theta, None, None
    raise ValueError(f"unknown model kind {model.kind!r}")


def log_group_joint(model: ModelInstance, theta, group_index: int, z):
    """log p(z_i, y_i | theta) for one group."""
    if not 0 <= group_index < model.num_groups:
        raise IndexError(f"group index {group_index} out of range")
    if len(z) != model.d_z:
        raise ValueError(f"z has length {len(z)}, expected {model.d_z}")
    if len(theta) != model.d_theta:
        raise ValueError(
            f"theta has length {len(theta)}, expected {model.d_theta}")
    g = model.dataset.groups[group_index]
    rows, ys = g.feature_rows, g.outcome_list
    mu, psi_z, psi_y = _theta_parts(model, theta)
    terms = []
    if model.kind == CONJUGATE_ORACLE:
        for k in range(model.d_z):
            terms.append(_normal_logpdf_unit(z[k], mu[k]))
        for j in range(g.size):
            pred = tp.dot(z, rows[j])
            terms.append(_normal_logpdf_unit(ys[j], pred))
    elif model.kind == SYNTHETIC_LINEAR:
        inv_vz = [tp.exp(-p) for p in psi_z]
        for k in range(model.d_z):
            terms.append(_normal_logpdf_logvar(z[k], mu[k], psi_z[k], inv_vz[k]))
        inv_vy = tp.exp(-psi_y)
        for j in range(g.size):
            pred = tp.dot(z, rows[j])
            terms.append(_normal_logpdf_logvar(ys[j], pred, psi_y, inv_vy))
    else:  # movielens_logistic
        inv_vz = [tp.exp(-p) for p in psi_z]
        for k in range(model.d_z):
            terms.append(_normal_logpdf_logvar(z[k], mu[k], psi_z[k], inv_vz[k]))
        for j in range(g.size):
            logit = tp.dot(z, rows[j])
            if ys[j] == 1.0:
                terms.append(tp.log_sigmoid(logit))
            else:
                terms.append(tp.log_sigmoid(-logit))
    return tp.vsum(terms)


def grad_log_group_joint_z(model: ModelInstance, theta, group_index: int, z):
    """Analytic gradient of log p(z_i, y_i | theta) with respect to z.

    Built out of tape primitives, so it stays differentiable with respect to
    theta and any Var appearing in z (needed to backprop through leapfrog).
    """
    if not 0 <= group_index < model.num_groups:
        raise IndexError(f"group index {group_index} out of range")
    g = model.dataset.groups[group_index]
    rows, ys = g.feature_rows, g.outcome_list
    mu, psi_z, psi_y = _theta_parts(model, theta)
    if model.kind == CONJUGATE_ORACLE:
        prior = [mu[k] - z[k] for k in range(model.d_z)]
        resid = [ys[j] - tp.dot(z, rows[j]) for j in range(g.size)]
    elif model.kind == SYNTHETIC_LINEAR:
        prior = [(mu[k] - z[k]) * tp.exp(-psi_z[k]) for k in range(model.d_z)]
        inv_vy = tp.exp(-psi_y)
        resid = [(ys[j] - tp.dot(z, rows[j])) * inv_vy for j in range(g.size)]
    else:
        prior = [(mu[k] - z[k]) * tp.exp(-psi_z[k]) for k in range(model.d_z)]
        resid = [ys[j] - tp.sigmoid(tp.dot(z, rows[j])) for j in range(g.size)]
    grad = []
    for k in range(model.d_z):
        contrib = [prior[k]]
        for j in range(g.size):
            xjk = rows[j][k]
            if xjk != 0.0:
                contrib.append(resid[j] * xjk)
        grad.append(tp.vsum(contrib))
    return grad


# ---------------------------------------------------------------------------
# Closed-form quantities for the conjugate oracle.
# ---------------------------------------------------------------------------

def _require_oracle(model: ModelInstance):
    if model.kind != CONJUGATE_ORACLE:
        raise ValueError(
            f"analytic computation requires {CONJUGATE_ORACLE}, got {model.kind}")


def _gaussian_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    n = y.shape[0]
    L = np.linalg.cholesky(cov)
    diff = y - mean
    sol = np.linalg.solve(L, diff)
    return float(-0.5 * (n * LOG_2PI) - np.sum(np.log(np.diag(L)))
                 - 0.5 * np.dot(sol, sol))


def analytic_log_marginal(model: ModelInstance) -> float:
    """Exact log p(y) for the conjugate oracle.

    With mu ~ N(0, I), z_i ~ N(mu, I), y_i = X_i z_i + N(0, I), the stacked
    outcome vector is Gaussian with mean 0 and covariance
    X X^T + blockdiag(X_i X_i^T + I).
    """
    _require_oracle(model)
    groups = model.dataset.groups
    X = np.vstack([g.features for g in groups])
    y = np.concatenate([g.outcomes for g in groups])
    cov = X @ X.T
    offset = 0
    for g in groups:
        n = g.size
        blk = slice(offset, offset + n)
        cov[blk, blk] += g.features @ g.features.T + np.eye(n)
        offset += n
    return _gaussian_logpdf(y, np.zeros_like(y), cov)


def oracle_group_log_marginal(model: ModelInstance, theta: np.ndarray,
                              group_index: int) -> float:
    """Exact log p(y_i | theta): y_i ~ N(X_i theta, X_i X_i^T + I)."""
    _require_oracle(model)
    g = model.dataset.groups[group_index]
    theta = np.asarray(theta, dtype=float)
    cov = g.features @ g.features.T + np.eye(g.size)
    return _gaussian_logpdf(g.outcomes, g.features @ theta, cov)


def oracle_conditional_posterior(model: ModelInstance, theta: np.ndarray,
                                 group_index: int):
    """Exact p(z_i | theta, y_i): returns (mean, covariance)."""
    _require_oracle(model)
    g = model.dataset.groups[group_index]
    theta = np.asarray(theta, dtype=float)
    prec = np.eye(model.d_z) + g.features.T @ g.features
    cov = np.linalg.inv(prec)
    mean = cov @ (theta + g.features.T @ g.outcomes)
    return mean, cov


def oracle_global_posterior(model: ModelInstance):
    """Exact p(theta | y): returns (mean, covariance).

    Uses the per-group marginal likelihoods y_i | theta ~ N(X_i theta, S_i)
    with S_i = X_i X_i^T + I and the standard normal prior on theta.
    """
    _require_oracle(model)
    d = model.d_z
    prec = np.eye(d)
    lin = np.zeros(d)
    for g in model.dataset.groups:
        S = g.features @ g.features.T + np.eye(g.size)
        Sinv_X = np.linalg.solve(S, g.features)
        prec += g.features.T @ Sinv_X
        lin += Sinv_X.T @ g.outcomes
    cov = np.linalg.inv(prec)
    mean = cov @ lin
    return mean, cov


def kl_diag_gaussian_to_full(q_mean: np.ndarray, q_log_scale: np.ndarray,
                             p_mean: np.ndarray, p_cov: np.ndarray) -> float:
    """KL( N(q_mean, diag exp(2 q_log_scale)) || N(p_mean, p_cov) )."""
    q_mean = np.asarray(q_mean, dtype=float)
    q_var = np.exp(2.0 * np.asarray(q_log_scale, dtype=float))
    d = q_mean.shape[0]
    L = np.linalg.cholesky(p_cov)
    p_logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    p_inv = np.linalg.inv(p_cov)
    diff = p_mean - q_mean
    return float(0.5 * (np.trace(p_inv @ np.diag(q_var))
                        + diff @ p_inv @ diff - d
                        + p_logdet - np.sum(np.log(q_var))))
