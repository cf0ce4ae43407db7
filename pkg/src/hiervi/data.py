"""Dataset generation and ingestion.

Synthetic data is drawn by ancestral sampling from the Gaussian linear model
(global latents, then per-group latents, then standard-normal covariates and
outcomes).  MovieLens-100K ingestion turns users into groups with binarized
ratings as outcomes and 18 binary genre flags as features.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import (GroupData, ModelInstance, conjugate_oracle,
                    movielens_logistic, synthetic_linear)

MOVIELENS_GENRES = 18


@dataclass(frozen=True)
class SyntheticConfig:
    num_groups: int
    group_sizes: object  # one int for uniform groups, or a list of N_i
    d_z: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 1:
            raise ValueError("need at least one group")
        if self.d_z < 1:
            raise ValueError("d_z must be positive")
        sizes = self.sizes()
        if len(sizes) != self.num_groups:
            raise ValueError("group_sizes length must equal num_groups")
        if any(n < 1 for n in sizes):
            raise ValueError("every group needs at least one observation")

    def sizes(self) -> list:
        if isinstance(self.group_sizes, int):
            return [self.group_sizes] * self.num_groups
        return [int(n) for n in self.group_sizes]


def heterogeneous_group_sizes() -> list:
    """100 groups: 50 with 2 observations, 30 with 5, 20 with 30."""
    return [2] * 50 + [5] * 30 + [30] * 20


@dataclass(frozen=True)
class MovieLensConfig:
    ratings_path: str
    items_path: str
    num_users: int
    ratings_per_user: int
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.ratings_per_user < 1:
            raise ValueError("num_users and ratings_per_user must be positive")


def _sample_groups(rng, cfg: SyntheticConfig, theta_mean, z_cov_diag, y_var):
    z_true = []
    groups = []
    for n_i in cfg.sizes():
        z_i = theta_mean + np.sqrt(z_cov_diag) * rng.standard_normal(cfg.d_z)
        x_i = rng.standard_normal((n_i, cfg.d_z))
        y_i = x_i @ z_i + np.sqrt(y_var) * rng.standard_normal(n_i)
        z_true.append(z_i)
        groups.append(GroupData(features=x_i, outcomes=y_i))
    return groups, z_true


def generate_synthetic(cfg: SyntheticConfig):
    """Ancestral sample from the Gaussian linear model.

    Returns (model, true_latents) where true_latents records the sampled
    theta = (mu_z, psi_z, psi_y) and every z_i for diagnostics.
    """
    rng = np.random.default_rng(cfg.seed)
    mu_z = rng.standard_normal(cfg.d_z)
    psi_z = rng.standard_normal(cfg.d_z)
    psi_y = rng.standard_normal()
    groups, z_true = _sample_groups(rng, cfg, mu_z, np.exp(psi_z),
                                    np.exp(psi_y))
    latents = {"mu_z": mu_z, "psi_z": psi_z, "psi_y": float(psi_y),
               "z": z_true}
    return synthetic_linear(groups, cfg.d_z), latents


def generate_oracle(cfg: SyntheticConfig):
    """Ancestral sample from the conjugate oracle (all variances 1)."""
    rng = np.random.default_rng(cfg.seed)
    mu = rng.standard_normal(cfg.d_z)
    groups, z_true = _sample_groups(rng, cfg, mu, np.ones(cfg.d_z), 1.0)
    return conjugate_oracle(groups, cfg.d_z), {"mu_z": mu, "z": z_true}


def binarize(rating: int) -> int:
    """Ratings 1-3 become 0 (dislike); 4-5 become 1 (like)."""
    if rating not in (1, 2, 3, 4, 5):
        raise ValueError(f"rating {rating!r} outside 1..5")
    return 1 if rating >= 4 else 0


def parse_ratings(path) -> list:
    """Parse the tab-separated ratings file into (user, item, rating) rows."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, "
                    f"got {len(parts)}")
            try:
                user, item, rating = (int(parts[0]), int(parts[1]),
                                      int(parts[2]))
                int(parts[3])  # timestamp, unused but must be an integer
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer field") from exc
            rows.append((user, item, rating))
    return rows


def parse_item_genres(path) -> dict:
    """Parse the pipe-separated items file into item id -> 18 genre flags.

    The file carries 19 flags; the leading "unknown" flag is dropped so the
    feature vector matches the 18 named genres.
    """
    genres = {}
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("|")
            if len(parts) < 20:
                raise ValueError(
                    f"{path}:{lineno}: expected at least 20 pipe-separated "
                    f"fields, got {len(parts)}")
            try:
                item = int(parts[0])
                flags = [int(v) for v in parts[-19:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer field") from exc
            if any(f not in (0, 1) for f in flags):
                raise ValueError(f"{path}:{lineno}: genre flags must be 0/1")
            genres[item] = np.array(flags[1:], dtype=float)
    return genres


def load_movielens(cfg: MovieLensConfig) -> ModelInstance:
    """Build the Bernoulli model from MovieLens-100K files.

    Users with at least ``ratings_per_user`` ratings are shuffled with the
    config seed and the first ``num_users`` are kept; each keeps a seeded
    sample of exactly ``ratings_per_user`` of their ratings.
    """
    rows = parse_ratings(cfg.ratings_path)
    genres = parse_item_genres(cfg.items_path)
    by_user = {}
    for user, item, rating in rows:
        by_user.setdefault(user, []).append((item, rating))
    eligible = sorted(u for u, r in by_user.items()
                      if len(r) >= cfg.ratings_per_user)
    if len(eligible) < cfg.num_users:
        raise ValueError(
            f"only {len(eligible)} users have >= {cfg.ratings_per_user} "
            f"ratings; {cfg.num_users} requested")
    rng = np.random.default_rng(cfg.seed)
    chosen = [eligible[i] for i in rng.permutation(len(eligible))][:cfg.num_users]
    groups = []
    for user in chosen:
        ratings = by_user[user]
        pick = rng.choice(len(ratings), size=cfg.ratings_per_user,
                          replace=False)
        feats = np.empty((cfg.ratings_per_user, MOVIELENS_GENRES))
        outs = np.empty(cfg.ratings_per_user)
        for row, idx in enumerate(sorted(int(i) for i in pick)):
            item, rating = ratings[idx]
            if item not in genres:
                raise ValueError(f"item {item} missing from the items file")
            feats[row] = genres[item]
            outs[row] = binarize(rating)
        groups.append(GroupData(features=feats, outcomes=outs))
    return movielens_logistic(groups, MOVIELENS_GENRES)


# ---------------------------------------------------------------------------
# JSON persistence of generated synthetic datasets.
# ---------------------------------------------------------------------------

def synthetic_to_dict(model: ModelInstance, cfg: SyntheticConfig,
                      latents: dict) -> dict:
    return {
        "kind": model.kind,
        "config": {"num_groups": cfg.num_groups, "group_sizes": cfg.sizes(),
                   "d_z": cfg.d_z, "seed": cfg.seed},
        "groups": [{"features": g.features.tolist(),
                    "outcomes": g.outcomes.tolist()}
                   for g in model.dataset.groups],
        "true_latents": {
            "mu_z": np.asarray(latents["mu_z"]).tolist(),
            "psi_z": (np.asarray(latents["psi_z"]).tolist()
                      if "psi_z" in latents else None),
            "psi_y": latents.get("psi_y"),
            "z": [np.asarray(z).tolist() for z in latents["z"]],
        },
    }


def save_synthetic(model: ModelInstance, cfg: SyntheticConfig, latents: dict,
                   path) -> None:
    with open(path, "w") as fh:
        json.dump(synthetic_to_dict(model, cfg, latents), fh)
        fh.write("\n")


def load_synthetic(path) -> ModelInstance:
    with open(path) as fh:
        doc = json.load(fh)
    groups = [GroupData(features=np.array(g["features"], dtype=float),
                        outcomes=np.array(g["outcomes"], dtype=float))
              for g in doc["groups"]]
    d_z = int(doc["config"]["d_z"])
    if doc["kind"] == "conjugate_oracle":
        return conjugate_oracle(groups, d_z)
    return synthetic_linear(groups, d_z)
