import os

import numpy as np
import pytest

from hiervi.data import SyntheticConfig, generate_oracle
from hiervi.family import GaussianParams, VariationalState

MOVIELENS_USERS = 943
MOVIELENS_ITEMS = 1682
MOVIELENS_RATINGS = 100000


def write_movielens_fixture(directory, seed=12345):
    """Write u.data / u.item files with the MovieLens-100K shape: 100000
    tab-separated ratings over 943 users and 1682 items, and pipe-separated
    item records ending in 19 binary genre flags (the first is "unknown")."""
    rng = np.random.default_rng(seed)
    counts = np.full(MOVIELENS_USERS, 20)
    extra = rng.multinomial(MOVIELENS_RATINGS - counts.sum(),
                            np.full(MOVIELENS_USERS, 1.0 / MOVIELENS_USERS))
    counts += extra
    with open(os.path.join(directory, "u.data"), "w") as fh:
        for user in range(1, MOVIELENS_USERS + 1):
            items = rng.choice(MOVIELENS_ITEMS, size=counts[user - 1],
                               replace=False) + 1
            for item in items:
                rating = int(rng.integers(1, 6))
                ts = int(rng.integers(874000000, 893000000))
                fh.write(f"{user}\t{item}\t{rating}\t{ts}\n")
    with open(os.path.join(directory, "u.item"), "w", encoding="latin-1") as fh:
        for item in range(1, MOVIELENS_ITEMS + 1):
            flags = (rng.random(19) < 0.15).astype(int)
            flags[0] = 0
            if flags.sum() == 0:
                flags[1 + int(rng.integers(18))] = 1
            fh.write(f"{item}|Title {item} (1995)|01-Jan-1995||"
                     f"http://example.com/{item}|"
                     + "|".join(str(f) for f in flags) + "\n")


@pytest.fixture(scope="session")
def movielens_dir(tmp_path_factory):
    """A directory holding MovieLens-100K-format files.

    Set HIERVI_MOVIELENS_DIR to point at the real dataset; otherwise a
    seeded format-faithful stand-in is generated once per session.
    """
    override = os.environ.get("HIERVI_MOVIELENS_DIR")
    if override:
        return override
    d = tmp_path_factory.mktemp("movielens")
    write_movielens_fixture(str(d))
    return str(d)


def make_oracle(num_groups=4, group_size=3, d_z=1, seed=1):
    model, _ = generate_oracle(SyntheticConfig(
        num_groups=num_groups, group_sizes=group_size, d_z=d_z, seed=seed))
    return model


def random_state(model, rng, spread=0.5, uha=None):
    """A perturbed variational state for property tests."""
    g = GaussianParams(mean=spread * rng.standard_normal(model.d_theta),
                       log_scale=spread * rng.standard_normal(model.d_theta))
    locals_q = [GaussianParams(mean=spread * rng.standard_normal(model.d_z),
                               log_scale=spread * rng.standard_normal(model.d_z))
                for _ in range(model.num_groups)]
    return VariationalState(global_q=g, locals_q=locals_q, uha=uha)


def posterior_matched_state(model, uha=None):
    """q(theta) = exact global posterior, q(z_i) = exact conditional
    posterior at the posterior mean of theta (diagonal; exact for d_z=1)."""
    from hiervi.model import (oracle_conditional_posterior,
                              oracle_global_posterior)
    post_mean, post_cov = oracle_global_posterior(model)
    g = GaussianParams(mean=post_mean.copy(),
                       log_scale=0.5 * np.log(np.diag(post_cov)))
    locals_q = []
    for i in range(model.num_groups):
        m, c = oracle_conditional_posterior(model, post_mean, i)
        locals_q.append(GaussianParams(mean=m,
                                       log_scale=0.5 * np.log(np.diag(c))))
    return VariationalState(global_q=g, locals_q=locals_q, uha=uha)
