import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from hiervi.family import (GaussianParams, flat_to_state, init_state,
                           load_state, log_density, num_parameters,
                           sample_reparam, save_state, state_from_dict,
                           state_to_dict, state_to_flat)
from hiervi.tape import LOG_2PI, Tape
from hiervi.uha import default_uha_params

from conftest import make_oracle


def lifted(tape, mean, log_scale):
    return GaussianParams(mean=[tape.leaf(v) for v in mean],
                          log_scale=[tape.leaf(v) for v in log_scale])


class TestSampleReparam:
    def test_zero_noise_gives_mean(self):
        p = GaussianParams(mean=[1.5, -0.2], log_scale=[0.3, 0.1])
        s = sample_reparam(p, [0.0, 0.0])
        assert s == [1.5, -0.2]

    def test_unit_params(self):
        p = GaussianParams(mean=[0.0], log_scale=[0.0])
        assert sample_reparam(p, [1.5]) == [1.5]

    def test_gradient_wrt_log_scale(self):
        t = Tape()
        p = lifted(t, [0.0], [0.0])
        s = sample_reparam(p, [2.0])[0]
        adj = t.backward(s)
        assert adj[p.log_scale[0].handle] == pytest.approx(2.0)
        assert adj[p.mean[0].handle] == pytest.approx(1.0)

    def test_length_mismatch(self):
        p = GaussianParams(mean=[0.0], log_scale=[0.0])
        with pytest.raises(ValueError):
            sample_reparam(p, [0.0, 0.0])

    def test_mc_mean(self):
        rng = np.random.default_rng(1)
        p = GaussianParams(mean=[0.7], log_scale=[-0.2])
        n = 100000
        draws = np.array([sample_reparam(p, [e])[0]
                          for e in rng.standard_normal(n)])
        se = draws.std(ddof=1) / math.sqrt(n)
        assert draws.mean() == pytest.approx(0.7, abs=4 * se)


class TestLogDensity:
    def test_standard_at_zero(self):
        p = GaussianParams(mean=[0.0], log_scale=[0.0])
        assert log_density(p, [0.0]) == pytest.approx(-0.5 * LOG_2PI)

    def test_change_of_variables(self):
        rng = np.random.default_rng(2)
        p = GaussianParams(mean=list(rng.standard_normal(3)),
                           log_scale=list(rng.standard_normal(3)))
        eps = rng.standard_normal(3)
        got = log_density(p, sample_reparam(p, list(eps)))
        want = (-sum(p.log_scale) - 1.5 * LOG_2PI - 0.5 * float(eps @ eps))
        assert got == pytest.approx(want, rel=1e-10)

    def test_matches_scipy_oracle(self):
        rng = np.random.default_rng(3)
        p = GaussianParams(mean=list(rng.standard_normal(3)),
                           log_scale=list(rng.standard_normal(3)))
        x = rng.standard_normal(3)
        want = sum(norm.logpdf(x[i], p.mean[i], math.exp(p.log_scale[i]))
                   for i in range(3))
        assert log_density(p, list(x)) == pytest.approx(want, abs=1e-12)

    def test_integrates_to_one(self):
        p = GaussianParams(mean=[0.4], log_scale=[-0.5])
        val, _ = integrate.quad(lambda x: math.exp(log_density(p, [x])),
                                -12, 12, epsabs=1e-10)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_dimension_mismatch(self):
        p = GaussianParams(mean=[0.0], log_scale=[0.0])
        with pytest.raises(ValueError):
            log_density(p, [0.0, 1.0])

    def test_end_to_end_gradient_matches_fd(self):
        noise = [0.7, -1.1]
        point = np.array([0.2, -0.4, 0.3, 0.9])  # mean(2), log_scale(2)

        def f(vals, tape=None):
            if tape is None:
                p = GaussianParams(mean=list(vals[:2]),
                                   log_scale=list(vals[2:]))
            else:
                p = lifted(tape, vals[:2], vals[2:])
            return log_density(p, sample_reparam(p, noise))

        t = Tape()
        p_lift = lifted(t, point[:2], point[2:])
        root = log_density(p_lift, sample_reparam(p_lift, noise))
        adj = t.backward(root)
        handles = [v.handle for v in p_lift.mean + p_lift.log_scale]
        h = 1e-5
        for d in range(4):
            up, dn = point.copy(), point.copy()
            up[d] += h
            dn[d] -= h
            fd = (f(up) - f(dn)) / (2 * h)
            denom = max(abs(fd), 1e-8)
            assert abs(adj[handles[d]] - fd) / denom <= 1e-6


class TestInitState:
    def test_std_normal_zeros(self):
        m = make_oracle(num_groups=3, group_size=2, d_z=2)
        st = init_state(m)
        assert np.all(st.global_q.mean == 0.0)
        assert np.all(st.global_q.log_scale == 0.0)
        assert len(st.locals_q) == 3
        for q in st.locals_q:
            assert q.dim == 2
            assert np.all(np.exp(q.log_scale) == 1.0)

    def test_prior_matched_equals_std_normal(self):
        m = make_oracle()
        a, b = init_state(m, "std_normal"), init_state(m, "prior_matched")
        assert np.array_equal(a.global_q.mean, b.global_q.mean)
        assert np.array_equal(a.global_q.log_scale, b.global_q.log_scale)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            init_state(make_oracle(), "garbage")


class TestFlattenRoundTrip:
    def test_round_trip(self):
        m = make_oracle(num_groups=2, group_size=2, d_z=2)
        st = init_state(m)
        st.global_q.mean[:] = [0.1, -0.3]
        st.uha = default_uha_params(2, 5)
        flat = state_to_flat(st)
        assert flat.shape[0] == num_parameters(st)
        st2 = flat_to_state(flat + 1.0, st)
        assert np.allclose(state_to_flat(st2), flat + 1.0)
        assert st2.uha.num_dists == 5
        with pytest.raises(ValueError):
            flat_to_state(flat[:-1], st)


class TestPersistence:
    def test_json_round_trip(self, tmp_path):
        m = make_oracle(num_groups=2, group_size=2, d_z=1)
        st = init_state(m)
        st.locals_q[1].mean[:] = 0.25
        st.uha = default_uha_params(1, 4, step_size=0.2)
        path = tmp_path / "state.json"
        save_state(st, path)
        st2 = load_state(path)
        assert np.array_equal(st2.locals_q[1].mean, st.locals_q[1].mean)
        assert st2.uha.num_dists == 4
        assert st2.uha.schedule.betas == st.uha.schedule.betas
        assert state_to_dict(st2) == state_to_dict(st)

    def test_dict_without_uha(self):
        m = make_oracle()
        st = init_state(m)
        doc = state_to_dict(st)
        assert doc["uha"] is None
        st2 = state_from_dict(doc)
        assert st2.uha is None
