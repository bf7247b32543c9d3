"""Model layer: KL numbers, path generation, and the closed forms."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cusumlab.model import (NEVER, SensorModel, ct_closed_forms,
                            generate_paths, kl_numbers, s_function)


def test_kl_numbers_single_unit_drift(m1):
    kl = kl_numbers(m1)
    assert kl.i0 == (0.5,)
    assert kl.iinf == (0.5,)
    assert kl.ibar0 == 0.5


def test_kl_numbers_average_of_equal_sensors(m5):
    assert kl_numbers(m5).ibar0 == 0.5
    assert kl_numbers(m5).ibarinf == 0.5


def test_kl_numbers_mixed_drifts(m12):
    kl = kl_numbers(m12)
    assert kl.i0 == (0.5, 2.0)
    assert kl.ibar0 == pytest.approx(1.25)


def test_model_rejects_zero_drift():
    with pytest.raises(ValueError):
        SensorModel.gaussian([1.0, 0.0])
    with pytest.raises(ValueError):
        SensorModel.gaussian([])


def test_brownian_requires_positive_dt():
    with pytest.raises(ValueError):
        SensorModel.brownian([1.0], dt=0.0)


def test_path_means_match_kl_numbers(m1):
    n = 1_000_000
    pre = generate_paths(m1, NEVER, n, seed=1).increments[0]
    post = generate_paths(m1, 0, n, seed=2).increments[0]
    se = 1.0 / math.sqrt(n)  # increment sd is mu = 1
    assert abs(pre.mean() + 0.5) < 3 * se
    assert abs(post.mean() - 0.5) < 3 * se


def test_increment_variance_is_mu_squared(m1):
    n = 1_000_000
    for ct, seed in ((NEVER, 3), (0, 4)):
        inc = generate_paths(m1, ct, n, seed=seed).increments[0]
        # var of the chi-square sample variance: 2 mu^4 / n
        assert abs(inc.var(ddof=1) - 1.0) < 3 * math.sqrt(2.0 / n)


def test_change_time_splits_the_laws(m1):
    b = generate_paths(m1, 500, 1_000, seed=5)
    inc = b.increments[0]
    # the same noise drives both halves; only the mean moves
    assert inc[:500].mean() < 0 < inc[500:].mean()
    twin = generate_paths(m1, NEVER, 1_000, seed=5).increments[0]
    np.testing.assert_allclose(inc[500:] - twin[500:], 1.0)


def test_paths_reproducible_and_sensors_independent(m5):
    a = generate_paths(m5, 0, 256, seed=9)
    b = generate_paths(m5, 0, 256, seed=9)
    np.testing.assert_array_equal(a.increments, b.increments)
    c = generate_paths(m5, 0, 256, seed=10)
    assert not np.array_equal(a.increments, c.increments)
    # distinct sensors draw from distinct substreams
    assert not np.array_equal(a.increments[0], a.increments[1])


def test_generate_paths_rejects_bad_args(m1):
    with pytest.raises(ValueError):
        generate_paths(m1, 0, 0, seed=0)
    with pytest.raises(ValueError):
        generate_paths(m1, -1, 10, seed=0)


def test_s_function_closed_form_values():
    e = math.e
    assert s_function(1.0, 1.0) == pytest.approx((e - 1) / (e + 1),
                                                 rel=1e-12)
    assert s_function(1.0, 1.0) == pytest.approx(0.462117157260, abs=1e-9)
    # dominant-term limit: s(x, y) -> y for large arguments
    assert abs(s_function(20.0, 3.0) - 3.0) < 1e-4


def test_s_function_positive_and_monotone_in_y():
    grid = (0.5, 1.0, 2.0, 4.0)
    for x in grid:
        prev = 0.0
        for y in grid:
            v = s_function(x, y)
            assert v > 0
            assert v > prev
            prev = v


def test_s_function_rejects_nonpositive():
    for x, y in ((0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)):
        with pytest.raises(ValueError):
            s_function(x, y)


def test_s_function_matches_simulated_exit_mean():
    from cusumlab.quantizer import sample_exit_pairs

    model = SensorModel.brownian([1.0], dt=1e-4)
    ell, _ = sample_exit_pairs(model, 0, (1.0, 1.0), 30_000, seed=6,
                               salt=0, post=True)
    se = ell.std(ddof=1) / math.sqrt(ell.size)
    assert abs(ell.mean() - s_function(1.0, 1.0)) < 3 * se


def test_ct_closed_forms_frozen_point():
    gamma, delay = ct_closed_forms(3.0)
    assert gamma == pytest.approx(16.085536923187668, rel=1e-12)
    assert delay == pytest.approx(2.049787068367864, rel=1e-12)


def test_ct_closed_forms_vanish_at_zero():
    gamma, delay = ct_closed_forms(1e-6)
    assert 0 < gamma < 1e-9
    assert 0 < delay < 1e-9


def test_ct_closed_forms_reject_nonpositive():
    for nu in (0.0, -1.0):
        with pytest.raises(ValueError):
            ct_closed_forms(nu)


@given(st.floats(min_value=0.01, max_value=20.0),
       st.floats(min_value=1e-3, max_value=5.0))
@settings(max_examples=60, deadline=None)
def test_ct_closed_forms_strictly_increasing(nu, step):
    g1, d1 = ct_closed_forms(nu)
    g2, d2 = ct_closed_forms(nu + step)
    assert g2 > g1
    assert d2 > d1


@given(st.floats(min_value=1e-3, max_value=30.0),
       st.floats(min_value=1e-3, max_value=30.0))
@settings(max_examples=60, deadline=None)
def test_s_function_positive_everywhere(x, y):
    assert s_function(x, y) > 0
