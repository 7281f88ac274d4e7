from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scenediff.guidance import (
    FAST,
    MULTI,
    ConditionSet,
    GuidanceError,
    GuidanceSpec,
    cfg_fast,
    cfg_multi,
    cfg_single,
    dropout_conditions,
    required_forward_passes,
)

finite = st.floats(min_value=-10, max_value=10, allow_nan=False)
scale = st.floats(min_value=0, max_value=10, allow_nan=False)


def _vecs(rng, n):
    return [rng.standard_normal(5) for _ in range(n)]


@settings(max_examples=100, deadline=None)
@given(s=scale, seed=st.integers(0, 10_000))
def test_single_scale_multi_reduces_to_single(s, seed):
    rng = np.random.default_rng(seed)
    e0, ec = _vecs(rng, 2)
    assert np.array_equal(cfg_multi(e0, [ec], [s]), cfg_single(e0, ec, s))


@settings(max_examples=100, deadline=None)
@given(s1=scale, s2=scale, seed=st.integers(0, 10_000))
def test_multi_is_sum_of_directions(s1, s2, seed):
    rng = np.random.default_rng(seed)
    e0, e1, e2 = _vecs(rng, 3)
    got = cfg_multi(e0, [e1, e2], [s1, s2])
    want = e0 + s1 * (e1 - e0) + s2 * (e2 - e0)
    assert np.abs(got - want).max() <= 1e-12


@settings(max_examples=50, deadline=None)
@given(s=scale, seed=st.integers(0, 10_000))
def test_zero_scale_drops_a_condition_exactly(s, seed):
    rng = np.random.default_rng(seed)
    e0, e1, e2 = _vecs(rng, 3)
    got = cfg_multi(e0, [e1, e2], [s, 0.0])
    assert np.array_equal(got, cfg_single(e0, e1, s))


def test_scale_one_single_is_identity(rng):
    e0, ec = _vecs(rng, 2)
    assert np.array_equal(cfg_single(e0, ec, 1.0), ec)
    assert np.array_equal(cfg_fast(e0, ec, 1.0), ec)


def test_combinators_work_on_torch_tensors():
    g = torch.Generator().manual_seed(0)
    e0 = torch.randn(2, 3, 4, 4, generator=g)
    e1 = torch.randn(2, 3, 4, 4, generator=g)
    out = cfg_fast(e0, e1, 3.0)
    assert torch.equal(out, e0 + 3.0 * (e1 - e0))


def test_shape_mismatch_rejected(rng):
    with pytest.raises(GuidanceError, match="shape mismatch"):
        cfg_single(rng.standard_normal(4), rng.standard_normal(5), 1.0)
    with pytest.raises(GuidanceError, match="predictions but"):
        cfg_multi(rng.standard_normal(4), [rng.standard_normal(4)], [1.0, 2.0])
    with pytest.raises(GuidanceError, match="at least one"):
        cfg_multi(rng.standard_normal(4), [], [])


# -- spec ----------------------------------------------------------------------


def test_spec_defaults_to_fast_three():
    spec = GuidanceSpec()
    assert spec.mode == FAST and spec.scales == (3.0,)


def test_spec_validation():
    with pytest.raises(GuidanceError, match="unknown guidance mode"):
        GuidanceSpec(mode="turbo")
    with pytest.raises(GuidanceError, match="exactly one scale"):
        GuidanceSpec(mode=FAST, scales=(1.0, 2.0))
    with pytest.raises(GuidanceError, match="finite and non-negative"):
        GuidanceSpec(mode=MULTI, scales=(1.0, -2.0))
    with pytest.raises(GuidanceError, match="finite and non-negative"):
        GuidanceSpec(mode=FAST, scales=(float("nan"),))


def test_spec_dict_round_trip():
    for spec in (GuidanceSpec(), GuidanceSpec(mode=MULTI, scales=(3.0, 1.5))):
        assert GuidanceSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(GuidanceError, match="malformed"):
        GuidanceSpec.from_dict({"scales": {}})
    # scales must be the named mapping, not a positional list
    with pytest.raises(GuidanceError, match="malformed"):
        GuidanceSpec.from_dict({"mode": FAST, "scales": [3.0]})
    with pytest.raises(GuidanceError, match="unknown guidance mode"):
        GuidanceSpec.from_dict({"mode": "warp", "scales": {"joint": 1.0}})


def test_required_passes():
    assert required_forward_passes(GuidanceSpec(), 2) == 2
    assert required_forward_passes(GuidanceSpec(mode=MULTI, scales=(1.0, 1.0)), 2) == 3
    assert required_forward_passes(GuidanceSpec(mode=MULTI, scales=(1.0,) * 4), 4) == 5
    with pytest.raises(GuidanceError):
        required_forward_passes(GuidanceSpec(), 0)


# -- dropout -------------------------------------------------------------------


def test_dropout_rates_are_independent(rng):
    conds = ConditionSet(global_text=np.ones(4), st=np.ones((2, 2, 4)))
    n = 20_000
    text_null = st_null = both = 0
    for _ in range(n):
        out = dropout_conditions(conds, 0.1, rng)
        a = out.global_text is None
        b = out.st is None
        text_null += a
        st_null += b
        both += a and b
    assert 0.09 <= text_null / n <= 0.11
    assert 0.09 <= st_null / n <= 0.11
    assert 0.005 <= both / n <= 0.015


def test_dropout_edge_probabilities(rng):
    conds = ConditionSet(global_text=np.ones(4), st=np.ones((2, 2, 4)))
    kept = dropout_conditions(conds, 0.0, rng)
    assert kept.global_text is not None and kept.st is not None
    gone = dropout_conditions(conds, 1.0, rng)
    assert gone.global_text is None and gone.st is None
    with pytest.raises(GuidanceError, match="outside"):
        dropout_conditions(conds, 1.5, rng)


def test_dropout_never_mutates_input(rng):
    conds = ConditionSet(global_text=np.ones(4), st=np.ones((2, 2, 4)))
    for _ in range(100):
        dropout_conditions(conds, 0.5, rng)
    assert conds.global_text is not None and conds.st is not None
    assert conds.null() == ConditionSet()
