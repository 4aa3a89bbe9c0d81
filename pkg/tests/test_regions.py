import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normkit.errors import InvalidRegionError
from normkit.regions import NormRegion, apply_average, region_sizes, resolve_region
from normkit.tensor import Tensor, region_mean

from oracles import brute_region, brute_region_mean

BN = NormRegion(over_batch=True, over_channels="none", over_space="all")


def test_bn_region_size():
    members = resolve_region(BN, (8, 4, 6, 6), (2, 1, 3, 3))
    assert len(members) == 8 * 6 * 6
    assert all(k[1] == 1 for k in members)


def test_spatial_window_clipped_at_corner():
    region = NormRegion(over_space=(3, 3))
    members = resolve_region(region, (1, 1, 6, 6), (0, 0, 0, 0))
    assert members == {(0, 0, 0, 0), (0, 0, 0, 1), (0, 0, 1, 0), (0, 0, 1, 1)}


def test_feature_axis_on_2d():
    region = NormRegion(over_channels="all")
    assert resolve_region(region, (3, 5), (0, 2)) == {(0, d) for d in range(5)}


@pytest.mark.parametrize("kwargs", [
    dict(),
    dict(over_channels=2),
    dict(over_channels=0),
    dict(over_space=(3, 4)),
    dict(over_space=(3,)),
    dict(over_channels="some"),
])
def test_invalid_regions(kwargs):
    with pytest.raises(InvalidRegionError):
        NormRegion(**kwargs)


def test_rank_validation():
    with pytest.raises(InvalidRegionError):
        resolve_region(NormRegion(over_space="all"), (2, 3), (0, 0))
    with pytest.raises(InvalidRegionError):
        region_mean(Tensor(np.ones((2, 3, 4))), NormRegion(over_channels="all"))


REGIONS_4D = [
    BN,
    NormRegion(False, "all", "all"),
    NormRegion(False, 3, (3, 3)),
    NormRegion(False, 1, (1, 1)),
    NormRegion(True, 3, "none"),
    NormRegion(False, "none", (5, 3)),
    NormRegion(True, "all", (1, 5)),
]


@pytest.mark.parametrize("region", REGIONS_4D)
def test_resolution_matches_predicate_oracle_everywhere(region):
    shape = (2, 3, 4, 3)
    for j in itertools.product(*map(range, shape)):
        assert resolve_region(region, shape, j) == brute_region(region, shape, j)


@pytest.mark.parametrize("region", REGIONS_4D)
def test_region_mean_and_sizes_match_oracle(region):
    x = np.random.default_rng(0).normal(size=(2, 3, 4, 3))
    np.testing.assert_allclose(region_mean(Tensor(x), region).data, brute_region_mean(x, region), rtol=0, atol=1e-12)
    sizes = region_sizes(region, x.shape)
    for j in itertools.product(*map(range, x.shape)):
        assert sizes[j] == len(brute_region(region, x.shape, j))


_sel_c = st.one_of(st.sampled_from(["none", "all"]), st.sampled_from([1, 3, 5]))
_sel_s = st.one_of(st.sampled_from(["none", "all"]), st.tuples(st.sampled_from([1, 3, 5]), st.sampled_from([1, 3])))


@settings(max_examples=40, deadline=None)
@given(batch=st.booleans(), ch=_sel_c, sp=_sel_s,
       shape=st.tuples(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4)),
       seed=st.integers(0, 1000))
def test_region_mean_property_vs_oracle(batch, ch, sp, shape, seed):
    try:
        region = NormRegion(batch, ch, sp)
    except InvalidRegionError:
        return
    x = np.random.default_rng(seed).normal(size=shape)
    np.testing.assert_allclose(apply_average(x, region), brute_region_mean(x, region), rtol=0, atol=1e-12)
    j = tuple(int(s) - 1 for s in shape)
    assert j in resolve_region(region, shape, j)


@pytest.mark.parametrize("region", [BN, NormRegion(False, "all", "all"), NormRegion(True, "none", "none"),
                                    NormRegion(False, "none", "all")])
def test_region_mean_idempotent_for_full_axis_regions(region):
    x = Tensor(np.random.default_rng(5).normal(size=(3, 2, 4, 4)))
    once = region_mean(x, region)
    np.testing.assert_allclose(region_mean(once, region).data, once.data, rtol=0, atol=1e-12)


def test_windowed_region_mean_is_not_idempotent():
    # sliding windows overlap, so a second pass smooths further
    region = NormRegion(over_channels=3)
    x = Tensor([[1.0, 0.0, 0.0]])
    once = region_mean(x, region)
    np.testing.assert_allclose(once.data, [[0.5, 1 / 3, 0.0]])
    assert not np.allclose(region_mean(once, region).data, once.data)


def test_full_window_equals_all_bitwise():
    x = np.random.default_rng(6).normal(size=(2, 3, 4, 5))
    full = apply_average(x, NormRegion(False, 5, (7, 9)))
    np.testing.assert_array_equal(full, apply_average(x, NormRegion(False, "all", "all")))


def test_dict_round_trip():
    for region in REGIONS_4D:
        assert NormRegion.from_dict(region.to_dict()) == region
