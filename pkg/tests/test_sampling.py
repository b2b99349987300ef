import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtr, ndtri
from scipy.stats import kstest

from alkrig.sampling import (
    ConfigurationError,
    Group,
    Marginal,
    SampleSet,
    UncertaintySpec,
    WindTurbineCurve,
    lhs_sample,
    load_empirical,
    mc_sample,
    wind_power,
)


def gaussian_spec(n_dims=1, mean=0.0, std=1.0, seed=0, groups=()):
    return UncertaintySpec(
        dims=tuple(Marginal.gaussian(mean, std) for _ in range(n_dims)),
        groups=groups,
        seed=seed,
    )


def rank_scores(x):
    """Gaussian scores of the ranks, for copula-scale correlation checks."""
    n = len(x)
    ranks = np.argsort(np.argsort(x))
    return ndtri((ranks + 0.5) / n)


# ---------------------------------------------------------------------------
# LHS
# ---------------------------------------------------------------------------

def test_lhs_one_sample_per_stratum():
    spec = gaussian_spec(1, mean=2.0, std=0.5, seed=3)
    x = lhs_sample(spec, 4).values[:, 0]
    strata = np.floor(ndtr((x - 2.0) / 0.5) * 4).astype(int)
    assert sorted(strata) == [0, 1, 2, 3]


def test_lhs_stratification_survives_correlation():
    spec = UncertaintySpec(
        dims=(Marginal.gaussian(0, 1), Marginal.weibull(11.2, 2.2), Marginal.gaussian(5, 2)),
        groups=(Group((0, 1, 2), 0.7),),
        seed=11,
    )
    n = 64
    s = lhs_sample(spec, n)
    for j, marg in enumerate(spec.dims):
        strata = np.floor(marg.cdf(s.values[:, j]) * n).astype(int)
        assert sorted(strata) == list(range(n))


def test_lhs_weibull_median():
    spec = UncertaintySpec(dims=(Marginal.weibull(11.2, 2.2),), seed=5)
    x = lhs_sample(spec, 10_000).values[:, 0]
    exact = 11.2 * np.log(2.0) ** (1.0 / 2.2)
    assert abs(np.median(x) - exact) / exact < 0.02


def test_lhs_group_rank_correlation():
    spec = gaussian_spec(2, seed=17, groups=(Group((0, 1), 0.8),))
    s = lhs_sample(spec, 10_000)
    z0, z1 = rank_scores(s.values[:, 0]), rank_scores(s.values[:, 1])
    rho = np.corrcoef(z0, z1)[0, 1]
    assert abs(rho - 0.8) < 0.05


def test_lhs_needs_positive_count():
    with pytest.raises(ConfigurationError):
        lhs_sample(gaussian_spec(), 0)


# ---------------------------------------------------------------------------
# plain Monte Carlo
# ---------------------------------------------------------------------------

def test_mc_empty_is_fine():
    s = mc_sample(gaussian_spec(3), 0)
    assert len(s) == 0 and s.ndim == 3


def test_mc_gaussian_moments():
    spec = gaussian_spec(1, mean=1.0, std=0.05, seed=23)
    x = mc_sample(spec, 100_000).values[:, 0]
    assert abs(x.mean() - 1.0) < 0.002
    assert abs(x.std() - 0.05) < 0.002


def test_mc_independent_groups_uncorrelated():
    spec = gaussian_spec(2, seed=29)
    x = mc_sample(spec, 10_000).values
    assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 0.05


def test_mc_copula_correlation_mixed_marginals():
    spec = UncertaintySpec(
        dims=(Marginal.gaussian(1.0, 0.1), Marginal.weibull(11.2, 2.2)),
        groups=(Group((0, 1), 0.5),),
        seed=31,
    )
    n = 10_000
    x = mc_sample(spec, n).values
    rho = np.corrcoef(rank_scores(x[:, 0]), rank_scores(x[:, 1]))[0, 1]
    assert abs(rho - 0.5) < 3.0 / np.sqrt(n)


@pytest.mark.parametrize("marg", [Marginal.gaussian(2.0, 0.3), Marginal.weibull(11.2, 2.2)])
def test_marginal_invariance_under_copula(marg):
    spec = UncertaintySpec(
        dims=(marg, Marginal.gaussian(0, 1)),
        groups=(Group((0, 1), 0.6),),
        seed=8,
    )
    n = 2000
    x = mc_sample(spec, n).values[:, 0]
    stat = kstest(x, marg.cdf).statistic
    assert stat < 1.63 / np.sqrt(n)


def test_sampling_determinism():
    spec = UncertaintySpec(
        dims=(Marginal.gaussian(1, 0.05), Marginal.weibull(11.2, 2.2)),
        groups=(Group((0, 1), 0.3),),
        seed=41,
    )
    a = mc_sample(spec, 500).values
    b = mc_sample(spec, 500).values
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(lhs_sample(spec, 64).values, lhs_sample(spec, 64).values)


# ---------------------------------------------------------------------------
# wind power curve
# ---------------------------------------------------------------------------

CURVE = WindTurbineCurve(rated_power=1.5, cut_in=3.0, rated_speed=12.0, cut_out=25.0)


def test_wind_power_boundaries():
    assert wind_power(CURVE, 3.0) == 0.0
    assert wind_power(CURVE, 12.0) == pytest.approx(1.5)
    assert wind_power(CURVE, 25.0) == pytest.approx(1.5)
    assert wind_power(CURVE, 25.0 + 1e-9) == 0.0
    assert wind_power(CURVE, 0.0) == 0.0


def test_wind_power_cubic_ramp():
    expected = 1.5 * (7.0**3 - 27.0) / (12.0**3 - 27.0)
    assert wind_power(CURVE, 7.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.2787, abs=5e-4)


@given(st.floats(0.0, 25.0), st.floats(0.0, 25.0))
def test_wind_power_monotone_below_cutout(v1, v2):
    lo, hi = sorted([v1, v2])
    assert wind_power(CURVE, lo) <= wind_power(CURVE, hi) + 1e-12


@given(st.floats(0.0, 60.0))
def test_wind_power_bounded(v):
    p = wind_power(CURVE, v)
    assert 0.0 <= p <= 1.5


def test_wind_power_rejects_negative_speed():
    with pytest.raises(ValueError):
        wind_power(CURVE, -1.0)


def test_curve_validation():
    with pytest.raises(ConfigurationError):
        WindTurbineCurve(rated_power=1.5, cut_in=12.0, rated_speed=3.0, cut_out=25.0)
    with pytest.raises(ConfigurationError):
        WindTurbineCurve(rated_power=-1.0)


# ---------------------------------------------------------------------------
# empirical marginals
# ---------------------------------------------------------------------------

def test_load_empirical_constant_column(tmp_path):
    p = tmp_path / "hist.csv"
    p.write_text("wind,load\n" + "\n".join("5.0,1.0" for _ in range(10)) + "\n")
    marg = load_empirical(p, "wind")
    spec = UncertaintySpec(dims=(marg,), seed=1)
    x = mc_sample(spec, 200).values
    assert np.all(x == 5.0)


def test_load_empirical_resampling_frequencies(tmp_path):
    p = tmp_path / "hist.csv"
    p.write_text("v\n1\n2\n3\n")
    marg = load_empirical(p, "v")
    spec = UncertaintySpec(dims=(marg,), seed=2)
    x = mc_sample(spec, 100_000).values[:, 0]
    for v in (1.0, 2.0, 3.0):
        assert abs(np.mean(x == v) - 1.0 / 3.0) < 0.01


def test_load_empirical_errors(tmp_path):
    p = tmp_path / "hist.csv"
    p.write_text("a,b\n1.0,x\n")
    with pytest.raises(ConfigurationError):
        load_empirical(p, "missing")
    with pytest.raises(ConfigurationError):
        load_empirical(p, "b")
    empty = tmp_path / "empty.csv"
    empty.write_text("a\n")
    with pytest.raises(ConfigurationError):
        load_empirical(empty, "a")
    with pytest.raises(FileNotFoundError):
        load_empirical(tmp_path / "nope.csv", "a")


# ---------------------------------------------------------------------------
# spec validation
# ---------------------------------------------------------------------------

def test_invalid_marginals_rejected():
    with pytest.raises(ConfigurationError):
        UncertaintySpec(dims=(Marginal.gaussian(0.0, -1.0),))
    with pytest.raises(ConfigurationError):
        UncertaintySpec(dims=(Marginal.weibull(-2.0, 1.0),))
    with pytest.raises(ConfigurationError):
        UncertaintySpec(dims=(Marginal.empirical([]),))


def test_group_validation():
    dims = tuple(Marginal.gaussian(0, 1) for _ in range(3))
    with pytest.raises(ConfigurationError):  # not positive definite
        UncertaintySpec(dims=dims, groups=(Group((0, 1, 2), -0.9),))
    with pytest.raises(ConfigurationError):  # overlapping membership
        UncertaintySpec(dims=dims, groups=(Group((0, 1), 0.2), Group((1, 2), 0.2)))
    with pytest.raises(ConfigurationError):  # out of range member
        UncertaintySpec(dims=dims, groups=(Group((0, 5), 0.2),))
    # singleton completion: uncovered dims become independent singletons
    spec = UncertaintySpec(dims=dims, groups=(Group((0, 1), 0.2),))
    assert sorted(i for g in spec.groups for i in g.members) == [0, 1, 2]


def test_spec_roundtrip():
    spec = UncertaintySpec(
        dims=(Marginal.gaussian(1, 0.05), Marginal.weibull(11.2, 2.2), Marginal.empirical([1, 2, 3])),
        groups=(Group((0, 1), 0.4),),
        seed=99,
    )
    again = UncertaintySpec.from_dict(spec.to_dict())
    np.testing.assert_array_equal(mc_sample(spec, 50).values, mc_sample(again, 50).values)


def test_sample_set_immutable():
    s = mc_sample(gaussian_spec(2, seed=1), 10)
    with pytest.raises(ValueError):
        s.values[0, 0] = 99.0
