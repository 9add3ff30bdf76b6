import math

import numpy as np
import pytest
from scipy import stats

from mdcr.distributions import (
    DEFAULT_TABLE,
    DUPLICATE_TABLE,
    ErrorSpec,
    Family,
    default_error_specs,
    extension_spec,
    raw_moments,
    standardized_sample,
)


def scipy_law(spec):
    p = spec.params
    return {
        Family.BETA: lambda: stats.beta(p[0], p[1]),
        Family.CHISQUARE: lambda: stats.chi2(p[0]),
        Family.GUMBEL: lambda: stats.gumbel_r(loc=p[0], scale=p[1]),
        Family.LOGNORMAL: lambda: stats.lognorm(s=p[1], scale=math.exp(p[0])),
        Family.WEIBULL: lambda: stats.weibull_min(p[1], scale=p[0]),
        Family.EXPONENTIAL: lambda: stats.expon(scale=1 / p[0]),
        Family.SKEWNORMAL: lambda: stats.skewnorm(p[0]),
    }[spec.family]()


ALL_SPECS = list(DEFAULT_TABLE) + [extension_spec(t) for t in range(12)]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
def test_closed_form_moments_match_scipy(spec):
    mean, var = raw_moments(spec)
    law = scipy_law(spec)
    assert mean == pytest.approx(law.mean(), rel=1e-12)
    assert var == pytest.approx(law.var(), rel=1e-10)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
def test_sampler_matches_scipy_law(spec):
    rng = np.random.default_rng(1)
    x = standardized_sample(spec, 20_000, rng)
    law = scipy_law(spec)
    res = stats.kstest(x * law.std() + law.mean(), law.cdf)
    assert res.pvalue > 1e-4


def test_standardized_sample_moments():
    rng = np.random.default_rng(0)
    for spec in DEFAULT_TABLE:
        x = standardized_sample(spec, 200_000, rng)
        assert abs(x.mean()) < 0.02
        assert abs(x.var() - 1) < 0.05


def test_default_laws_are_pairwise_distinct():
    keys = [s.key for s in default_error_specs(40)]
    assert len(set(keys)) == len(keys)


def test_duplicate_table_repeats_laws():
    keys = [s.key for s in DUPLICATE_TABLE]
    assert len(set(keys)) < len(keys)


def test_key_ignores_location_and_scale():
    assert ErrorSpec(Family.GUMBEL, (0, 1)).key == ErrorSpec(Family.GUMBEL, (3, 2)).key
    assert ErrorSpec(Family.EXPONENTIAL, (0.1,)).key == ErrorSpec(Family.EXPONENTIAL, (2,)).key
    assert ErrorSpec(Family.WEIBULL, (1, 2)).key != ErrorSpec(Family.WEIBULL, (1, 1)).key


def test_weibull_reads_scale_then_shape():
    spec = ErrorSpec(Family.WEIBULL, (1, 2))
    assert spec.mean() == pytest.approx(math.gamma(1.5))


@pytest.mark.parametrize("family,params", [(Family.BETA, (0, 1)), (Family.CHISQUARE, (1, 2)), (Family.GUMBEL, (0, -1))])
def test_invalid_parameters_raise(family, params):
    with pytest.raises(ValueError):
        ErrorSpec(family, params)


def test_spec_round_trip():
    for spec in ALL_SPECS:
        assert ErrorSpec.from_dict(spec.to_dict()) == spec
