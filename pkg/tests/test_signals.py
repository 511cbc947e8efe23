import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from ncg import signals as S
from ncg.rng import stream
from ncg.signals import NoiseSpec


def lag1(x):
    x = x - x.mean()
    return float(x[1:] @ x[:-1] / (x @ x))


# -- AR(1) --------------------------------------------------------------------------

def test_ar1_white_limit():
    x = S.gen_ar1(math.pi / 2, 1_000_000, stream(0, "t")).samples
    assert abs(lag1(x)) < 0.01


@pytest.mark.parametrize("cos_theta", [math.sqrt(3) / 2, 0.3])
def test_ar1_moments(cos_theta):
    x = S.gen_ar1(math.acos(cos_theta), 1_000_000, stream(1, "t")).samples
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.01
    assert abs(lag1(x) - cos_theta) < 0.01


def test_ar1_strongly_correlated_lag1():
    x = S.gen_ar1(math.acos(0.95), 1_000_000, stream(1, "t")).samples
    assert abs(lag1(x) - 0.95) < 0.01


def test_ar1_recursion_holds_exactly():
    theta = 0.4
    x = S.gen_ar1(theta, 50, stream(2, "t")).samples
    rng = stream(2, "t")
    eta = rng.standard_normal(50)
    assert x[0] == eta[0]
    for t in range(1, 50):
        assert x[t] == pytest.approx(math.cos(theta) * x[t - 1] + math.sin(theta) * eta[t], abs=1e-12)


@pytest.mark.parametrize("theta", [0.0, -0.1, math.pi / 2 + 1e-3])
def test_ar1_theta_out_of_range(theta):
    with pytest.raises(ValueError, match="theta"):
        S.gen_ar1(theta, 10, stream(0))


def test_noise_spec_parameterizations_agree():
    a = NoiseSpec.ar1(cos_theta=0.5)
    b = NoiseSpec.ar1(theta=math.pi / 3)
    assert a.theta == pytest.approx(b.theta)
    assert NoiseSpec.from_dict({"kind": "ar1", "cos_theta": 0.5}).theta == pytest.approx(b.theta)
    assert NoiseSpec.from_dict(a.to_dict()) == a
    with pytest.raises(ValueError):
        NoiseSpec.ar1(theta=1.0, cos_theta=0.5)
    with pytest.raises(ValueError, match="unknown noise kind"):
        NoiseSpec("pink")
    with pytest.raises(ValueError, match="no parameters"):
        NoiseSpec.from_dict({"kind": "binary", "theta": 1.0})


# -- discrete -------------------------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(S.LEVELS))
def test_discrete_exact_moments(kind):
    lv = S.LEVELS[kind]
    assert abs(lv.mean()) < 1e-15
    assert abs((lv ** 2).mean() - 1) < 1e-15


@pytest.mark.parametrize("kind", sorted(S.LEVELS))
def test_discrete_sample_moments(kind):
    x = S.gen_discrete(kind, 1_000_000, stream(3, kind)).samples
    assert set(np.unique(x)) <= set(S.LEVELS[kind])
    assert abs(x.mean()) < 0.005
    assert abs(x.var() - 1) < 0.01


def test_level_sets():
    np.testing.assert_array_equal(S.LEVELS["binary"], [-1, 1])
    np.testing.assert_allclose(S.LEVELS["ternary_balanced"], [-math.sqrt(1.5), 0, math.sqrt(1.5)])
    np.testing.assert_allclose(S.LEVELS["ternary_unbalanced"],
                               [-(1 + math.sqrt(3)) / 2, (math.sqrt(3) - 1) / 2, 1])


def test_unknown_discrete_kind():
    with pytest.raises(ValueError, match="unknown discrete"):
        S.gen_discrete("quaternary", 10, stream(0))


# -- envelope and mixture ---------------------------------------------------------------

def test_envelope_values():
    assert S.envelope(0, 2000) == 0.5
    assert S.envelope(500, 2000) == pytest.approx(0.880797, abs=1e-6)
    with pytest.raises(ValueError):
        S.envelope(1, 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1e6), st.floats(1, 1e4))
def test_envelope_periodic_and_bounded(t, tau):
    v = float(S.envelope(t, tau))
    assert 0 < v < 1
    assert abs(float(S.envelope(t + tau, tau)) - v) < 1e-9


def test_mixture_truth_is_envelope():
    sig = S.gen_mixture(NoiseSpec.ar1(cos_theta=0.5), NoiseSpec("gaussian"), 2000, 10_000, stream(0))
    np.testing.assert_array_equal(sig.truth, S.envelope(np.arange(10_000), 2000))
    assert sig.truth.min() > 0 and sig.truth.max() < 1


def test_mixture_with_unit_envelope_is_component_a():
    a, b = NoiseSpec("binary"), NoiseSpec("gaussian")
    sig = S.gen_mixture(a, b, 2000, 1000, stream(5), psi=1.0)
    ref = S.gen_noise(a, 1000, stream(5)).samples
    np.testing.assert_array_equal(sig.samples, ref)


def test_mixture_of_equal_specs_keeps_distribution():
    g = NoiseSpec("gaussian")
    mix = S.gen_mixture(g, g, 2000, 100_000, stream(6)).samples
    ref = stream(7).standard_normal(100_000)
    # a psi-weighted sum of independent normals is not unit variance; compare after standardizing
    w = S.envelope(np.arange(100_000), 2000)
    z = mix / np.sqrt(w ** 2 + (1 - w) ** 2)
    assert ks_2samp(z, ref).statistic < 0.01


def test_mixture_of_equal_ar1_specs_keeps_lag1():
    a = NoiseSpec.ar1(cos_theta=0.8)
    mix = S.gen_mixture(a, a, 2000, 200_000, stream(8), psi=0.5).samples
    assert abs(lag1(mix) - 0.8) < 0.01


def test_default_dataset_shape():
    assert S.DEFAULT_N == 500_000 and S.DEFAULT_TAU == 2000
    sig = S.gen_mixture(NoiseSpec.ar1(cos_theta=math.sqrt(3) / 2), NoiseSpec("gaussian"), rng=stream(0))
    assert len(sig) == 500_000


def test_generators_are_reproducible():
    spec = NoiseSpec.ar1(cos_theta=0.7)
    a = S.gen_mixture(spec, NoiseSpec("ternary_balanced"), 300, 5000, stream(9, "x"))
    b = S.gen_mixture(spec, NoiseSpec("ternary_balanced"), 300, 5000, stream(9, "x"))
    assert a.samples.tobytes() == b.samples.tobytes()
    c = S.gen_mixture(spec, NoiseSpec("ternary_balanced"), 300, 5000, stream(10, "x"))
    assert not np.array_equal(a.samples, c.samples)


# -- CSV ------------------------------------------------------------------------------------

def test_ingest_plain_column(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1\n2\n3\n4\n")
    np.testing.assert_array_equal(S.ingest_csv(p).samples, [1, 2, 3, 4])


def test_ingest_named_column_and_scientific_notation(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,1e-3\n2,2.5E2\n")
    np.testing.assert_array_equal(S.ingest_csv(p, "b").samples, [1e-3, 250])
    np.testing.assert_array_equal(S.ingest_csv(p, 0).samples, [1, 2])


def test_ingest_multichannel(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2,3\n4,5,6\n")
    assert S.ingest_csv(p, multichannel=True).samples.shape == (3, 2)


def test_ingest_non_numeric_row_names_the_row(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1\n2\nabc\n4\n")
    with pytest.raises(ValueError, match="row 3"):
        S.ingest_csv(p)


def test_ingest_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="no column named"):
        S.ingest_csv(p, "c")
    with pytest.raises(ValueError, match="out of range"):
        S.ingest_csv(p, 5)
    p.write_text("1,2\n3\n")
    with pytest.raises(ValueError, match="row 2"):
        S.ingest_csv(p)
    p.write_text("1\nnan\n")
    with pytest.raises(ValueError, match="not finite"):
        S.ingest_csv(p)


def test_dataset_round_trip(tmp_path):
    a, g = NoiseSpec.ar1(cos_theta=0.5), NoiseSpec("gaussian")
    train = S.gen_mixture(a, g, 100, 300, stream(0, "train"))
    test = S.gen_mixture(a, g, 100, 300, stream(0, "test"))
    S.save_dataset(tmp_path, train, test, {"seed": 0, "a": a.to_dict()})
    tr, te = S.load_dataset(tmp_path)
    assert tr.samples.tobytes() == train.samples.tobytes()
    assert te.truth.tobytes() == test.truth.tobytes()
    assert tr.meta["seed"] == 0


def test_load_dataset_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        S.load_dataset(tmp_path)
