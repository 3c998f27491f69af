"""Synthetic channel generation, normalization, and the CSID format."""

import inspect
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from csilab.channelgen import (
    DEFAULT_TEST,
    DEFAULT_TRAIN,
    NormStats,
    ScenarioDataset,
    ScenarioSpec,
    beamspace_argmax_bins,
    beamspace_spectrum,
    complex_to_real,
    default_scenarios,
    denormalize,
    generate_dataset,
    import_external,
    load_dataset,
    normalize,
    real_to_complex,
    save_dataset,
    sidecar_path,
    steering_vector,
    synth_channel,
)
from csilab.errors import (
    DecodeError,
    DegenerateDataError,
    MissingSidecarError,
    ShapeError,
    UnsupportedVersionError,
)

DEG = math.pi / 180.0


def _spec(**kw):
    base = dict(scenario_id="T", sector=(-0.3, 0.3), n_tx=8, n_sub=8, n_paths=4, seed=5)
    base.update(kw)
    return ScenarioSpec(**base)


# -- steering vectors ----------------------------------------------------------


def test_steering_theta_zero_is_all_ones():
    assert np.allclose(steering_vector(0.0, 16), np.ones(16), atol=1e-15)


def test_steering_pi_over_6_two_antennas():
    a = steering_vector(math.pi / 6, 2)
    assert np.allclose(a, [1.0, 1j], atol=1e-12)  # sin(pi/6) = 1/2 -> exp(j*pi/2)


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(-1.5, 1.5), n_tx=st.integers(1, 64))
def test_steering_unit_modulus(theta, n_tx):
    a = steering_vector(theta, n_tx)
    assert a.shape == (n_tx,)
    assert np.allclose(np.abs(a), 1.0, atol=1e-12)


def test_steering_rejects_endfire():
    with pytest.raises(ValueError):
        steering_vector(math.pi / 2, 4)
    with pytest.raises(ValueError):
        steering_vector(-2.0, 4)


# -- channel synthesis -----------------------------------------------------------


def test_single_path_no_delay_gives_constant_columns():
    spec = _spec(sector=(-1e-9, 1e-9), n_paths=1, delay_spread=0.0)
    h = synth_channel(spec, np.random.default_rng(3))
    assert h.shape == (8, 8)
    # rank-1 with tau=0: every column is alpha * a(0) = alpha * ones
    ref = h[:, 0]
    for n in range(8):
        assert np.allclose(h[:, n], ref, atol=1e-12)
    assert np.allclose(h / h[0, 0], np.ones((8, 8)), atol=1e-6)


def test_single_path_with_delay_is_rank_one_unit_scalars():
    spec = _spec(sector=(-1e-9, 1e-9), n_paths=1, delay_spread=3.0)
    h = synth_channel(spec, np.random.default_rng(4))
    col0 = h[:, 0]
    for n in range(8):
        c = h[0, n] / h[0, 0]
        assert abs(abs(c) - 1.0) < 1e-9  # unit-modulus delay phase
        assert np.allclose(h[:, n], c * col0, atol=1e-10)


def test_beamspace_sectors_are_disjoint():
    a_spec = _spec(scenario_id="lowband", sector=(10 * DEG, 20 * DEG), n_tx=32, n_sub=32)
    b_spec = _spec(scenario_id="negband", sector=(-60 * DEG, -50 * DEG), n_tx=32, n_sub=32)
    gen = np.random.default_rng(7)
    a = np.stack([complex_to_real(synth_channel(a_spec, gen)) for _ in range(200)])
    b = np.stack([complex_to_real(synth_channel(b_spec, gen)) for _ in range(200)])
    bins_a = beamspace_argmax_bins(a)
    bins_b = beamspace_argmax_bins(b)
    set_a, set_b = set(bins_a.tolist()), set(bins_b.tolist())
    cross_a = np.isin(bins_a, list(set_b)).mean()
    cross_b = np.isin(bins_b, list(set_a)).mean()
    assert cross_a < 0.05 and cross_b < 0.05, (set_a, set_b)


def test_beamspace_spectrum_shape():
    spec = _spec()
    x = np.stack([complex_to_real(synth_channel(spec, np.random.default_rng(i))) for i in range(3)])
    s = beamspace_spectrum(x)
    assert s.shape == (3, 8)
    assert (s >= 0).all()


def test_default_scenarios_sectors():
    a, b, c = default_scenarios(seed=9)
    assert (a.scenario_id, b.scenario_id, c.scenario_id) == ("A", "B", "C")
    assert a.sector == (0.0, 25 * DEG)
    assert b.sector == (35 * DEG, 60 * DEG)
    assert c.sector == (-60 * DEG, -35 * DEG)
    assert a.n_tx == a.n_sub == 32 and a.n_paths == 25
    assert a.seed == 9


def test_scenario_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec("x", (0.5, 0.2))
    with pytest.raises(ValueError):
        ScenarioSpec("x", (-2.0, 0.2))
    with pytest.raises(ValueError):
        ScenarioSpec("x", (0.0, 0.3), n_paths=0)
    with pytest.raises(ValueError):
        ScenarioSpec("x", (0.0, 0.3), delay_spread=-1.0)


# -- dataset generation ------------------------------------------------------------


def test_default_split_sizes_are_papers():
    assert (DEFAULT_TRAIN, DEFAULT_TEST) == (5000, 1000)
    sig = inspect.signature(generate_dataset)
    assert sig.parameters["n_train"].default == 5000
    assert sig.parameters["n_test"].default == 1000


def test_generated_dataset_shapes_and_range():
    ds = generate_dataset(_spec(), 40, 12)
    assert ds.train.shape == (40, 2, 8, 8)
    assert ds.test.shape == (12, 2, 8, 8)
    assert ds.train.dtype == np.float32 and ds.test.dtype == np.float32
    assert ds.normalized and ds.spec is not None and ds.stats is not None
    assert ds.train.min() == -1.0 and ds.train.max() == 1.0  # extremes attained
    assert ds.test.min() >= -1.0 and ds.test.max() <= 1.0  # clipped


def test_regeneration_is_bitwise_identical():
    a = generate_dataset(_spec(), 16, 8)
    b = generate_dataset(_spec(), 16, 8)
    assert np.array_equal(a.train, b.train) and np.array_equal(a.test, b.test)
    c = generate_dataset(_spec(seed=6), 16, 8)
    assert not np.array_equal(a.train, c.train)


def test_sample_streams_do_not_depend_on_split_point():
    # sample j is drawn from its own substream, so moving the train/test
    # boundary must not change the uncompressed values
    spec = _spec()
    a = generate_dataset(spec, 8, 4)
    b = generate_dataset(spec, 4, 8)
    raw_a = np.concatenate(
        [denormalize(a.train.astype(np.float64), a.stats), denormalize(a.test.astype(np.float64), a.stats)]
    )
    raw_b = np.concatenate(
        [denormalize(b.train.astype(np.float64), b.stats), denormalize(b.test.astype(np.float64), b.stats)]
    )
    span = raw_a.max() - raw_a.min()
    # test-split clipping may bite a clipped sample; compare the shared train part
    assert np.allclose(raw_a[:4], raw_b[:4], atol=2e-6 * span)


def test_generate_dataset_rejects_empty_split():
    with pytest.raises(ValueError):
        generate_dataset(_spec(), 0, 5)


# -- normalization -------------------------------------------------------------------


def test_normalize_endpoints_and_midpoint():
    stats = NormStats(-3.0, 5.0)
    assert normalize(np.array(-3.0), stats) == -1.0
    assert normalize(np.array(5.0), stats) == 1.0
    assert normalize(np.array(1.0), stats) == 0.0  # midpoint


@settings(max_examples=40, deadline=None)
@given(
    arr=hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=6), elements=st.floats(-100, 100)),
    lo=st.floats(-50, 49),
    width=st.floats(0.5, 100),
)
def test_normalize_round_trip(arr, lo, width):
    stats = NormStats(lo, lo + width)
    back = denormalize(normalize(arr, stats), stats)
    assert np.all(np.abs(back - arr) <= 1e-6 * width + 1e-12)


def test_degenerate_stats_error():
    with pytest.raises(DegenerateDataError):
        normalize(np.zeros(3), NormStats(2.0, 2.0))
    with pytest.raises(DegenerateDataError):
        denormalize(np.zeros(3), NormStats(2.0, 2.0))


# -- real/complex forms ----------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(
    re=hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
    im=hnp.arrays(np.float64, (3, 4), elements=st.floats(-10, 10)),
)
def test_complex_real_bijection(re, im):
    h = re + 1j * im
    x = complex_to_real(h)
    assert x.shape == (2, 3, 4)
    assert np.array_equal(real_to_complex(x), h)


def test_real_to_complex_shape_error():
    with pytest.raises(ShapeError):
        real_to_complex(np.zeros((3, 4, 4)))
    with pytest.raises(ShapeError):
        real_to_complex(np.zeros((4,)))


# -- CSID files ---------------------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    ds = generate_dataset(_spec(), 10, 4)
    p = tmp_path / "t.csid"
    save_dataset(ds, p)
    back = load_dataset(p)
    assert np.array_equal(back.train, ds.train)
    assert np.array_equal(back.test, ds.test)
    assert back.spec == ds.spec  # sector tuple restored through the sidecar
    assert back.stats == ds.stats
    assert back.normalized


def test_missing_sidecar_distinguishes_intact_payload(tmp_path):
    ds = generate_dataset(_spec(), 6, 2)
    p = tmp_path / "t.csid"
    save_dataset(ds, p)
    sidecar_path(p).unlink()
    with pytest.raises(MissingSidecarError, match="intact"):
        load_dataset(p)


def test_version_mismatch_error(tmp_path):
    ds = generate_dataset(_spec(), 6, 2)
    p = tmp_path / "t.csid"
    save_dataset(ds, p)
    blob = bytearray(p.read_bytes())
    blob[4] = 9  # little-endian version word
    p.write_bytes(bytes(blob))
    with pytest.raises(UnsupportedVersionError):
        load_dataset(p)


def test_truncated_payload_error(tmp_path):
    ds = generate_dataset(_spec(), 6, 2)
    p = tmp_path / "t.csid"
    save_dataset(ds, p)
    blob = p.read_bytes()
    p.write_bytes(blob[:-17])
    with pytest.raises(DecodeError):
        load_dataset(p)


def test_bad_magic_error(tmp_path):
    p = tmp_path / "t.csid"
    p.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(DecodeError):
        load_dataset(p)


def test_corrupt_sidecar_json(tmp_path):
    ds = generate_dataset(_spec(), 6, 2)
    p = tmp_path / "t.csid"
    save_dataset(ds, p)
    sidecar_path(p).write_text("{not json")
    with pytest.raises(DecodeError):
        load_dataset(p)


def test_sidecar_count_mismatch(tmp_path):
    ds = generate_dataset(_spec(), 6, 2)
    p = tmp_path / "t.csid"
    save_dataset(ds, p)
    meta = json.loads(sidecar_path(p).read_text())
    meta["n_train"] = 5
    sidecar_path(p).write_text(json.dumps(meta))
    with pytest.raises(DecodeError):
        load_dataset(p)


# -- external import ------------------------------------------------------------------------


def _raw_file(tmp_path, n, n_tx=4, n_sub=4, name="raw.csid"):
    gen = np.random.default_rng(11)
    raw = gen.standard_normal((n, 2, n_tx, n_sub)).astype(np.float32)
    ds = ScenarioDataset(spec=None, train=raw, test=raw[:0], stats=None, normalized=False)
    p = tmp_path / name
    save_dataset(ds, p)
    return p, raw


def test_import_external_five_sixths_split(tmp_path):
    p, raw = _raw_file(tmp_path, 600)
    ds = import_external(p, 4, 4)
    assert (ds.n_train, ds.n_test) == (500, 100)
    assert ds.normalized and ds.stats is not None
    # file order preserved: denormalizing recovers the original samples
    back = denormalize(ds.train.astype(np.float64), ds.stats)
    span = ds.stats.max - ds.stats.min
    assert np.allclose(back, raw[:500], atol=2e-6 * span)


def test_import_external_six_samples(tmp_path):
    p, _ = _raw_file(tmp_path, 6)
    ds = import_external(p, 4, 4)
    assert (ds.n_train, ds.n_test) == (5, 1)


def test_import_external_explicit_split(tmp_path):
    p, _ = _raw_file(tmp_path, 10)
    ds = import_external(p, 4, 4, n_train=7)
    assert (ds.n_train, ds.n_test) == (7, 3)
    with pytest.raises(ValueError):
        import_external(p, 4, 4, n_train=10)


def test_import_external_dimension_mismatch(tmp_path):
    p, _ = _raw_file(tmp_path, 12)
    with pytest.raises(ShapeError):
        import_external(p, 8, 4)


def test_import_external_rejects_normalized_file(tmp_path):
    ds = generate_dataset(_spec(n_tx=4, n_sub=4), 6, 2)
    p = tmp_path / "n.csid"
    save_dataset(ds, p)
    with pytest.raises(DecodeError):
        import_external(p, 4, 4)


def test_import_external_rejects_non_finite(tmp_path):
    gen = np.random.default_rng(1)
    raw = gen.standard_normal((12, 2, 4, 4)).astype(np.float32)
    raw[3, 1, 2, 2] = np.nan
    ds = ScenarioDataset(spec=None, train=raw, test=raw[:0], stats=None, normalized=False)
    p = tmp_path / "nan.csid"
    save_dataset(ds, p)
    with pytest.raises(DegenerateDataError):
        import_external(p, 4, 4)
