import csv
import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxseis.errors import FormatError, ShapeError
from cxseis.io import (
    SeismicVolume,
    SplitSpec,
    SynthConfig,
    denormalize,
    dominant_frequency,
    encode_npy,
    extract_patches,
    load_npy,
    normalize,
    parse_npy,
    patch_starts,
    ricker,
    save_npy,
    split_patches,
    synth_volume,
    write_origins_csv,
)
from cxseis.signal import hilbert_volume


def hand_written_npy(values, descr, shape):
    """Independent NPY v1.0 writer: header dict, space padding to 16 bytes, newline."""
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (descr, repr(shape))
    total = 10 + len(header) + 1
    header += " " * ((16 - total % 16) % 16) + "\n"
    fmt = {"<f4": "<%df", "<f8": "<%dd"}[descr] % len(values)
    return b"\x93NUMPY\x01\x00" + struct.pack("<H", len(header)) + header.encode() + struct.pack(fmt, *values)


def test_npy_round_trip_arange(tmp_path):
    vol = np.arange(24, dtype=float).reshape(2, 3, 4)
    path = tmp_path / "v.npy"
    save_npy(path, vol)
    out, descr, shape = load_npy(path)
    assert descr == "<f8" and shape == (2, 3, 4)
    np.testing.assert_array_equal(out, vol)


def test_npy_reads_independently_written_f4():
    buf = hand_written_npy([0, 0.25, 0.5, 0.75, 1.0], "<f4", (5,))
    out, descr, shape = parse_npy(buf)
    assert descr == "<f4" and shape == (5,)
    np.testing.assert_array_equal(out, [0, 0.25, 0.5, 0.75, 1.0])


def test_npy_cross_check_with_numpy(tmp_path):
    rng = np.random.default_rng(0)
    for dtype in ("<f4", "<f8"):
        a = rng.normal(size=(3, 5)).astype(dtype)
        bio = io.BytesIO()
        np.save(bio, a)
        out, descr, _ = parse_npy(bio.getvalue())
        assert descr == dtype
        np.testing.assert_array_equal(out, a.astype(np.float64))
    # and numpy reads what we write
    b = rng.normal(size=(2, 2, 7))
    got = np.load(io.BytesIO(encode_npy(b)))
    assert got.dtype == np.dtype("<f8")
    np.testing.assert_array_equal(got, b)


def test_npy_header_is_64_byte_aligned():
    raw = encode_npy(np.zeros((3, 4)))
    (hlen,) = struct.unpack("<H", raw[8:10])
    assert (10 + hlen) % 64 == 0


def test_npy_truncation_names_missing_bytes():
    raw = encode_npy(np.arange(10.0))
    with pytest.raises(FormatError, match="missing 8 bytes"):
        parse_npy(raw[:-8])
    with pytest.raises(FormatError, match="missing"):
        parse_npy(raw[:5])


def test_npy_rejects_other_dtypes_and_versions():
    bio = io.BytesIO()
    np.save(bio, np.arange(3, dtype=np.int32))
    with pytest.raises(FormatError, match="dtype"):
        parse_npy(bio.getvalue())
    raw = bytearray(encode_npy(np.zeros(2)))
    raw[6] = 2
    with pytest.raises(FormatError, match="version"):
        parse_npy(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        parse_npy(b"NOTNPY" + bytes(20))


@settings(max_examples=25, deadline=None)
@given(
    shape=st.lists(st.integers(0, 5), min_size=0, max_size=4),
    seed=st.integers(0, 2**16),
)
def test_npy_bit_exact_round_trip(shape, seed):
    a = np.random.default_rng(seed).normal(size=tuple(shape)) * 1e3
    out, _, got_shape = parse_npy(encode_npy(a))
    assert got_shape == tuple(shape)
    assert out.tobytes() == a.tobytes()


# ---------------------------------------------------------------------------
# normalization


def test_normalize_divides_by_peak():
    vol = SeismicVolume(np.array([[[1.0, -4.0, 2.0]]]))
    out, scale = normalize(vol)
    assert scale == 4.0
    np.testing.assert_array_equal(out.data, [[[0.25, -1.0, 0.5]]])
    again, s2 = normalize(out)
    assert s2 == 1.0
    np.testing.assert_array_equal(again.data, out.data)


def test_denormalize_round_trip():
    vol = SeismicVolume(np.random.default_rng(1).normal(size=(2, 3, 8)) * 7)
    out, scale = normalize(vol)
    assert np.max(np.abs(denormalize(out, scale).data - vol.data)) <= 1e-15 * np.abs(vol.data).max()


def test_normalize_rejects_zero_volume():
    with pytest.raises(ValueError):
        normalize(SeismicVolume(np.zeros((1, 2, 4))))


def test_volume_must_be_3d_and_finite():
    with pytest.raises(ShapeError):
        SeismicVolume(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SeismicVolume(np.full((1, 1, 2), np.nan))


# ---------------------------------------------------------------------------
# patches


def test_patch_counts_and_edge_anchor():
    one = extract_patches(SeismicVolume(np.zeros((1, 64, 64))), size=64, stride=64, axes=("inline",))
    assert len(one) == 1
    two = extract_patches(SeismicVolume(np.zeros((1, 64, 96))), size=64, stride=64, axes=("inline",))
    assert [o.col for o in two.origins] == [0, 32]
    assert patch_starts(100, 64, 32) == [0, 32, 36]
    with pytest.raises(ShapeError):
        patch_starts(10, 64, 32)


def test_patches_reassemble_volume():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(3, 70, 100))
    ps = extract_patches(SeismicVolume(data), size=32, stride=32, axes=("inline",))
    acc = np.zeros_like(data)
    hits = np.zeros_like(data)
    for patch, o in zip(ps.re[:, 0], ps.origins):
        acc[o.slice, o.row : o.row + 32, o.col : o.col + 32] += patch
        hits[o.slice, o.row : o.row + 32, o.col : o.col + 32] += 1
    assert hits.min() >= 1
    np.testing.assert_array_equal(acc[hits == 1], data[hits == 1])
    np.testing.assert_allclose(acc / hits, data, atol=1e-15)


def test_crossline_patches_use_inline_rows():
    data = np.arange(64 * 3 * 64, dtype=float).reshape(64, 3, 64)
    ps = extract_patches(SeismicVolume(data), size=64, stride=64, axes=("crossline",))
    assert len(ps) == 3
    o = ps.origins[1]
    np.testing.assert_array_equal(ps.re[1, 0], data[:, o.slice, :])


def test_axes_too_narrow_are_skipped():
    ps = extract_patches(SeismicVolume(np.zeros((2, 64, 64))), size=64, stride=32)
    assert {o.axis for o in ps.origins} == {"inline"}
    with pytest.raises(ShapeError):
        extract_patches(SeismicVolume(np.zeros((2, 8, 64))), size=64)


def test_analytic_patches_carry_whole_trace_quadrature():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(1, 64, 128))
    vol, _ = normalize(SeismicVolume(data))
    ps = extract_patches(vol, size=64, stride=64, axes=("inline",), analytic=True)
    quad = hilbert_volume(vol.data).imag
    for patch_re, patch_im, o in zip(ps.re[:, 0], ps.im[:, 0], ps.origins):
        np.testing.assert_array_equal(patch_re, vol.data[0, o.row : o.row + 64, o.col : o.col + 64])
        np.testing.assert_array_equal(patch_im, quad[0, o.row : o.row + 64, o.col : o.col + 64])
    assert ps.stacked().shape == (len(ps), 2, 64, 64)
    assert np.abs(ps.re).max() <= 1.0


def test_origins_csv(tmp_path):
    ps = extract_patches(SeismicVolume(np.zeros((2, 64, 64))), size=64, stride=64)
    path = tmp_path / "o.csv"
    write_origins_csv(ps, path)
    rows = list(csv.DictReader(open(path)))
    assert [r["patch_id"] for r in rows] == ["0", "1"]
    assert set(rows[0]) == {"patch_id", "axis", "slice", "row", "col"}


# ---------------------------------------------------------------------------
# splitting


def small_patchset(n_inline=40):
    vol = SeismicVolume(np.random.default_rng(4).normal(size=(n_inline, 64, 64)))
    return extract_patches(vol, size=32, stride=16)


def inline_span(o, size=32):
    return (o.slice, o.slice + 1) if o.axis == "inline" else (o.row, o.row + size)


def test_split_has_no_leakage_and_is_deterministic():
    ps = small_patchset()
    spec = SplitSpec(0.5, 0.25, 0.25, seed=3)
    sets = split_patches(ps, spec, 40)
    ranges = spec.inline_ranges(40)
    for name, subset in sets.items():
        lo, hi = ranges[name]
        for o in subset.origins:
            a, b = inline_span(o)
            assert lo <= a and b <= hi
    train_idx = {i for o in sets["train"].origins for i in range(*inline_span(o))}
    test_idx = {i for o in sets["test"].origins for i in range(*inline_span(o))}
    assert not train_idx & test_idx
    again = split_patches(ps, spec, 40)
    assert again["train"].origins == sets["train"].origins


def test_split_seed_changes_order_only():
    ps = small_patchset()
    a = split_patches(ps, SplitSpec(0.5, 0.25, 0.25, seed=1), 40)
    b = split_patches(ps, SplitSpec(0.5, 0.25, 0.25, seed=2), 40)
    assert sorted(a["val"].origins) == sorted(b["val"].origins)
    assert a["val"].origins != b["val"].origins


def test_split_rejects_bad_fractions():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        SplitSpec(1.2, -0.1, -0.1)


def test_split_explicit_ranges_and_empty_split():
    ps = small_patchset(20)
    spec = SplitSpec(ranges={"train": (0, 20), "val": (20, 20), "test": (20, 20)})
    sets = split_patches(ps, spec, 20)
    assert len(sets["train"]) == len(ps)
    assert sets["val"] is None and sets["test"] is None


# ---------------------------------------------------------------------------
# synthetics


def test_ricker_is_zero_phase_with_unit_peak():
    w = ricker(25.0, 0.004)
    np.testing.assert_allclose(w, w[::-1], atol=1e-15)
    assert w[len(w) // 2] == 1.0 and w.max() == 1.0


def test_synthetic_without_faults_or_noise_is_laterally_constant():
    vol = synth_volume(SynthConfig(dims=(3, 5, 128)))
    assert np.all(vol.data == vol.data[0, 0])
    assert np.abs(vol.data).max() == pytest.approx(1.0)


def test_synthetic_is_deterministic_per_seed():
    cfg = SynthConfig(dims=(2, 8, 128), noise_std=0.1, fault_count=3, seed=11)
    assert synth_volume(cfg).data.tobytes() == synth_volume(cfg).data.tobytes()
    other = synth_volume(SynthConfig(dims=(2, 8, 128), noise_std=0.1, fault_count=3, seed=12))
    assert other.data.tobytes() != synth_volume(cfg).data.tobytes()


def test_faults_displace_traces():
    vol = synth_volume(SynthConfig(dims=(16, 16, 128), fault_count=2, seed=5))
    traces = vol.data.reshape(-1, 128)
    assert len({t.tobytes() for t in traces}) > 1


def fft_peak_oracle(data, dt):
    """Peak of the trace-averaged amplitude spectrum via numpy's FFT."""
    traces = data.reshape(-1, data.shape[-1])
    traces = traces - traces.mean(axis=1, keepdims=True)
    amp = np.abs(np.fft.rfft(traces, axis=1)).mean(axis=0)
    return (np.argmax(amp[1:]) + 1) / (traces.shape[1] * dt)


@pytest.mark.parametrize("seed, hz, faults, noise", [(0, 25.0, 0, 0.0), (1, 15.0, 3, 0.05), (7, 40.0, 1, 0.02)])
def test_dominant_frequency_near_wavelet_peak(seed, hz, faults, noise):
    vol = synth_volume(SynthConfig(dims=(4, 16, 256), wavelet_hz=hz, fault_count=faults, noise_std=noise, seed=seed))
    peak = dominant_frequency(vol)
    assert peak == pytest.approx(fft_peak_oracle(vol.data, vol.dt))
    assert abs(peak - hz) <= 0.2 * hz


def test_synth_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(dims=(1, 2))
    with pytest.raises(ValueError):
        SynthConfig(wavelet_hz=0)
