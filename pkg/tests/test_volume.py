import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fibrorad.volume import (
    ContrastPhase,
    Volume,
    VolumeFormatError,
    clip_hu,
    read_header,
    read_volume,
    resample_region,
    resample_trilinear,
    write_volume,
)


def test_constant_file_reads_back(tmp_path):
    v = Volume(np.full((2, 2, 2), 55.0), (1.0, 1.0, 1.0))
    write_volume(v, tmp_path / "c.mhd")
    got = read_volume(tmp_path / "c.mhd")
    assert got.dims == (2, 2, 2)
    assert np.all(got.voxels == 55)
    assert "MET_SHORT" in (tmp_path / "c.mhd").read_text()


def test_round_trip_preserves_spacing_bits(tmp_path, rng):
    v = Volume(rng.integers(-1000, 1000, (3, 4, 5)).astype(float), (0.7031250001, 0.1 + 0.2, 2.5), (-12.3, 4.56, 1e-7))
    write_volume(v, tmp_path / "v.mhd")
    got = read_volume(tmp_path / "v.mhd")
    assert got == v
    assert got.spacing == v.spacing and got.origin == v.origin


def test_round_trip_real_values(tmp_path, rng):
    v = Volume(rng.normal(size=(4, 3, 2)), (1.0, 1.0, 1.0))
    write_volume(v, tmp_path / "r.mhd")
    assert read_volume(tmp_path / "r.mhd") == v


def test_x_fastest_layout(tmp_path):
    vox = np.arange(24, dtype=float).reshape(2, 3, 4)
    write_volume(Volume(vox, (1, 1, 1)), tmp_path / "o.mhd")
    raw = np.fromfile(tmp_path / "o.raw", dtype="<i2")
    assert raw[1] == vox[1, 0, 0]
    assert raw[2] == vox[0, 1, 0]
    assert raw[6] == vox[0, 0, 1]


def test_truncated_raw(tmp_path):
    write_volume(Volume(np.zeros((3, 3, 3)), (1, 1, 1)), tmp_path / "t.mhd")
    data = (tmp_path / "t.raw").read_bytes()
    (tmp_path / "t.raw").write_bytes(data[:-2])
    with pytest.raises(VolumeFormatError, match="buffer length mismatch"):
        read_volume(tmp_path / "t.mhd")


def test_bad_headers(tmp_path):
    write_volume(Volume(np.zeros((2, 2, 2)), (1, 1, 1)), tmp_path / "h.mhd")
    text = (tmp_path / "h.mhd").read_text()
    (tmp_path / "a.mhd").write_text(text.replace("MET_SHORT", "MET_FLOAT16"))
    (tmp_path / "a.raw").write_bytes((tmp_path / "h.raw").read_bytes())
    with pytest.raises(VolumeFormatError, match="element type"):
        read_volume(tmp_path / "a.mhd")
    (tmp_path / "b.mhd").write_text("\n".join(l for l in text.splitlines() if not l.startswith("DimSize")))
    with pytest.raises(VolumeFormatError, match="missing"):
        read_volume(tmp_path / "b.mhd")
    (tmp_path / "c.mhd").write_text(text + "this line has no separator\n")
    with pytest.raises(VolumeFormatError):
        read_volume(tmp_path / "c.mhd")


def test_header_only(tmp_path):
    write_volume(Volume(np.zeros((2, 3, 4)), (0.5, 0.6, 0.7), (1, 2, 3)), tmp_path / "x.mhd")
    assert read_header(tmp_path / "x.mhd") == ((2, 3, 4), (0.5, 0.6, 0.7), (1.0, 2.0, 3.0))


def test_invalid_volumes():
    with pytest.raises(ValueError):
        Volume(np.zeros((0, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), (1, 0, 1))
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), np.nan), (1, 1, 1))


def test_identity_resample(rng):
    v = Volume(rng.normal(size=(5, 4, 3)), (0.5, 0.5, 0.5))
    out = resample_trilinear(v, 0.5)
    assert out.dims == v.dims
    assert np.array_equal(out.voxels, v.voxels)


@pytest.mark.parametrize("spacing", [(0.7, 1.3, 2.0), (1.0, 1.0, 1.0), (3.0, 0.4, 0.9)])
def test_constant_resample(spacing):
    v = Volume(np.full((4, 5, 6), 55.0), spacing)
    out = resample_trilinear(v, 0.5)
    assert out.spacing == (0.5, 0.5, 0.5)
    assert np.all(out.voxels == 55.0)


def test_ramp_midpoint():
    v = Volume(np.array([0.0, 100.0]).reshape(2, 1, 1), (1.0, 1.0, 1.0))
    out = resample_trilinear(v, 0.5)
    assert out.dims == (4, 2, 2)
    assert out.voxels[:, 0, 0].tolist() == [0.0, 50.0, 100.0, 100.0]


def test_output_dims_follow_extent():
    v = Volume(np.zeros((10, 7, 3)), (0.8, 1.1, 2.5))
    out = resample_trilinear(v, 0.5)
    assert out.dims == (16, 16, 15)


def test_region_matches_full(rng):
    v = Volume(rng.normal(size=(9, 8, 7)), (1.3, 0.9, 1.7), (2.0, -3.0, 5.0))
    full = resample_trilinear(v, 0.5)
    lo, hi = (4.0, -1.0, 7.2), (8.1, 2.0, 11.0)
    part = resample_region(v, 0.5, lo, hi)
    i0 = [int(round((part.origin[a] - full.origin[a]) / 0.5)) for a in range(3)]
    sl = tuple(slice(i0[a], i0[a] + part.dims[a]) for a in range(3))
    assert np.array_equal(part.voxels, full.voxels[sl])


def test_nonpositive_target():
    v = Volume(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        resample_trilinear(v, 0.0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4, 2), elements=st.floats(-1000, 1000)),
       st.floats(0.3, 2.0), st.floats(0.3, 2.0))
def test_resample_is_convex(vox, s, t):
    v = Volume(vox, (s, 1.0, 0.7))
    out = resample_trilinear(v, t)
    assert out.voxels.min() >= vox.min() - 1e-9
    assert out.voxels.max() <= vox.max() + 1e-9


def test_clip_examples():
    v = Volume(np.array([-50.0, 50.0, 150.0]).reshape(3, 1, 1), (1, 1, 1))
    assert clip_hu(v, ContrastPhase.NC).voxels.ravel().tolist() == [0.0, 50.0, 100.0]
    w = Volume(np.array([-10.0]).reshape(1, 1, 1), (1, 1, 1))
    assert clip_hu(w, ContrastPhase.CE).voxels.item() == -10.0
    inside = Volume(np.array([0.0, 20.0, 100.0]).reshape(3, 1, 1), (1, 1, 1))
    assert clip_hu(inside, ContrastPhase.NC) == inside


def test_clip_ranges():
    assert ContrastPhase.NC.clip_range == (0, 100)
    assert ContrastPhase.CE.clip_range == (-10, 200)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3, 2), elements=st.floats(-2000, 2000)), st.sampled_from(list(ContrastPhase)))
def test_clip_idempotent(vox, phase):
    v = Volume(vox, (1, 1, 1))
    once = clip_hu(v, phase)
    assert clip_hu(once, phase) == once
    lo, hi = phase.clip_range
    assert once.voxels.min() >= lo and once.voxels.max() <= hi


def test_volumes_are_immutable():
    v = Volume(np.zeros((2, 2, 2)), (1, 1, 1))
    with pytest.raises(ValueError):
        v.voxels[0, 0, 0] = 1.0
