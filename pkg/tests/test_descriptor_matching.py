import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binofeat import descriptor_matching as dm
from binofeat.errors import BoundsError, IngestionError, ShapeError
from oracles import bit_hamming, sign_bits


def rand_descs(rng, n):
    return rng.integers(0, 256, (n, dm.NBYTES), dtype=np.uint8)


def test_binarize_examples():
    assert dm.binarize(np.zeros(256)).tolist() == [255] * 32
    f = np.random.default_rng(0).normal(size=256)
    f[f == 0] = 1.0
    assert dm.hamming(dm.binarize(f), dm.binarize(-f)) == 256
    with pytest.raises(ShapeError):
        dm.binarize(np.zeros(128))


@pytest.mark.parametrize("seed", range(10))
def test_binarize_matches_elementwise_oracle(seed):
    f = np.random.default_rng(seed).normal(size=256)
    f[::17] = 0.0
    assert dm.unpack(dm.binarize(f)).astype(int).tolist() == sign_bits(f)


def test_hamming_examples_and_oracle():
    rng = np.random.default_rng(1)
    a = rand_descs(rng, 1)[0]
    assert dm.hamming(a, a) == 0
    assert dm.hamming(a, ~a) == 256
    for _ in range(50):
        x, y = rand_descs(rng, 2)
        assert dm.hamming(x, y) == bit_hamming(x.tobytes(), y.tobytes())


def test_hamming_matrix_matches_pairwise():
    rng = np.random.default_rng(2)
    a, b = rand_descs(rng, 37), rand_descs(rng, 23)
    m = dm.hamming_matrix(a, b, block=8)
    want = np.array([[bit_hamming(x.tobytes(), y.tobytes()) for y in b] for x in a])
    np.testing.assert_array_equal(m, want)


def test_unit_sphere_examples():
    d = rand_descs(np.random.default_rng(3), 1)[0]
    s = dm.to_unit_sphere(d)
    assert np.linalg.norm(s) == pytest.approx(1.0)
    assert np.sum((s - dm.to_unit_sphere(d)) ** 2) == 0.0
    assert np.sum((s - dm.to_unit_sphere(~d)) ** 2) == pytest.approx(4.0)


def test_unit_sphere_distance_is_hamming_over_64():
    rng = np.random.default_rng(4)
    a, b = rand_descs(rng, 1000), rand_descs(rng, 1000)
    l2 = np.sum((dm.to_unit_sphere(a) - dm.to_unit_sphere(b)) ** 2, axis=1)
    np.testing.assert_allclose(l2, dm.hamming(a, b) / 64.0, atol=1e-6)


def test_match_identity_sets():
    d = rand_descs(np.random.default_rng(5), 40)
    m = dm.match_nn(d, d, max_hamming=0)
    assert [(x.index_a, x.index_b, x.hamming_distance) for x in m] == [(i, i, 0) for i in range(40)]


def test_max_hamming_zero_on_random_sets_is_empty():
    rng = np.random.default_rng(6)
    assert dm.match_nn(rand_descs(rng, 30), rand_descs(rng, 30), max_hamming=0) == []
    assert dm.match_nn(np.zeros((0, 32), np.uint8), rand_descs(rng, 3)) == []


def _match_oracle(a, b, max_h, cross):
    out = []
    for i, x in enumerate(a):
        ds = [bit_hamming(x.tobytes(), y.tobytes()) for y in b]
        j = min(range(len(b)), key=lambda t: (ds[t], t))
        if ds[j] > max_h:
            continue
        if cross:
            back = [bit_hamming(b[j].tobytes(), z.tobytes()) for z in a]
            if min(range(len(a)), key=lambda t: (back[t], t)) != i:
                continue
        out.append((i, j, ds[j]))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 256), st.booleans(), st.integers(0, 10**6))
def test_match_matches_exhaustive_oracle(na, nb, max_h, cross, seed):
    rng = np.random.default_rng(seed)
    # a small pool makes duplicate descriptors, hence distance ties, common
    pool = rand_descs(rng, 6)
    a = pool[rng.integers(0, 6, na)]
    b = pool[rng.integers(0, 6, nb)] ^ (rng.random((nb, 32)) < 0.02).astype(np.uint8)
    got = [tuple(m) for m in dm.match_nn(a, b, max_h, cross)]
    assert got == _match_oracle(a, b, max_h, cross)


def test_brief_properties():
    pat = dm.make_brief_pattern(0)
    assert pat.shape == (256, 4) and np.abs(pat).max() <= 15
    assert np.array_equal(pat, dm.make_brief_pattern(0))
    const = np.full((64, 64), 0.4)
    assert dm.brief_baseline(const, (32, 32), pat).tolist() == [0] * 32
    img = np.random.default_rng(7).random((64, 64))
    d1 = dm.brief_baseline(img, (30, 33), pat)
    assert np.array_equal(d1, dm.brief_baseline(img, (30, 33), pat))
    assert np.array_equal(d1, dm.brief_baseline(img + 10 / 255, (30, 33), pat))
    with pytest.raises(BoundsError):
        dm.brief_baseline(img, (5, 32), pat)
    assert dm.brief_margin_ok([[16, 16], [15, 16], [47, 47], [48, 20]], 64, 64).tolist() == [True, False, True, False]


def test_descriptor_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    uv = rng.uniform(0, 300, (17, 2))
    conf = rng.random(17)
    d = rand_descs(rng, 17)
    dm.write_descriptor_dump(tmp_path / "x.desc", uv, conf, d)
    uv2, c2, d2 = dm.read_descriptor_dump(tmp_path / "x.desc")
    np.testing.assert_allclose(uv2, uv, rtol=1e-6)
    np.testing.assert_allclose(c2, conf, rtol=1e-6)
    np.testing.assert_array_equal(d2, d)
    raw = (tmp_path / "x.desc").read_bytes()
    (tmp_path / "y.desc").write_bytes(raw[:-5])
    with pytest.raises(IngestionError):
        dm.read_descriptor_dump(tmp_path / "y.desc")
    (tmp_path / "z.desc").write_bytes(b"junk")
    with pytest.raises(IngestionError):
        dm.read_descriptor_dump(tmp_path / "z.desc")
