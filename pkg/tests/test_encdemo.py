import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from structqkd.detection import load_fixture
from structqkd.encdemo import (
    KeyStream,
    SymbolImage,
    channel_corrupt,
    confusion_channels,
    decrypt,
    discretize,
    empirical_confusion,
    encrypt,
    read_ppm,
    sample_image,
    symbol_error_rate,
    write_ppm,
)
from structqkd.mubs import make_mubs, theoretical_matrix
from structqkd.protocol import sift


def px(v):
    return np.full((1, 1, 3), v, dtype=np.uint8)


def test_discretize_examples():
    assert discretize(px(200), 2).symbols[0, 0, 0] == 1
    assert discretize(px(64), 4).symbols[0, 0, 0] == 1
    assert discretize(px(63), 4).symbols[0, 0, 0] == 0
    assert discretize(px(255), 4).symbols[0, 0, 0] == 3


def test_render_colour_count():
    img = discretize(sample_image(128, 96), 4)
    colours = np.unique(img.render().reshape(-1, 3), axis=0)
    assert len(colours) <= 64
    assert set(np.unique(img.render())) <= {32, 96, 160, 224}


def test_rejects_other_dimensions():
    with pytest.raises(ValueError):
        discretize(px(0), 3)
    with pytest.raises(ValueError):
        SymbolImage(np.full((1, 1, 3), 4), 4)


@settings(max_examples=60, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 8), st.integers(1, 8), st.just(3))),
       st.sampled_from([2, 4]), st.integers(0, 2 ** 32 - 1))
def test_round_trip(rgb, d, seed):
    img = discretize(rgb, d)
    key = KeyStream.seeded(img.size, d, seed)
    assert np.array_equal(decrypt(encrypt(img, key), key).symbols, img.symbols)


def test_zero_key_is_identity():
    img = discretize(sample_image(), 4)
    key = KeyStream(np.zeros(img.size, dtype=int), 4)
    assert np.array_equal(encrypt(img, key).symbols, img.symbols)


def test_key_mismatch():
    img = discretize(sample_image(8, 8), 4)
    with pytest.raises(ValueError):
        encrypt(img, KeyStream.seeded(img.size - 1, 4, 0))
    with pytest.raises(ValueError):
        encrypt(img, KeyStream.seeded(img.size, 2, 0))


def test_ciphertext_is_uniform():
    img = discretize(sample_image(200, 100), 4)
    enc = encrypt(img, KeyStream.seeded(img.size, 4, 9))
    counts = np.bincount(enc.symbols.ravel(), minlength=4)
    assert chisquare(counts).pvalue > 0.01


def test_identity_channel_is_lossless():
    img = discretize(sample_image(), 4)
    out = channel_corrupt(img, theoretical_matrix(make_mubs(4)), 0)
    assert np.array_equal(out.symbols, img.symbols)


@pytest.mark.parametrize("name,target", [("d4_noisy", 0.27), ("d4_corrected", 0.11)])
def test_error_rate_through_measured_channels(name, target):
    img = discretize(sample_image(200, 200), 4)  # 1.2e5 symbols
    key = KeyStream.seeded(img.size, 4, 1)
    dec = decrypt(channel_corrupt(encrypt(img, key), load_fixture(name), 5), key)
    assert symbol_error_rate(img, dec) == pytest.approx(target, abs=0.01)


def test_empirical_confusion_converges():
    M = load_fixture("d4_noisy")
    C = confusion_channels(M)
    rng = np.random.default_rng(0)
    sent = rng.integers(0, 4, (1, 50_000, 3))  # 1.5e5 symbols
    img = SymbolImage(sent, 4)
    out = channel_corrupt(img, M, 3)
    # each basis is used half the time, so the target is the mean of the two blocks
    E = empirical_confusion(sent, out.symbols, 4)
    assert np.max(np.abs(E - C.mean(axis=0))) < 0.01


def test_dimension_mismatch():
    img = discretize(sample_image(8, 8), 2)
    with pytest.raises(ValueError):
        channel_corrupt(img, load_fixture("d4_raw"), 0)


def test_seed_reuse_is_identical():
    img = discretize(sample_image(), 4)
    a = channel_corrupt(img, load_fixture("d4_raw"), 7)
    b = channel_corrupt(img, load_fixture("d4_raw"), 7)
    assert np.array_equal(a.symbols, b.symbols)


def test_key_from_sifted_symbols():
    res = sift([0, 1, 1], [0, 0, 1], [(3, 3), (1, 2), (2, 2)])
    key = KeyStream.from_sift(res, 4)
    assert key.symbols.tolist() == [3, 2]
    assert KeyStream.from_bytes(key.to_bytes(), 4).symbols.tolist() == [3, 2]
    with pytest.raises(ValueError):
        KeyStream.from_sift(res, 4, n=5)


def test_ppm_round_trip(tmp_path):
    rgb = sample_image(17, 9)
    write_ppm(tmp_path / "a.ppm", rgb)
    assert (tmp_path / "a.ppm").read_bytes()[:2] == b"P6"
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), rgb)


def test_ppm_with_comment(tmp_path):
    rgb = sample_image(3, 2)
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n3 2\n255\n" + rgb.tobytes())
    assert np.array_equal(read_ppm(tmp_path / "c.ppm"), rgb)


def test_ppm_errors(tmp_path):
    (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "p3.ppm")
    (tmp_path / "short.ppm").write_bytes(b"P6\n2 2\n255\n\x00\x00")
    with pytest.raises(ValueError, match="truncated"):
        read_ppm(tmp_path / "short.ppm")
