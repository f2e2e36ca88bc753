import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from rainsr.analysis import hf_energy_ratio, luma, psnr
from rainsr.data import (
    DEGRADATIONS,
    ImagePair,
    RainParams,
    _streak_kernel,
    bytes_to_tensor,
    downsample,
    gen_clean,
    load_dataset,
    load_image_folder,
    load_png,
    load_tensor,
    make_pair,
    save_png,
    save_tensor,
    synth_rain,
    synth_raindrop,
    tensor_to_bytes,
    write_dataset,
)
from rainsr.kernels import bicubic_resize_np

from test_kernels import box_mean_oracle


def _local_variance(img, r=2):
    """Mean windowed variance of the luma channel (valid windows)."""
    y = luma(img)
    k = 2 * r + 1
    wins = sliding_window_view(y, (k, k))
    return float(np.mean(wins.var(axis=(2, 3))))


def _up(lr, scale):
    return np.clip(bicubic_resize_np(lr, scale), 0.0, 1.0)


# --------------------------------------------------------------------------
# clean scenes


def test_gen_clean_range_and_shape():
    img = gen_clean(0, 48)
    assert img.shape == (48, 48, 3)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_gen_clean_deterministic():
    np.testing.assert_array_equal(gen_clean(3, 32), gen_clean(3, 32))
    assert not np.array_equal(gen_clean(3, 32), gen_clean(4, 32))


def test_gen_clean_min_size():
    with pytest.raises(ValueError, match="size"):
        gen_clean(0, 8)


def test_gen_clean_has_high_frequency_content():
    # blurring the scene must lower the high-frequency energy fraction,
    # i.e. the generator actually places content above the cutoff
    for seed in range(5):
        img = gen_clean(seed, 64)
        blurred = box_mean_oracle(img, 2)
        assert hf_energy_ratio(img) > hf_energy_ratio(blurred)
        assert hf_energy_ratio(img) > 0.01


# --------------------------------------------------------------------------
# rain streaks


def test_streak_kernel_unit_sum_and_orientation():
    k = _streak_kernel(9, 0.0)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    # vertical streak: mass concentrated in the central column
    col = k.sum(axis=0)
    assert col[len(col) // 2] > 0.9


def test_rain_zero_intensity_is_identity():
    img = gen_clean(0, 32)
    out = synth_rain(img, RainParams(intensity=0.0), seed=5)
    np.testing.assert_array_equal(out, img)
    assert out is not img  # a copy, not the same object


def test_rain_reproducible_and_seed_sensitive():
    img = gen_clean(1, 48)
    p = RainParams()
    np.testing.assert_array_equal(synth_rain(img, p, 7), synth_rain(img, p, 7))
    assert not np.array_equal(synth_rain(img, p, 7), synth_rain(img, p, 8))


def test_rain_brightens_and_stays_in_range():
    img = gen_clean(2, 48)
    out = synth_rain(img, RainParams(intensity=0.8), seed=1)
    assert np.all(out >= img - 1e-15)  # screen blend only brightens
    assert out.max() <= 1.0 + 1e-12


def test_rain_psnr_monotone_in_intensity():
    img = gen_clean(3, 64)
    vals = []
    for intensity in (0.2, 0.5, 0.8):
        out = synth_rain(img, RainParams(intensity=intensity), seed=9)
        vals.append(psnr(img, out))
    assert vals[0] > vals[1] > vals[2]


def test_rain_raises_hf_ratio():
    for seed in range(4):
        img = gen_clean(seed, 64)
        out = synth_rain(img, RainParams(intensity=0.6), seed=seed)
        assert hf_energy_ratio(out) > hf_energy_ratio(img)


def test_rain_param_validation():
    img = gen_clean(0, 32)
    with pytest.raises(ValueError, match="intensity"):
        synth_rain(img, RainParams(intensity=1.5), seed=0)
    with pytest.raises(ValueError, match="streak_length"):
        synth_rain(img, RainParams(streak_length=0), seed=0)


# --------------------------------------------------------------------------
# raindrops


def test_raindrop_zero_count_is_identity():
    img = gen_clean(4, 32)
    out = synth_raindrop(img, RainParams(drop_count=0), seed=2)
    np.testing.assert_array_equal(out, img)
    assert out is not img


def test_raindrop_reproducible():
    img = gen_clean(5, 48)
    p = RainParams()
    np.testing.assert_array_equal(
        synth_raindrop(img, p, 11), synth_raindrop(img, p, 11)
    )
    assert not np.array_equal(synth_raindrop(img, p, 11), synth_raindrop(img, p, 12))


def test_raindrop_changes_image_in_range():
    img = gen_clean(6, 48)
    out = synth_raindrop(img, RainParams(), seed=3)
    assert not np.array_equal(out, img)
    assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-12


def test_raindrop_full_cover_reduces_local_variance():
    # one opaque drop far larger than the frame: the whole image becomes a
    # blurred magnified copy, so fine texture must die down
    img = gen_clean(7, 48)
    p = RainParams(drop_count=1, drop_radius=200.0, drop_alpha=1.0)
    out = synth_raindrop(img, p, seed=4)
    assert _local_variance(out) < _local_variance(img)


# --------------------------------------------------------------------------
# pair construction


def test_make_pair_shapes_and_fields():
    pair = make_pair(0, scale=2, hr_size=64)
    assert pair.hr_clean.shape == (64, 64, 3)
    assert pair.lr_rainy.shape == (32, 32, 3)
    assert pair.scale == 2 and pair.seed == 0 and pair.degradation == "rain"
    assert pair.lr_rainy.min() >= 0.0 and pair.lr_rainy.max() <= 1.0


def test_make_pair_divisibility():
    with pytest.raises(ValueError, match="divisible"):
        make_pair(0, scale=3, hr_size=64)


def test_make_pair_zero_intensity_is_plain_downsample():
    p = RainParams(intensity=0.0)
    pair = make_pair(1, scale=2, hr_size=64, degradation="rain", params=p)
    np.testing.assert_array_equal(pair.lr_rainy, downsample(pair.hr_clean, 2))


def test_make_pair_degradation_hurts_psnr():
    for deg in DEGRADATIONS:
        pair = make_pair(2, scale=2, hr_size=64, degradation=deg)
        up_rainy = _up(pair.lr_rainy, 2)
        up_clean = _up(downsample(pair.hr_clean, 2), 2)
        assert psnr(up_rainy, pair.hr_clean) < psnr(up_clean, pair.hr_clean)


def test_make_pair_unknown_degradation():
    with pytest.raises(ValueError, match="degradation"):
        make_pair(0, degradation="sleet")


# --------------------------------------------------------------------------
# serialization


def test_tensor_bytes_round_trip():
    rng = np.random.default_rng(12)
    for shape in [(3,), (4, 5), (2, 3, 4)]:
        arr = rng.normal(size=shape)
        out = bytes_to_tensor(tensor_to_bytes(arr))
        np.testing.assert_array_equal(out, arr)
        assert out.dtype == np.float64


def test_tensor_bytes_validation():
    with pytest.raises(ValueError, match="magic"):
        bytes_to_tensor(b"XXXX" + b"\x00" * 8)
    blob = tensor_to_bytes(np.ones((2, 2)))
    with pytest.raises(ValueError, match="size"):
        bytes_to_tensor(blob[:-8])


def test_tensor_file_round_trip(tmp_path):
    arr = np.random.default_rng(13).uniform(size=(8, 8, 3))
    save_tensor(tmp_path / "t.f8", arr)
    np.testing.assert_array_equal(load_tensor(tmp_path / "t.f8"), arr)


def test_png_round_trip_is_quantized_identity(tmp_path):
    img = np.random.default_rng(14).uniform(size=(16, 16, 3))
    save_png(tmp_path / "i.png", img)
    back = load_png(tmp_path / "i.png")
    np.testing.assert_allclose(back, np.round(img * 255.0) / 255.0, atol=1e-12)


# --------------------------------------------------------------------------
# corpus generation


def test_write_dataset_layout_and_determinism(tmp_path):
    m1 = write_dataset(tmp_path / "a", n_train=6, n_test=3, hr_size=32, seed=0)
    m2 = write_dataset(tmp_path / "b", n_train=6, n_test=3, hr_size=32, seed=0)
    assert m1 == m2  # manifest bytes identical across reruns
    assert (tmp_path / "a" / "manifest.txt").read_text() == m1
    lr = load_tensor(tmp_path / "a" / "train" / "pair_00000.lr.f8")
    lr_b = load_tensor(tmp_path / "b" / "train" / "pair_00000.lr.f8")
    np.testing.assert_array_equal(lr, lr_b)
    assert lr.shape == (16, 16, 3)


def test_write_dataset_cycles_degradations(tmp_path):
    m = write_dataset(tmp_path, n_train=6, n_test=2, hr_size=32, seed=1)
    rows = [ln.split("\t") for ln in m.strip().splitlines()[1:]]
    train_degs = [r[3] for r in rows if r[0] == "train"]
    assert train_degs[:3] == list(DEGRADATIONS)
    assert train_degs[3:6] == list(DEGRADATIONS)


def test_load_dataset_round_trip(tmp_path):
    write_dataset(tmp_path, n_train=4, n_test=2, hr_size=32, seed=2)
    train = load_dataset(tmp_path, "train")
    test = load_dataset(tmp_path, "test")
    assert len(train) == 4 and len(test) == 2
    for pair in train + test:
        assert isinstance(pair, ImagePair)
        regen = make_pair(pair.seed, pair.scale, 32, pair.degradation)
        np.testing.assert_array_equal(pair.lr_rainy, regen.lr_rainy)
        np.testing.assert_array_equal(pair.hr_clean, regen.hr_clean)


def test_load_dataset_missing_split(tmp_path):
    write_dataset(tmp_path, n_train=2, n_test=0, hr_size=32, seed=3)
    with pytest.raises(ValueError, match="test"):
        load_dataset(tmp_path, "test")


def test_load_image_folder(tmp_path):
    rng = np.random.default_rng(15)
    for name in ("b.png", "a.png"):
        save_png(tmp_path / name, rng.uniform(size=(16, 16, 3)))
    items = load_image_folder(tmp_path)
    assert [n for n, _ in items] == ["a.png", "b.png"]
    assert items[0][1].shape == (16, 16, 3)
    with pytest.raises(ValueError, match="png"):
        load_image_folder(tmp_path / "empty")
