import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snnlab.data import (DatasetManifest, InfeasibleRhoError, PPMFormatError, gen_dataset,
                         gen_scene, make_dataset, read_image, write_image)
from snnlab.metrics import dark_pixel_ratio


def test_infeasible_rho():
    with pytest.raises(InfeasibleRhoError):
        gen_scene(32, 32, 0.0)
    with pytest.raises(InfeasibleRhoError):
        gen_scene(32, 32, 0.999)
    with pytest.raises(ValueError):
        gen_scene(4, 32, 0.9)


def test_bright_area_matches_target():
    scene = gen_scene(32, 32, 0.9, noise_sigma=0.0, seed=3)
    assert 0.8 <= scene.rho_actual <= 1.0
    bright = int(np.sum(scene.image.mean(axis=0) >= 0.05))
    assert abs(bright - 102) <= 12
    assert scene.image.max() >= 0.6 - 0.05


def test_scene_determinism():
    a = gen_scene(16, 24, 0.7, seed=11)
    b = gen_scene(16, 24, 0.7, seed=11)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.target == b.target and a.rho_actual == b.rho_actual
    assert gen_scene(16, 24, 0.7, seed=12).image.tobytes() != a.image.tobytes()


@settings(max_examples=60, deadline=None)
@given(rho=st.floats(0.3, 0.99), seed=st.integers(0, 2**32 - 1), h=st.integers(8, 40),
       w=st.integers(8, 40), noise=st.floats(0.0, 0.01))
def test_scene_invariants(rho, seed, h, w, noise):
    try:
        scene = gen_scene(h, w, rho, noise, seed)
    except InfeasibleRhoError:
        return
    assert scene.image.shape == (3, h, w)
    assert scene.image.min() >= 0.0 and scene.image.max() <= 1.0
    assert all(0.0 <= t <= 1.0 for t in scene.target)
    assert scene.rho_actual == dark_pixel_ratio(scene.image)
    if h >= 32 and w >= 32:
        assert abs(scene.rho_actual - rho) <= 0.1


def test_ppm_round_trips(tmp_path):
    p = tmp_path / "x.ppm"
    for img in (np.zeros((3, 5, 7)), np.ones((3, 5, 7))):
        write_image(img, p)
        np.testing.assert_array_equal(read_image(p), img)
    img = np.random.default_rng(0).random((3, 9, 4))
    write_image(img, p)
    assert np.max(np.abs(read_image(p) - img)) <= 1 / 255 + 1e-12
    write_image(img[0], p)
    assert read_image(p).shape == (3, 9, 4)


def test_ppm_header_with_comment(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([0, 0, 0, 255, 255, 255]))
    np.testing.assert_array_equal(read_image(p)[:, 0, 1], [1.0, 1.0, 1.0])


@pytest.mark.parametrize("raw", [b"P5\n2 1\n255\n\0\0", b"P6\n2 x\n255\n", b"P6\n2 1\n255\n\0\0\0",
                                 b"P6\n2"])
def test_malformed_ppm(tmp_path, raw):
    p = tmp_path / "bad.ppm"
    p.write_bytes(raw)
    with pytest.raises(PPMFormatError):
        read_image(p)


def test_write_rejects_out_of_range(tmp_path):
    with pytest.raises(ValueError):
        write_image(np.full((3, 2, 2), 1.5), tmp_path / "x.ppm")


def test_gen_dataset(tmp_path):
    m = gen_dataset(2, 16, 16, [0.5, 0.9], 0.005, 7, tmp_path / "ds")
    assert len(m.items) == 4
    assert sorted(it["rho_target"] for it in m.items) == [0.5, 0.5, 0.9, 0.9]
    back = DatasetManifest.load(tmp_path / "ds" / "manifest.json")
    assert back.items == m.items and back.seed == 7
    doc = json.loads((tmp_path / "ds" / "manifest.json").read_text())
    assert set(doc) == {"seed", "params", "items"}
    for it in back.items:
        img = read_image(tmp_path / "ds" / it["path"])
        assert abs(dark_pixel_ratio(img) - it["rho"]) <= 0.01


def test_gen_dataset_bytes_deterministic(tmp_path):
    gen_dataset(1, 12, 12, [0.6, 0.8], 0.005, 3, tmp_path / "a")
    gen_dataset(1, 12, 12, [0.6, 0.8], 0.005, 3, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_bucket_means_increase():
    rhos = [0.35, 0.51, 0.59, 0.65, 0.69, 0.85, 0.87, 0.90, 0.95, 0.99]
    ds = make_dataset(6, 32, 32, rhos, seed=0)
    means = [ds.rho[ds.rho_target == r].mean() for r in rhos]
    assert all(b > a for a, b in zip(means, means[1:]))


def test_manifest_missing_file(tmp_path):
    gen_dataset(1, 8, 8, [0.8], 0.0, 0, tmp_path)
    (tmp_path / "img_00000.ppm").unlink()
    with pytest.raises(FileNotFoundError):
        DatasetManifest.load(tmp_path / "manifest.json")


def test_make_dataset_rejects_empty():
    with pytest.raises(ValueError):
        make_dataset(0, 8, 8, [0.5])
