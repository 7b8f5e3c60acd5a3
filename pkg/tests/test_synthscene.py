import json
import math

import numpy as np
import pytest

from ads import synthscene as ss
from ads.alignment import estimate_affine
from ads.errors import InvalidArgumentError, InvalidDescriptorError, ManifestError
from ads.geometry import decompose_affine


def test_gt_difference():
    src = ss.SceneDescriptor(d=1.0, sx=0.8, sy=0.9, theta=5.0, tx=0.1, ty=-0.1, a=0.2)
    tar = ss.SceneDescriptor(d=-2.0, sx=1.2, sy=0.9, theta=-10.0, tx=0.3, ty=0.2, a=0.7)
    g = ss.gt_difference(src, tar)
    assert g.d == 3.0
    assert g.sx == pytest.approx(1.5)
    assert g.sy == 1.0
    assert g.theta == -15.0
    assert (g.tx, g.ty) == pytest.approx((0.2, 0.3))
    assert g.a == pytest.approx(0.5)


def test_fill_color_endpoints(scene_cfg):
    np.testing.assert_allclose(ss.fill_color(0.0, scene_cfg), scene_cfg.color_a0)
    np.testing.assert_allclose(ss.fill_color(1.0, scene_cfg), scene_cfg.color_a1)


@pytest.mark.parametrize(
    "desc",
    [ss.SceneDescriptor(sx=0.0), ss.SceneDescriptor(a=1.5), ss.SceneDescriptor(d=60.0)],
)
def test_invalid_descriptors(desc):
    with pytest.raises(InvalidDescriptorError):
        ss.render(desc, 16, 16)


def test_keypoints_are_posed_boundary_points(scene_cfg):
    desc = ss.SceneDescriptor(d=2.0, sx=1.2, sy=0.8, theta=30.0, tx=0.1, ty=-0.2)
    kp = ss.keypoints(desc, scene_cfg)
    assert kp.shape == (12, 2)
    # undo the pose by hand and check the polar radius
    t = math.radians(30.0)
    rot_inv = np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]])
    obj = (kp - [0.1, -0.2]) @ rot_inv.T / [1.2, 0.8]
    phi = np.arctan2(obj[:, 1], obj[:, 0])
    expected = scene_cfg.radius * (1 + scene_cfg.amplitude * 2.0 * np.cos(3 * phi))
    np.testing.assert_allclose(np.hypot(obj[:, 0], obj[:, 1]), expected, atol=1e-12)


def test_positive_theta_is_clockwise_on_screen(scene_cfg):
    # keypoint 0 sits on the +x axis; +90 degrees moves it to +y, which is down
    kp = ss.keypoints(ss.SceneDescriptor(theta=90.0), scene_cfg)
    np.testing.assert_allclose(kp[0], [0.0, scene_cfg.radius], atol=1e-12)


def test_coverage_area_matches_closed_form(scene_cfg):
    desc = ss.SceneDescriptor(d=3.0, sx=1.1, sy=0.9)
    size = 256
    cov = ss.coverage(desc, size, size, scene_cfg)
    eps = scene_cfg.amplitude * 3.0
    area = math.pi * scene_cfg.radius**2 * (1 + eps**2 / 2) * 1.1 * 0.9
    assert cov.sum() * (2.0 / size) ** 2 == pytest.approx(area, rel=2e-3)


def test_render_colors_and_mask(scene_cfg):
    desc = ss.SceneDescriptor(a=0.25, background_seed=7)
    image, mask, _ = ss.render(desc, 32, 32, scene_cfg)
    np.testing.assert_allclose(image[16, 16], ss.fill_color(0.25, scene_cfg))
    np.testing.assert_allclose(image[0, 0], ss.background_color(7, scene_cfg))
    assert mask[16, 16] and not mask[0, 0]
    bg = ss.background_color(7, scene_cfg)
    assert bg[0] == bg[1] == bg[2]
    assert scene_cfg.background_range[0] <= bg[0] <= scene_cfg.background_range[1]


def test_render_is_deterministic():
    desc = ss.sample_descriptor(np.random.default_rng(1))
    a = ss.render(desc, 24, 24)
    b = ss.render(desc, 24, 24)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_image_rng_independent_of_order():
    a = ss.sample_descriptor(ss.image_rng(5, 3))
    ss.sample_descriptor(ss.image_rng(5, 0))
    assert ss.sample_descriptor(ss.image_rng(5, 3)) == a
    assert ss.sample_descriptor(ss.image_rng(5, 4)) != a


def test_sample_pairs_disjoint_and_within_ranges(scene_cfg):
    pairs = ss.sample_pairs(2000, 1000, 11, scene_cfg)
    ids = [i for p in pairs for i in p[:2]]
    assert len(set(ids)) == 2000
    gts = [ss.gt_difference(src, tar) for _, _, src, tar in pairs]
    d = np.array([g.d for g in gts])
    theta = np.array([g.theta for g in gts])
    sx = np.array([g.sx for g in gts])
    a = np.array([g.a for g in gts])
    assert 0 <= d.min() and d.max() <= 8
    assert np.abs(theta).max() <= 36
    assert 0.7 / 1.3 <= sx.min() and sx.max() <= 1.3 / 0.7
    assert 0 <= a.min() and a.max() <= 1
    # uniform marginals: the difference of two U(-4, 4) has mean |.| = 8/3
    assert d.mean() == pytest.approx(8 / 3, rel=0.05)
    # isotropic scale by default
    assert all(src.sx == src.sy for _, _, src, _ in pairs)


def test_sample_pairs_validation():
    with pytest.raises(InvalidArgumentError):
        ss.sample_pairs(4, 3, 0)
    with pytest.raises(InvalidArgumentError):
        ss.sample_pairs(1, 1, 0)


def test_scene_config_text_roundtrip(tmp_path):
    cfg = ss.SceneConfig(amplitude=0.03, n_keypoints=8, theta_range=(-10.0, 10.0))
    path = tmp_path / "scene.txt"
    path.write_text(cfg.to_text())
    assert ss.SceneConfig.load(path) == cfg
    assert ss.SceneConfig.from_text("radius = 0.4  # smaller\n").radius == 0.4
    with pytest.raises(InvalidArgumentError):
        ss.SceneConfig.from_text("colour = 3\n")
    with pytest.raises(InvalidArgumentError):
        ss.SceneConfig.from_text("radius = big\n")


def test_sample_dataset_layout_and_manifest(tmp_path):
    m = ss.sample_dataset(6, 3, 4, 32, 32, tmp_path)
    assert len(m) == 3
    loaded = ss.load_manifest(tmp_path / ss.MANIFEST_NAME)
    assert loaded.entries == m.entries
    entry = loaded.entries[0]
    assert entry.gt == ss.gt_difference(entry.source, entry.target)
    kp = json.loads(loaded.resolve(entry.keypoints).read_text())
    assert len(kp["pairs"]) == 12
    np.testing.assert_allclose(np.array(kp["pairs"])[:, 0], ss.keypoints(entry.source))
    assert (tmp_path / ss.CONFIG_NAME).is_file()


def test_sample_dataset_is_byte_identical(tmp_path):
    ss.sample_dataset(6, 3, 4, 32, 32, tmp_path / "a")
    ss.sample_dataset(6, 3, 4, 32, 32, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_write_dataset_from_explicit_pairs(tmp_path):
    src = ss.SceneDescriptor()
    tar = src.replace(theta=10.0)
    m = ss.write_dataset(tmp_path, [(src, tar)], 16, 16)
    assert m.entries[0].source_image == "images/img_00000.png"
    assert m.entries[0].target_image == "images/img_00001.png"
    assert m.entries[0].gt.theta == 10.0


def test_load_manifest_errors_name_the_line(tmp_path):
    m = ss.sample_dataset(4, 2, 0, 16, 16, tmp_path)
    lines = m.path.read_text().splitlines()
    m.path.write_text(lines[0] + "\n{broken\n")
    with pytest.raises(ManifestError) as info:
        ss.load_manifest(m.path)
    assert info.value.line == 2
    assert ":2:" in str(info.value)

    entry = json.loads(lines[1])
    entry["source_image"] = "images/missing.png"
    m.path.write_text(lines[0] + "\n" + json.dumps(entry) + "\n")
    with pytest.raises(ManifestError) as info:
        ss.load_manifest(m.path)
    assert info.value.line == 2
    assert len(ss.load_manifest(m.path, check_files=False)) == 2

    m.path.write_text("")
    with pytest.raises(ManifestError):
        ss.load_manifest(m.path)
    with pytest.raises(ManifestError):
        ss.load_manifest(tmp_path / "nope.jsonl")


def test_canonical_circle(scene_cfg):
    image, mask, _ = ss.render(ss.SceneDescriptor(), 128, 128, scene_cfg)
    frac = mask.mean()
    assert frac == pytest.approx(math.pi * scene_cfg.radius**2 / 4, rel=0.02)
    np.testing.assert_allclose(image[64, 64], scene_cfg.color_a0)
    ys, xs = np.nonzero(mask)
    assert xs.mean() == pytest.approx(63.5, abs=0.5) and ys.mean() == pytest.approx(63.5, abs=0.5)


def test_full_appearance_is_exact_second_color(scene_cfg):
    image, _, _ = ss.render(ss.SceneDescriptor(a=1.0), 32, 32, scene_cfg)
    np.testing.assert_array_equal(image[16, 16], np.asarray(scene_cfg.color_a1))


def test_rotated_keypoints(scene_cfg):
    base = ss.keypoints(ss.SceneDescriptor(d=2.5), scene_cfg)
    turned = ss.keypoints(ss.SceneDescriptor(d=2.5, theta=90.0), scene_cfg)
    np.testing.assert_allclose(turned, np.stack([-base[:, 1], base[:, 0]], axis=1), atol=1e-15)


def test_gt_hand_cases():
    g = ss.gt_difference(ss.SceneDescriptor(), ss.SceneDescriptor())
    assert (g.d, g.sx, g.sy, g.theta, g.tx, g.ty, g.a) == (0, 1, 1, 0, 0, 0, 0)
    g = ss.gt_difference(ss.SceneDescriptor(d=1, a=0.2, sx=0.8), ss.SceneDescriptor(d=3, a=0.9, sx=1.2))
    assert g.d == 2 and g.a == pytest.approx(0.7) and g.sx == pytest.approx(1.5)


def test_small_dataset_structure(tmp_path, scene_cfg):
    m = ss.sample_dataset(4, 2, 1, 16, 16, tmp_path)
    assert len(m) == 2
    for e in m.entries:
        for rel in (e.source_image, e.source_mask, e.target_image, e.keypoints):
            assert m.resolve(rel).is_file()
        for desc in (e.source, e.target):
            assert scene_cfg.d_range[0] <= desc.d <= scene_cfg.d_range[1]
            assert scene_cfg.scale_range[0] <= desc.sx <= scene_cfg.scale_range[1]
            assert scene_cfg.theta_range[0] <= desc.theta <= scene_cfg.theta_range[1]


def test_theta_difference_marginal():
    pairs = ss.sample_pairs(2000, 1000, 3)
    theta = np.array([tar.theta - src.theta for _, _, src, tar in pairs])
    # the difference of two U(-18, 18) has standard deviation 36/sqrt(6)
    assert abs(theta.mean()) < 4 * (36 / math.sqrt(6)) / math.sqrt(1000)
    assert theta.min() >= -36 and theta.max() <= 36


def test_oracle_keypoints_recover_pose():
    rng = np.random.default_rng(0)
    for _ in range(20):
        src = ss.sample_descriptor(rng)
        new = ss.sample_descriptor(rng)
        tar = src.replace(sx=new.sx, sy=new.sy, theta=new.theta, tx=new.tx, ty=new.ty)
        est = estimate_affine(ss.oracle_correspondences(src, tar))
        d = decompose_affine(est)
        g = ss.gt_difference(src, tar)
        assert d.theta == pytest.approx(g.theta, abs=1e-6)
        assert d.sx == pytest.approx(g.sx, abs=1e-6)
        assert d.sy == pytest.approx(g.sy, abs=1e-6)
        # the source centre lands on the target centre
        np.testing.assert_allclose(est.apply([[src.tx, src.ty]])[0], [tar.tx, tar.ty], atol=1e-6)
