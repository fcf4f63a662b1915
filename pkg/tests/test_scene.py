import math

import numpy as np
import pytest

from app.core.errors import SpecError
from app.models.scene import BackgroundKind, SceneSpec, ShapeClass
from app.services.metrics_service import miou
from app.services.scene_service import (
    CLASS_HUES, array_to_image, build_edit_suite, class_palette, color_rgb, generate_scene, image_to_array,
    oracle_segment, recolor_target, sample_spec,
)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 1.0


def circle(**overrides) -> SceneSpec:
    fields = dict(shape=ShapeClass.CIRCLE, color="red", center_x=8.0, center_y=8.0, radius=4.0)
    fields.update(overrides)
    return SceneSpec(**fields)


class TestGenerator:
    def test_image_and_mask_shapes(self):
        scene = generate_scene(sample_spec(3))
        assert scene.image.shape == (16, 16, 3) and scene.image.dtype == np.uint8
        assert scene.mask.shape == (16, 16)

    def test_deterministic(self):
        a = generate_scene(sample_spec(42))
        b = generate_scene(sample_spec(42))
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask.values, b.mask.values)
        assert a.spec == b.spec

    @pytest.mark.parametrize("radius", [3.0, 4.0, 5.5])
    def test_circle_area(self, radius):
        scene = generate_scene(circle(radius=radius))
        assert abs(scene.mask.area - math.pi * radius ** 2) <= math.pi * radius

    def test_area_always_in_bounds(self):
        for seed in range(50):
            fraction = generate_scene(sample_spec(seed)).mask.area_fraction
            assert 0.02 <= fraction <= 0.5

    def test_every_class_sampled(self):
        seen = {sample_spec(seed).shape for seed in range(60)}
        assert seen == set(ShapeClass)

    def test_prompt_describes_scene(self):
        scene = generate_scene(circle(striped=True, background=BackgroundKind.CHECKER))
        assert scene.p_src.inside == ("striped", "red", "circle")
        assert scene.p_src.outside == ("checker", "background")

    def test_wrong_palette_colour(self):
        with pytest.raises(SpecError):
            generate_scene(circle(color="blue"))

    def test_object_too_small(self):
        with pytest.raises(SpecError):
            generate_scene(circle(radius=0.3))

    def test_object_pixels_use_palette(self):
        scene = generate_scene(circle())
        inside = scene.image[scene.mask.as_bool()]
        assert (inside == color_rgb("red")).all()


class TestKeypoints:
    def test_centroid_matches_mask(self):
        scene = generate_scene(sample_spec(7))
        ys, xs = np.nonzero(scene.mask.values)
        centroid = scene.keypoints[0]
        assert centroid.name == "centroid"
        assert centroid.x == pytest.approx(xs.mean()) and centroid.y == pytest.approx(ys.mean())

    def test_extremes_lie_on_mask(self):
        for seed in range(20):
            scene = generate_scene(sample_spec(seed))
            ys, xs = np.nonzero(scene.mask.values)
            named = {kp.name: kp for kp in scene.keypoints}
            assert set(named) == {"centroid", "top", "bottom", "left", "right"}
            for name in ("top", "bottom", "left", "right"):
                kp = named[name]
                assert scene.mask.values[int(kp.y), int(kp.x)] == 1
            assert named["top"].y == ys.min() and named["bottom"].y == ys.max()
            assert named["left"].x == xs.min() and named["right"].x == xs.max()


class TestOracle:
    def test_exact_without_cleanup(self):
        for seed in range(30):
            scene = generate_scene(sample_spec(seed))
            mask = oracle_segment(scene.image, scene.spec.shape, scene.spec.striped, cleanup_votes=9)
            assert np.array_equal(mask.values, scene.mask.values)

    @pytest.mark.parametrize("antialias", [False, True])
    def test_self_consistency(self, antialias):
        scores = []
        for seed in range(100):
            scene = generate_scene(sample_spec(seed, antialias=antialias))
            mask = oracle_segment(scene.image, scene.spec.shape, scene.spec.striped)
            scores.append(iou(mask.as_bool(), scene.mask.as_bool()))
        assert np.mean(scores) >= 0.95

    def test_circle_matches_ground_truth(self):
        scene = generate_scene(circle())
        assert np.array_equal(oracle_segment(scene.image, ShapeClass.CIRCLE).values, scene.mask.values)

    def test_blank_image(self):
        image = np.full((16, 16, 3), 128, dtype=np.uint8)
        for shape in ShapeClass:
            assert oracle_segment(image, shape).area == 0

    def test_other_class_not_segmented(self):
        scene = generate_scene(circle())
        assert oracle_segment(scene.image, ShapeClass.SQUARE).area == 0

    def test_recolored_object_still_found(self):
        spec = circle(radius=5.0)
        recolored = generate_scene(spec.model_copy(update={"color": recolor_target(spec.shape, spec.color)}))
        mask = oracle_segment(recolored.image, ShapeClass.CIRCLE)
        assert np.array_equal(mask.values, recolored.mask.values)

    def test_striped_object(self):
        scene = generate_scene(circle(striped=True, radius=5.0))
        mask = oracle_segment(scene.image, ShapeClass.CIRCLE, striped=True)
        assert iou(mask.as_bool(), scene.mask.as_bool()) >= 0.95

    def test_rejects_grayscale_input(self):
        with pytest.raises(SpecError):
            oracle_segment(np.zeros((16, 16), dtype=np.uint8), ShapeClass.CIRCLE)


class TestPalette:
    def test_hues_disjoint_across_classes(self):
        names = [name for hues in CLASS_HUES.values() for name in hues]
        assert len(names) == len(set(names)) == 8

    def test_palette_size(self):
        assert len(class_palette(ShapeClass.STAR)) == 2
        assert len(class_palette(ShapeClass.STAR, striped=True)) == 4

    def test_recolor_target(self):
        assert recolor_target(ShapeClass.CIRCLE, "red") == "cyan"
        assert recolor_target(ShapeClass.CIRCLE, "cyan") == "red"


def test_model_space_roundtrip(rng):
    image = rng.integers(0, 256, size=(8, 8, 3)).astype(np.uint8)
    x = image_to_array(image)
    assert x.shape == (3, 8, 8) and x.dtype == np.float32
    assert x.min() >= -1.0 and x.max() <= 1.0
    assert np.array_equal(array_to_image(x), image)


def test_edit_suite():
    cases = build_edit_suite(6, seed=100)
    assert [c.scene_id for c in cases] == list(range(6))
    for case in cases:
        spec = case.scene.spec
        assert case.p_edit.inside[-1] == spec.shape.value
        assert case.p_edit.inside[-2] == recolor_target(spec.shape, spec.color)
        assert case.p_edit.outside == case.scene.p_src.outside
    assert cases[0].scene.spec == sample_spec(100)


def test_gt_mask_scores_one_against_itself():
    scene = generate_scene(sample_spec(5))
    assert miou(scene.mask, scene.mask, scene.mask) == 1.0
