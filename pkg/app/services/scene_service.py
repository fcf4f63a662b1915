"""
Procedural scenes with ground-truth masks and keypoints, and the oracle segmenter
"""
import colorsys
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from app.core.errors import SpecError
from app.core.tensor import make_rng
from app.models.attention import ObjectMask
from app.models.prompt import PromptPair
from app.models.scene import BackgroundKind, Keypoint, Scene, SceneSpec, ShapeClass


SUPERSAMPLE = 5
MIN_AREA = 0.02
MAX_AREA = 0.50
MAX_REJECTIONS = 100
STRIPED_RATE = 0.25
GRAY_RANGE = (70, 190)
CHECKER_CELL = 4

# two hues per class, no hue shared across classes
CLASS_HUES: Dict[ShapeClass, Dict[str, float]] = {
    ShapeClass.CIRCLE: {"red": 0.0, "cyan": 180.0},
    ShapeClass.SQUARE: {"orange": 45.0, "blue": 225.0},
    ShapeClass.TRIANGLE: {"lime": 90.0, "purple": 270.0},
    ShapeClass.STAR: {"green": 135.0, "pink": 315.0},
}
SATURATION = 0.8
VALUE = 0.9

KEYPOINT_NAMES = ("centroid", "top", "bottom", "left", "right")


def color_rgb(name: str) -> np.ndarray:
    for hues in CLASS_HUES.values():
        if name in hues:
            r, g, b = colorsys.hsv_to_rgb(hues[name] / 360.0, SATURATION, VALUE)
            return np.round(np.array([r, g, b]) * 255.0)
    raise SpecError(f"Unknown colour '{name}'")


def stripe_rgb(name: str) -> np.ndarray:
    """Half-brightness shade used on odd rows of striped objects"""
    return np.round(color_rgb(name) * 0.5)


def class_palette(shape: ShapeClass, striped: bool = False) -> List[np.ndarray]:
    """Colours an object of this class is rendered with; stripe shades only for striped objects"""
    palette = [color_rgb(name) for name in CLASS_HUES[shape]]
    if striped:
        palette += [stripe_rgb(name) for name in CLASS_HUES[shape]]
    return palette


def recolor_target(shape: ShapeClass, color: str) -> str:
    """The other colour of the same class"""
    names = [n for n in CLASS_HUES[shape] if n != color]
    if not names:
        raise SpecError(f"'{color}' is not a {shape.value} colour")
    return names[0]


# -- geometry -------------------------------------------------------------------

def _polygon(cx: float, cy: float, radii: List[float], start_deg: float) -> np.ndarray:
    n = len(radii)
    angles = np.deg2rad(start_deg + 360.0 * np.arange(n) / n)
    return np.stack([cx + np.array(radii) * np.cos(angles), cy + np.array(radii) * np.sin(angles)], axis=1)


def shape_polygon(spec: SceneSpec) -> Optional[np.ndarray]:
    """Vertices (x, y) in pixel units for polygonal classes, None for circles"""
    cx, cy, r = spec.center_x, spec.center_y, spec.radius
    if spec.shape == ShapeClass.SQUARE:
        half = r * math.sqrt(math.pi) / 2.0
        return np.array([[cx - half, cy - half], [cx + half, cy - half],
                         [cx + half, cy + half], [cx - half, cy + half]])
    if spec.shape == ShapeClass.TRIANGLE:
        return _polygon(cx, cy, [r, r, r], -90.0)
    if spec.shape == ShapeClass.STAR:
        return _polygon(cx, cy, [r, 0.45 * r] * 5, -90.0)
    return None


def _inside_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over sample points"""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < x_at)
    return inside


def coverage(spec: SceneSpec) -> np.ndarray:
    """Fraction of each pixel covered by the shape, from a 5x5 sample grid"""
    size = spec.image_size
    offsets = (np.arange(size * SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    px, py = np.meshgrid(offsets, offsets)
    poly = shape_polygon(spec)
    if poly is None:
        hit = (px - spec.center_x) ** 2 + (py - spec.center_y) ** 2 <= spec.radius ** 2
    else:
        hit = _inside_polygon(px, py, poly)
    return hit.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def _background(spec: SceneSpec) -> np.ndarray:
    rng = make_rng(spec.seed + 7919)
    size = spec.image_size
    lo, hi = GRAY_RANGE
    a, b = rng.integers(lo, hi + 1, size=2)
    if spec.background == BackgroundKind.SOLID:
        gray = np.full((size, size), float(a))
    elif spec.background == BackgroundKind.GRADIENT:
        ramp = np.linspace(float(a), float(b), size)
        gray = np.tile(ramp, (size, 1))
    else:
        if abs(int(a) - int(b)) < 40:
            b = lo if a > (lo + hi) // 2 else hi
        ys, xs = np.mgrid[0:size, 0:size]
        gray = np.where(((ys // CHECKER_CELL) + (xs // CHECKER_CELL)) % 2 == 0, float(a), float(b))
    return np.repeat(np.round(gray)[:, :, None], 3, axis=2)


def _object_colors(spec: SceneSpec) -> np.ndarray:
    size = spec.image_size
    colors = np.broadcast_to(color_rgb(spec.color), (size, size, 3)).copy()
    if spec.striped:
        colors[1::2] = stripe_rgb(spec.color)
    return colors


def render(spec: SceneSpec, cover: np.ndarray) -> np.ndarray:
    bg = _background(spec)
    obj = _object_colors(spec)
    if spec.antialias:
        c = cover[:, :, None]
        image = c * obj + (1.0 - c) * bg
    else:
        image = np.where((cover >= 0.5)[:, :, None], obj, bg)
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


# -- keypoints ------------------------------------------------------------------

def scene_keypoints(mask: ObjectMask) -> List[Keypoint]:
    """
    Centroid plus the top, bottom, left and right extreme pixels of a mask.
    Extreme points are the mask pixel nearest the centroid line on the extreme row/column.
    Returns an empty list for an empty mask.
    """
    ys, xs = np.nonzero(mask.values)
    if ys.size == 0:
        return []
    cx, cy = float(xs.mean()), float(ys.mean())

    def pick(on_line: np.ndarray, along: np.ndarray, center: float) -> int:
        candidates = np.flatnonzero(on_line)
        return int(candidates[np.argmin(np.abs(along[candidates] - center))])

    top = pick(ys == ys.min(), xs, cx)
    bottom = pick(ys == ys.max(), xs, cx)
    left = pick(xs == xs.min(), ys, cy)
    right = pick(xs == xs.max(), ys, cy)
    points = [Keypoint(name="centroid", x=cx, y=cy)]
    for name, idx in (("top", top), ("bottom", bottom), ("left", left), ("right", right)):
        points.append(Keypoint(name=name, x=float(xs[idx]), y=float(ys[idx])))
    return points


# -- scenes ---------------------------------------------------------------------

def prompt_for(spec: SceneSpec, color: Optional[str] = None) -> PromptPair:
    inside = (["striped"] if spec.striped else []) + [color or spec.color, spec.shape.value]
    return PromptPair(inside=tuple(inside), outside=(spec.background.value, "background"))


def generate_scene(spec: SceneSpec) -> Scene:
    """
    Render a scene deterministically from its spec

    Args:
        spec: shape, colour, background, placement and seed

    Returns:
        Scene: image (H x W x 3 uint8), ground-truth mask, keypoints and source prompt
    """
    if spec.color not in CLASS_HUES[spec.shape]:
        raise SpecError(f"'{spec.color}' is not in the {spec.shape.value} palette")
    cover = coverage(spec)
    mask = ObjectMask((cover >= 0.5).astype(np.uint8))
    if not MIN_AREA <= mask.area_fraction <= MAX_AREA:
        raise SpecError(f"object covers {mask.area_fraction:.3f} of the image, outside [{MIN_AREA}, {MAX_AREA}]")
    return Scene(
        spec=spec,
        image=render(spec, cover),
        mask=mask,
        keypoints=scene_keypoints(mask),
        p_src=prompt_for(spec),
    )


def sample_spec(seed: int, image_size: int = 16, shape: Optional[ShapeClass] = None,
                antialias: bool = False) -> SceneSpec:
    """Rejection-sample a spec whose object area falls within the allowed bounds"""
    rng = make_rng(seed)
    classes = list(ShapeClass)
    for _ in range(MAX_REJECTIONS):
        cls = shape or classes[int(rng.integers(len(classes)))]
        colors = list(CLASS_HUES[cls])
        radius = float(rng.uniform(0.15, 0.4) * image_size)
        margin = min(radius + 0.5, image_size / 2.0)
        spec = SceneSpec(
            shape=cls,
            color=colors[int(rng.integers(len(colors)))],
            striped=bool(rng.random() < STRIPED_RATE),
            background=list(BackgroundKind)[int(rng.integers(len(BackgroundKind)))],
            center_x=float(rng.uniform(margin, image_size - margin)),
            center_y=float(rng.uniform(margin, image_size - margin)),
            radius=radius,
            image_size=image_size,
            seed=seed,
            antialias=antialias,
        )
        fraction = float((coverage(spec) >= 0.5).mean())
        if MIN_AREA <= fraction <= MAX_AREA:
            return spec
    raise SpecError(f"no spec within area bounds after {MAX_REJECTIONS} draws (seed {seed})")


# -- oracle segmenter -----------------------------------------------------------

def _majority_cleanup(hit: np.ndarray, votes: int) -> np.ndarray:
    """Flip pixels whose 8-neighbourhood disagrees with them in at least ``votes`` places"""
    padded = np.pad(hit.astype(np.int32), 1)
    h, w = hit.shape
    neighbours = sum(
        padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)
    )
    disagree = np.where(hit, 8 - neighbours, neighbours)
    return np.where(disagree >= votes, ~hit, hit)


def oracle_segment(image: np.ndarray, shape: ShapeClass, striped: bool = False,
                   tolerance: float = 40.0, cleanup_votes: int = 7) -> ObjectMask:
    """
    Segment the pixels that match any palette colour of the class

    A pixel p matches colour c when the least-squares fit p ~ a*c + b*(1,1,1) has
    a >= 0.5 and a residual within ``tolerance``; gray backgrounds fit with a = 0.
    Stripe shades are half-brightness copies of the main colours, so they only
    join the palette for striped objects. One 3x3 majority pass cleans the result.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise SpecError(f"expected an H x W x 3 image, got {image.shape}")
    pixels = image.reshape(-1, 3).astype(np.float64)
    p_mean = pixels.mean(axis=1)
    p_centered = pixels - p_mean[:, None]
    hit = np.zeros(pixels.shape[0], dtype=bool)
    for color in class_palette(shape, striped):
        c_centered = color - color.mean()
        a = p_centered @ c_centered / float(c_centered @ c_centered)
        b = p_mean - a * color.mean()
        fit = a[:, None] * color[None, :] + b[:, None]
        residual = np.linalg.norm(pixels - fit, axis=1)
        hit |= (a >= 0.5) & (residual <= tolerance)
    hit = _majority_cleanup(hit.reshape(image.shape[:2]), cleanup_votes)
    return ObjectMask(hit.astype(np.uint8))


# -- model-space conversion -----------------------------------------------------

def image_to_array(image: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8 -> C x H x W float32 in [-1, 1]"""
    return (np.transpose(image, (2, 0, 1)).astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def array_to_image(x: np.ndarray) -> np.ndarray:
    """C x H x W float in [-1, 1] -> H x W x 3 uint8"""
    pixels = np.clip(np.round((np.asarray(x, dtype=np.float64) + 1.0) * 127.5), 0, 255)
    return np.transpose(pixels, (1, 2, 0)).astype(np.uint8)


# -- edit suite -----------------------------------------------------------------

@dataclass
class EditCase:
    scene_id: int
    scene: Scene
    p_edit: PromptPair


def build_edit_suite(count: int, seed: int, image_size: int = 16, antialias: bool = False) -> List[EditCase]:
    """Scenes paired with an intra-class recolor edit; scene i uses seed + i"""
    cases = []
    for i in range(count):
        scene = generate_scene(sample_spec(seed + i, image_size=image_size, antialias=antialias))
        target = recolor_target(scene.spec.shape, scene.spec.color)
        cases.append(EditCase(scene_id=i, scene=scene, p_edit=prompt_for(scene.spec, color=target)))
    return cases
