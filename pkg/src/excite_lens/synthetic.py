"""Synthetic brand images and a matching template-detector network.

Three recipe families mirror the human logo-visibility groups:

logo
    one 8x8 glyph pasted at a random pixel position on a noisy background
repeated_logo
    the brand's glyph tiled edge to edge over a random rectangle
no_logo
    a brand-specific striped colour texture over the whole canvas, no glyph
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .ingest import AnnotationSet, DatasetManifest, GROUPS, ManifestEntry, write_ppm
from .model import LayerSpec, Model, ModelGraph, infer_shapes

CANVAS = 64
GLYPH = 8
BOX_BG = (240, 240, 240)

GLYPHS = {
    # asymmetric masks keep shifted partial matches weak
    "arrow": [
        "11110000",
        "11000000",
        "10100000",
        "10010000",
        "00001000",
        "00000100",
        "00000010",
        "00000001",
    ],
    "hook": [
        "00111100",
        "01000010",
        "00000010",
        "00000100",
        "00011000",
        "00010000",
        "00000000",
        "00010000",
    ],
    "kite": [
        "00010000",
        "00111000",
        "01111100",
        "11111110",
        "00111000",
        "00010000",
        "00010000",
        "00011000",
    ],
}


def glyph_mask(name):
    return np.array([[c == "1" for c in row] for row in GLYPHS[name]])


@dataclass
class BrandRecipe:
    name: str
    family: str
    color: tuple = (200, 30, 30)
    glyph: str = "arrow"
    color2: tuple = (150, 200, 50)  # second stripe colour for no_logo
    stripe: int = 4


@dataclass
class SynthConfig:
    brands: list = field(default_factory=lambda: default_recipes())
    n_per_brand: int = 300
    seed: int = 0
    noise: int = 40
    test_fraction: float = 1.0
    min_tiles: int = 3
    max_tiles: int = 7


def default_recipes():
    return [
        BrandRecipe("markly", "logo", color=(200, 30, 30), glyph="arrow"),
        BrandRecipe("monogrammo", "repeated_logo", color=(30, 40, 200), glyph="kite"),
        BrandRecipe("weaveworks", "no_logo", color=(40, 170, 60), color2=(150, 200, 50)),
    ]


def glyph_box(recipe):
    m = glyph_mask(recipe.glyph)
    box = np.empty((GLYPH, GLYPH, 3), dtype=np.uint8)
    box[:] = BOX_BG
    box[m] = recipe.color
    return box


def _background(rng, noise):
    base = 128 + rng.integers(-noise, noise + 1, size=(CANVAS, CANVAS, 3))
    return np.clip(base, 0, 255).astype(np.uint8)


def render(recipe, rng, cfg):
    """One image (H, W, 3) uint8 for ``recipe``."""
    if recipe.family == "logo":
        img = _background(rng, cfg.noise)
        y, x = rng.integers(0, CANVAS - GLYPH + 1, size=2)
        img[y:y + GLYPH, x:x + GLYPH] = glyph_box(recipe)
        return img
    if recipe.family == "repeated_logo":
        img = _background(rng, cfg.noise)
        ty, tx = rng.integers(cfg.min_tiles, cfg.max_tiles + 1, size=2)
        y0 = rng.integers(0, CANVAS - GLYPH * ty + 1)
        x0 = rng.integers(0, CANVAS - GLYPH * tx + 1)
        img[y0:y0 + GLYPH * ty, x0:x0 + GLYPH * tx] = np.tile(glyph_box(recipe), (ty, tx, 1))
        return img
    if recipe.family == "no_logo":
        i, j = np.mgrid[0:CANVAS, 0:CANVAS]
        phase = rng.integers(0, 2 * recipe.stripe)
        band = ((i + j + phase) // recipe.stripe) % 2 == 0
        img = np.where(band[..., None], np.array(recipe.color), np.array(recipe.color2))
        img = img + rng.integers(-cfg.noise // 2, cfg.noise // 2 + 1, size=img.shape)
        return np.clip(img, 0, 255).astype(np.uint8)
    raise ValueError(f"unknown recipe family {recipe.family!r}")


def generate_synthetic(cfg=None, out_dir=None):
    """Render ``cfg.n_per_brand`` images per recipe.

    Returns ``(images, manifest, annotations)`` where ``images`` maps
    image_id to a uint8 array. With ``out_dir`` set, images are also
    written there as PPM files and the manifest paths point at them.
    A pure function of ``cfg``.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    images, entries, groups, raters = {}, [], {}, {}
    n_test = int(round(cfg.test_fraction * cfg.n_per_brand))
    for recipe in cfg.brands:
        if recipe.family not in GROUPS:
            raise ValueError(f"unknown recipe family {recipe.family!r}")
        for k in range(cfg.n_per_brand):
            image_id = f"{recipe.name}_{k:04d}"
            images[image_id] = render(recipe, rng, cfg)
            split = "test" if k < n_test else "train"
            entries.append(ManifestEntry(image_id, f"images/{image_id}.ppm", recipe.name, split))
            groups[image_id] = recipe.family
            raters[image_id] = 5
    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        for e in entries:
            write_ppm(os.path.join(out_dir, e.path), images[e.image_id])
    root = os.path.abspath(out_dir) if out_dir is not None else ""
    return images, DatasetManifest(entries, "bags", root), AnnotationSet(groups, raters)


# --- template network ---

def _standardize(rgb):
    return (np.asarray(rgb, dtype=np.float64) / 255.0 - 0.5) / 0.5


def template_filter(recipe):
    """Zero-mean matched filter (3, 8, 8) for a glyph recipe, plus its
    response to a perfect match."""
    t = _standardize(glyph_box(recipe)).transpose(2, 0, 1)
    w = t - t.mean()
    return w, float((w * t).sum())


def texture_filter(recipe):
    """Uniform colour detector: + on the recipe's dominant channel, - on the others."""
    c = np.asarray(recipe.color, dtype=np.float64)
    sign = np.where(c == c.max(), 1.0, -1.0)
    w = np.broadcast_to(sign[:, None, None], (3, GLYPH, GLYPH)).copy()
    w /= GLYPH * GLYPH
    mean_color = _standardize((np.asarray(recipe.color) + np.asarray(recipe.color2)) / 2)
    return w, float((sign * mean_color).sum())


def build_template_net(recipes=None, match_fraction=0.75, gain=400.0):
    """Hand-set detector network for ``recipes`` (one output class each).

    input -> detect.conv (one 8x8 detector per brand) -> relu
    -> maxpool(8, 7) -> mix.conv (1x1 identity) -> relu [target, 8x8]
    -> global avgpool -> dense

    Detector biases sit at ``match_fraction`` of the perfect response, so
    only close matches fire. The head weights are ``gain`` on the
    diagonal and slightly negative elsewhere.
    """
    recipes = recipes or default_recipes()
    k = len(recipes)
    w = np.zeros((k, 3, GLYPH, GLYPH))
    b = np.zeros(k)
    for i, r in enumerate(recipes):
        f, peak = texture_filter(r) if r.family == "no_logo" else template_filter(r)
        w[i] = f / peak
        b[i] = -match_fraction
    head = np.full((k, k), -0.05 * gain) + np.eye(k) * 1.05 * gain
    weights = {
        "detect.weight": w.astype(np.float32),
        "detect.bias": b.astype(np.float32),
        "mix.weight": np.eye(k, dtype=np.float32).reshape(k, k, 1, 1),
        "mix.bias": np.zeros(k, dtype=np.float32),
        "head.weight": head.astype(np.float32),
        "head.bias": np.zeros(k, dtype=np.float32),
    }
    L = LayerSpec
    layers = [
        L("input", "input"),
        L("detect.conv", "conv", ("input",), {"stride": 1, "padding": 0}, "detect"),
        L("detect.relu", "relu", ("detect.conv",)),
        L("detect.pool", "maxpool", ("detect.relu",), {"k": 8, "s": 7}),
        L("mix.conv", "conv", ("detect.pool",), {"stride": 1, "padding": 0}, "mix"),
        L("mix.relu", "relu", ("mix.conv",)),
        L("head.pool", "avgpool", ("mix.relu",), {"k": 8, "s": 8}),
        L("head.flatten", "flatten", ("head.pool",)),
        L("head.fc", "dense", ("head.flatten",), weight_ref="head"),
    ]
    graph = ModelGraph(layers=layers, num_classes=k, input_shape=(3, CANVAS, CANVAS),
                       target_layer_default="mix.relu", mean=(0.5, 0.5, 0.5),
                       std=(0.5, 0.5, 0.5), class_labels=[r.name for r in recipes])
    infer_shapes(graph, weights)
    return Model(graph, weights)
