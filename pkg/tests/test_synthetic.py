import numpy as np

from excite_lens.ingest import load_manifest, read_pnm, write_manifest
from excite_lens.model import forward, predict
from excite_lens.synthetic import (CANVAS, SynthConfig, build_template_net, default_recipes,
                                   generate_synthetic, glyph_box, render)
from oracles import count_exact_matches


def test_seeded_generation_is_bit_identical():
    cfg = SynthConfig(n_per_brand=6, seed=3)
    a, ma, aa = generate_synthetic(cfg)
    b, mb, ab = generate_synthetic(cfg)
    assert list(a) == list(b)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert ma.entries == mb.entries and aa.groups == ab.groups
    c, _, _ = generate_synthetic(SynthConfig(n_per_brand=6, seed=4))
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)


def test_logo_images_hold_exactly_one_glyph():
    recipes = default_recipes()
    rng = np.random.default_rng(0)
    for _ in range(10):
        img = render(recipes[0], rng, SynthConfig())
        assert img.shape == (CANVAS, CANVAS, 3)
        assert count_exact_matches(img, glyph_box(recipes[0])) == 1


def test_repeated_images_tile_the_glyph():
    recipes = default_recipes()
    rng = np.random.default_rng(1)
    cfg = SynthConfig()
    for _ in range(5):
        hits = count_exact_matches(render(recipes[1], rng, cfg), glyph_box(recipes[1]))
        assert cfg.min_tiles ** 2 <= hits <= cfg.max_tiles ** 2


def test_texture_images_hold_no_glyph():
    recipes = default_recipes()
    img = render(recipes[2], np.random.default_rng(2), SynthConfig())
    assert all(count_exact_matches(img, glyph_box(r)) == 0 for r in recipes[:2])


def test_groups_match_recipe_family(tmp_path):
    cfg = SynthConfig(n_per_brand=4, seed=1, test_fraction=0.5)
    images, manifest, ann = generate_synthetic(cfg, tmp_path)
    family = {r.name: r.family for r in cfg.brands}
    assert all(ann.groups[e.image_id] == family[e.brand] for e in manifest)
    assert all(n == 5 for n in ann.annotators.values())
    assert [e.split for e in manifest][:4] == ["test", "test", "train", "train"]
    assert manifest.category == "bags"
    for e in manifest:
        assert read_pnm(manifest.resolve(e)).tobytes() == images[e.image_id].tobytes()
    write_manifest(tmp_path / "manifest.csv", manifest)
    assert load_manifest(tmp_path / "manifest.csv").entries == manifest.entries


def test_template_net_classifies_all_families():
    cfg = SynthConfig(n_per_brand=20, seed=9)
    images, manifest, _ = generate_synthetic(cfg)
    net = build_template_net(cfg.brands)
    labels = net.graph.class_labels
    x = np.stack([((images[e.image_id] / 255.0 - 0.5) / 0.5).transpose(2, 0, 1)
                  for e in manifest]).astype(np.float32)
    tr = forward(net, x)
    hits = sum(labels[predict(tr, i).index] == e.brand for i, e in enumerate(manifest))
    assert hits == len(manifest)
