import numpy as np
import pytest

from garmentdiff.config import Config
from garmentdiff.diffusion import Sampler
from garmentdiff.errors import CfgMismatch, ShapeMismatch, StructureMismatch
from garmentdiff.garment_world import infer_scene, upsample_mask
from garmentdiff.manipulation import (EditRequest, check_edit, consistency_score, edit_masks,
                                      manipulate)
from garmentdiff.prompt_parser import diff_aps, parse

CFG = Config()
OLD = "navy jacket with long red sleeves and yellow collar"


def edit(world, denoiser, new, seed=0, **kw):
    return manipulate(EditRequest(OLD, new, seed, CFG), world, denoiser, **kw)


def test_noop_edit_is_bit_identical(world, denoiser):
    res = edit(world, denoiser, OLD)
    assert res.gamma == () and np.array_equal(res.edited, res.original)
    assert not res.b_relevant.any() and res.consistency == 0.0


def test_original_matches_plain_sample(world, denoiser):
    res = edit(world, denoiser, OLD.replace("red sleeves", "green sleeves"), seed=4)
    plain = Sampler(CFG, denoiser=denoiser).sample(OLD, 4, record_values=False)
    assert np.array_equal(res.original, plain.image)


def test_sleeve_length_edit(world, denoiser):
    for seed in range(3):
        res = edit(world, denoiser, OLD.replace("long", "short"), seed)
        assert infer_scene(res.edited, "jacket", world).part("sleeves").length == "short"
        outside = ~upsample_mask(res.b_relevant)
        assert np.abs(res.edited - res.original)[outside].mean() <= 2 / 255


def test_keep_everything_pins_the_new_trajectory(world, denoiser):
    res = edit(world, denoiser, OLD.replace("yellow collar", "blue collar"),
               force_keep=np.ones((16, 16), bool))
    assert all(s["blend_gap"] == 0.0 for s in res.steps)


def test_keep_nothing_is_a_plain_sample(world, denoiser):
    new = OLD.replace("yellow collar", "blue collar")
    res = edit(world, denoiser, new, seed=2, force_keep=np.zeros((16, 16), bool), inject=False)
    plain = Sampler(CFG, denoiser=denoiser).sample(new, 2, record_values=False)
    assert np.array_equal(res.edited, plain.image)


def test_two_ap_mask_is_union_of_single_masks(world, rng):
    w = parse(OLD)
    w_star = parse("navy jacket with short red sleeves and blue collar")
    assert diff_aps(w, w_star) == {1, 2}
    for _ in range(5):
        z_old, z_new = rng.uniform(size=(2, 16, 16, 3))
        both, keep = edit_masks(z_old, z_new, w, w_star, {1, 2}, CFG, world)
        a, _ = edit_masks(z_old, z_new, w, w_star, {1}, CFG, world)
        b, _ = edit_masks(z_old, z_new, w, w_star, {2}, CFG, world)
        assert np.array_equal(both, a | b) and np.array_equal(keep, ~both)


def test_consistency_score_examples(rng):
    img = rng.uniform(size=(64, 64, 3))
    assert consistency_score(img, img, np.ones((16, 16), bool)) == 0.0
    assert consistency_score(img, 1 - img, np.ones((64, 64), bool)) == pytest.approx(
        np.abs(1 - 2 * img).mean())
    assert consistency_score(img, 1 - img, np.zeros((16, 16), bool)) == 0.0
    keep = np.zeros((16, 16), bool)
    keep[:4] = True
    assert consistency_score(img, 1 - img, keep) == pytest.approx(np.abs(1 - 2 * img[:16]).mean())
    with pytest.raises(ShapeMismatch):
        consistency_score(img, img[:32], keep)
    with pytest.raises(ShapeMismatch):
        consistency_score(img, img, np.ones((8, 8), bool))


def test_structure_mismatch(world):
    w = parse(OLD)
    for bad in ("navy coat with long red sleeves and yellow collar",
                "navy jacket with long red sleeves",
                "navy jacket with long red sleeves and yellow pockets"):
        with pytest.raises(StructureMismatch):
            check_edit(w, parse(bad), world)
    check_edit(w, parse("red jacket with short navy sleeves and gray collar"), world)


def test_cfg_mismatch(world, denoiser):
    with pytest.raises(CfgMismatch):
        manipulate(EditRequest(OLD, OLD, 0, CFG), world, denoiser, original_cfg=Config(alpha=0.5))


def test_blending_never_hurts(world, denoiser):
    for seed, new in enumerate(["navy jacket with long red sleeves and blue collar",
                                "gray jacket with long red sleeves and yellow collar"]):
        req = EditRequest(OLD, new, seed, CFG)
        res = manipulate(req, world, denoiser)
        free = manipulate(req, world, denoiser, blend=False)
        assert res.consistency <= consistency_score(res.original, free.edited, res.b_keep)
