"""Text-driven editing by replaying the original trajectory next to the new one.

Both trajectories start from the same ``z_T``.  At each step the attention
maps of the edited phrases decide which latent pixels may change; all other
pixels are copied from the original trajectory before the new one denoises.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import ap_token_slices, attention_maps, binarize, blended_mask
from .config import Config
from .diffusion import Denoiser, Sampler
from .errors import CfgMismatch, ShapeMismatch, StructureMismatch
from .garment_world import LATENT, World, decode, default_world, infer_scene, upsample_mask
from .prompt_parser import APTree, diff_aps, parse


@dataclass(frozen=True)
class EditRequest:
    prompt: str
    new_prompt: str
    seed: int
    cfg: Config = field(default_factory=Config)


@dataclass
class EditResult:
    edited: np.ndarray
    original: np.ndarray
    b_relevant: np.ndarray  # (16, 16) bool, from the last step
    b_keep: np.ndarray
    gamma: tuple[int, ...]
    steps: list[dict]
    tree: APTree
    new_tree: APTree

    @property
    def consistency(self) -> float:
        return consistency_score(self.original, self.edited, self.b_keep)


def check_edit(w: APTree, w_star: APTree, world: World) -> None:
    """Edits substitute attributes only: same category, APs and parts."""
    if w.category != w_star.category:
        raise StructureMismatch(f"category changes from {w.category!r} to {w_star.category!r}")
    if w.m != w_star.m:
        raise StructureMismatch(f"prompt has {w.m} phrases but the edit has {w_star.m}")
    part = world.lexicon.part_of
    for a, b in zip(w.aps, w_star.aps):
        if part(a.noun.text) != part(b.noun.text):
            raise StructureMismatch(f"phrase noun {a.noun.text!r} cannot become {b.noun.text!r}")


def edit_masks(z_old: np.ndarray, z_new: np.ndarray, w: APTree, w_star: APTree, gamma,
               cfg: Config, world: World | None = None):
    """(B_relevant, B_keep) over latent pixels for the edited phrases ``gamma``.

    Every token map of an edited phrase, in both prompts, is binarized at
    ``cfg.percentile`` and the masks are OR-ed.
    """
    world = world or default_world()
    masks = []
    for tree, z in ((w, z_old), (w_star, z_new)):
        if not gamma:
            continue
        maps = attention_maps(z, tree, world, cfg.tau_a)
        slices = ap_token_slices(tree)
        masks.append([binarize(maps[k], cfg.percentile) for i in sorted(gamma)
                      for k in range(slices[i].start, slices[i].stop)])
    old, new = (masks + [[], []])[:2]
    relevant, keep = blended_mask(old, new, LATENT * LATENT)
    return relevant.reshape(LATENT, LATENT), keep.reshape(LATENT, LATENT)


def consistency_score(image: np.ndarray, image_star: np.ndarray, b_keep: np.ndarray) -> float:
    """Mean absolute RGB difference over the kept pixels (0 when nothing is kept).

    ``b_keep`` may be given on the latent grid; it is upsampled nearest-neighbour.
    """
    image = np.asarray(image, dtype=float)
    image_star = np.asarray(image_star, dtype=float)
    if image.shape != image_star.shape:
        raise ShapeMismatch(f"image shapes differ: {image.shape} vs {image_star.shape}")
    keep = np.asarray(b_keep, dtype=bool)
    if keep.size == LATENT * LATENT:
        keep = upsample_mask(keep.reshape(LATENT, LATENT))
    if keep.shape != image.shape[:2]:
        raise ShapeMismatch(f"mask shape {keep.shape} does not fit image {image.shape}")
    if not keep.any():
        return 0.0
    return float(np.abs(image - image_star)[keep].mean())


def manipulate(req: EditRequest, world: World | None = None, denoiser: Denoiser | None = None,
               blend: bool = True, inject: bool = True, force_keep: np.ndarray | None = None,
               original_cfg: Config | None = None) -> EditResult:
    """Edit the image generated from ``(req.prompt, req.seed)`` towards ``req.new_prompt``.

    ``blend=False`` never copies pixels from the original trajectory;
    ``force_keep`` fixes ``B_keep`` at every step (used to test the endpoints).
    """
    world = world or default_world()
    cfg = req.cfg
    if original_cfg is not None and original_cfg.sampler_key() != cfg.sampler_key():
        raise CfgMismatch("edit must reuse the configuration of the original run")
    w = parse(req.prompt, world.lexicon)
    w_star = parse(req.new_prompt, world.lexicon)
    check_edit(w, w_star, world)
    gamma = diff_aps(w, w_star)
    sampler = Sampler(cfg, world=world, denoiser=denoiser)

    z_old = sampler.initial_latent(req.seed)
    z_new = z_old.copy()
    steps = []
    relevant = np.zeros((LATENT, LATENT), dtype=bool)
    keep = ~relevant
    for t in range(cfg.T, 0, -1):
        if force_keep is not None:
            keep = np.broadcast_to(np.asarray(force_keep, dtype=bool).reshape(LATENT, LATENT),
                                   (LATENT, LATENT)).copy()
            relevant = ~keep
        elif blend:
            relevant, keep = edit_masks(z_old, z_new, w, w_star, gamma, cfg, world)
        else:
            relevant = np.ones((LATENT, LATENT), dtype=bool)
            keep = ~relevant
        z_blend = np.where(keep[..., None], z_old, z_new)
        old = sampler.step(z_old, t, w, record_values=False)
        injected = None
        if inject and old.ap_grads is not None:
            injected = {i: old.ap_grads[i] for i in range(w.m) if i not in gamma}
        new = sampler.step(z_blend, t, w_star, injected=injected, record_values=False)
        steps.append({"t": t, "relevant": int(relevant.sum()),
                      "latent_gap_kept": float(np.abs(z_old - z_new)[keep].sum()),
                      "blend_gap": float(np.abs(z_blend - z_old).sum())})
        z_old, z_new = old.z_next, new.z_next

    original = np.clip(decode(z_old), 0.0, 1.0)
    edited = np.clip(decode(z_new), 0.0, 1.0)
    return EditResult(edited, original, relevant, keep, tuple(sorted(gamma)), steps, w, w_star)


def run_edit(case, cfg: Config, world: World | None = None, denoiser: Denoiser | None = None) -> dict:
    """Evaluate one edit: realization, consistency with and without blending."""
    from .evalkit import check_ap

    world = world or default_world()
    req = EditRequest(case.prompt, case.new_prompt, case.seed, cfg)
    res = manipulate(req, world, denoiser)
    out = {"prompt": case.prompt, "new_prompt": case.new_prompt, "seed": case.seed,
           "noop": not res.gamma, "gamma": list(res.gamma),
           "identical": bool(np.array_equal(res.edited, res.original)),
           "consistency": res.consistency,
           "relevant_pixels": int(res.b_relevant.sum())}
    if res.gamma:
        scene = infer_scene(res.edited, res.new_tree.category, world)
        out["realized"] = all(check_ap(res.new_tree.aps[i], scene, world)[1] for i in res.gamma)
        free = manipulate(req, world, denoiser, blend=False)
        out["consistency_unblended"] = consistency_score(res.original, free.edited, res.b_keep)
    return out


__all__ = ["EditRequest", "EditResult", "check_edit", "edit_masks", "consistency_score",
           "manipulate", "run_edit"]
