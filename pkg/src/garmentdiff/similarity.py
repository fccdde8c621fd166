"""Differentiable part/phrase similarity used in place of CLIP.

Both sides are reduced to a tiny feature set: a target color, an optional
coverage (length) target and a part id.  The score is a product of Gaussian
kernels and lies in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMask
from .garment_world import EPS_BG, World, check_image, default_world
from .prompt_parser import APTree, AttributePhrase, Lexicon

TAU_C = 0.5
TAU_L = 0.1
STEEPNESS = 50.0
NEUTRAL = (0.5, 0.5, 0.5)
_DIST_SMOOTH = 1e-3


@dataclass(frozen=True)
class TextEmbedding:
    color: tuple[float, float, float]
    length: float | None
    part_id: str


@dataclass(frozen=True)
class ImageEmbedding:
    color: tuple[float, float, float]
    coverage: float
    part_id: str


def embed_ap(ap: AttributePhrase, lexicon: Lexicon) -> TextEmbedding:
    colors, length = [], None
    for tok in ap.adjectives:
        attr = lexicon.attribute_adjectives[tok.text]
        if attr.kind == "color":
            colors.append(attr.value)
        elif attr.kind == "length":
            length = float(attr.value)
    color = tuple(np.mean(colors, axis=0)) if colors else NEUTRAL
    return TextEmbedding(tuple(float(c) for c in color), length, lexicon.part_of(ap.noun.text))


def _soft_colored(pix: np.ndarray):
    """Smooth indicator that a pixel is farther than EPS_BG from white."""
    diff = pix - 1.0
    d = np.sqrt(np.sum(diff * diff, axis=-1) + _DIST_SMOOTH ** 2)
    s = 1.0 / (1.0 + np.exp(-STEEPNESS * (d - EPS_BG)))
    return s, diff, d


def _pixel_features(pix: np.ndarray):
    """Coverage-weighted mean color and coverage of ``(..., n, 3)`` pixels.

    Weighting by the colored indicator keeps the color of a shortened part
    (half of its mask left white) equal to its paint color.
    """
    s, _, _ = _soft_colored(pix)
    S = s.sum(axis=-1)
    color = np.einsum("...n,...nc->...c", s, pix) / S[..., None]
    coverage = S / pix.shape[-2]
    return color, coverage


def embed_part(image: np.ndarray, mask: np.ndarray, part_id: str) -> ImageEmbedding:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask(f"mask for part {part_id!r} is empty")
    color, coverage = _pixel_features(np.asarray(image, dtype=float)[mask])
    return ImageEmbedding(tuple(float(c) for c in color), float(coverage), part_id)


def _kernel(color, coverage, w: TextEmbedding):
    d2 = np.sum((np.asarray(color) - np.asarray(w.color)) ** 2, axis=-1)
    score = np.exp(-d2 / TAU_C)
    if w.length is not None:
        score = score * np.exp(-((coverage - w.length) ** 2) / TAU_L)
    return score


def sim(v: ImageEmbedding, w: TextEmbedding) -> float:
    if v.part_id != w.part_id:
        return 0.0
    return float(_kernel(v.color, v.coverage, w))


def ap_region(ap: AttributePhrase, category: str, world: World):
    """(part_id, canvas mask) of the template region an AP talks about."""
    pid = world.lexicon.part_of(ap.noun.text)
    mask = world.template(category).masks.get(pid)
    return pid, mask


def sim_full(image: np.ndarray, w: APTree, world: World | None = None) -> float:
    world = world or default_world()
    world.template(w.category)
    image = check_image(image)
    total = 0.0
    for ap in w.aps:
        pid, mask = ap_region(ap, w.category, world)
        if mask is None:
            continue
        total += sim(embed_part(image, mask, pid), embed_ap(ap, world.lexicon))
    return total / w.m


def sim_full_latents(latents: np.ndarray, w: APTree, world: World | None = None) -> np.ndarray:
    """:func:`sim_full` of ``decode(z)`` for a batch of latents ``(K, 16, 16, 3)``.

    Template masks are block-aligned and decoding replicates pixels, so the
    latent-grid computation is exact.
    """
    world = world or default_world()
    template = world.template(w.category)
    total = np.zeros(latents.shape[0])
    for ap in w.aps:
        pid = world.lexicon.part_of(ap.noun.text)
        if pid not in template.masks:
            continue
        pix = latents[:, template.latent_masks[pid]]
        color, coverage = _pixel_features(pix)
        total += _kernel(color, coverage, embed_ap(ap, world.lexicon))
    return total / w.m


def grad_sim_image(image: np.ndarray, mask: np.ndarray, part_id: str, w: TextEmbedding) -> np.ndarray:
    """Gradient of ``sim(embed_part(image, mask, part_id), w)`` w.r.t. every pixel."""
    image = np.asarray(image, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    grad = np.zeros_like(image)
    if part_id != w.part_id:
        return grad
    if not mask.any():
        raise EmptyMask(f"mask for part {part_id!r} is empty")
    grad[mask] = _grad_pixels(image[mask], w)
    return grad


def _grad_pixels(pix: np.ndarray, w: TextEmbedding) -> np.ndarray:
    n = pix.shape[0]
    s, diff, d = _soft_colored(pix)
    ds = (STEEPNESS * s * (1.0 - s) / d)[:, None] * diff  # (n, 3)
    S = s.sum()
    color = s @ pix / S
    coverage = S / n
    score = _kernel(color, coverage, w)

    g_color = score * (-2.0 * (color - np.asarray(w.color)) / TAU_C)
    g_cov = 0.0 if w.length is None else score * (-2.0 * (coverage - w.length) / TAU_L)

    centered = (pix - color) @ g_color  # (n,)
    return (g_color[None, :] * s[:, None] + centered[:, None] * ds) / S + g_cov * ds / n
