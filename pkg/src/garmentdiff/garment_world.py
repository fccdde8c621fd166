"""Synthetic parametric garments on a 64x64 canvas.

Every category owns a fixed layout template: disjoint boolean part masks
aligned to the 4x4 latent grid.  Rendering paints each present part with its
color, segmentation cuts an image along the template, and
:func:`infer_scene` reads a scene back out of an image.
"""
from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import BadShape, EmptyBank, InvalidScene, UnknownCategory
from .prompt_parser import BODY, Lexicon, default_lexicon

CANVAS = 64
LATENT = 16
POOL = CANVAS // LATENT
WHITE = np.ones(3)
EPS_BG = 0.1
STRIPE_SHADE = 0.5
LENGTH_PARTS = frozenset({"sleeves"})
ABSENT = None


def _rect(y0, y1, x0, x1):
    m = np.zeros((CANVAS, CANVAS), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


# pixel rectangles, all multiples of POOL so masks are block-constant
_SHAPES = {
    "sleeves": _rect(12, 28, 8, 20) | _rect(12, 28, 44, 56),
    "collar": _rect(4, 12, 24, 40),
    "hood": _rect(0, 12, 20, 44),
    "pockets": _rect(40, 48, 20, 28) | _rect(40, 48, 36, 44),
    "buttons": _rect(16, 52, 28, 36),
    "belt": _rect(36, 40, 20, 44),
}
_TORSO = _rect(12, 56, 20, 44)

_CATEGORY_PARTS = {
    "jacket": ("sleeves", "collar"),
    "sweater": ("sleeves", "hood"),
    "shirt": ("sleeves", "buttons"),
    "coat": ("sleeves", "pockets"),
    "dress": ("sleeves", "belt"),
    "hoodie": ("hood", "pockets"),
}


@dataclass(frozen=True)
class LayoutTemplate:
    category: str
    masks: Mapping[str, np.ndarray]
    length_parts: frozenset = LENGTH_PARTS
    required: frozenset = frozenset({BODY})

    def __post_init__(self):
        ids = list(self.masks)
        for pid in ids:
            m = self.masks[pid]
            if m.shape != (CANVAS, CANVAS) or m.dtype != bool:
                raise ValueError(f"{self.category}/{pid}: mask must be a {CANVAS}x{CANVAS} bool array")
            if m.sum() < 16:
                raise ValueError(f"{self.category}/{pid}: mask has fewer than 16 pixels")
        for a, b in itertools.combinations(ids, 2):
            if (self.masks[a] & self.masks[b]).any():
                raise ValueError(f"{self.category}: masks {a} and {b} overlap")

    @property
    def part_ids(self) -> tuple[str, ...]:
        return tuple(self.masks)

    @property
    def background(self) -> np.ndarray:
        return ~np.logical_or.reduce(list(self.masks.values()))

    @functools.cached_property
    def latent_masks(self) -> dict[str, np.ndarray]:
        return {pid: pool_mask(m) for pid, m in self.masks.items()}

    def centroid(self, part_id: str) -> tuple[float, float]:
        """Centroid in folded coordinates (|x|, y), both in [-1, 1].

        Garments are left/right symmetric, so folding the x axis gives paired
        parts (two sleeves, two pockets) a single centroid on one of them.
        """
        fx, fy = folded_coords(LATENT)
        m = self.latent_masks[part_id]
        return float(fx[m].mean()), float(fy[m].mean())


def folded_coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    y, x = np.meshgrid(c, c, indexing="ij")
    return np.abs(x), y


def pool_mask(mask: np.ndarray) -> np.ndarray:
    """Latent-grid mask of a block-aligned canvas mask."""
    blocks = mask.reshape(LATENT, POOL, LATENT, POOL)
    return blocks.all(axis=(1, 3))


def upsample_mask(mask: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(np.asarray(mask, dtype=bool), POOL, axis=0), POOL, axis=1)


def _build_template(category: str, parts: Sequence[str]) -> LayoutTemplate:
    others = {p: _SHAPES[p] for p in parts}
    body = _TORSO.copy()
    for m in others.values():
        body &= ~m
    masks = {BODY: body, **others}
    return LayoutTemplate(category, masks)


@functools.lru_cache(maxsize=None)
def default_templates() -> dict[str, LayoutTemplate]:
    return {cat: _build_template(cat, parts) for cat, parts in _CATEGORY_PARTS.items()}


# -- run-length encoding ------------------------------------------------------

def mask_to_rle(mask: np.ndarray) -> str:
    """Row-major ``"start length start length ..."`` with absolute starts."""
    flat = np.concatenate([[False], np.asarray(mask, dtype=bool).ravel(), [False]])
    edges = np.flatnonzero(flat[1:] != flat[:-1])
    starts, ends = edges[0::2], edges[1::2]
    return " ".join(f"{s} {e - s}" for s, e in zip(starts, ends))


def rle_to_mask(rle: str, shape=(CANVAS, CANVAS)) -> np.ndarray:
    flat = np.zeros(shape[0] * shape[1], dtype=bool)
    nums = [int(v) for v in rle.split()]
    if len(nums) % 2:
        raise ValueError("run-length string must hold (start, length) pairs")
    for s, n in zip(nums[0::2], nums[1::2]):
        flat[s:s + n] = True
    return flat.reshape(shape)


def templates_to_json(templates: Mapping[str, LayoutTemplate]) -> str:
    doc = {cat: {pid: mask_to_rle(m) for pid, m in t.masks.items()} for cat, t in templates.items()}
    return json.dumps(doc, indent=1, sort_keys=False)


def load_templates(path) -> dict[str, LayoutTemplate]:
    doc = json.loads(Path(path).read_text())
    return {
        cat: LayoutTemplate(cat, {pid: rle_to_mask(rle) for pid, rle in parts.items()})
        for cat, parts in doc.items()
    }


# -- world --------------------------------------------------------------------

@dataclass(frozen=True)
class World:
    lexicon: Lexicon
    templates: Mapping[str, LayoutTemplate]

    def template(self, category: str) -> LayoutTemplate:
        try:
            return self.templates[category]
        except KeyError:
            raise UnknownCategory(f"no layout template for category {category!r}") from None

    @functools.cached_property
    def palette(self) -> np.ndarray:
        return np.array([rgb for _, rgb in self.lexicon.colors], dtype=float).reshape(-1, 3)


@functools.lru_cache(maxsize=None)
def default_world() -> World:
    return World(default_lexicon(), default_templates())


# -- scenes -------------------------------------------------------------------

@dataclass(frozen=True)
class PartSpec:
    part_id: str
    color: tuple[float, float, float]
    length: str | None = None
    pattern: str = "plain"


@dataclass(frozen=True)
class GarmentScene:
    category: str
    parts: tuple[PartSpec, ...]

    def part(self, part_id: str) -> PartSpec | None:
        for p in self.parts:
            if p.part_id == part_id:
                return p
        return None

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "parts": [
                {"part_id": p.part_id, "color": list(p.color), "length": p.length, "pattern": p.pattern}
                for p in self.parts
            ],
        }


def length_mask(mask: np.ndarray, frac: float) -> np.ndarray:
    """Keep the first ``frac`` of the mask's rows (sleeves hang downward)."""
    rows = np.flatnonzero(mask.any(axis=1))
    keep = int(round(frac * (rows[-1] - rows[0] + 1)))
    out = mask.copy()
    out[rows[0] + keep:] = False
    return out


def _validate(scene: GarmentScene, template: LayoutTemplate, lexicon: Lexicon):
    if not scene.parts:
        raise InvalidScene("scene has no parts")
    seen = set()
    for p in scene.parts:
        if p.part_id not in template.masks:
            raise InvalidScene(f"part {p.part_id!r} not in the {scene.category} template")
        if p.part_id in seen:
            raise InvalidScene(f"duplicate part {p.part_id!r}")
        seen.add(p.part_id)
        if not all(0.0 <= c <= 1.0 for c in p.color):
            raise InvalidScene(f"part {p.part_id!r} color {p.color} outside [0, 1]")
        if p.length is not None and p.length not in lexicon.lengths:
            raise InvalidScene(f"unknown length {p.length!r}")
        if p.pattern not in ("plain", "striped"):
            raise InvalidScene(f"unknown pattern {p.pattern!r}")


def _stripe_columns() -> np.ndarray:
    return (np.arange(CANVAS) // POOL) % 2 == 1


def render(scene: GarmentScene, world: World | None = None) -> np.ndarray:
    world = world or default_world()
    template = world.template(scene.category)
    _validate(scene, template, world.lexicon)
    img = np.ones((CANVAS, CANVAS, 3))
    stripes = _stripe_columns()[None, :]
    for p in scene.parts:
        mask = template.masks[p.part_id]
        if p.part_id in template.length_parts:
            mask = length_mask(mask, world.lexicon.lengths[p.length or "long"])
        color = np.asarray(p.color, dtype=float)
        img[mask] = color
        if p.pattern == "striped":
            img[mask & stripes] = color * STRIPE_SHADE
    return img


@dataclass(frozen=True)
class PartSet:
    full_image: np.ndarray
    category: str
    parts: tuple[tuple[str, np.ndarray, np.ndarray], ...]  # (part_id, part image, mask)

    @property
    def part_ids(self) -> tuple[str, ...]:
        return tuple(p[0] for p in self.parts)


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.shape != (CANVAS, CANVAS, 3):
        raise BadShape(f"expected a {CANVAS}x{CANVAS}x3 image, got {image.shape}")
    return image


def segment(image: np.ndarray, category: str, world: World | None = None) -> PartSet:
    world = world or default_world()
    template = world.template(category)
    image = check_image(image)
    parts = []
    for pid, mask in template.masks.items():
        part = np.ones_like(image)
        part[mask] = image[mask]
        parts.append((pid, part, mask))
    return PartSet(image, category, tuple(parts))


def snap_color(rgb, world: World | None = None) -> int:
    """Index of the nearest lexicon color; the lower index wins ties."""
    world = world or default_world()
    d = np.sum((world.palette - np.asarray(rgb, dtype=float)) ** 2, axis=1)
    return int(np.argmin(d))


def infer_scene(image: np.ndarray, category: str, world: World | None = None) -> GarmentScene:
    world = world or default_world()
    template = world.template(category)
    image = check_image(image)
    dist = np.linalg.norm(image - WHITE, axis=-1)
    colored = dist > EPS_BG
    stripes = _stripe_columns()[None, :] & np.ones((CANVAS, 1), dtype=bool)
    names = list(world.lexicon.lengths)
    fracs = np.array([world.lexicon.lengths[n] for n in names])

    parts = []
    for pid, mask in template.masks.items():
        if np.linalg.norm(image[mask].mean(axis=0) - WHITE) <= EPS_BG:
            continue
        base = mask & colored & ~stripes
        striped = mask & colored & stripes
        src = base if base.any() else mask & colored
        if not src.any():
            continue
        mean = image[src].mean(axis=0)
        color = world.lexicon.colors[snap_color(mean, world)][1]
        pattern = "plain"
        if base.any() and striped.any():
            if np.linalg.norm(image[base].mean(axis=0) - image[striped].mean(axis=0)) > EPS_BG:
                pattern = "striped"
        length = None
        if pid in template.length_parts and names:
            frac = (mask & colored).sum() / mask.sum()
            length = names[int(np.argmin(np.abs(fracs - frac)))]
        parts.append(PartSpec(pid, tuple(color), length, pattern))
    return GarmentScene(category, tuple(parts))


# -- autoencoder pair (kept here so the bank can encode renders) -------------

def encode(image: np.ndarray) -> np.ndarray:
    """4x4 average pooling, 64x64x3 -> 16x16x3."""
    image = check_image(image)
    return image.reshape(LATENT, POOL, LATENT, POOL, 3).mean(axis=(1, 3))


def decode(z: np.ndarray) -> np.ndarray:
    """Nearest-neighbour upsampling, 16x16x3 -> 64x64x3; never clamps."""
    z = np.asarray(z, dtype=float)
    if z.shape != (LATENT, LATENT, 3):
        raise BadShape(f"expected a {LATENT}x{LATENT}x3 latent, got {z.shape}")
    return np.repeat(np.repeat(z, POOL, axis=0), POOL, axis=1)


def decode_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`decode`: sums each 4x4 block of an image gradient."""
    return g.reshape(LATENT, POOL, LATENT, POOL, 3).sum(axis=(1, 3))


# -- prototype bank -----------------------------------------------------------

@dataclass(frozen=True)
class PrototypeBank:
    scenes: tuple[GarmentScene, ...]
    latents: np.ndarray  # (K, 16, 16, 3)
    categories: np.ndarray = field(repr=False)  # (K,) of str

    def __post_init__(self):
        if len(self.scenes) == 0:
            raise EmptyBank("prototype bank is empty")
        if not np.isfinite(self.latents).all():
            raise ValueError("prototype latents must be finite")

    def __len__(self):
        return len(self.scenes)

    def indices(self, category: str | None) -> np.ndarray:
        if category is None:
            return np.arange(len(self))
        return np.flatnonzero(self.categories == category)


def _part_options(pid: str, template: LayoutTemplate, lexicon: Lexicon):
    lengths = list(lexicon.lengths) if pid in template.length_parts and lexicon.lengths else [None]
    opts = [(rgb, ln) for _, rgb in lexicon.colors for ln in lengths]
    if pid not in template.required:
        opts.append(ABSENT)
    return opts


def enumerate_scenes(category: str, world: World, cap: int = 4096, seed: int = 0) -> list[GarmentScene]:
    """All attribute combinations for a category, subsampled to ``cap``.

    Every part takes each lexicon color (times each length, for parts with a
    length axis); parts outside ``template.required`` may also be absent.
    """
    template = world.template(category)
    pids = template.part_ids
    options = [_part_options(pid, template, world.lexicon) for pid in pids]
    sizes = [len(o) for o in options]
    total = int(np.prod(sizes)) if all(sizes) else 0
    if total == 0:
        return []
    if total > cap:
        rng = np.random.default_rng(seed)
        flat = np.sort(rng.choice(total, size=cap, replace=False))
    else:
        flat = np.arange(total)
    scenes = []
    for idx in flat:
        digits = np.unravel_index(int(idx), sizes)
        parts = []
        for pid, opts, d in zip(pids, options, digits):
            opt = opts[d]
            if opt is ABSENT:
                continue
            rgb, ln = opt
            parts.append(PartSpec(pid, tuple(rgb), ln))
        if parts:
            scenes.append(GarmentScene(category, tuple(parts)))
    return scenes


def build_prototype_bank(
    lexicon: Lexicon | None = None,
    categories: Sequence[str] | None = None,
    templates: Mapping[str, LayoutTemplate] | None = None,
    cap: int = 4096,
    seed: int = 0,
) -> PrototypeBank:
    world = World(lexicon or default_lexicon(), templates or default_templates())
    if not all(np.isfinite(rgb).all() for _, rgb in world.lexicon.colors):
        raise ValueError("lexicon colors must be finite")
    categories = list(categories) if categories is not None else list(world.templates)
    scenes = []
    for cat in categories:
        scenes.extend(enumerate_scenes(cat, world, cap=cap, seed=seed))
    if not scenes:
        raise EmptyBank("attribute grid produced no scenes")
    latents = np.stack([encode(render(s, world)) for s in scenes])
    cats = np.array([s.category for s in scenes])
    return PrototypeBank(tuple(scenes), latents, cats)


@functools.lru_cache(maxsize=None)
def default_bank() -> PrototypeBank:
    return build_prototype_bank()


# -- image files --------------------------------------------------------------

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return arr
