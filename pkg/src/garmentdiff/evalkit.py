"""Ground-truth synthesis and editing metrics, and the ablation harness.

Because every image comes from a known synthetic world, part leakage and
attribute confusion are measured exactly with :func:`infer_scene`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import Config
from .errors import GarmentError
from .garment_world import World, default_world, infer_scene, snap_color
from .prompt_parser import APTree, parse

CONFIGURATIONS = {
    "both_off": (False, False),
    "l1_only": (True, False),
    "l2_only": (False, True),
    "both_on": (True, True),
}


@dataclass(frozen=True)
class SynthesisResult:
    prompt: str
    image: np.ndarray


def expected_attributes(ap, world: World) -> dict:
    """Attributes an AP asks for: snapped color name, length, pattern."""
    lex = world.lexicon
    colors, out = [], {}
    for tok in ap.adjectives:
        attr = lex.attribute_adjectives[tok.text]
        if attr.kind == "color":
            colors.append(attr.value)
        elif attr.kind == "length":
            out["length"] = tok.text
        elif attr.kind == "pattern":
            out["pattern"] = tok.text
    if colors:
        out["color"] = lex.color_names[snap_color(np.mean(colors, axis=0), world)]
    return out


def check_ap(ap, scene, world: World) -> tuple[bool, bool]:
    """(present, attributes match) for one AP against an inferred scene."""
    part = scene.part(world.lexicon.part_of(ap.noun.text))
    if part is None:
        return False, False
    want = expected_attributes(ap, world)
    got = {"color": world.lexicon.color_names[snap_color(part.color, world)],
           "length": part.length, "pattern": part.pattern}
    return True, all(got[k] == v for k, v in want.items())


def _trees(results, world):
    for r in results:
        w = parse(r.prompt, world.lexicon)
        yield w, infer_scene(r.image, w.category, world)


def part_leakage_rate(results: Sequence[SynthesisResult], world: World | None = None):
    """Fraction of prompts with at least one prompted part missing."""
    world = world or default_world()
    results = list(results)
    if not results:
        return None
    leaked = sum(any(not check_ap(ap, scene, world)[0] for ap in w.aps)
                 for w, scene in _trees(results, world))
    return leaked / len(results)


def attribute_confusion_rate(results: Sequence[SynthesisResult], world: World | None = None):
    """Fraction of (AP, part) pairs whose part is missing or mis-attributed."""
    world = world or default_world()
    bad = total = 0
    for w, scene in _trees(results, world):
        for ap in w.aps:
            total += 1
            bad += not check_ap(ap, scene, world)[1]
    return None if total == 0 else bad / total


# -- suites -------------------------------------------------------------------

@dataclass(frozen=True)
class EditCase:
    prompt: str
    new_prompt: str
    seed: int


@dataclass
class SuiteSpec:
    synthesis: list[tuple[str, int]] = field(default_factory=list)
    edits: list[EditCase] = field(default_factory=list)
    config: Config = field(default_factory=Config)
    configurations: tuple[str, ...] = tuple(CONFIGURATIONS)

    def __post_init__(self):
        seeds = [s for _, s in self.synthesis]
        if len(set(seeds)) != len(seeds):
            raise ValueError("synthesis seeds must be distinct")
        for name in self.configurations:
            if name not in CONFIGURATIONS:
                raise ValueError(f"unknown configuration {name!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteSpec":
        cfg = Config(**d.get("config", {}))
        return cls(
            synthesis=[(c["prompt"], int(c["seed"])) for c in d.get("synthesis", [])],
            edits=[EditCase(c["prompt"], c["new_prompt"], int(c["seed"])) for c in d.get("edits", [])],
            config=cfg,
            configurations=tuple(d.get("configurations", CONFIGURATIONS)),
        )

    def to_dict(self) -> dict:
        return {
            "synthesis": [{"prompt": p, "seed": s} for p, s in self.synthesis],
            "edits": [asdict(e) for e in self.edits],
            "config": self.config.to_dict(),
            "configurations": list(self.configurations),
        }


def load_suite(path) -> SuiteSpec:
    return SuiteSpec.from_dict(json.loads(Path(path).read_text()))


def _data(name: str) -> dict:
    return json.loads(resources.files("garmentdiff.data").joinpath(name).read_text())


def shipped_synthesis_suite() -> list[tuple[str, int]]:
    return [(c["prompt"], int(c["seed"])) for c in _data("synthesis_suite.json")["synthesis"]]


def shipped_edit_suite() -> list[EditCase]:
    return [EditCase(c["prompt"], c["new_prompt"], int(c["seed"])) for c in _data("edit_suite.json")["edits"]]


def generate_prompts(n: int, rng: np.random.Generator, world: World | None = None,
                     max_aps: int = 3) -> list[str]:
    """Random grammatical prompts: a colored garment plus up to two parts."""
    world = world or default_world()
    lex = world.lexicon
    colors = list(lex.color_names)
    nouns = {"sleeves": "sleeves", "collar": "collar", "hood": "hood",
             "pockets": "pockets", "buttons": "buttons", "belt": "belt"}
    prompts = []
    while len(prompts) < n:
        cat = str(rng.choice(sorted(world.templates)))
        parts = [p for p in world.template(cat).part_ids if p != "body"]
        k = int(rng.integers(0, min(max_aps - 1, len(parts)) + 1))
        chosen = list(rng.choice(parts, size=k, replace=False)) if k else []
        phrases = [f"{rng.choice(colors)} {cat}"]
        for p in chosen:
            adj = [str(rng.choice(colors))]
            if p in world.template(cat).length_parts and rng.random() < 0.5:
                adj.insert(0, str(rng.choice(sorted(lex.lengths))))
            phrases.append(" ".join(adj + [nouns[p]]))
        text = phrases[0]
        if len(phrases) > 1:
            text += " with " + " and ".join(phrases[1:])
        if text not in prompts:
            prompts.append(text)
    return prompts


# -- running ------------------------------------------------------------------

@dataclass
class SuiteReport:
    configuration: str
    leakage_rate: float | None
    confusion_rate: float | None
    mean_consistency: float | None
    edit_success_rate: float | None
    noop_identical_rate: float | None
    cases: list[dict]
    config: dict

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteReport":
        return cls(**d)


def _mean(xs):
    xs = list(xs)
    return None if not xs else float(sum(xs) / len(xs))


def run_synthesis(cases, cfg: Config, world: World | None = None, sampler=None):
    """Sample every (prompt, seed); failures are recorded, not raised."""
    from .diffusion import Sampler

    world = world or default_world()
    sampler = sampler or Sampler(cfg, world=world)
    results, details = [], []
    for prompt, seed in cases:
        try:
            out = sampler.sample(prompt, seed, record_values=False)
        except GarmentError as exc:
            details.append({"prompt": prompt, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
            continue
        res = SynthesisResult(prompt, out.image)
        w = out.tree
        scene = infer_scene(out.image, w.category, world)
        checks = [check_ap(ap, scene, world) for ap in w.aps]
        results.append(res)
        details.append({
            "prompt": prompt, "seed": seed,
            "leaked": any(not c[0] for c in checks),
            "confused_aps": int(sum(not c[1] for c in checks)),
            "n_aps": w.m,
            "scene": scene.to_dict(),
        })
    return results, details


def run_suite(spec: SuiteSpec, world: World | None = None, denoiser=None) -> dict[str, SuiteReport]:
    """One report per guidance configuration of ``spec.configurations``."""
    from .diffusion import Denoiser, Sampler
    from .garment_world import default_bank
    from .manipulation import run_edit

    world = world or default_world()
    base = spec.config
    if denoiser is None and (spec.synthesis or spec.edits):
        denoiser = Denoiser(default_bank(), world, base.lam)
    reports = {}
    for name in spec.configurations:
        use_l1, use_l2 = CONFIGURATIONS[name]
        cfg = base.with_guidance(base.alpha if use_l1 else 0.0, base.beta if use_l2 else 0.0)
        cases: list[dict] = []
        leak = conf = None
        if spec.synthesis:
            sampler = Sampler(cfg, world=world, denoiser=denoiser)
            results, details = run_synthesis(spec.synthesis, cfg, world, sampler)
            cases.extend({"kind": "synthesis", **d} for d in details)
            leak = part_leakage_rate(results, world)
            conf = attribute_confusion_rate(results, world)
        consistency, success, noop = [], [], []
        for case in spec.edits:
            try:
                d = run_edit(case, cfg, world, denoiser)
            except GarmentError as exc:
                cases.append({"kind": "edit", **asdict(case), "error": f"{type(exc).__name__}: {exc}"})
                continue
            cases.append({"kind": "edit", **d})
            if d["noop"]:
                noop.append(d["identical"])
            else:
                consistency.append(d["consistency"])
                success.append(d["realized"])
        reports[name] = SuiteReport(
            configuration=name,
            leakage_rate=leak,
            confusion_rate=conf,
            mean_consistency=_mean(consistency),
            edit_success_rate=_mean(success),
            noop_identical_rate=_mean(noop),
            cases=cases,
            config=cfg.to_dict(),
        )
    return reports


def reports_to_json(reports: dict[str, SuiteReport], config: Config | None = None) -> str:
    doc = {"reports": {k: r.to_dict() for k, r in reports.items()}}
    if config is not None:
        doc["config"] = config.to_dict()
    return json.dumps(doc, indent=1, sort_keys=True)
