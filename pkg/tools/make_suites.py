"""Regenerate the shipped synthesis and edit suites (deterministic)."""
import json
from pathlib import Path

import numpy as np

from garmentdiff.evalkit import generate_prompts
from garmentdiff.garment_world import default_world

OUT = Path(__file__).resolve().parents[1] / "src" / "garmentdiff" / "data"


def synthesis(rng):
    prompts = generate_prompts(50, rng)
    return [{"prompt": p, "seed": 100 + i} for i, p in enumerate(prompts)]


def edits(rng, world):
    colors = list(world.lexicon.color_names)
    sleeved = [c for c in sorted(world.templates) if "sleeves" in world.template(c).part_ids]

    def pick(xs, exclude=()):
        return str(rng.choice([x for x in xs if x not in exclude]))

    cases = []
    for i in range(8):  # sleeve length
        cat, body, sl = pick(sleeved), pick(colors), pick(colors)
        a, b = ("long", "short") if i % 4 else ("short", "long")
        cases.append((f"{body} {cat} with {a} {sl} sleeves", f"{body} {cat} with {b} {sl} sleeves"))
    for i in range(10):  # part color
        cat = pick(sorted(world.templates))
        part = pick([p for p in world.template(cat).part_ids if p != "body"])
        body, old = pick(colors), pick(colors)
        new = pick(colors, (old,))
        cases.append((f"{body} {cat} with {old} {part}", f"{body} {cat} with {new} {part}"))
    for _ in range(4):  # garment color
        cat, old = pick(sorted(world.templates)), pick(colors)
        cases.append((f"{old} {cat}", f"{pick(colors, (old,))} {cat}"))
    for _ in range(4):  # two phrases at once
        cat = pick(sleeved)
        other = pick([p for p in world.template(cat).part_ids if p not in ("body", "sleeves")])
        body, s1, o1 = pick(colors), pick(colors), pick(colors)
        old = f"{body} {cat} with long {s1} sleeves and {o1} {other}"
        new = f"{body} {cat} with short {s1} sleeves and {pick(colors, (o1,))} {other}"
        cases.append((old, new))
    for _ in range(4):  # no-op
        cat = pick(sorted(world.templates))
        part = pick([p for p in world.template(cat).part_ids if p != "body"])
        p = f"{pick(colors)} {cat} with {pick(colors)} {part}"
        cases.append((p, p))
    return [{"prompt": a, "new_prompt": b, "seed": 300 + i} for i, (a, b) in enumerate(cases)]


def main():
    world = default_world()
    (OUT / "synthesis_suite.json").write_text(
        json.dumps({"synthesis": synthesis(np.random.default_rng(2024))}, indent=1) + "\n")
    (OUT / "edit_suite.json").write_text(
        json.dumps({"edits": edits(np.random.default_rng(31), world)}, indent=1) + "\n")


if __name__ == "__main__":
    main()
