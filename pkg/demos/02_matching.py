"""Match garment parts to attribute phrases with the Hungarian solver.

A rendered jacket has red sleeves and a yellow collar.  The prompt that
describes it scores higher than the one with the colors swapped, and the
matching pairs every part with the phrase that names it.

    python3 demos/02_matching.py
"""
from garmentdiff.alignment import l_hungarian, match
from garmentdiff.garment_world import GarmentScene, PartSpec, default_world, render, segment
from garmentdiff.prompt_parser import parse

world = default_world()
lex = world.lexicon
scene = GarmentScene("jacket", (PartSpec("body", lex.color_rgb("navy")),
                                PartSpec("sleeves", lex.color_rgb("red"), "long"),
                                PartSpec("collar", lex.color_rgb("yellow"))))
parts = segment(render(scene), "jacket", world)

for prompt in ["navy jacket with long red sleeves and yellow collar",
               "navy jacket with long yellow sleeves and red collar"]:
    w = parse(prompt)
    a = match(parts, w, world)
    print(prompt)
    for i, j in a.pairs():
        print(f"  {parts.parts[i][0]:<8} <-> {w.aps[j].text():<20} sim {-a.costs[i]:.3f}")
    print(f"  L_Hungarian = {l_hungarian(parts, w, world, a):.3f}\n")
