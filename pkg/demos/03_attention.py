"""Token attention maps and the semantic-bundled loss along one trajectory.

Tokens of one phrase ("red", "collar") should attend to the same pixels.
The bundle loss sums their pairwise JS divergences; guidance pushes it down.

    python3 demos/03_attention.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from garmentdiff.attention import attention_maps, l_bundle
from garmentdiff.config import Config
from garmentdiff.diffusion import Sampler
from garmentdiff.garment_world import save_png
from garmentdiff.prompt_parser import parse

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
w = parse("Navy blue jacket with red collar.")
print("tokens:", [t.text for t in w.tokens])

for name, cfg in [("unguided", Config(alpha=0.0, beta=0.0)), ("guided", Config())]:
    sampler = Sampler(cfg)
    z = sampler.initial_latent(0)
    line = []
    for t in range(cfg.T, 0, -1):
        step = sampler.step(z, t, w, record_values=False)
        if t % 10 == 0:
            line.append(f"t={t}: {l_bundle(step.z_prime, w):.3f}")
        z = step.z_next
    print(f"[{name}] L_bundle " + ", ".join(line))
    maps = attention_maps(z, w)
    tiles = [np.kron(m.reshape(16, 16) / m.max(), np.ones((4, 4))) for m in maps]
    grid = np.concatenate(tiles, axis=1)
    save_png(np.repeat(grid[..., None], 3, axis=2), out / f"attention_{name}.png")
print(f"final-step maps written to {out}/ (one tile per token)")
