"""Command-line entry point: ``garmentdiff <command> [options]``.

Exit codes: 0 success, 2 parse or usage error, 3 numeric failure, 1 other
package errors.  Every JSON report carries the effective configuration.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import CONFIG_ENV, GUIDANCE_VIEWS, Config, parse_config_text
from .errors import ConfigError, GarmentError, NonFinite, ParseError

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

_OVERRIDES = [
    ("--T", "T", int), ("--alpha", "alpha", float), ("--beta", "beta", float),
    ("--window-lo", "window_lo", float), ("--window-hi", "window_hi", float),
    ("--percentile", "percentile", float), ("--tau-a", "tau_a", float),
    ("--lam", "lam", float), ("--lexicon", "lexicon", str), ("--templates", "templates", str),
]


def _write_json(doc, path) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _config(args, base: dict | None = None) -> Config:
    """``base`` (e.g. a suite's config) < config file < command-line flags."""
    overrides = {dest: getattr(args, dest) for _, dest, _ in _OVERRIDES}
    overrides["guidance_view"] = args.guidance_view
    overrides["seed"] = getattr(args, "seed", None)
    values = dict(base or {})
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        values.update(parse_config_text(Path(path).read_text()))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)


def _world(cfg: Config):
    from .garment_world import World, default_templates, default_world, load_templates
    from .prompt_parser import default_lexicon, load_lexicon

    if cfg.lexicon is None and cfg.templates is None:
        return default_world()
    lex = load_lexicon(cfg.lexicon) if cfg.lexicon else default_lexicon()
    templates = load_templates(cfg.templates) if cfg.templates else default_templates()
    return World(lex, templates)


def _denoiser(cfg: Config, world):
    from .diffusion import Denoiser, NoiseSchedule
    from .garment_world import build_prototype_bank, default_bank, default_world

    if world is default_world():
        bank = default_bank()
    else:
        bank = build_prototype_bank(world.lexicon, None, world.templates)
    return Denoiser(bank, world, cfg.lam, NoiseSchedule(cfg.T))


# -- commands -----------------------------------------------------------------

def cmd_parse(args) -> int:
    from .prompt_parser import parse

    cfg = _config(args)
    tree = parse(args.prompt, _world(cfg).lexicon)
    _write_json({**tree.to_dict(), "config": cfg.to_dict()}, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .diffusion import Sampler
    from .garment_world import save_png

    cfg = _config(args)
    world = _world(cfg)
    sampler = Sampler(cfg, world=world, denoiser=_denoiser(cfg, world))
    res = sampler.sample(args.prompt, cfg.seed)
    save_png(res.image, args.out)
    if args.trajectory:
        _write_json({"prompt": args.prompt, "seed": cfg.seed, "tree": res.tree.to_dict(),
                     "trajectory": res.trajectory, "config": cfg.to_dict()}, args.trajectory)
    return EXIT_OK


def cmd_match(args) -> int:
    from .alignment import l_hungarian, match
    from .garment_world import load_png, segment
    from .prompt_parser import parse

    cfg = _config(args)
    world = _world(cfg)
    tree = parse(args.prompt, world.lexicon)
    parts = segment(load_png(args.image), tree.category, world)
    a = match(parts, tree, world)
    pairs = [{"part": parts.parts[i][0], "ap": tree.aps[j].text(), "similarity": -a.costs[i]}
             for i, j in a.pairs()]
    _write_json({"prompt": args.prompt, "pairs": pairs,
                 "l_hungarian": l_hungarian(parts, tree, world, a), "config": cfg.to_dict()}, args.out)
    return EXIT_OK


def cmd_attmap(args) -> int:
    from .attention import attention_maps
    from .diffusion import Sampler
    from .garment_world import LATENT, POOL, save_png
    from .prompt_parser import parse

    cfg = _config(args)
    world = _world(cfg)
    tree = parse(args.prompt, world.lexicon)
    sampler = Sampler(cfg, world=world, denoiser=_denoiser(cfg, world))
    t_stop = sampler.schedule.check(args.step, lo=1)
    z = sampler.initial_latent(cfg.seed)
    for t in range(cfg.T, t_stop - 1, -1):
        out = sampler.step(z, t, tree, record_values=False)
        z = out.z_next
    maps = attention_maps(out.z_prime, tree, world, cfg.tau_a)
    # one tile per token, each scaled to its own maximum, separated by white columns
    tiles = [np.kron(m.reshape(LATENT, LATENT) / m.max(), np.ones((POOL, POOL))) for m in maps]
    gap = np.ones((LATENT * POOL, POOL))
    grid = np.concatenate([x for tile in tiles for x in (tile, gap)][:-1], axis=1)
    save_png(np.repeat(grid[..., None], 3, axis=2), args.out)
    if args.json:
        _write_json({"prompt": args.prompt, "seed": cfg.seed, "t": t_stop,
                     "tokens": [tok.text for tok in tree.tokens], "maps": maps.tolist(),
                     "config": cfg.to_dict()}, args.json)
    return EXIT_OK


def cmd_manipulate(args) -> int:
    from .garment_world import save_png
    from .manipulation import EditRequest, manipulate

    cfg = _config(args)
    world = _world(cfg)
    req = EditRequest(args.prompt, args.new_prompt, cfg.seed, cfg)
    res = manipulate(req, world, _denoiser(cfg, world), blend=not args.no_blend,
                     inject=not args.no_inject)
    save_png(res.edited, args.out)
    if args.original:
        save_png(res.original, args.original)
    if args.report:
        _write_json({"prompt": args.prompt, "new_prompt": args.new_prompt, "seed": cfg.seed,
                     "edited_aps": list(res.gamma), "consistency": res.consistency,
                     "b_relevant": res.b_relevant.astype(int).tolist(), "steps": res.steps,
                     "config": cfg.to_dict()}, args.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evalkit import SuiteSpec, load_suite, reports_to_json, run_suite

    suite = load_suite(args.suite)
    cfg = _config(args, suite.config.to_dict())
    spec = SuiteSpec(suite.synthesis, suite.edits, cfg, suite.configurations)
    world = _world(cfg)
    denoiser = _denoiser(cfg, world) if (spec.synthesis or spec.edits) else None
    reports = run_suite(spec, world, denoiser)
    text = reports_to_json(reports, cfg) + "\n"
    Path(args.out).write_text(text)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser, seed: bool = True) -> None:
    g = p.add_argument_group("configuration (flags override --config)")
    g.add_argument("--config", help="flat key = value config file (default: $GARMENTDIFF_CONFIG)")
    for flag, dest, kind in _OVERRIDES:
        g.add_argument(flag, dest=dest, type=kind, default=None)
    g.add_argument("--guidance-view", choices=GUIDANCE_VIEWS, default=None)
    if seed:
        g.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="garmentdiff", description="Part-aware garment synthesis and editing.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="print the attribute phrases of a prompt as JSON")
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", default=None, help="JSON path (default: stdout)")
    _add_config_flags(p, seed=False)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("synth", help="sample an image for a prompt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True, help="PNG path")
    p.add_argument("--trajectory", default=None, help="JSON path for the per-step record")
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("match", help="match the parts of an image to the prompt's phrases")
    p.add_argument("--prompt", required=True)
    p.add_argument("--image", required=True, help="64x64 PNG")
    p.add_argument("--out", default=None, help="JSON path (default: stdout)")
    _add_config_flags(p, seed=False)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("attmap", help="token attention maps at one sampling step")
    p.add_argument("--prompt", required=True)
    p.add_argument("--step", type=int, required=True, help="timestep in [1, T]")
    p.add_argument("--out", required=True, help="PNG path: one grayscale tile per token")
    p.add_argument("--json", default=None, help="JSON path for the raw maps")
    _add_config_flags(p)
    p.set_defaults(func=cmd_attmap)

    p = sub.add_parser("manipulate", help="edit a generated image by changing its prompt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--new-prompt", required=True)
    p.add_argument("--out", required=True, help="PNG path for the edited image")
    p.add_argument("--original", default=None, help="PNG path for the original image")
    p.add_argument("--report", default=None, help="JSON path")
    p.add_argument("--no-blend", action="store_true", help="disable region-consistent blending")
    p.add_argument("--no-inject", action="store_true", help="disable attention injection")
    _add_config_flags(p)
    p.set_defaults(func=cmd_manipulate)

    p = sub.add_parser("eval", help="run a suite under the four guidance configurations")
    p.add_argument("--suite", required=True, help="suite JSON")
    p.add_argument("--out", required=True, help="report JSON path")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ParseError, ConfigError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFinite as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GarmentError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
