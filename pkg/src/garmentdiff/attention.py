"""Token-to-pixel cross-attention, the semantic-bundled loss and edit masks.

Queries live on the 16x16 latent grid: the pixel color ``u = 2z - 1`` and a
folded position ``p``, each with its squared-norm term.  Token keys carry a
color anchor (color adjectives) or a spatial anchor at their part's centroid
(nouns and non-color adjectives), so a token's logit is
``-|u - k|^2 / 2`` or ``-(s^2 / 2) |p - c|^2`` up to a per-token constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import (InvalidDistribution, InvalidPercentile, LengthMismatch, NonFinite,
                     UnknownToken)
from .garment_world import LATENT, World, default_world, folded_coords
from .prompt_parser import APTree, AttributePhrase, Token

TAU_A = 0.2
POSITION_SCALE = 4.0
KEY_DIM = 7
N_PIXELS = LATENT * LATENT
_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class TokenKey:
    color: tuple[float, float, float]  # in [-1, 1]; zeros when the token has no color
    centroid: tuple[float, float]
    anchored: bool  # spatial anchor flag: nouns and non-color adjectives
    colored: bool = False

    def vector(self) -> np.ndarray:
        return np.array([*self.color, 1.0 if self.colored else 0.0, *self.centroid,
                         1.0 if self.anchored else 0.0])


def _position_features() -> np.ndarray:
    fx, fy = folded_coords(LATENT)
    s2 = POSITION_SCALE ** 2
    pos = np.stack([s2 * fx, s2 * fy, -0.5 * s2 * (fx ** 2 + fy ** 2)], axis=-1)
    return pos.reshape(N_PIXELS, 3)


_POS = _position_features()


def queries(z: np.ndarray) -> np.ndarray:
    """Per-pixel queries ``(256, 7)``; decoding then pooling returns z itself."""
    u = 2.0 * np.asarray(z, dtype=float).reshape(N_PIXELS, 3) - 1.0
    return np.concatenate([u, -0.5 * np.einsum("pc,pc->p", u, u)[:, None], _POS], axis=1)


def token_key(tok: Token, ap: AttributePhrase, w: APTree, world: World) -> TokenKey:
    lex = world.lexicon
    if tok is not ap.noun:
        attr = lex.attribute_adjectives[tok.text]
        if attr.kind == "color":
            return TokenKey(tuple(2.0 * c - 1.0 for c in attr.value), (0.0, 0.0), False, True)
    template = world.template(w.category)
    pid = lex.part_of(ap.noun.text)
    if pid not in template.masks:
        return TokenKey((0.0, 0.0, 0.0), (0.0, 0.0), False)
    return TokenKey((0.0, 0.0, 0.0), template.centroid(pid), True)


def token_keys(w: APTree, world: World | None = None) -> np.ndarray:
    """Keys for ``w.tokens`` in order, shape ``(n_tokens, 7)``."""
    world = world or default_world()
    return np.array([token_key(t, ap, w, world).vector() for ap in w.aps for t in ap.tokens])


def _scale(tau_a: float) -> float:
    return 1.0 / (np.sqrt(KEY_DIM) * tau_a)


def attention_logits(q: np.ndarray, keys: np.ndarray, tau_a: float = TAU_A) -> np.ndarray:
    return (keys @ q.T) * _scale(tau_a)  # (n_tokens, 256)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    mx = logits.max(axis=-1, keepdims=True)
    shifted = logits - mx
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def attention_from_queries(q: np.ndarray, key: np.ndarray, tau_a: float = TAU_A) -> np.ndarray:
    return np.exp(log_softmax(attention_logits(q, np.atleast_2d(key), tau_a)))[0]


def attention_maps(z: np.ndarray, w: APTree, world: World | None = None,
                   tau_a: float = TAU_A) -> np.ndarray:
    """Maps for every token of ``w`` (flattened AP order), shape ``(n_tokens, 256)``."""
    return np.exp(log_softmax(attention_logits(queries(z), token_keys(w, world), tau_a)))


def token_index(token: Token, w: APTree) -> int:
    for i, t in enumerate(w.tokens):
        if t == token:
            return i
    raise UnknownToken(f"token {token!r} is not part of the prompt")


def attention_map(z: np.ndarray, token: Token, w: APTree, world: World | None = None,
                  tau_a: float = TAU_A) -> np.ndarray:
    i = token_index(token, w)
    return attention_maps(z, w, world, tau_a)[i]


def ap_token_slices(w: APTree) -> list[slice]:
    out, start = [], 0
    for ap in w.aps:
        out.append(slice(start, start + len(ap.tokens)))
        start += len(ap.tokens)
    return out


# -- divergences --------------------------------------------------------------

def _check_distribution(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistribution(f"{name} is not a probability vector (sum={p.sum()})")
    return p


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats, with 0 log 0 = 0."""
    p = _check_distribution(p, "p")
    q = _check_distribution(q, "q")
    if p.shape != q.shape:
        raise LengthMismatch(f"shapes differ: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    return 0.5 * kl(p) + 0.5 * kl(q)


def _js_log(logp: np.ndarray, logq: np.ndarray):
    """JS value and its gradients w.r.t. p and q, from log-probabilities."""
    logm = np.logaddexp(logp, logq) - _LOG2
    p, q = np.exp(logp), np.exp(logq)
    dp = 0.5 * (logp - logm)
    dq = 0.5 * (logq - logm)
    return float(np.sum(p * dp) + np.sum(q * dq)), dp, dq


def _d_is_from_logmaps(logmaps: np.ndarray):
    """Sum of pairwise JS over the rows of ``logmaps``; grads w.r.t. maps."""
    value = 0.0
    grad = np.zeros_like(logmaps)
    for j, k in combinations(range(logmaps.shape[0]), 2):
        v, dp, dq = _js_log(logmaps[j], logmaps[k])
        value += v
        grad[j] += dp
        grad[k] += dq
    return value, grad


def d_is(z: np.ndarray, ap: AttributePhrase, w: APTree, world: World | None = None,
         tau_a: float = TAU_A) -> float:
    """Pairwise JS divergence among the token maps of one AP."""
    idx = [i for i, a in enumerate(w.aps) if a is ap]
    if not idx:
        idx = [i for i, a in enumerate(w.aps) if a == ap]
    if not idx:
        raise UnknownToken("attribute phrase is not part of the prompt")
    sl = ap_token_slices(w)[idx[0]]
    logmaps = log_softmax(attention_logits(queries(z), token_keys(w, world)[sl], tau_a))
    return _d_is_from_logmaps(logmaps)[0]


def bundle_terms(z: np.ndarray, w: APTree, world: World | None = None, tau_a: float = TAU_A):
    """Per-AP bundle values and their latent gradients, shape ``(m, 16, 16, 3)``."""
    keys = token_keys(w, world)
    q = queries(z)
    u = q[:, :3]
    logmaps = log_softmax(attention_logits(q, keys, tau_a))
    maps = np.exp(logmaps)
    scale = _scale(tau_a)
    values = np.zeros(w.m)
    grads = np.zeros((w.m, LATENT, LATENT, 3))
    for i, sl in enumerate(ap_token_slices(w)):
        if sl.stop - sl.start < 2:
            continue
        values[i], g_maps = _d_is_from_logmaps(logmaps[sl])
        pm = maps[sl]
        g_logits = pm * (g_maps - np.sum(g_maps * pm, axis=1, keepdims=True))
        # d logits[t, p] / d u[p] = scale * (key_color[t] - colored[t] * u[p])
        g_u = g_logits.T @ keys[sl, :3] - (g_logits.T @ keys[sl, 3])[:, None] * u
        g = 2.0 * scale * g_u
        grads[i] = g.reshape(LATENT, LATENT, 3)
    return values, grads


def l_bundle(z: np.ndarray, w: APTree, world: World | None = None, tau_a: float = TAU_A) -> float:
    return float(bundle_terms(z, w, world, tau_a)[0].sum())


def grad_l_bundle(z: np.ndarray, w: APTree, world: World | None = None, tau_a: float = TAU_A):
    values, grads = bundle_terms(z, w, world, tau_a)
    return float(values.sum()), grads.sum(axis=0)


def bundle_guidance_step(z: np.ndarray, w: APTree, beta: float, world: World | None = None,
                         tau_a: float = TAU_A, ap_grads: np.ndarray | None = None) -> np.ndarray:
    """Descent step ``z - beta * grad L_bundle``.

    ``ap_grads`` supplies precomputed per-AP gradients (used when attention
    is injected from another trajectory during editing).
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    z = np.asarray(z, dtype=float)
    if beta == 0:
        return z.copy()
    if ap_grads is None:
        ap_grads = bundle_terms(z, w, world, tau_a)[1]
    grad = ap_grads.sum(axis=0)
    if not np.isfinite(grad).all():
        raise NonFinite("bundle guidance gradient is not finite")
    return z - beta * grad


# -- masks --------------------------------------------------------------------

def check_percentile(percentile: float) -> float:
    if not 0.0 < percentile < 1.0:
        raise InvalidPercentile(f"percentile must lie in (0, 1), got {percentile}")
    return float(percentile)


def binarize(amap: np.ndarray, percentile: float = 0.75) -> np.ndarray:
    """Boolean mask of entries at or above the given percentile of the map.

    The threshold is an actual map entry (``method="higher"``), so the mask
    depends only on the rank order of the entries.
    """
    check_percentile(percentile)
    amap = np.asarray(amap, dtype=float)
    thresh = np.quantile(amap, percentile, method="higher")
    return amap >= thresh


def blended_mask(masks_old, masks_new, n_pixels: int | None = None):
    """Boolean union of all masks and its complement: (B_relevant, B_keep)."""
    masks = [np.asarray(m, dtype=bool) for m in list(masks_old) + list(masks_new)]
    if not masks:
        if n_pixels is None:
            raise LengthMismatch("no masks given and no pixel count to size the result")
        relevant = np.zeros(n_pixels, dtype=bool)
        return relevant, ~relevant
    size = masks[0].size if n_pixels is None else n_pixels
    if any(m.size != size for m in masks):
        raise LengthMismatch("masks have different pixel counts")
    relevant = np.logical_or.reduce([m.ravel() for m in masks])
    return relevant, ~relevant
