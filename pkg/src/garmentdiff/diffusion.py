"""Noise schedule, analytic mixture denoiser and the guided DDIM sampler.

The data distribution is a finite set of prototype latents, so the
Bayes-optimal noise predictor follows from the exact posterior over
prototypes.  Text conditioning reweights the prototype prior by
``exp(lam * sim_full(prototype, prompt))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import consensus_guidance_step, grad_l_hungarian_latent, l_hungarian_latent
from .attention import attention_maps, bundle_terms
from .config import Config
from .errors import BadTimestep, EmptyBank, NonFinite
from .garment_world import (LATENT, PrototypeBank, World, decode, default_bank, default_world,
                            encode)
from .prompt_parser import APTree, parse
from .similarity import sim_full_latents

__all__ = [
    "NoiseSchedule", "DenoisePrediction", "Denoiser", "Sampler", "SampleResult",
    "encode", "decode", "forward_diffuse", "predict_noise", "ddim_step", "sample",
]

BETA_START = 1e-4
BETA_END = 0.33


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear betas for t = 1..T; ``alpha_bar[0] = 1`` is the clean latent."""

    T: int = 50
    beta_start: float = BETA_START
    beta_end: float = BETA_END
    betas: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.concatenate([[0.0], np.linspace(self.beta_start, self.beta_end, self.T)])
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", np.cumprod(1.0 - betas))

    def check(self, t, lo: int = 0) -> int:
        if not float(t).is_integer() or not lo <= t <= self.T:
            raise BadTimestep(f"timestep {t} outside [{lo}, {self.T}]")
        return int(t)


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule | None = None):
    schedule = schedule or NoiseSchedule()
    t = schedule.check(t)
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * np.asarray(z0) + np.sqrt(1.0 - ab) * np.asarray(eps)


@dataclass(frozen=True)
class DenoisePrediction:
    eps: np.ndarray
    z0: np.ndarray
    weights: np.ndarray
    indices: np.ndarray  # bank rows the weights refer to


class Denoiser:
    """Posterior-mean denoiser over a prototype bank, with cached priors."""

    def __init__(self, bank: PrototypeBank, world: World | None = None, lam: float = 20.0,
                 schedule: NoiseSchedule | None = None):
        if bank is None or len(bank) == 0:
            raise EmptyBank("denoiser needs a non-empty prototype bank")
        self.bank = bank
        self.world = world or default_world()
        self.lam = lam
        self.schedule = schedule or NoiseSchedule()
        self._flat = bank.latents.reshape(len(bank), -1)
        self._sq = np.einsum("kd,kd->k", self._flat, self._flat)
        self._priors: dict = {}

    def log_prior(self, cond: APTree | None):
        """(bank indices, log prior) for a condition.

        Prototypes of other garment categories get zero prior mass.
        """
        key = None if cond is None else cond.structure()
        if key not in self._priors:
            if cond is None:
                idx = self.bank.indices(None)
                logp = np.zeros(len(idx))
            else:
                idx = self.bank.indices(cond.category)
                if len(idx) == 0:
                    raise EmptyBank(f"no prototypes for category {cond.category!r}")
                logp = self.lam * sim_full_latents(self.bank.latents[idx], cond, self.world)
            self._priors[key] = (idx, logp)
        return self._priors[key]

    def posterior(self, zt: np.ndarray, ab: float, idx: np.ndarray, logp: np.ndarray) -> np.ndarray:
        """Prototype weights for a batch of flattened latents ``(N, D)``."""
        zt = np.atleast_2d(zt)
        a = np.sqrt(ab)
        d2 = (np.einsum("nd,nd->n", zt, zt)[:, None] - 2.0 * a * zt @ self._flat[idx].T
              + ab * self._sq[idx][None, :])
        logw = logp[None, :] - d2 / (2.0 * (1.0 - ab))
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        return w / w.sum(axis=1, keepdims=True)

    def predict(self, zt: np.ndarray, t: int, cond: APTree | None = None) -> DenoisePrediction:
        t = self.schedule.check(t, lo=1)
        ab = self.schedule.alpha_bar[t]
        idx, logp = self.log_prior(cond)
        z = np.asarray(zt, dtype=float)
        w = self.posterior(z.reshape(1, -1), ab, idx, logp)[0]
        z0 = (w @ self._flat[idx]).reshape(z.shape)
        eps = (z - np.sqrt(ab) * z0) / np.sqrt(1.0 - ab)
        return DenoisePrediction(eps, z0, w, idx)


    def posterior_mean_vjp(self, zt: np.ndarray, t: int, cond: APTree | None, g: np.ndarray,
                           weights: np.ndarray | None = None) -> np.ndarray:
        """``J^T g`` for the posterior mean ``z0(zt)``.

        ``J = sqrt(ab) / (1 - ab) * Cov_w[prototype]`` is symmetric, so the
        product is a weighted covariance applied to ``g``.
        """
        t = self.schedule.check(t, lo=1)
        ab = self.schedule.alpha_bar[t]
        idx, logp = self.log_prior(cond)
        z = np.asarray(zt, dtype=float)
        w = self.posterior(z.reshape(1, -1), ab, idx, logp)[0] if weights is None else weights
        P = self._flat[idx]
        proj = P @ np.asarray(g, dtype=float).ravel()
        mean = w @ P
        out = (w * proj) @ P - (w @ proj) * mean
        return (np.sqrt(ab) / (1.0 - ab) * out).reshape(z.shape)


def predict_noise(zt, t, cond, bank: PrototypeBank, world: World | None = None,
                  lam: float = 20.0, schedule: NoiseSchedule | None = None) -> DenoisePrediction:
    return Denoiser(bank, world, lam, schedule).predict(zt, t, cond)


def ddim_step(zt: np.ndarray, pred: DenoisePrediction, t: int,
              schedule: NoiseSchedule | None = None) -> np.ndarray:
    """Deterministic (eta = 0) update from t to t - 1."""
    schedule = schedule or NoiseSchedule()
    t = schedule.check(t, lo=1)
    ab = schedule.alpha_bar[t - 1]
    return np.sqrt(ab) * pred.z0 + np.sqrt(1.0 - ab) * pred.eps


@dataclass
class StepOutput:
    z_hat: np.ndarray
    z_prime: np.ndarray
    z_next: np.ndarray
    ap_grads: np.ndarray | None
    record: dict


@dataclass
class SampleResult:
    image: np.ndarray
    latent: np.ndarray
    trajectory: list
    attention: dict  # t -> (n_tokens, 256) maps at the guided latent
    tree: APTree


class Sampler:
    def __init__(self, cfg: Config | None = None, bank: PrototypeBank | None = None,
                 world: World | None = None, denoiser: Denoiser | None = None):
        self.cfg = cfg or Config()
        self.world = world or default_world()
        self.schedule = NoiseSchedule(self.cfg.T)
        if denoiser is None:
            denoiser = Denoiser(bank if bank is not None else default_bank(), self.world,
                                self.cfg.lam, self.schedule)
        self.denoiser = denoiser

    def initial_latent(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).standard_normal((LATENT, LATENT, 3))

    def step(self, z: np.ndarray, t: int, w: APTree, injected: dict | None = None,
             record_values: bool = True) -> StepOutput:
        """One guided denoising step: consensus ascent, bundle descent, DDIM.

        ``injected`` maps AP index -> gradient replacing that AP's own bundle
        gradient (attention injected from another trajectory).  Gradients are
        taken in the guidance view (see ``Config.guidance_view``).
        """
        cfg = self.cfg
        guided = cfg.guided(t)
        z_hat = z
        if guided and cfg.alpha > 0:
            if cfg.guidance_view == "latent":
                z_hat = consensus_guidance_step(z, w, cfg.alpha, self.world)
            else:
                pred = self.denoiser.predict(z, t, w)
                _, g, _ = grad_l_hungarian_latent(pred.z0, w, self.world)
                grad = self.denoiser.posterior_mean_vjp(z, t, w, g, pred.weights)
                if not np.isfinite(grad).all():
                    raise NonFinite("consensus guidance gradient is not finite")
                z_hat = z + cfg.alpha * grad
        ap_grads = None
        z_prime = z_hat
        if guided and cfg.beta > 0:
            view = z_hat
            if cfg.guidance_view == "denoised":
                pred = self.denoiser.predict(z_hat, t, w)
                view = pred.z0
            ap_grads = bundle_terms(view, w, self.world, cfg.tau_a)[1]
            if injected:
                for i, g in injected.items():
                    ap_grads[i] = g
            grad = ap_grads.sum(axis=0)
            if cfg.guidance_view == "denoised":
                grad = self.denoiser.posterior_mean_vjp(z_hat, t, w, grad, pred.weights)
            if not np.isfinite(grad).all():
                raise NonFinite("bundle guidance gradient is not finite")
            z_prime = z_hat - cfg.beta * grad
        if not np.isfinite(z_prime).all():
            raise NonFinite(f"latent became non-finite at t={t}")
        pred = self.denoiser.predict(z_prime, t, w)
        z_next = ddim_step(z_prime, pred, t, self.schedule)
        record = {"t": int(t), "guided": bool(guided),
                  "consensus_norm": float(np.linalg.norm(z_hat - z)),
                  "bundle_norm": float(np.linalg.norm(z_prime - z_hat))}
        if record_values:
            record["l_hungarian"] = float(l_hungarian_latent(z_prime, w, self.world))
            record["l_bundle"] = float(bundle_terms(z_prime, w, self.world, cfg.tau_a)[0].sum())
        return StepOutput(z_hat, z_prime, z_next, ap_grads, record)

    def sample(self, prompt: str | APTree, seed: int, record_attention: bool = False,
               record_values: bool = True) -> SampleResult:
        w = prompt if isinstance(prompt, APTree) else parse(prompt, self.world.lexicon)
        z = self.initial_latent(seed)
        trajectory, attention = [], {}
        for t in range(self.cfg.T, 0, -1):
            out = self.step(z, t, w, record_values=record_values)
            if record_attention:
                attention[t] = attention_maps(out.z_prime, w, self.world, self.cfg.tau_a)
            trajectory.append(out.record)
            z = out.z_next
        image = np.clip(decode(z), 0.0, 1.0)
        return SampleResult(image, z, trajectory, attention, w)


def sample(prompt: str, seed: int, cfg: Config | None = None, bank: PrototypeBank | None = None,
           world: World | None = None, record_attention: bool = False) -> SampleResult:
    return Sampler(cfg, bank, world).sample(prompt, seed, record_attention=record_attention)
