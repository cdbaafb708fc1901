"""Adversarial training loop.

Non-saturating logistic losses with a lazy R1 gradient penalty on the real
(image, mask) pair, Adam for both networks, and an exponential moving
average shadow of the generator for evaluation and serving. All randomness
flows from seeded torch generators held in the train state, so two runs
with the same seed and data order produce identical loss sequences, and a
checkpoint round-trip resumes bit-identically.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .discriminator import Discriminator, DiscriminatorConfig
from .evaluation import ProxyFeatureExtractor, proxy_fid
from .generator import CompositionalGenerator, GeneratorConfig
from .imutil import image_grid
from .toydata import ToyCorpus, toy_remap_table


@dataclass
class TrainConfig:
    batch_size: int = 16
    total_steps: int = 2000
    lr_g: float = 2e-3
    lr_d: float = 2e-3
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    r1_weight: float = 10.0
    r1_interval: int = 16
    ema_decay: float = 0.999
    seed: int = 0
    num_super_classes: int = 16
    spectral_norm: bool = True
    real_mask_noise: float = 0.05
    checkpoint_every: int = 400
    log_every: int = 50
    label: str = ""

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.r1_interval < 1:
            raise ValueError("r1_interval must be >= 1")


@dataclass
class TrainState:
    step: int
    generator: CompositionalGenerator
    ema_generator: CompositionalGenerator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    latent_rng: torch.Generator
    data_rng: torch.Generator
    gen_cfg: GeneratorConfig
    disc_cfg: DiscriminatorConfig
    train_cfg: TrainConfig


def ema_update(shadow: torch.nn.Module, live: torch.nn.Module, decay: float):
    """shadow <- decay * shadow + (1 - decay) * live, parameterwise."""
    with torch.no_grad():
        for p_s, p_l in zip(shadow.parameters(), live.parameters()):
            p_s.mul_(decay).add_(p_l, alpha=1.0 - decay)
        for b_s, b_l in zip(shadow.buffers(), live.buffers()):
            b_s.copy_(b_l)


def d_logistic_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()


def g_nonsaturating_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_scores).mean()


def r1_penalty(disc: Discriminator, images: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """Mean squared gradient norm of the real scores w.r.t. both inputs."""
    images = images.detach().requires_grad_(True)
    masks = masks.detach().requires_grad_(True)
    scores = disc(images, masks)
    grad_img, grad_mask = torch.autograd.grad(
        outputs=scores.sum(), inputs=[images, masks], create_graph=True
    )
    return (grad_img.flatten(1).pow(2).sum(1) + grad_mask.flatten(1).pow(2).sum(1)).mean()


def init_train_state(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
                     train_cfg: TrainConfig) -> TrainState:
    if gen_cfg.num_classes != train_cfg.num_super_classes \
            or disc_cfg.mask_channels != train_cfg.num_super_classes:
        raise ValueError("class counts of generator, discriminator, and train config differ")
    with torch.random.fork_rng():
        torch.manual_seed(train_cfg.seed)
        generator = CompositionalGenerator(gen_cfg)
        discriminator = Discriminator(disc_cfg)
    ema_generator = copy.deepcopy(generator)
    ema_generator.requires_grad_(False)
    betas = (train_cfg.adam_beta1, train_cfg.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=train_cfg.lr_g, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=train_cfg.lr_d, betas=betas)
    latent_rng = torch.Generator().manual_seed(train_cfg.seed * 7919 + 1)
    data_rng = torch.Generator().manual_seed(train_cfg.seed * 7919 + 2)
    return TrainState(
        step=0, generator=generator, ema_generator=ema_generator,
        discriminator=discriminator, opt_g=opt_g, opt_d=opt_d,
        latent_rng=latent_rng, data_rng=data_rng,
        gen_cfg=gen_cfg, disc_cfg=disc_cfg, train_cfg=train_cfg,
    )


def _noisy_real_mask(masks: torch.Tensor, magnitude: float,
                     rng: torch.Generator) -> torch.Tensor:
    # soften real one-hots toward the generator's soft fakes
    if magnitude <= 0:
        return masks
    noise = magnitude * torch.rand(masks.shape, generator=rng, dtype=masks.dtype)
    noisy = masks + noise
    return noisy / noisy.sum(dim=1, keepdim=True)


def train_step(state: TrainState, images: torch.Tensor, labels: torch.Tensor) -> dict:
    """One discriminator update then one generator update.

    ``images``: (B, 3, H, W) in [-1, 1]. ``labels``: (B, H, W) integer class
    indices, already remapped to the configured super-classes.
    """
    cfg = state.train_cfg
    c = cfg.num_super_classes
    if int(labels.max()) >= c:
        raise ValueError(
            f"label value {int(labels.max())} >= {c} super-classes; "
            "remap the dataset before training"
        )
    masks = F.one_hot(labels.long(), c).permute(0, 3, 1, 2).to(images.dtype)
    b = images.shape[0]

    generator, discriminator = state.generator, state.discriminator

    # discriminator phase
    discriminator.requires_grad_(True)
    generator.requires_grad_(False)
    with torch.no_grad():
        z = generator.sample_z(b, state.latent_rng)
        fake = generator.generate(generator.map_latent(z))
    real_masks = _noisy_real_mask(masks, cfg.real_mask_noise, state.latent_rng)
    real_scores = discriminator(images, real_masks)
    fake_scores = discriminator(fake.image, fake.final_mask)
    d_loss = d_logistic_loss(real_scores, fake_scores)
    r1_value = 0.0
    if state.step % cfg.r1_interval == 0:
        r1 = r1_penalty(discriminator, images, real_masks)
        r1_value = float(r1.detach())
        # lazy regularization: scale by the interval to keep the effective
        # strength of the penalty independent of how often it runs
        d_loss = d_loss + (cfg.r1_weight / 2.0) * r1 * cfg.r1_interval
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    state.opt_d.step()

    # generator phase
    discriminator.requires_grad_(False)
    generator.requires_grad_(True)
    z = generator.sample_z(b, state.latent_rng)
    fake = generator.generate(generator.map_latent(z))
    g_loss = g_nonsaturating_loss(discriminator(fake.image, fake.final_mask))
    state.opt_g.zero_grad(set_to_none=True)
    g_loss.backward()
    state.opt_g.step()
    ema_update(state.ema_generator, generator, cfg.ema_decay)

    state.step += 1
    coverage = fake.final_mask.detach().mean(dim=(0, 2, 3))
    return {
        "step": state.step,
        "d_loss": float(d_loss.detach()),
        "g_loss": float(g_loss.detach()),
        "r1": r1_value,
        "real_score": float(real_scores.detach().mean()),
        "fake_score": float(fake_scores.detach().mean()),
        "fake_coverage": [float(v) for v in coverage],
    }


# -- checkpoint wiring --------------------------------------------------------


def save_train_checkpoint(state: TrainState, path):
    arrays: dict[str, np.ndarray] = {}
    arrays.update(ckpt.module_arrays(state.generator, "generator"))
    arrays.update(ckpt.module_arrays(state.ema_generator, "ema_generator"))
    arrays.update(ckpt.module_arrays(state.discriminator, "discriminator"))
    arrays.update(ckpt.optimizer_arrays(state.opt_g, "opt_g"))
    arrays.update(ckpt.optimizer_arrays(state.opt_d, "opt_d"))
    arrays["rng/latent"] = ckpt.generator_state_arrays(state.latent_rng.get_state())
    arrays["rng/data"] = ckpt.generator_state_arrays(state.data_rng.get_state())
    configs = {
        "generator": asdict(state.gen_cfg),
        "discriminator": asdict(state.disc_cfg),
        "train": asdict(state.train_cfg),
    }
    ckpt.save_checkpoint(path, configs=configs, meta={"step": state.step}, arrays=arrays)


def configs_from_checkpoint(loaded: ckpt.Checkpoint):
    gen_cfg = GeneratorConfig(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in loaded.configs["generator"].items()
    })
    disc_cfg = DiscriminatorConfig(**{
        k: tuple(v) if isinstance(v, list) else v
        for k, v in loaded.configs["discriminator"].items()
    })
    train_cfg = TrainConfig(**loaded.configs["train"])
    return gen_cfg, disc_cfg, train_cfg


def load_train_state(path) -> TrainState:
    loaded = ckpt.load_checkpoint(path)
    gen_cfg, disc_cfg, train_cfg = configs_from_checkpoint(loaded)
    state = init_train_state(gen_cfg, disc_cfg, train_cfg)
    ckpt.load_module(state.generator, loaded.arrays, "generator")
    ckpt.load_module(state.ema_generator, loaded.arrays, "ema_generator")
    ckpt.load_module(state.discriminator, loaded.arrays, "discriminator")
    ckpt.load_optimizer(state.opt_g, loaded.arrays, "opt_g")
    ckpt.load_optimizer(state.opt_d, loaded.arrays, "opt_d")
    ckpt.restore_generator_state(state.latent_rng, loaded.arrays["rng/latent"])
    ckpt.restore_generator_state(state.data_rng, loaded.arrays["rng/data"])
    state.step = loaded.step
    return state


def load_generator_for_inference(path) -> tuple[CompositionalGenerator, GeneratorConfig]:
    """EMA generator from a checkpoint, frozen and in eval mode."""
    loaded = ckpt.load_checkpoint(path)
    gen_cfg, _, _ = configs_from_checkpoint(loaded)
    generator = CompositionalGenerator(gen_cfg)
    ckpt.load_module(generator, loaded.arrays, "ema_generator")
    generator.requires_grad_(False)
    generator.eval()
    return generator, gen_cfg


# -- loops ---------------------------------------------------------------------


class _BatchSampler:
    """Seeded epoch shuffling over a corpus, yielding uint8 batches."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, batch_size: int,
                 rng: torch.Generator):
        self.images = torch.from_numpy(images)          # (N, H, W, 3) uint8
        self.labels = torch.from_numpy(labels.astype(np.int64))
        self.batch_size = batch_size
        self.rng = rng
        self._order: torch.Tensor | None = None
        self._pos = 0

    def next_batch(self):
        n = self.images.shape[0]
        if self._order is None or self._pos + self.batch_size > n:
            self._order = torch.randperm(n, generator=self.rng)
            self._pos = 0
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        images = self.images[idx].to(torch.float32).div(127.5).sub(1.0).permute(0, 3, 1, 2)
        return images, self.labels[idx]


class DivergenceError(RuntimeError):
    pass


def train_loop(state: TrainState, images: np.ndarray, labels: np.ndarray,
               out_dir=None, steps: int | None = None,
               checkpoint_hook=None, on_nan: str = "raise",
               quiet: bool = True) -> list[dict]:
    """Run ``steps`` training steps (default: up to cfg.total_steps).

    Writes metrics records to ``<out_dir>/metrics.jsonl`` plus periodic
    checkpoints and sample grids when ``out_dir`` is given.
    ``checkpoint_hook(state, path)`` fires after each checkpoint write.
    """
    cfg = state.train_cfg
    steps = cfg.total_steps - state.step if steps is None else steps
    sampler = _BatchSampler(images, labels, cfg.batch_size, state.data_rng)
    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_file = (out_dir / "metrics.jsonl").open("a")
    history = []
    started = time.time()
    try:
        for _ in range(steps):
            batch_images, batch_labels = sampler.next_batch()
            report = train_step(state, batch_images, batch_labels)
            history.append(report)
            if not math.isfinite(report["d_loss"]) or not math.isfinite(report["g_loss"]):
                if on_nan == "raise":
                    raise DivergenceError(f"non-finite loss at step {state.step}")
                break
            if metrics_file and state.step % cfg.log_every == 0:
                metrics_file.write(json.dumps(report) + "\n")
                metrics_file.flush()
            if not quiet and state.step % cfg.log_every == 0:
                rate = state.step / max(time.time() - started, 1e-9)
                print(f"step {state.step}  d={report['d_loss']:.3f} "
                      f"g={report['g_loss']:.3f}  {rate:.2f} it/s", flush=True)
            if state.step % cfg.checkpoint_every == 0 or state.step == cfg.total_steps:
                if out_dir is not None:
                    path = out_dir / f"ckpt_{state.step:06d}.zip"
                    save_train_checkpoint(state, path)
                    _dump_samples(state, out_dir)
                    if checkpoint_hook is not None:
                        checkpoint_hook(state, path)
                elif checkpoint_hook is not None:
                    checkpoint_hook(state, None)
    finally:
        if metrics_file:
            metrics_file.close()
    return history


def _dump_samples(state: TrainState, out_dir: Path, n: int = 8):
    with torch.no_grad():
        rng = torch.Generator().manual_seed(state.train_cfg.seed + 4242)
        z = state.ema_generator.sample_z(n, rng)
        result = state.ema_generator.generate(state.ema_generator.map_latent(z))
    image_grid(result.image).save(out_dir / f"samples_{state.step:06d}.png")


def sample_images(generator: CompositionalGenerator, n: int, seed: int,
                  batch_size: int = 32) -> np.ndarray:
    """(n, 3, H, W) float32 generated images in [-1, 1]."""
    rng = torch.Generator().manual_seed(seed)
    out = []
    with torch.no_grad():
        for i in range(0, n, batch_size):
            z = generator.sample_z(min(batch_size, n - i), rng)
            out.append(generator.generate(generator.map_latent(z)).image.numpy())
    return np.concatenate(out, axis=0)


# -- ablation matrix -----------------------------------------------------------


def labels_for_class_count(corpus: ToyCorpus, num_classes: int) -> np.ndarray:
    """Corpus labels at the requested granularity (fine or grouped)."""
    if num_classes == corpus.num_fine_classes:
        return corpus.labels
    table = toy_remap_table(corpus.spec)
    if num_classes == table.num_super_classes:
        return table.lookup()[corpus.labels].astype(np.uint8)
    raise ValueError(
        f"corpus provides {corpus.num_fine_classes} fine or "
        f"{table.num_super_classes} grouped classes, not {num_classes}"
    )


def make_model_configs(train_cfg: TrainConfig, resolution: int = 64,
                       base: GeneratorConfig | None = None):
    """Generator/discriminator configs matching a train config's class count."""
    base = base or GeneratorConfig()
    gen_cfg = GeneratorConfig(
        num_classes=train_cfg.num_super_classes,
        latent_dim=base.latent_dim, style_dim=base.style_dim,
        coarse_resolution=base.coarse_resolution, output_resolution=resolution,
        fourier_features=base.fourier_features, local_width=base.local_width,
        renderer_channels=base.renderer_channels,
    )
    disc_cfg = DiscriminatorConfig(
        resolution=resolution, mask_channels=train_cfg.num_super_classes,
        spectral_norm=train_cfg.spectral_norm,
    )
    return gen_cfg, disc_cfg


def run_ablation(matrix: list[TrainConfig], corpus: ToyCorpus, out_dir=None,
                 fid_samples: int = 256, quiet: bool = True) -> list[dict]:
    """Train every config for its step budget and report the Fréchet proxy.

    Divergence (non-finite losses) is recorded per row, not fatal.
    """
    rows = []
    extractor = ProxyFeatureExtractor()
    real_images = corpus.images_float()
    for i, train_cfg in enumerate(matrix):
        labels = labels_for_class_count(corpus, train_cfg.num_super_classes)
        gen_cfg, disc_cfg = make_model_configs(train_cfg, corpus.spec.resolution)
        state = init_train_state(gen_cfg, disc_cfg, train_cfg)
        fid_start = proxy_fid(
            real_images, sample_images(state.ema_generator, fid_samples, train_cfg.seed),
            extractor,
        )
        run_dir = Path(out_dir) / f"run_{i:02d}" if out_dir is not None else None
        history = train_loop(state, corpus.images, labels, out_dir=run_dir,
                             on_nan="stop", quiet=quiet)
        diverged = bool(history) and (
            not math.isfinite(history[-1]["d_loss"])
            or not math.isfinite(history[-1]["g_loss"])
        )
        if diverged or _weights_nonfinite(state.generator):
            fid_final = float("nan")
            diverged = True
        else:
            fid_final = proxy_fid(
                real_images,
                sample_images(state.ema_generator, fid_samples, train_cfg.seed),
                extractor,
            )
        rows.append({
            "label": train_cfg.label or f"run_{i:02d}",
            "super_classes": train_cfg.num_super_classes,
            "spectral_norm": train_cfg.spectral_norm,
            "batch_size": train_cfg.batch_size,
            "steps": state.step,
            "proxy_fid_start": fid_start,
            "proxy_fid_final": fid_final,
            "diverged": diverged,
        })
    return rows


def _weights_nonfinite(module: torch.nn.Module) -> bool:
    return any(not torch.isfinite(p).all() for p in module.parameters())


def format_ablation_table(rows: list[dict]) -> str:
    header = f"{'label':<16} {'classes':>7} {'SN':>3} {'batch':>5} {'steps':>6} {'proxy-FID':>10}"
    lines = [header, "-" * len(header)]
    for row in rows:
        fid = row["proxy_fid_final"]
        fid_text = "diverged" if row["diverged"] or not math.isfinite(fid) else f"{fid:.2f}"
        lines.append(
            f"{row['label']:<16} {row['super_classes']:>7} "
            f"{'y' if row['spectral_norm'] else 'n':>3} {row['batch_size']:>5} "
            f"{row['steps']:>6} {fid_text:>10}"
        )
    return "\n".join(lines)
