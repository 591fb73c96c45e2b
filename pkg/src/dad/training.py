import csv
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .config import RunConfig, config_from_flat
from .data import SamplePair, load_dataset, stack
from .decoder import DAD
from .errors import ConfigError, LoadError
from .losses import total_loss

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


def lr_at_epoch(epoch: int, base_lr=1e-4, decay=0.1, every=50, epochs=200) -> float:
    """Piecewise-constant schedule (0-based epoch): multiply by ``decay`` at
    every multiple of ``every`` that is smaller than ``epochs``."""
    drops = sum(1 for m in range(every, epochs, every) if epoch >= m)
    return base_lr * decay ** drops


def seed_everything(seed: int, deterministic: bool = False):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        # nondeterministic CUDA kernels still warn rather than fail
        torch.use_deterministic_algorithms(True, warn_only=True)


def save_checkpoint(path, model: DAD, cfg: RunConfig, epoch: int, optimizer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_flat(),
        "epoch": epoch,
        "state_dict": model.state_dict(),
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    torch.save(payload, path)
    return path


def read_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise LoadError(f"{path} is not a version-{FORMAT_VERSION} checkpoint")
    return payload


def load_checkpoint(path):
    """Rebuild the model from the checkpoint's config snapshot. Returns (model, cfg)."""
    payload = read_checkpoint(path)
    cfg = config_from_flat(payload["config"])
    cfg.model.pretrained = None
    model = DAD(cfg.model)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise LoadError(f"checkpoint {path} does not match its model config: {exc}") from exc
    model.eval()
    return model, cfg


@dataclass
class TrainResult:
    checkpoint: Path
    loss_curve: Path
    epoch_losses: List[float] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    figure: Optional[Path] = None


def train(cfg: RunConfig, samples: Optional[List[SamplePair]] = None, resume=None,
          make_figure: bool = True) -> TrainResult:
    cfg.validate()
    seed_everything(cfg.seed, cfg.optim.deterministic)
    if samples is None:
        if not cfg.data.train_dir:
            raise ConfigError("data.train_dir is not set")
        samples = load_dataset(cfg.data.train_dir, cfg.data.image_size)
    images, masks = stack(samples)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    model = DAD(cfg.model)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.optim.lr)
    start_epoch = 0
    if resume is not None:
        payload = read_checkpoint(resume)
        try:
            model.load_state_dict(payload["state_dict"])
        except RuntimeError as exc:
            raise ConfigError(f"cannot resume from {resume}: {exc}") from exc
        if "optimizer" in payload:
            optimizer.load_state_dict(payload["optimizer"])
        start_epoch = payload["epoch"]

    o = cfg.optim
    gen = torch.Generator().manual_seed(cfg.seed)
    epoch_losses, step_losses = [], []
    steps = 0
    ckpt = out / "checkpoint_final.pt"
    n = len(samples)
    for epoch in range(start_epoch, o.epochs):
        lr = lr_at_epoch(epoch, o.lr, o.lr_decay, o.decay_every, o.epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = torch.randperm(n, generator=gen)
        batch_losses = []
        for i in range(0, n, o.batch_size):
            idx = order[i:i + o.batch_size]
            if len(idx) < 2 and n >= 2:
                continue  # batch norm needs more than one sample
            loss = total_loss(model(images[idx]), masks[idx], cfg.loss)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(loss.item())
            steps += 1
            if o.max_steps and steps >= o.max_steps:
                break
        if not batch_losses:
            continue
        step_losses.extend(batch_losses)
        epoch_losses.append(float(np.mean(batch_losses)))
        log.info("epoch %d lr %.2e loss %.4f", epoch + 1, lr, epoch_losses[-1])
        if o.checkpoint_every and (epoch + 1) % o.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch + 1:04d}.pt", model, cfg, epoch + 1, optimizer)
        if o.max_steps and steps >= o.max_steps:
            break
    save_checkpoint(ckpt, model, cfg, start_epoch + len(epoch_losses), optimizer)

    curve = out / "loss_curve.csv"
    with open(curve, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_total_loss", "lr"])
        for i, value in enumerate(epoch_losses):
            e = start_epoch + i
            writer.writerow([e + 1, f"{value:.6f}", f"{lr_at_epoch(e, o.lr, o.lr_decay, o.decay_every, o.epochs):.3e}"])
    result = TrainResult(ckpt, curve, epoch_losses, step_losses)
    if make_figure:
        from .plotting import plot_loss_curve
        result.figure = plot_loss_curve(epoch_losses, out / "loss_curve.png", start_epoch + 1)
    return result
