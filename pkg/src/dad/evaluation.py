from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .data import SamplePair, image_to_tensor, load_dataset
from .errors import LoadError
from .metrics import MetricReport
from .training import load_checkpoint


@torch.no_grad()
def predict_probabilities(model, images, batch_size: int = 8) -> torch.Tensor:
    """Sigmoid of the final refined map, [N, 1, H, W]. Puts the model in eval mode."""
    model.eval()
    out = []
    for i in range(0, len(images), batch_size):
        maps = model(images[i:i + batch_size])
        out.append(torch.sigmoid(maps[-1]))
    return torch.cat(out)


def evaluate_model(model, samples: List[SamplePair]) -> MetricReport:
    images = torch.stack([s.image for s in samples])
    probs = predict_probabilities(model, images)
    report = MetricReport()
    for s, p in zip(samples, probs):
        report.add(s.image_id, p[0].double().numpy(), s.mask[0].numpy() > 0.5)
    return report


def write_report(report: MetricReport, out_dir, name="metrics", make_figure=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    csv_path.write_text(report.to_csv())
    (out_dir / f"{name}_summary.txt").write_text(report.summary() + "\n")
    if make_figure:
        from .plotting import plot_metric_report
        plot_metric_report(report, out_dir / f"{name}.png")
    return csv_path


def evaluate(checkpoint, test_dir, out_dir=None, make_figure=True) -> MetricReport:
    model, cfg = load_checkpoint(checkpoint)
    samples = load_dataset(test_dir, cfg.data.image_size)
    report = evaluate_model(model, samples)
    if out_dir is not None:
        write_report(report, out_dir, Path(test_dir).name or "metrics", make_figure)
    return report


@torch.no_grad()
def stage_logits(model, image: Image.Image, image_size: int):
    """Logits of every supervised map, resized to the image's original resolution."""
    model.eval()
    x = image_to_tensor(image, image_size)[None]
    w, h = image.size
    maps = model(x)
    return [F.interpolate(m, size=(h, w), mode="bilinear", align_corners=False)[0, 0] for m in maps]


def to_gray(logits: torch.Tensor) -> np.ndarray:
    return np.round(255 * torch.sigmoid(logits).double().numpy()).astype(np.uint8)


def overlay(image: Image.Image, prob: np.ndarray, alpha=0.5) -> Image.Image:
    from matplotlib import colormaps
    heat = colormaps["jet"](prob)[..., :3]
    base = np.asarray(image.convert("RGB"), dtype=np.float64) / 255
    return Image.fromarray(np.round(255 * ((1 - alpha) * base + alpha * heat)).astype(np.uint8))


def predict(checkpoint, image_path, out_dir, all_stages=False, model=None, image_size=None):
    """Write the saliency PNG and a heat-map overlay (plus earlier stages on request)."""
    if model is None:
        model, cfg = load_checkpoint(checkpoint)
        image_size = cfg.data.image_size
    image_path = Path(image_path)
    try:
        image = Image.open(image_path)
        image.load()
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read image {image_path}: {exc}") from exc
    image = image.convert("RGB")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logits = stage_logits(model, image, image_size)
    stem = image_path.stem
    written = []
    if all_stages:
        for k, m in enumerate(logits):
            path = out_dir / f"{stem}_C{k}.png"
            Image.fromarray(to_gray(m), mode="L").save(path)
            written.append(path)
    else:
        path = out_dir / f"{stem}.png"
        Image.fromarray(to_gray(logits[-1]), mode="L").save(path)
        written.append(path)
    path = out_dir / f"{stem}_overlay.png"
    overlay(image, torch.sigmoid(logits[-1]).double().numpy()).save(path)
    written.append(path)
    return written
