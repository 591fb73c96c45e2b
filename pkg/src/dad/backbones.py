from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import torch
from torch import nn
from torchvision.models import resnet18, resnet50

from .blocks import conv_block
from .errors import ConfigError, LoadError, ValidationError
from .pvt import PVT_VARIANTS, PyramidVisionTransformer


@dataclass(frozen=True)
class FeaturePyramid:
    levels: Tuple[torch.Tensor, ...]
    strides: Tuple[int, ...]
    channels: Tuple[int, ...]

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def level(self, index: int) -> torch.Tensor:
        """1-based access, as in the partition strings."""
        return self.levels[index - 1]

    def validate(self, input_hw: Tuple[int, int]):
        if self.num_levels not in (4, 5):
            raise ValidationError(f"pyramid must have 4 or 5 levels, got {self.num_levels}")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValidationError(f"strides must strictly increase: {self.strides}")
        for f, s, c in zip(self.levels, self.strides, self.channels):
            expected = (f.shape[0], c, input_hw[0] // s, input_hw[1] // s)
            if tuple(f.shape) != expected:
                raise ValidationError(f"level shape {tuple(f.shape)} != expected {expected}")


class BackboneAdapter(nn.Module):
    """Base class: subclasses set ``strides``/``channels`` and implement ``features``."""

    strides: Tuple[int, ...] = ()
    channels: Tuple[int, ...] = ()

    def features(self, x) -> List[torch.Tensor]:
        raise NotImplementedError

    def forward(self, x) -> FeaturePyramid:
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ValidationError(f"input size {h}x{w} is not divisible by 32")
        pyramid = FeaturePyramid(tuple(self.features(x)), self.strides, self.channels)
        pyramid.validate((h, w))
        return pyramid


class ResNetAdapter(BackboneAdapter):
    """Level 1 is the stem output (stride 2), levels 2-5 the four residual stages."""

    def __init__(self, depth: int = 50):
        super().__init__()
        net = {50: resnet50, 18: resnet18}[depth](weights=None)
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
        self.pool = net.maxpool
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4
        expansion = 4 if depth == 50 else 1
        self.strides = (2, 4, 8, 16, 32)
        self.channels = (64,) + tuple(c * expansion for c in (64, 128, 256, 512))

    def features(self, x):
        x1 = self.stem(x)
        x2 = self.layer1(self.pool(x1))
        x3 = self.layer2(x2)
        x4 = self.layer3(x3)
        return [x1, x2, x3, x4, self.layer4(x4)]


class PVTAdapter(BackboneAdapter):
    def __init__(self, variant: str = "b2"):
        super().__init__()
        self.net = PyramidVisionTransformer(**PVT_VARIANTS[variant])
        self.strides = (4, 8, 16, 32)
        self.channels = self.net.dims

    def features(self, x):
        return self.net(x)


class TinyAdapter(BackboneAdapter):
    """Five stride-2 conv blocks; deterministic initialisation for tests."""

    def __init__(self, channels: Sequence[int] = (8, 16, 24, 32, 40), seed: int = 0):
        super().__init__()
        self.strides = tuple(2 ** (i + 1) for i in range(len(channels)))
        self.channels = tuple(channels)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            cin, stages = 3, []
            for c in channels:
                stages.append(nn.Sequential(conv_block(cin, c, 3, stride=2), conv_block(c, c, 3)))
                cin = c
            self.stages = nn.ModuleList(stages)
            init_weights(self)

    def features(self, x):
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


NUM_LEVELS = {"resnet50": 5, "resnet18": 5, "pvt_v2_b2": 4, "pvt_v2_b0": 4, "tiny": 5}

REGISTRY: Dict[str, Callable[[], BackboneAdapter]] = {
    "resnet50": lambda: ResNetAdapter(50),
    "resnet18": lambda: ResNetAdapter(18),
    "pvt_v2_b2": lambda: PVTAdapter("b2"),
    "pvt_v2_b0": lambda: PVTAdapter("b0"),
    "tiny": lambda: TinyAdapter(),
}


def init_weights(module: nn.Module):
    """Fan-based init for convolutions, unit/zero for normalisation layers."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.GroupNorm, nn.LayerNorm)):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def build_backbone(backbone_id: str, pretrained_weights: Optional[str] = None) -> BackboneAdapter:
    if backbone_id not in REGISTRY:
        raise ConfigError(f"unknown backbone {backbone_id!r}; registered: {sorted(REGISTRY)}")
    adapter = REGISTRY[backbone_id]()
    if pretrained_weights:
        load_weights(adapter, pretrained_weights)
    return adapter


def load_weights(adapter: nn.Module, path: str):
    p = Path(path)
    if not p.is_file():
        raise LoadError(f"weight file not found: {p}")
    try:
        state = torch.load(p, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise LoadError(f"cannot read weight file {p}: {exc}") from exc
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    try:
        adapter.load_state_dict(state)
    except (RuntimeError, TypeError, AttributeError) as exc:
        raise LoadError(f"weights in {p} do not fit the adapter: {exc}") from exc


_BACKBONES: Dict[tuple, BackboneAdapter] = {}


def extract_features(image_batch, backbone_id: str, pretrained_weights: Optional[str] = None) -> FeaturePyramid:
    """Run a registered adapter (cached per id/weights) in inference mode."""
    key = (backbone_id, pretrained_weights, image_batch.dtype)
    if key not in _BACKBONES:
        _BACKBONES[key] = build_backbone(backbone_id, pretrained_weights).to(image_batch.dtype).eval()
    with torch.no_grad():
        return _BACKBONES[key](image_batch)


# ---------------------------------------------------------------- partitions

@dataclass(frozen=True)
class LayerPartition:
    stage_a_levels: FrozenSet[int]
    stage_b_levels: FrozenSet[int]

    @classmethod
    def default(cls, num_levels: int) -> "LayerPartition":
        if num_levels == 5:
            return cls(frozenset({1, 5}), frozenset({2, 3, 4}))
        if num_levels == 4:
            return cls(frozenset({1, 4}), frozenset({1, 2, 3}))
        raise ValidationError(f"no default partition for {num_levels} levels")

    def violations(self, num_levels: int, allow_single_stage_a: bool = False) -> List[str]:
        a, b = self.stage_a_levels, self.stage_b_levels
        valid = set(range(1, num_levels + 1))
        errs = []
        if not a <= valid or not b <= valid:
            errs.append(f"level indices must lie in 1..{num_levels}")
        if num_levels not in a:
            errs.append(f"stage A must contain the highest level {num_levels}")
        if len(a) < (1 if allow_single_stage_a else 2):
            errs.append("stage A needs at least 2 levels (single-level stage A requires the relaxation flag)")
        if not b:
            errs.append("stage B must not be empty")
        if num_levels == 5:
            if a & b:
                errs.append("stages A and B must not overlap for 5-level pyramids")
            if a | b != valid:
                errs.append("stages A and B must cover every level of a 5-level pyramid")
        elif num_levels == 4:
            if (a & b) - {1}:
                errs.append("4-level pyramids may only share level 1 between stages")
        return errs

    def validate(self, num_levels: int, allow_single_stage_a: bool = False):
        errs = self.violations(num_levels, allow_single_stage_a)
        if errs:
            raise ValidationError("invalid layer partition: " + "; ".join(errs))


def parse_partition(text: str, num_levels: int = 5, allow_single_stage_a: bool = False) -> LayerPartition:
    """Parse a stage-A string such as ``"1+5"``; stage B gets the remaining levels.

    ``"default"`` resolves to the proposed split for the pyramid depth.
    """
    text = str(text).strip()
    if text in ("", "default"):
        return LayerPartition.default(num_levels)
    try:
        a = frozenset(int(t) for t in text.split("+"))
    except ValueError:
        raise ValidationError(f"cannot parse partition {text!r}") from None
    if num_levels == 4 and a == {1, 4}:
        part = LayerPartition.default(4)
    else:
        part = LayerPartition(a, frozenset(range(1, num_levels + 1)) - a)
    part.validate(num_levels, allow_single_stage_a)
    return part


def partition(pyramid: FeaturePyramid, spec: LayerPartition, allow_single_stage_a: bool = False):
    """Select stage-A and stage-B levels (ascending index order). No data is copied."""
    spec.validate(pyramid.num_levels, allow_single_stage_a)
    stage_a = tuple(pyramid.level(i) for i in sorted(spec.stage_a_levels))
    stage_b = tuple(pyramid.level(i) for i in sorted(spec.stage_b_levels))
    return stage_a, stage_b
