from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .attention import DRA, MAX_POSITIONS
from .backbones import LayerPartition, build_backbone, init_weights, parse_partition, partition
from .blocks import FEM_VARIANTS, build_context_module, conv_block
from .errors import ConfigError, ResourceError, ShapeError, ValidationError

FUSIONS = ("middle", "bottom_up", "top_down")
DEM_MODES = ("f_minus_b", "f_only", "b_only")
MFF_FEM_PLACEMENTS = ("per_branch", "after_concat")
DGM_MAX_POSITIONS = 1 << 21


@dataclass
class ModelConfig:
    backbone: str = "resnet50"
    pretrained: Optional[str] = None
    partition: str = "default"
    allow_single_stage_a: bool = False
    fem_variant: str = "fem"
    fusion: str = "middle"
    mff_fem: str = "per_branch"
    dae_repeats: int = 2
    use_dgm: bool = True
    dem_mode: str = "f_minus_b"
    channels: int = 96
    branch_channels: int = 32
    activation: str = "relu"

    def validate(self):
        checks = [
            (self.fem_variant in FEM_VARIANTS, f"fem_variant must be one of {FEM_VARIANTS}"),
            (self.fusion in FUSIONS, f"fusion must be one of {FUSIONS}"),
            (self.mff_fem in MFF_FEM_PLACEMENTS, f"mff_fem must be one of {MFF_FEM_PLACEMENTS}"),
            (self.dem_mode in DEM_MODES, f"dem_mode must be one of {DEM_MODES}"),
            (int(self.dae_repeats) >= 1, "dae_repeats must be >= 1"),
            (self.channels > 0 and self.branch_channels > 0, "channel counts must be positive"),
            (self.activation in ("relu", "identity"), "activation must be relu or identity"),
        ]
        errs = [msg for ok, msg in checks if not ok]
        if errs:
            raise ValidationError("invalid model config: " + "; ".join(errs))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


def _check_ratio(src: Sequence[int], dst: Sequence[int]):
    for s, d in zip(src, dst):
        if not (d % s == 0 or s % d == 0):
            raise ShapeError(f"cannot resize {tuple(src)} to {tuple(dst)} by an integer factor")


def resize(x, size):
    size = tuple(int(s) for s in size)
    if tuple(x.shape[-2:]) == size:
        return x
    _check_ratio(x.shape[-2:], size)
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class GMG(nn.Module):
    """Guide map generator (stage A).

    The highest level goes through the context module and dual attention, is
    upsampled onto the lowest selected level and fused with 1x1-projected
    lower levels by two 3x3 blocks and a 1-channel projection.
    """

    def __init__(self, in_channels: Sequence[int], channels=96, low_channels=32,
                 fem_variant="fem", branch_channels=32, activation="relu",
                 max_positions=MAX_POSITIONS):
        super().__init__()
        self.context = build_context_module(fem_variant, in_channels[-1], channels,
                                            branch_channels, activation)
        self.dra = DRA(channels, activation, max_positions)
        low = list(in_channels[:-1]) or [in_channels[-1]]
        self.low_proj = nn.ModuleList(conv_block(c, low_channels, 1, activation=activation) for c in low)
        self.head = nn.Sequential(
            conv_block(channels + low_channels * len(low), channels, 3, activation=activation),
            conv_block(channels, channels, 3, activation=activation),
            nn.Conv2d(channels, 1, 1),
        )

    def forward(self, feats: Sequence[torch.Tensor]) -> torch.Tensor:
        high = self.dra(self.context(feats[-1]))
        lows = list(feats[:-1]) or [feats[-1]]
        size = lows[0].shape[-2:]
        parts = [resize(high, size)]
        parts += [resize(proj(f), size) for proj, f in zip(self.low_proj, lows)]
        return self.head(torch.cat(parts, dim=1))


class MFF(nn.Module):
    """Middle feature fusion (stage B): every level is brought to the base
    level's size with ``reduced`` channels, passed through the context module
    and concatenated."""

    def __init__(self, in_channels: Sequence[int], strides: Sequence[int], fusion="middle",
                 reduced=32, fem_variant="fem", mff_fem="per_branch", activation="relu"):
        super().__init__()
        k = len(in_channels)
        self.base = {"middle": (k - 1) // 2, "bottom_up": 0, "top_down": k - 1}[fusion]
        base_stride = strides[self.base]
        self.reducers = nn.ModuleList()
        self.upsample_first = []
        for c, s in zip(in_channels, strides):
            if s < base_stride:
                # strided 3x3 blocks, one per halving
                steps, cin, layers = base_stride // s, c, []
                while steps > 1:
                    layers.append(conv_block(cin, reduced, 3, stride=2, activation=activation))
                    cin, steps = reduced, steps // 2
                self.reducers.append(nn.Sequential(*layers))
            else:
                self.reducers.append(conv_block(c, reduced, 1, activation=activation))
            self.upsample_first.append(s > base_stride)
        self.mff_fem = mff_fem
        if mff_fem == "per_branch":
            self.context = nn.ModuleList(
                build_context_module(fem_variant, reduced, reduced, reduced, activation) for _ in in_channels)
        else:
            width = reduced * k
            self.context = build_context_module(fem_variant, width, width, reduced, activation)
        self.out_channels = reduced * k

    def forward(self, feats: Sequence[torch.Tensor]) -> torch.Tensor:
        size = feats[self.base].shape[-2:]
        parts = []
        for f, reducer, up in zip(feats, self.reducers, self.upsample_first):
            y = reducer(resize(f, size)) if up else reducer(f)
            if tuple(y.shape[-2:]) != tuple(size):
                raise ShapeError(f"fused level has size {tuple(y.shape[-2:])}, expected {tuple(size)}")
            parts.append(y)
        if self.mff_fem == "per_branch":
            return torch.cat([ctx(p) for ctx, p in zip(self.context, parts)], dim=1)
        return self.context(torch.cat(parts, dim=1))


def dgm(m, f, beta, return_affinity=False, max_positions=DGM_MAX_POSITIONS):
    """Guide-map cross attention.

    ``f`` is resized onto the guide map, the guide map is copied to every
    channel, R = softmax(Q G) over channels (C x C) and E = beta * (R K) + F0.
    """
    b, c = f.shape[:2]
    hg, wg = m.shape[-2:]
    n = hg * wg
    if n > max_positions:
        raise ResourceError(f"guide map with {n} positions exceeds the limit of {max_positions}")
    f0 = resize(f, (hg, wg))
    q = f0.reshape(b, c, n)
    g = m.expand(b, c, hg, wg).reshape(b, c, n).transpose(1, 2)
    r = torch.softmax(torch.bmm(q, g), dim=-1)
    a = torch.bmm(r, q).view(b, c, hg, wg)
    e = beta * a + f0
    return (e, r) if return_affinity else e


def dem(e, m, theta, epsilon, mode="f_minus_b"):
    """Split ``e`` by the guide probability and fuse the two parts."""
    if e.shape[-2:] != m.shape[-2:]:
        raise ShapeError(f"features {tuple(e.shape[-2:])} and guide map {tuple(m.shape[-2:])} misaligned")
    p = torch.sigmoid(m)
    d_f = p * e
    d_b = (1 - p) * e
    if mode == "f_minus_b":
        return theta * d_f - epsilon * d_b
    if mode == "f_only":
        return theta * d_f
    if mode == "b_only":
        return -epsilon * d_b
    raise ValueError(f"unknown dem mode {mode!r}")


class DAE(nn.Module):
    """Difference-aware extractor: dgm followed by dem and a refinement head."""

    def __init__(self, channels: int, use_dgm=True, dem_mode="f_minus_b", activation="relu"):
        super().__init__()
        self.beta = nn.Parameter(torch.zeros(1))
        self.theta = nn.Parameter(torch.ones(1))
        self.epsilon = nn.Parameter(torch.ones(1))
        self.use_dgm = use_dgm
        self.dem_mode = dem_mode
        self.head = nn.Sequential(
            conv_block(channels, channels, 3, activation=activation),
            conv_block(channels, channels, 3, activation=activation),
            nn.Conv2d(channels, 1, 1),
        )

    def enhance(self, m, f):
        if self.use_dgm:
            return dgm(m, f, self.beta)
        return resize(f, m.shape[-2:])

    def difference(self, m, f):
        return dem(self.enhance(m, f), m, self.theta, self.epsilon, self.dem_mode)

    def forward(self, m, f):
        return self.head(self.difference(m, f))


@dataclass
class DecoderOutputs:
    """Supervised logit maps, guide map first and final refined map last."""

    maps: Tuple[torch.Tensor, ...]

    def __iter__(self):
        return iter(self.maps)

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, i):
        return self.maps[i]

    @property
    def c0(self):
        return self.maps[0]

    @property
    def c1(self):
        return self.maps[1]

    @property
    def c2(self):
        return self.maps[2]

    @property
    def final(self):
        return self.maps[-1]


class DAD(nn.Module):
    def __init__(self, config: Optional[ModelConfig] = None):
        super().__init__()
        config = config or ModelConfig()
        config.validate()
        self.config = config
        self.backbone = build_backbone(config.backbone, config.pretrained)
        strides, chans = self.backbone.strides, self.backbone.channels
        self.layer_partition: LayerPartition = parse_partition(
            config.partition, len(strides), config.allow_single_stage_a)
        a = sorted(self.layer_partition.stage_a_levels)
        b = sorted(self.layer_partition.stage_b_levels)
        act = config.activation
        self.gmg = GMG([chans[i - 1] for i in a], config.channels, config.branch_channels,
                       config.fem_variant, config.branch_channels, act)
        self.mff = MFF([chans[i - 1] for i in b], [strides[i - 1] for i in b], config.fusion,
                       config.branch_channels, config.fem_variant, config.mff_fem, act)
        self.daes = nn.ModuleList(
            DAE(self.mff.out_channels, config.use_dgm, config.dem_mode, act)
            for _ in range(int(config.dae_repeats)))
        init_weights(self.gmg)
        init_weights(self.mff)
        init_weights(self.daes)
        for head in [self.gmg.head] + [d.head for d in self.daes]:
            # 1-channel projections: fan-in scaling keeps initial logits O(1)
            nn.init.kaiming_normal_(head[-1].weight, mode="fan_in", nonlinearity="linear")

    def stages(self, image):
        """Native-resolution logits of every stage plus the background features."""
        pyramid = self.backbone(image)
        stage_a, stage_b = partition(pyramid, self.layer_partition, self.config.allow_single_stage_a)
        guide = self.gmg(stage_a)
        feats = self.mff(stage_b)
        maps = [guide]
        for dae in self.daes:
            maps.append(dae(maps[-1], feats))
        return maps, feats

    def forward(self, image) -> DecoderOutputs:
        maps, _ = self.stages(image)
        size = image.shape[-2:]
        return DecoderOutputs(tuple(resize(m, size) for m in maps))


def dad_forward(image, config: ModelConfig, model: Optional[DAD] = None) -> DecoderOutputs:
    model = model or DAD(config).to(image.dtype)
    return model(image)
