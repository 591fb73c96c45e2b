from dataclasses import dataclass, replace
from typing import List, Sequence

import torch
from torch import nn

from .errors import ShapeError


@dataclass(frozen=True)
class ConvBlockSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1
    dilation: int = 1
    padding: int = -1  # -1: size-preserving padding for odd kernels

    def __post_init__(self):
        if self.padding < 0:
            object.__setattr__(self, "padding", self.dilation * (self.kernel - 1) // 2)


def make_activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU(inplace=True)
    if name == "identity":
        return nn.Identity()
    raise ValueError(f"unknown activation {name!r}")


class ConvBlock(nn.Module):
    """Convolution -> batch norm -> activation."""

    def __init__(self, spec: ConvBlockSpec, activation: str = "relu"):
        super().__init__()
        self.spec = spec
        self.conv = nn.Conv2d(spec.in_channels, spec.out_channels, spec.kernel,
                              stride=spec.stride, padding=spec.padding,
                              dilation=spec.dilation, bias=False)
        self.bn = nn.BatchNorm2d(spec.out_channels)
        self.act = make_activation(activation)

    def forward(self, x):
        if x.shape[1] != self.spec.in_channels:
            raise ShapeError(f"conv block expects {self.spec.in_channels} channels, got {x.shape[1]}")
        return self.act(self.bn(self.conv(x)))


def conv_block(cin, cout, kernel=3, stride=1, dilation=1, activation="relu") -> ConvBlock:
    return ConvBlock(ConvBlockSpec(cin, cout, kernel, stride, dilation), activation)


@dataclass(frozen=True)
class FEMConfig:
    in_channels: int
    out_channels: int = 96
    branch_channels: int = 32
    path1_dilations: Sequence[int] = (4, 8, 16, 32)
    path3_dilations: Sequence[int] = (2, 4, 8, 16)
    activation: str = "relu"

    def without_dilation(self) -> "FEMConfig":
        return replace(self, path1_dilations=(1,) * len(self.path1_dilations),
                       path3_dilations=(1,) * len(self.path3_dilations))


def fem_path_chain(cfg: FEMConfig, path: int) -> List[ConvBlockSpec]:
    """Block specs of FEM path 1, 2 or 3, in order."""
    b = cfg.branch_channels
    chain = [ConvBlockSpec(cfg.in_channels, b, kernel=1)]
    if path == 2:
        return chain
    dilations = {1: cfg.path1_dilations, 3: cfg.path3_dilations}[path]
    chain += [ConvBlockSpec(b, b, kernel=3, dilation=d) for d in dilations]
    return chain


class FEM(nn.Module):
    """Field expansion module.

    Two stacks of consecutive dilated 3x3 blocks and a plain 1x1 path are
    concatenated and mixed by a 1x1 block; a projected shortcut of the input
    is added before the final activation. Spatial size is preserved.
    """

    def __init__(self, cfg: FEMConfig):
        super().__init__()
        self.cfg = cfg
        act = cfg.activation
        self.path1 = nn.Sequential(*[ConvBlock(s, act) for s in fem_path_chain(cfg, 1)])
        self.path2 = nn.Sequential(*[ConvBlock(s, act) for s in fem_path_chain(cfg, 2)])
        self.path3 = nn.Sequential(*[ConvBlock(s, act) for s in fem_path_chain(cfg, 3)])
        cat = 3 * cfg.branch_channels
        self.fuse = ConvBlock(ConvBlockSpec(cat, cfg.out_channels, kernel=1), activation="identity")
        self.shortcut = ConvBlock(ConvBlockSpec(cfg.in_channels, cfg.out_channels, kernel=1),
                                  activation="identity")
        self.act = make_activation(act)

    def forward(self, x):
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"FEM expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        y = torch.cat([self.path1(x), self.path2(x), self.path3(x)], dim=1)
        return self.act(self.fuse(y) + self.shortcut(x))


def fem(x, cfg: FEMConfig):
    return FEM(cfg).to(x.device, x.dtype)(x)


@dataclass(frozen=True)
class PyramidConfig:
    in_channels: int
    out_channels: int = 96
    branch_channels: int = 32
    rates: Sequence[int] = (1, 6, 12, 18)
    activation: str = "relu"


class DilatedPyramid(nn.Module):
    """ASPP-style baseline: parallel single dilated convs, concatenated, then a 1x1 block.

    Rate 1 is a 1x1 branch, every other rate a 3x3 dilated branch.
    """

    def __init__(self, cfg: PyramidConfig):
        super().__init__()
        self.cfg = cfg
        self.branches = nn.ModuleList(
            ConvBlock(self.branch_spec(cfg, r), cfg.activation) for r in cfg.rates)
        self.fuse = conv_block(len(cfg.rates) * cfg.branch_channels, cfg.out_channels, 1,
                               activation=cfg.activation)

    @staticmethod
    def branch_spec(cfg: PyramidConfig, rate: int) -> ConvBlockSpec:
        if rate == 1:
            return ConvBlockSpec(cfg.in_channels, cfg.branch_channels, kernel=1)
        return ConvBlockSpec(cfg.in_channels, cfg.branch_channels, kernel=3, dilation=rate)

    def forward(self, x):
        if x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"pyramid expects {self.cfg.in_channels} channels, got {x.shape[1]}")
        return self.fuse(torch.cat([b(x) for b in self.branches], dim=1))


def dilated_pyramid_baseline(x, cfg: PyramidConfig):
    return DilatedPyramid(cfg).to(x.device, x.dtype)(x)


FEM_VARIANTS = ("fem", "fem_no_dilation", "dilated_pyramid")


def build_context_module(variant: str, in_channels: int, out_channels: int,
                         branch_channels: int = 32, activation: str = "relu") -> nn.Module:
    if variant == "fem":
        return FEM(FEMConfig(in_channels, out_channels, branch_channels, activation=activation))
    if variant == "fem_no_dilation":
        cfg = FEMConfig(in_channels, out_channels, branch_channels, activation=activation)
        return FEM(cfg.without_dilation())
    if variant == "dilated_pyramid":
        return DilatedPyramid(PyramidConfig(in_channels, out_channels, branch_channels,
                                            activation=activation))
    raise ValueError(f"unknown fem variant {variant!r}")


def receptive_field(chain: Sequence[ConvBlockSpec]) -> int:
    """Theoretical receptive-field side length of a sequential chain of blocks."""
    if not chain:
        raise ValueError("empty chain")
    rf, jump = 1, 1
    for spec in chain:
        if spec.stride < 1:
            raise ValueError("stride must be >= 1")
        rf += (spec.kernel - 1) * spec.dilation * jump
        jump *= spec.stride
    return rf


def output_size(size: int, spec: ConvBlockSpec) -> int:
    eff = spec.dilation * (spec.kernel - 1) + 1
    return (size + 2 * spec.padding - eff) // spec.stride + 1


def rf_table(in_channels: int = 64) -> List[dict]:
    """Analytical receptive fields of the FEM paths and the baselines, one row each."""
    rows = []
    base = FEMConfig(in_channels)
    for name, cfg in (("fem", base), ("fem_no_dilation", base.without_dilation())):
        for path in (1, 2, 3):
            chain = fem_path_chain(cfg, path)
            dil = [s.dilation for s in chain if s.kernel > 1]
            rows.append({"module": name, "branch": f"path{path}",
                         "dilations": "-".join(map(str, dil)) or "-",
                         "rf": receptive_field(chain)})
    pyr = PyramidConfig(in_channels)
    for rate in pyr.rates:
        spec = DilatedPyramid.branch_spec(pyr, rate)
        rows.append({"module": "dilated_pyramid", "branch": f"rate{rate}",
                     "dilations": str(rate) if spec.kernel > 1 else "-",
                     "rf": receptive_field([spec])})
    return rows
