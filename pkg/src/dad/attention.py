import torch
from torch import nn

from .blocks import conv_block
from .errors import ResourceError

MAX_POSITIONS = 4096


class PositionAttention(nn.Module):
    """Spatial self-attention with a zero-initialised residual scale."""

    def __init__(self, channels: int, reduction: int = 8, max_positions: int = MAX_POSITIONS):
        super().__init__()
        inner = max(channels // reduction, 1)
        self.query = nn.Conv2d(channels, inner, 1)
        self.key = nn.Conv2d(channels, inner, 1)
        self.value = nn.Conv2d(channels, channels, 1)
        self.gamma = nn.Parameter(torch.zeros(1))
        self.max_positions = max_positions

    def affinity(self, x):
        """Row-softmax (N x N) spatial affinity, N = H*W."""
        b, _, h, w = x.shape
        n = h * w
        if n > self.max_positions:
            raise ResourceError(
                f"position attention over {n} positions exceeds the limit of {self.max_positions}")
        q = self.query(x).view(b, -1, n).transpose(1, 2)
        k = self.key(x).view(b, -1, n)
        return torch.softmax(torch.bmm(q, k), dim=-1)

    def forward(self, x):
        b, c, h, w = x.shape
        attn = self.affinity(x)
        v = self.value(x).view(b, c, h * w)
        out = torch.bmm(v, attn.transpose(1, 2)).view(b, c, h, w)
        return self.gamma * out + x


class ChannelAttention(nn.Module):
    """Channel self-attention on the raw feature Gram matrix."""

    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1))

    @staticmethod
    def affinity(x):
        b, c = x.shape[:2]
        flat = x.reshape(b, c, -1)
        return torch.softmax(torch.bmm(flat, flat.transpose(1, 2)), dim=-1)

    def forward(self, x):
        b, c, h, w = x.shape
        out = torch.bmm(self.affinity(x), x.reshape(b, c, -1)).view(b, c, h, w)
        return self.gamma * out + x


class DRA(nn.Module):
    """Dual residual attention: position and channel branches, each followed by
    a 3x3 conv block, fused by addition."""

    def __init__(self, channels: int, activation: str = "relu", max_positions: int = MAX_POSITIONS):
        super().__init__()
        self.position = PositionAttention(channels, max_positions=max_positions)
        self.channel = ChannelAttention()
        self.position_conv = conv_block(channels, channels, 3, activation=activation)
        self.channel_conv = conv_block(channels, channels, 3, activation=activation)

    def branches(self, x):
        return self.position_conv(self.position(x)), self.channel_conv(self.channel(x))

    def forward(self, x):
        p, c = self.branches(x)
        return p + c

