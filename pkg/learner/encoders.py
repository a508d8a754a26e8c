"""
Encoders - residual conv and patch-attention backbones with contrastive
projection and distillation prototype heads
"""
import logging
import math
from typing import Literal, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torchvision.models import resnet50

logger = logging.getLogger(__name__)

DESK_WIDTHS = (16, 32, 64, 128)
ATTENTION_PRESETS = {
    "desk": {"patch": 8, "dim": 128, "depth": 4, "heads": 4, "mlp": 256},
    "full": {"patch": 16, "dim": 384, "depth": 12, "heads": 6, "mlp": 1536},
}


class EncoderConfig(BaseModel):
    """Backbone and head choices for one run"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    backbone_kind: Literal["residual_conv", "patch_attention"] = "residual_conv"
    preset: Literal["desk", "full"] = "desk"
    embedding_dim: int = Field(128, gt=0)
    projection: Tuple[int, ...] = (256,)
    prototypes: int = Field(1024, gt=0)
    bottleneck_dim: int = Field(64, gt=0)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = nn.Identity()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResidualConv(nn.Module):
    """Four-stage residual network; stages after the first halve resolution"""

    def __init__(self, widths: Tuple[int, ...] = DESK_WIDTHS):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, 1, 1, bias=False), nn.BatchNorm2d(widths[0]), nn.ReLU())
        blocks, in_ch = [], widths[0]
        for i, width in enumerate(widths):
            blocks.append(ResidualBlock(in_ch, width, 1 if i == 0 else 2))
            in_ch = width
        self.blocks = nn.Sequential(*blocks)
        self.out_dim = widths[-1]

    def forward(self, x):
        x = self.blocks(self.stem(x))
        return torch.flatten(F.adaptive_avg_pool2d(x, 1), 1)


class PatchAttention(nn.Module):
    """
    Patch-token transformer with a class token.

    Position embeddings are stored for a reference grid and resized
    bicubically for other input sizes, so local crops work too.
    """

    def __init__(self, patch: int = 8, dim: int = 128, depth: int = 4, heads: int = 4, mlp: int = 256, grid: int = 8):
        super().__init__()
        self.patch = patch
        self.embed = nn.Conv2d(3, dim, patch, patch)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos = nn.Parameter(torch.zeros(1, grid * grid, dim))
        self.cls_pos = nn.Parameter(torch.zeros(1, 1, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=dim, nhead=heads, dim_feedforward=mlp, dropout=0.0, activation="gelu", batch_first=True, norm_first=True
        )
        self.blocks = nn.TransformerEncoder(layer, num_layers=depth, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(dim)
        self.out_dim = dim

    def _positions(self, gh: int, gw: int) -> torch.Tensor:
        n = self.pos.shape[1]
        side = int(math.sqrt(n))
        if gh * gw == n and gh == side:
            return self.pos
        grid = self.pos.reshape(1, side, side, -1).permute(0, 3, 1, 2)
        grid = F.interpolate(grid, size=(gh, gw), mode="bicubic", align_corners=False)
        return grid.permute(0, 2, 3, 1).reshape(1, gh * gw, -1)

    def forward(self, x):
        tokens = self.embed(x)
        gh, gw = tokens.shape[-2:]
        tokens = tokens.flatten(2).transpose(1, 2) + self._positions(gh, gw)
        cls = (self.cls_token + self.cls_pos).expand(len(x), -1, -1)
        out = self.blocks(torch.cat([cls, tokens], dim=1))
        return self.norm(out[:, 0])


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, hidden: Tuple[int, ...], out_dim: int):
        super().__init__()
        layers, width = [], in_dim
        for h in hidden:
            layers += [nn.Linear(width, h), nn.ReLU()]
            width = h
        layers.append(nn.Linear(width, out_dim))
        self.mlp = nn.Sequential(*layers)

    def forward(self, x):
        return self.mlp(x)


class PrototypeHead(nn.Module):
    """MLP to an L2-normalized bottleneck, then cosine scores against prototypes"""

    def __init__(self, in_dim: int, hidden: int, bottleneck: int, prototypes: int):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, hidden), nn.GELU(), nn.Linear(hidden, bottleneck)
        )
        self.prototypes = nn.Parameter(torch.randn(prototypes, bottleneck) * 0.02)

    def forward(self, x):
        x = F.normalize(self.mlp(x), dim=-1)
        return F.linear(x, F.normalize(self.prototypes, dim=-1))


class SSLModel(nn.Module):
    """Backbone plus the head of one learner; features() is what probes read"""

    def __init__(self, backbone: nn.Module, head: nn.Module, feature_dim: int):
        super().__init__()
        self.backbone = backbone
        self.head = head
        self.feature_dim = feature_dim

    def features(self, x):
        return self.backbone(x)

    def forward(self, x):
        return self.head(self.backbone(x))


def build_backbone(config: EncoderConfig, resolution: int = 64) -> Tuple[nn.Module, int]:
    if config.backbone_kind == "residual_conv":
        if config.preset == "full":
            net = resnet50(weights=None)
            net.fc = nn.Identity()
            return net, 2048
        net = ResidualConv()
        return net, net.out_dim
    preset = ATTENTION_PRESETS[config.preset]
    grid = max(1, resolution // preset["patch"])
    net = PatchAttention(preset["patch"], preset["dim"], preset["depth"], preset["heads"], preset["mlp"], grid=grid)
    return net, net.out_dim


def build_model(config: EncoderConfig, learner_kind: str = "contrastive", resolution: int = 64) -> SSLModel:
    """
    Backbone plus head for a learner.

    contrastive heads project to embedding_dim; distillation heads emit
    `prototypes` scores.
    """
    backbone, feature_dim = build_backbone(config, resolution)
    if learner_kind == "contrastive":
        head = ProjectionHead(feature_dim, config.projection, config.embedding_dim)
    elif learner_kind == "distillation":
        hidden = config.projection[0] if config.projection else 256
        head = PrototypeHead(feature_dim, hidden, config.bottleneck_dim, config.prototypes)
    else:
        raise ValueError(f"Unknown learner kind '{learner_kind}'")
    model = SSLModel(backbone, head, feature_dim)
    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"Built {config.backbone_kind}/{config.preset} {learner_kind} model ({n_params / 1e6:.2f}M parameters)")
    return model
