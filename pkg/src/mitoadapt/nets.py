"""Attention U-Net and attention Y-Net construction with grouped parameters.

Both variants share an encoder/bottleneck and a segmentation decoder
whose skip connections pass through additive attention gates.  The
Y-Net adds a second, reconstruction decoder with no skip connections, so
one encoder serves a supervised segmentation head and an unsupervised
autoencoding head at the same time.

Every learnable parameter belongs to exactly one of the groups
``encoder``, ``bottleneck``, ``seg_decoder``, ``attention_gates`` and
``rec_decoder``; groups can be frozen independently, which the training
phases rely on.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

from .exceptions import ConfigError, ShapeError

PARAMETER_GROUPS = ("encoder", "bottleneck", "seg_decoder", "attention_gates", "rec_decoder")

_ACTIVATIONS = {
    "elu": nn.ELU,
    "relu": nn.ReLU,
    "gelu": nn.GELU,
    "leaky_relu": nn.LeakyReLU,
}

VARIANTS = ("attention_unet", "attention_ynet")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of an encoder-decoder graph."""

    variant: str = "attention_unet"
    depth: int = 4
    base_filters: int = 16
    filter_growth: int = 2
    activation: str = "elu"
    input_channels: int = 1
    seg_output_channels: int = 1
    rec_output_channels: int = 1
    rec_head_activation: str = "sigmoid"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.depth < 2:
            raise ConfigError("depth must be at least 2")
        if self.filter_growth < 2:
            raise ConfigError("filter_growth must be >= 2 so filters strictly increase")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.rec_head_activation not in ("sigmoid", "linear"):
            raise ConfigError("rec_head_activation must be 'sigmoid' or 'linear'")

    @property
    def filters(self) -> tuple[int, ...]:
        return tuple(self.base_filters * self.filter_growth ** l for l in range(self.depth))

    @property
    def spatial_divisor(self) -> int:
        return 2 ** (self.depth - 1)


class _ConvBlock(nn.Module):
    def __init__(self, ch_in, ch_out, activation):
        super().__init__()
        act = _ACTIVATIONS[activation]
        self.block = nn.Sequential(
            nn.Conv2d(ch_in, ch_out, kernel_size=3, padding=1),
            act(),
            nn.Conv2d(ch_out, ch_out, kernel_size=3, padding=1),
            act(),
        )

    def forward(self, x):
        return self.block(x)


class AttentionGate(nn.Module):
    """Additive attention on a skip connection.

    The gating signal (decoder features) and the skip features are
    projected to an intermediate width, summed, and squashed to a
    per-pixel coefficient in [0, 1] that scales the skip.  Setting
    ``alpha_override`` forces the coefficients for tests.
    """

    def __init__(self, gating_channels, skip_channels, inter_channels=None):
        super().__init__()
        if inter_channels is None:
            inter_channels = max(skip_channels // 2, 1)
        self.gating_channels = gating_channels
        self.skip_channels = skip_channels
        self.W_g = nn.Conv2d(gating_channels, inter_channels, kernel_size=1)
        self.W_x = nn.Conv2d(skip_channels, inter_channels, kernel_size=1)
        self.psi = nn.Conv2d(inter_channels, 1, kernel_size=1)
        self.relu = nn.ReLU()
        self.alpha_override: float | None = None

    def attention_coefficients(self, gating, skip):
        if gating.shape[1] != self.gating_channels or skip.shape[1] != self.skip_channels:
            raise ShapeError(
                f"gate expects channels ({self.gating_channels}, {self.skip_channels}), "
                f"got ({gating.shape[1]}, {skip.shape[1]})"
            )
        if gating.shape[2:] != skip.shape[2:]:
            raise ShapeError(
                f"gating {tuple(gating.shape[2:])} and skip {tuple(skip.shape[2:])} "
                "are not spatially compatible"
            )
        if self.alpha_override is not None:
            return torch.full_like(skip[:, :1], self.alpha_override)
        return torch.sigmoid(self.psi(self.relu(self.W_g(gating) + self.W_x(skip))))

    def forward(self, gating, skip):
        return skip * self.attention_coefficients(gating, skip)


class _SegDecoder(nn.Module):
    """Skip-connected decoder; attention gates are owned by the parent network."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        f = spec.filters
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(f[l + 1], f[l], kernel_size=2, stride=2)
            for l in range(spec.depth - 1)
        )
        self.blocks = nn.ModuleList(
            _ConvBlock(2 * f[l], f[l], spec.activation) for l in range(spec.depth - 1)
        )
        self.head = nn.Conv2d(f[0], spec.seg_output_channels, kernel_size=1)

    def forward(self, bottom, skips, gates):
        h = bottom
        for l in reversed(range(len(self.ups))):
            h = self.ups[l](h)
            gated = gates[l](h, skips[l])
            h = self.blocks[l](torch.cat([gated, h], dim=1))
        return torch.sigmoid(self.head(h))


class _RecDecoder(nn.Module):
    """Plain decoder without skip connections (autoencoder branch)."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        f = spec.filters
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(f[l + 1], f[l], kernel_size=2, stride=2)
            for l in range(spec.depth - 1)
        )
        self.blocks = nn.ModuleList(
            _ConvBlock(f[l], f[l], spec.activation) for l in range(spec.depth - 1)
        )
        self.head = nn.Conv2d(f[0], spec.rec_output_channels, kernel_size=1)
        self.sigmoid_head = spec.rec_head_activation == "sigmoid"

    def forward(self, bottom):
        h = bottom
        for l in reversed(range(len(self.ups))):
            h = self.ups[l](h)
            h = self.blocks[l](h)
        out = self.head(h)
        return torch.sigmoid(out) if self.sigmoid_head else out


class SegmentationNetwork(nn.Module):
    """Attention U-Net, optionally extended with a reconstruction decoder.

    Forward maps a (N, 1, H, W) batch (H, W divisible by
    ``2 ** (depth - 1)``) to a segmentation probability map of the same
    spatial size; the Y-Net variant returns ``(segmentation,
    reconstruction)``.
    """

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        f = spec.filters
        channels_in = [spec.input_channels] + list(f[:-1])
        self.encoder = nn.ModuleList(
            _ConvBlock(channels_in[l], f[l], spec.activation) for l in range(spec.depth - 1)
        )
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _ConvBlock(f[-2], f[-1], spec.activation)
        self.seg_decoder = _SegDecoder(spec)
        self.attention_gates = nn.ModuleList(
            AttentionGate(f[l], f[l]) for l in range(spec.depth - 1)
        )
        self.rec_decoder = _RecDecoder(spec) if spec.variant == "attention_ynet" else None

    @property
    def has_rec_decoder(self) -> bool:
        return self.rec_decoder is not None

    def _check_input(self, x):
        if x.dim() != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeError(
                f"expected (N, {self.spec.input_channels}, H, W) input, got {tuple(x.shape)}"
            )
        m = self.spec.spatial_divisor
        if x.shape[2] % m != 0 or x.shape[3] % m != 0:
            raise ShapeError(
                f"input {tuple(x.shape[2:])} not divisible by {m} (depth {self.spec.depth})"
            )

    def forward(self, x):
        self._check_input(x)
        skips = []
        h = x
        for block in self.encoder:
            h = block(h)
            skips.append(h)
            h = self.pool(h)
        h = self.bottleneck(h)
        seg = self.seg_decoder(h, skips, self.attention_gates)
        if self.rec_decoder is None:
            return seg
        return seg, self.rec_decoder(h)


def parameter_groups(model: SegmentationNetwork) -> dict[str, list[torch.nn.Parameter]]:
    """Partition learnable parameters into the five named groups."""
    groups: dict[str, list[torch.nn.Parameter]] = {g: [] for g in PARAMETER_GROUPS}
    for name, param in model.named_parameters():
        group = name.split(".", 1)[0]
        if group not in groups:
            raise ConfigError(f"parameter {name} outside the declared groups")
        groups[group].append(param)
    return groups


def _he_normal_(param: torch.Tensor, generator: torch.Generator) -> None:
    fan_in = param.shape[1] * math.prod(param.shape[2:])
    std = math.sqrt(2.0 / fan_in)
    param.normal_(0.0, std, generator=generator)


def init_parameters(model: SegmentationNetwork, rng_seed: int) -> None:
    """Deterministic he-normal init, applied group by group.

    Groups are visited in a fixed order with ``rec_decoder`` last, so a
    Y-Net and a U-Net built from the same seed share bit-identical
    encoder/bottleneck/segmentation parameters.
    """
    generator = torch.Generator().manual_seed(rng_seed)
    groups = parameter_groups(model)
    with torch.no_grad():
        for name in PARAMETER_GROUPS:
            for param in groups[name]:
                if param.dim() >= 2:
                    _he_normal_(param, generator)
                else:
                    param.zero_()


def build_network(spec: NetworkSpec, rng_seed: int = 0) -> SegmentationNetwork:
    """Construct and deterministically initialize a network."""
    model = SegmentationNetwork(spec)
    init_parameters(model, rng_seed)
    return model


def set_trainable(model: SegmentationNetwork, groups, flag: bool) -> None:
    """Mark whole parameter groups as trainable or frozen.

    Frozen groups receive no gradients and must be excluded from
    optimizers (see :func:`trainable_parameters`), which keeps their
    parameters bit-identical across optimization steps.
    """
    groups = {groups} if isinstance(groups, str) else set(groups)
    unknown = groups - set(PARAMETER_GROUPS)
    if unknown:
        raise ConfigError(f"unknown parameter groups {sorted(unknown)}")
    by_group = parameter_groups(model)
    for name in groups:
        for param in by_group[name]:
            param.requires_grad_(flag)


def trainable_parameters(model: SegmentationNetwork) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def snapshot_groups(model: SegmentationNetwork) -> dict[str, list[torch.Tensor]]:
    """Clone every group's parameters for before/after audits."""
    return {
        name: [p.detach().clone() for p in params]
        for name, params in parameter_groups(model).items()
    }


def changed_groups(model: SegmentationNetwork, snapshot: dict) -> set[str]:
    """Groups in which at least one parameter differs from the snapshot."""
    changed = set()
    for name, params in parameter_groups(model).items():
        for param, ref in zip(params, snapshot[name]):
            if not torch.equal(param.detach(), ref):
                changed.add(name)
                break
    return changed


def save_checkpoint(model: SegmentationNetwork, directory, phase: str, epoch: int) -> Path:
    """Write ``ckpt_<phase>_<epoch>.bin`` plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"ckpt_{phase}_{epoch:04d}.bin"
    torch.save(
        {
            "state_dict": model.state_dict(),
            "spec": asdict(model.spec),
            "torch_rng_state": torch.get_rng_state(),
        },
        path,
    )
    manifest = {
        "file": path.name,
        "phase": phase,
        "epoch": epoch,
        "spec": asdict(model.spec),
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return path


def load_checkpoint(path) -> SegmentationNetwork:
    """Rebuild a network from a checkpoint file, bit-identically."""
    payload = torch.load(Path(path), weights_only=False)
    model = SegmentationNetwork(NetworkSpec(**payload["spec"]))
    model.load_state_dict(payload["state_dict"])
    return model
