"""Encoders, AdaIN decoders and multi-scale patch discriminators."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .imagekit import DEFAULT_BOX, Domain, EyeBox, FaceImage, mask_eye_region


def _default_disc_scales(resolution: int) -> int:
    if resolution >= 128:
        return 3
    if resolution >= 32:
        return 2
    return 1


@dataclass
class NetConfig:
    resolution: int = 224
    appearance_downsamples: int = 2
    eye_code_dim: int = 8
    n_residual_blocks: int = 4
    disc_scales: Optional[int] = None
    disc_layers: int = 3
    base_width: int = 64
    mlp_dim: int = 256
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.disc_scales is None:
            self.disc_scales = _default_disc_scales(self.resolution)
        self.validate()

    @property
    def appearance_channels(self) -> int:
        return self.base_width * 2 ** self.appearance_downsamples

    @property
    def code_size(self) -> int:
        return self.resolution // 2 ** self.appearance_downsamples

    def validate(self):
        if self.resolution < 16 or self.resolution % 2:
            raise ValueError(f"resolution must be even and >= 16, got {self.resolution}")
        if self.resolution % 2 ** self.appearance_downsamples:
            raise ValueError("resolution not divisible by 2^appearance_downsamples")
        if self.disc_scales < 1 or self.resolution % 2 ** (self.disc_scales - 1):
            raise ValueError("resolution not divisible by 2^(disc_scales-1)")
        # instance norm needs more than one pixel at the coarsest scale
        if self.resolution // 2 ** (self.disc_scales - 1 + self.disc_layers) < 2:
            raise ValueError("too many discriminator scales/layers for this resolution")
        if self.eye_code_dim < 1 or self.n_residual_blocks < 1:
            raise ValueError("eye_code_dim and n_residual_blocks must be >= 1")
        if self.base_width < 1 or self.mlp_dim < 1 or self.disc_layers < 1:
            raise ValueError("widths and layer counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _lrelu(cfg: NetConfig) -> nn.LeakyReLU:
    return nn.LeakyReLU(cfg.leaky_slope)


def conv_block(cin, cout, k, stride, cfg, norm=True):
    layers = [nn.Conv2d(cin, cout, k, stride, (k - 1) // 2 if stride == 1 else 1, padding_mode="reflect")]
    if norm:
        layers.append(nn.InstanceNorm2d(cout))
    layers.append(_lrelu(cfg))
    return nn.Sequential(*layers)


class ResBlock(nn.Module):
    def __init__(self, ch, cfg):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(ch, ch, 3, 1, 1, padding_mode="reflect"), nn.InstanceNorm2d(ch), _lrelu(cfg),
            nn.Conv2d(ch, ch, 3, 1, 1, padding_mode="reflect"), nn.InstanceNorm2d(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class AdaIN(nn.Module):
    """Instance normalization whose affine parameters come from outside."""

    def __init__(self, ch):
        super().__init__()
        self.ch = ch

    def forward(self, x, scale, shift):
        x = F.instance_norm(x)
        return x * (1 + scale[:, :, None, None]) + shift[:, :, None, None]


class AdaResBlock(nn.Module):
    def __init__(self, ch, cfg):
        super().__init__()
        self.conv1 = nn.Conv2d(ch, ch, 3, 1, 1, padding_mode="reflect")
        self.conv2 = nn.Conv2d(ch, ch, 3, 1, 1, padding_mode="reflect")
        self.norm1 = AdaIN(ch)
        self.norm2 = AdaIN(ch)
        self.act = _lrelu(cfg)

    def forward(self, x, params):
        s1, b1, s2, b2 = params
        h = self.act(self.norm1(self.conv1(x), s1, b1))
        h = self.norm2(self.conv2(h), s2, b2)
        return x + h


class AppearanceEncoder(nn.Module):
    """Eye-masked image -> spatial appearance code."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.base_width
        layers = [conv_block(3, w, 7, 1, cfg)]
        for _ in range(cfg.appearance_downsamples):
            layers.append(conv_block(w, 2 * w, 4, 2, cfg))
            w *= 2
        layers += [ResBlock(w, cfg) for _ in range(cfg.n_residual_blocks)]
        self.net = nn.Sequential(*layers)

    def forward(self, x_masked):
        return self.net(x_masked)


class EyeEncoder(nn.Module):
    """Whole image -> eye attribute vector (conv stack, global average pool, linear)."""

    def __init__(self, cfg: NetConfig, n_down: int = 4):
        super().__init__()
        w = cfg.base_width
        layers = [conv_block(3, w, 7, 1, cfg, norm=False)]
        for i in range(n_down):
            nw = w * 2 if i < 2 else w
            layers.append(conv_block(w, nw, 4, 2, cfg, norm=False))
            w = nw
        self.net = nn.Sequential(*layers)
        self.fc = nn.Linear(w, cfg.eye_code_dim)

    def forward(self, x):
        h = self.net(x).mean(dim=(2, 3))
        return self.fc(h)


class Decoder(nn.Module):
    """(appearance code, eye code, source image) -> image in [-1, 1].

    The eye code drives the AdaIN parameters of the residual blocks; a
    refine stage mixes the raw decoder output with the eye-masked source.
    """

    def __init__(self, cfg: NetConfig, box: EyeBox = DEFAULT_BOX):
        super().__init__()
        self.box = box
        ch = cfg.appearance_channels
        self.n_params = 4 * cfg.n_residual_blocks
        self.mlp = nn.Sequential(
            nn.Linear(cfg.eye_code_dim, cfg.mlp_dim), _lrelu(cfg),
            nn.Linear(cfg.mlp_dim, cfg.mlp_dim), _lrelu(cfg),
            nn.Linear(cfg.mlp_dim, self.n_params * ch),
        )
        self.blocks = nn.ModuleList(AdaResBlock(ch, cfg) for _ in range(cfg.n_residual_blocks))
        up = []
        for _ in range(cfg.appearance_downsamples):
            up += [nn.Upsample(scale_factor=2, mode="nearest"),
                   nn.Conv2d(ch, ch // 2, 5, 1, 2, padding_mode="reflect"),
                   nn.InstanceNorm2d(ch // 2), _lrelu(cfg)]
            ch //= 2
        up += [nn.Conv2d(ch, 3, 7, 1, 3, padding_mode="reflect"), nn.Tanh()]
        self.up = nn.Sequential(*up)
        w = cfg.base_width
        self.refine = nn.Sequential(
            nn.Conv2d(6, w, 3, 1, 1, padding_mode="reflect"), _lrelu(cfg),
            nn.Conv2d(w, 3, 3, 1, 1, padding_mode="reflect"), nn.Tanh(),
        )

    def adain_params(self, e):
        p = self.mlp(e).view(e.shape[0], self.n_params, -1)
        return [tuple(p[:, 4 * i + j] for j in range(4)) for i in range(len(self.blocks))]

    def forward(self, f, e, source):
        h = f
        for block, params in zip(self.blocks, self.adain_params(e)):
            h = block(h, params)
        raw = self.up(h)
        return self.refine(torch.cat([raw, mask_eye_region(source, self.box)], dim=1))


class PatchDiscriminator(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.base_width
        layers = [conv_block(3, w, 4, 2, cfg, norm=False)]
        for _ in range(cfg.disc_layers - 1):
            layers.append(conv_block(w, 2 * w, 4, 2, cfg))
            w *= 2
        layers.append(nn.Conv2d(w, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    """Scale ``s`` scores the input average-pooled by ``2**s``."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.scales = nn.ModuleList(PatchDiscriminator(cfg) for _ in range(cfg.disc_scales))

    def forward(self, x):
        maps = []
        for i, d in enumerate(self.scales):
            if i:
                x = F.avg_pool2d(x, 2)
            maps.append(d(x))
        return maps


def _batch(img) -> torch.Tensor:
    x = img.pixels if isinstance(img, FaceImage) else img
    return x.unsqueeze(0) if x.dim() == 3 else x


class GeneratorBundle(nn.Module):
    """All generator-side networks.

    One appearance encoder serves both domains; eye encoders and decoders
    are per domain.
    """

    def __init__(self, cfg: NetConfig, box: EyeBox = DEFAULT_BOX):
        super().__init__()
        self.config = cfg
        self.box = box
        self.E_f = AppearanceEncoder(cfg)
        self.E_e_A = EyeEncoder(cfg)
        self.E_e_B = EyeEncoder(cfg)
        self.G_A = Decoder(cfg, box)
        self.G_B = Decoder(cfg, box)

    def appearance_encoder(self, domain) -> AppearanceEncoder:
        Domain.parse(domain)
        return self.E_f

    def eye_encoder(self, domain) -> EyeEncoder:
        return self.E_e_A if Domain.parse(domain) is Domain.A else self.E_e_B

    def decoder(self, domain) -> Decoder:
        return self.G_A if Domain.parse(domain) is Domain.A else self.G_B

    def _check(self, x):
        res = self.config.resolution
        if x.shape[-2:] != (res, res):
            raise ValueError(f"expected {res}x{res} input, got {tuple(x.shape[-2:])}")

    def encode_appearance(self, img, domain=Domain.A) -> torch.Tensor:
        x = _batch(img)
        self._check(x)
        return self.appearance_encoder(domain)(mask_eye_region(x, self.box))

    def encode_eye(self, img, domain) -> torch.Tensor:
        x = _batch(img)
        self._check(x)
        return self.eye_encoder(domain)(x)

    def decode(self, f, e, domain, source) -> torch.Tensor:
        cfg = self.config
        expected = (cfg.appearance_channels, cfg.code_size, cfg.code_size)
        if tuple(f.shape[-3:]) != expected:
            raise ValueError(f"appearance code shape {tuple(f.shape[-3:])} != {expected}")
        if e.shape[-1] != cfg.eye_code_dim:
            raise ValueError(f"eye code length {e.shape[-1]} != {cfg.eye_code_dim}")
        f = f.unsqueeze(0) if f.dim() == 3 else f
        e = e.unsqueeze(0) if e.dim() == 1 else e
        src = _batch(source)
        self._check(src)
        return self.decoder(domain)(f, e, src)


class DiscriminatorSet(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.config = cfg
        self.D_A = MultiScaleDiscriminator(cfg)
        self.D_B = MultiScaleDiscriminator(cfg)

    def disc(self, domain) -> MultiScaleDiscriminator:
        return self.D_A if Domain.parse(domain) is Domain.A else self.D_B

    def discriminate(self, img, domain) -> list[torch.Tensor]:
        x = _batch(img)
        res = self.config.resolution
        if x.shape[-2:] != (res, res):
            raise ValueError(f"expected {res}x{res} input, got {tuple(x.shape[-2:])}")
        return self.disc(domain)(x)


def _init_weights(module: nn.Module, gen: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            with torch.no_grad():
                fan_in = m.weight[0].numel()
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5 * 0.5)
                if m.bias is not None:
                    m.bias.zero_()


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def init_bundle(cfg: NetConfig, seed: int, box: EyeBox = DEFAULT_BOX,
                dtype=torch.float32) -> tuple[GeneratorBundle, DiscriminatorSet]:
    cfg.validate()
    gen = torch.Generator().manual_seed(seed)
    bundle = GeneratorBundle(cfg, box)
    discs = DiscriminatorSet(cfg)
    _init_weights(bundle, gen)
    _init_weights(discs, gen)
    return bundle.to(dtype), discs.to(dtype)


def save_checkpoint(path, bundle: GeneratorBundle, discs: Optional[DiscriminatorSet] = None,
                    extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "net_config": bundle.config.to_dict(),
        "eye_box": asdict(bundle.box),
        "generator": bundle.state_dict(),
        "discriminators": discs.state_dict() if discs is not None else None,
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path, expected: Optional[NetConfig] = None):
    """Return ``(bundle, discs, extra)``; raises on a config mismatch."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    cfg = NetConfig(**payload["net_config"])
    if expected is not None and expected.to_dict() != cfg.to_dict():
        raise ValueError(f"checkpoint config {cfg.to_dict()} does not match {expected.to_dict()}")
    box = EyeBox(**payload["eye_box"])
    gen_state = payload["generator"]
    dtype = next(iter(gen_state.values())).dtype
    bundle, discs = init_bundle(cfg, 0, box, dtype=dtype)
    bundle.load_state_dict(gen_state)
    if payload["discriminators"] is not None:
        discs.load_state_dict(payload["discriminators"])
    else:
        discs = None
    return bundle, discs, payload["extra"]
