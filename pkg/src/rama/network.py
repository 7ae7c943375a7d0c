"""Encoder, token sequence, transformer stack, heads and baseline variants."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import torch
from torch import nn

from . import ops
from .config import ModelConfig
from .errors import ConfigError

MODALITY_INDEX = {"DCE": 0, "ADC": 1}


def _generator(seed: int, name: str) -> torch.Generator:
    # one stream per component so toggling a variant flag leaves the other inits unchanged
    return torch.Generator().manual_seed((int(seed) * 1_000_003 + zlib.crc32(name.encode())) % 2**63)


def _groups(channels: int, groups: int) -> int:
    return math.gcd(channels, groups)


class ConvNorm(nn.Module):
    def __init__(self, cin, cout, stride, groups, gen):
        super().__init__()
        self.stride = stride
        self.groups = _groups(cout, groups)
        self.weight = nn.Parameter(torch.empty(cout, cin, 3, 3, 3))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.gn_weight = nn.Parameter(torch.ones(cout))
        self.gn_bias = nn.Parameter(torch.zeros(cout))
        nn.init.kaiming_normal_(self.weight, nonlinearity="relu", generator=gen)

    def forward(self, x, act=True):
        x = ops.conv3d(x, self.weight, self.bias, self.stride)
        x = ops.group_norm(x, self.groups, self.gn_weight, self.gn_bias)
        return ops.relu(x) if act else x


class ResBlock(nn.Module):
    def __init__(self, c, groups, gen):
        super().__init__()
        self.a = ConvNorm(c, c, 1, groups, gen)
        self.b = ConvNorm(c, c, 1, groups, gen)

    def forward(self, x):
        return ops.relu(ops.add(x, self.b(self.a(x), act=False)))


class Encoder(nn.Module):
    """Stem conv then three [stride-2 conv, residual block] stages: (B,4,D,H,W) -> (B,C_E,D/8,H/8,W/8)."""

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        w = cfg.widths
        self.stem = ConvNorm(cfg.in_channels, w[0], 1, cfg.norm_groups, gen)
        stages = []
        cin = w[0]
        for cout in w:
            stages.append(nn.ModuleList([ConvNorm(cin, cout, 2, cfg.norm_groups, gen),
                                         ResBlock(cout, cfg.norm_groups, gen)]))
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x):
        if any(n % 8 for n in x.shape[2:]):
            raise ConfigError(f"encoder input spatial dims {tuple(x.shape[2:])} must be divisible by 8")
        x = self.stem(x)
        for down, block in self.stages:
            x = block(down(x))
        return x


class Linear(nn.Module):
    def __init__(self, cin, cout, gen, std=0.02):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(cout, cin))
        self.bias = nn.Parameter(torch.zeros(cout))
        nn.init.trunc_normal_(self.weight, std=std, a=-2 * std, b=2 * std, generator=gen)

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        return ops.layer_norm(x, self.weight, self.bias)


class MLP(nn.Module):
    """Two linear projections with exact GELU in between."""

    def __init__(self, cin, hidden, cout, gen, std=0.02):
        super().__init__()
        self.fc1 = Linear(cin, hidden, gen, std)
        self.fc2 = Linear(hidden, cout, gen, std)

    def forward(self, x):
        return self.fc2(ops.gelu(self.fc1(x)))


class Tokenizer(nn.Module):
    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        self.modalities = cfg.modalities
        self.embed = Linear(cfg.encoder_width, cfg.d_dim, gen)
        self.cls = nn.Parameter(torch.zeros(cfg.d_dim))
        self.modality_embed = nn.Parameter(torch.empty(len(cfg.modalities), cfg.d_dim))
        nn.init.trunc_normal_(self.modality_embed, std=0.02, a=-0.04, b=0.04, generator=gen)
        self.use_pos_embed = cfg.use_pos_embed
        if cfg.use_pos_embed:
            self.pos_embed = nn.Parameter(torch.empty(1 + len(cfg.modalities) * cfg.n_patches, cfg.d_dim))
            nn.init.trunc_normal_(self.pos_embed, std=0.02, a=-0.04, b=0.04, generator=gen)

    def forward(self, features: dict):
        """[cls, patches of modality 1 in index order, patches of modality 2, ...]"""
        n = None
        parts = []
        for k, mod in enumerate(self.modalities):
            x = features[mod]
            b, c = x.shape[:2]
            x = ops.reshape(x, (b, c, -1)).transpose(1, 2)  # (B, N, C_E), z-major patch order
            if n is not None and x.shape[1] != n:
                raise ValueError(f"patch count mismatch between modalities: {n} vs {x.shape[1]}")
            n = x.shape[1]
            parts.append(self.embed(x) + self.modality_embed[k])
        cls = self.cls.expand(parts[0].shape[0], 1, -1)
        z = ops.concat([cls] + parts, dim=1)
        if self.use_pos_embed:
            if self.pos_embed.shape[0] != z.shape[1]:
                raise ValueError(f"sequence length {z.shape[1]} does not match positional table {self.pos_embed.shape[0]}")
            z = z + self.pos_embed
        return z


class Attention(nn.Module):
    def __init__(self, dim, heads, gen):
        super().__init__()
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, gen)
        self.proj = Linear(dim, dim, gen)

    def forward(self, x, return_weights=False):
        b, n, dim = x.shape
        hd = dim // self.heads
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        attn = ops.softmax(ops.scalar_mul(q @ k.transpose(-2, -1), 1.0 / math.sqrt(hd)))
        out = (attn @ v).transpose(1, 2).reshape(b, n, dim)
        out = self.proj(out)
        return (out, attn) if return_weights else out


class TransformerLayer(nn.Module):
    """Pre-norm block: Z~ = MSA(LN(Z)) + Z, Z' = MLP(LN(Z~)) + Z~."""

    def __init__(self, cfg: ModelConfig, gen):
        super().__init__()
        self.ln1 = LayerNorm(cfg.d_dim)
        self.attn = Attention(cfg.d_dim, cfg.heads, gen)
        self.ln2 = LayerNorm(cfg.d_dim)
        self.mlp = MLP(cfg.d_dim, cfg.mlp_ratio * cfg.d_dim, cfg.d_dim, gen)

    def forward(self, z, return_weights=False):
        a, w = self.attn(self.ln1(z), return_weights=True)
        z = ops.add(a, z)
        z = ops.add(self.mlp(self.ln2(z)), z)
        return (z, w) if return_weights else z


@dataclass
class ModelOutput:
    logit: torch.Tensor
    gap: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    tokens: torch.Tensor | None = None


class RamaNet(nn.Module):
    """Full model family; the variant is selected by ``ModelConfig`` flags.

    Inputs are a dict ``{modality: (B, 4, D, H, W)}`` and, when radiomics are
    concatenated or guidance is on, standardized radiomics ``{modality: (B, 25)}``.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoders = nn.ModuleDict({m: Encoder(cfg, _generator(seed, f"encoder.{m}"))
                                       for m in cfg.modalities})
        c_e = cfg.encoder_width
        if cfg.use_transformer:
            self.tokenizer = Tokenizer(cfg, _generator(seed, "tokenizer"))
            gen = _generator(seed, "transformer")
            self.layers = nn.ModuleList(TransformerLayer(cfg, gen) for _ in range(cfg.layers))
            self.norm = LayerNorm(cfg.d_dim)
            self.head = Linear(cfg.d_dim, 1, _generator(seed, "head"))
        else:
            n_in = c_e * len(cfg.modalities)
            if cfg.concat_radiomics:
                n_in += cfg.n_radiomics * len(cfg.modalities)
            self.head = Linear(n_in, 1, _generator(seed, "head"))
        if cfg.use_guidance:
            gen = _generator(seed, "projectors")
            self.image_projectors = nn.ModuleDict(
                {m: MLP(c_e, c_e, cfg.proj_dim, gen, std=1 / math.sqrt(c_e)) for m in cfg.modalities})
            self.radiomics_projectors = nn.ModuleDict(
                {m: MLP(cfg.n_radiomics, cfg.rad_hidden, cfg.proj_dim, gen, std=1 / math.sqrt(cfg.n_radiomics))
                 for m in cfg.modalities})

    def encode(self, modality, x):
        return self.encoders[modality](x)

    def project_image(self, modality, v):
        return self.image_projectors[modality](v)

    def project_radiomics(self, modality, r):
        return self.radiomics_projectors[modality](r)

    def classify(self, z):
        return self.head(self.norm(z[:, 0])).squeeze(-1)

    def forward(self, images: dict, radiomics: dict | None = None, keep_tokens=False) -> ModelOutput:
        cfg = self.cfg
        missing = [m for m in cfg.modalities if m not in images]
        if missing:
            raise ValueError(f"missing input modalities {missing}")
        features = {m: self.encode(m, images[m]) for m in cfg.modalities}
        gap = {m: ops.mean_pool_global(f) for m, f in features.items()}
        tokens = None
        if cfg.use_transformer:
            z = self.tokenizer(features)
            for layer in self.layers:
                z = layer(z)
            tokens = z if keep_tokens else None
            logit = self.classify(z)
        else:
            parts = [gap[m] for m in cfg.modalities]
            if cfg.concat_radiomics:
                if radiomics is None:
                    raise ValueError("concat_radiomics needs standardized radiomics inputs")
                parts += [radiomics[m].to(parts[0].dtype) for m in cfg.modalities]
            logit = self.head(ops.concat(parts, dim=-1)).squeeze(-1)
        return ModelOutput(logit, gap, features, tokens)


def forward_variant(images: dict, cfg: ModelConfig, model: RamaNet, radiomics: dict | None = None) -> ModelOutput:
    if model.cfg != cfg:
        raise ConfigError("model was built for a different configuration")
    return model(images, radiomics)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
