"""Minimal vision transformers matching the published self-supervised
checkpoints' module layout, with taps for per-patch features.

Two taps are supported: the per-head key projections of the final block's
attention (concatenated across heads), and the final block's output tokens.
Module names follow the reference implementations so official state dicts
load directly; LayerScale blocks cover the second model family.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class Attention(nn.Module):
    def __init__(self, dim, num_heads):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=True)
        self.proj = nn.Linear(dim, dim)
        self.store_keys = False
        self.last_keys = None

    def forward(self, x):
        b, n, c = x.shape
        qkv = (self.qkv(x)
               .reshape(b, n, 3, self.num_heads, c // self.num_heads)
               .permute(2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        if self.store_keys:
            # (b, heads, n, head_dim) -> (b, n, dim), heads concatenated
            self.last_keys = k.transpose(1, 2).reshape(b, n, c).detach()
        out = F.scaled_dot_product_attention(q, k, v)
        return self.proj(out.transpose(1, 2).reshape(b, n, c))


class LayerScale(nn.Module):
    def __init__(self, dim, init=1e-5):
        super().__init__()
        self.gamma = nn.Parameter(init * torch.ones(dim))

    def forward(self, x):
        return x * self.gamma


class Block(nn.Module):
    def __init__(self, dim, num_heads, mlp_ratio=4.0, layerscale=False):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self.ls1 = LayerScale(dim) if layerscale else nn.Identity()
        self.ls2 = LayerScale(dim) if layerscale else nn.Identity()

    def forward(self, x):
        x = x + self.ls1(self.attn(self.norm1(x)))
        return x + self.ls2(self.mlp(self.norm2(x)))


class VisionTransformer(nn.Module):
    def __init__(self, patch_size, dim, depth, num_heads, layerscale=False,
                 img_size=224):
        super().__init__()
        self.patch_size = patch_size
        self.dim = dim
        self.patch_embed = PatchEmbed(patch_size, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        base_tokens = (img_size // patch_size) ** 2
        self.pos_embed = nn.Parameter(torch.zeros(1, base_tokens + 1, dim))
        self.blocks = nn.ModuleList(
            [Block(dim, num_heads, layerscale=layerscale) for _ in range(depth)]
        )
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)

    def interpolate_pos_encoding(self, n_patches, grid):
        base = self.pos_embed.shape[1] - 1
        if n_patches == base:
            return self.pos_embed
        cls_pos = self.pos_embed[:, :1]
        patch_pos = self.pos_embed[:, 1:]
        side = int(math.sqrt(base))
        patch_pos = patch_pos.reshape(1, side, side, self.dim).permute(0, 3, 1, 2)
        patch_pos = F.interpolate(patch_pos, size=(grid, grid), mode="bicubic",
                                  align_corners=False)
        patch_pos = patch_pos.permute(0, 2, 3, 1).reshape(1, n_patches, self.dim)
        return torch.cat([cls_pos, patch_pos], dim=1)

    def forward_features(self, images, tap: str):
        """Returns per-patch features (b, grid*grid, dim), cls excluded.

        ``tap`` selects 'keys' (final attention's per-head key projections)
        or 'outputs' (final block's output tokens).
        """
        b, _, h, w = images.shape
        grid = h // self.patch_size
        x = self.patch_embed(images)
        cls = self.cls_token.expand(b, -1, -1)
        x = torch.cat([cls, x], dim=1)
        x = x + self.interpolate_pos_encoding(x.shape[1] - 1, grid)

        last_attn = self.blocks[-1].attn
        last_attn.store_keys = tap == "keys"
        last_attn.last_keys = None
        for block in self.blocks:
            x = block(x)
        if tap == "keys":
            feats = last_attn.last_keys
            last_attn.store_keys = False
        elif tap == "outputs":
            feats = x
        else:
            raise ValueError(f"unknown feature tap {tap!r}")
        return feats[:, 1:, :]


class PatchEmbed(nn.Module):
    def __init__(self, patch_size, dim):
        super().__init__()
        self.proj = nn.Conv2d(3, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


def load_checkpoint(model: VisionTransformer, path) -> tuple:
    """Load an official state dict; returns (missing, unexpected) key lists.

    Handles wrapper dicts ('teacher', 'model', 'state_dict') and strips
    'module.' / 'backbone.' prefixes.
    """
    blob = torch.load(path, map_location="cpu", weights_only=True)
    for key in ("teacher", "model", "state_dict"):
        if isinstance(blob, dict) and key in blob and isinstance(blob[key], dict):
            blob = blob[key]
            break
    cleaned = {}
    for name, value in blob.items():
        for prefix in ("module.", "backbone."):
            if name.startswith(prefix):
                name = name[len(prefix):]
        cleaned[name] = value
    if "pos_embed" in cleaned and cleaned["pos_embed"].shape != model.pos_embed.shape:
        model.pos_embed = nn.Parameter(cleaned["pos_embed"].clone())
    result = model.load_state_dict(cleaned, strict=False)
    return list(result.missing_keys), list(result.unexpected_keys)
