"""Frozen encoders, the residual fusion MLP, and the backbone registry.

Three families are registered:

* ``stub``: fixed random-projection towers, no downloads, used by the tests.
* ``openclip-rn50``: CLIP ResNet-50 via open_clip, with the final attention
  pool re-run so that it also returns the per-cell tokens.
* ``swin3d-t``: torchvision's Video Swin-T as the fragment encoder, loaded
  from a local state dict.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BackboneError, DataError, GeometryMismatchError
from .fragments import FragmentView

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
# ImageNet statistics, as used by FAST-VQA for fragments
FRAGMENT_MEAN = (0.485, 0.456, 0.406)
FRAGMENT_STD = (0.229, 0.224, 0.225)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    module.eval()
    return module


def to_tensor(frames: np.ndarray, mean, std, size: int | None = None, dtype=torch.float32) -> torch.Tensor:
    """uint8 (T, H, W, 3) -> normalized float (T, 3, H', W')."""
    x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2).to(dtype) / 255.0
    if size is not None and tuple(x.shape[-2:]) != (size, size):
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
    mean = torch.tensor(mean, dtype=dtype).view(1, 3, 1, 1)
    std = torch.tensor(std, dtype=dtype).view(1, 3, 1, 1)
    return (x - mean) / std


# ---------------------------------------------------------------- visual towers

class AttentionPool(nn.Module):
    """CLIP-style attention pooling that keeps every output token.

    Input tokens are ``[mean of grid, grid cells...]`` plus a positional
    embedding; one multi-head self-attention layer maps them to the global
    embedding (token 0) and the local embeddings (tokens 1..HW). Parameter
    names follow open_clip so pretrained weights load directly.
    """

    def __init__(self, spacial_dim: int, embed_dim: int, num_heads: int, output_dim: int | None = None):
        super().__init__()
        self.positional_embedding = nn.Parameter(torch.randn(spacial_dim ** 2 + 1, embed_dim) / embed_dim ** 0.5)
        self.k_proj = nn.Linear(embed_dim, embed_dim)
        self.q_proj = nn.Linear(embed_dim, embed_dim)
        self.v_proj = nn.Linear(embed_dim, embed_dim)
        self.c_proj = nn.Linear(embed_dim, output_dim or embed_dim)
        self.num_heads = num_heads

    def forward(self, x: torch.Tensor):
        n, c, h, w = x.shape
        tokens = x.reshape(n, c, h * w).permute(2, 0, 1)  # (HW, N, C)
        tokens = torch.cat([tokens.mean(dim=0, keepdim=True), tokens], dim=0)
        if self.positional_embedding.shape[0] != tokens.shape[0]:
            raise GeometryMismatchError(
                f"attention pool expects {self.positional_embedding.shape[0] - 1} cells, got {h * w}")
        tokens = tokens + self.positional_embedding[:, None, :].to(tokens.dtype)
        out, _ = F.multi_head_attention_forward(
            query=tokens, key=tokens, value=tokens,
            embed_dim_to_check=c,
            num_heads=self.num_heads,
            q_proj_weight=self.q_proj.weight,
            k_proj_weight=self.k_proj.weight,
            v_proj_weight=self.v_proj.weight,
            in_proj_weight=None,
            in_proj_bias=torch.cat([self.q_proj.bias, self.k_proj.bias, self.v_proj.bias]),
            bias_k=None,
            bias_v=None,
            add_zero_attn=False,
            dropout_p=0.0,
            out_proj_weight=self.c_proj.weight,
            out_proj_bias=self.c_proj.bias,
            use_separate_proj_weight=True,
            training=False,
            need_weights=False,
        )
        out = out.permute(1, 0, 2)  # (N, 1+HW, D)
        return out[:, 0], out[:, 1:].reshape(n, h, w, -1)


class StubVisualTower(nn.Module):
    """Patchify-and-project stand-in for the CLIP ResNet tower.

    With ``detail_gain > 0`` the first pre-pool channel also carries the mean
    absolute Laplacian of each cell, which makes local features respond to blur.
    """

    def __init__(self, image_size=224, patch=32, width=64, embed_dim=32, heads=4, detail_gain=0.0, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.image_size = image_size
        self.grid = image_size // patch
        self.patch = nn.Conv2d(3, width, kernel_size=patch, stride=patch)
        self.attnpool = AttentionPool(self.grid, width, heads, embed_dim)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) / math.sqrt(max(p.shape[-1], 1)))
        self.detail_gain = detail_gain
        self.embed_dim = embed_dim

    def pre_pool(self, images: torch.Tensor) -> torch.Tensor:
        x = self.patch(images)
        if self.detail_gain:
            gray = images.mean(dim=1, keepdim=True)
            kernel = torch.tensor([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=images.dtype).view(1, 1, 3, 3)
            energy = F.conv2d(gray, kernel, padding=1).abs()
            energy = F.avg_pool2d(energy, self.patch.kernel_size)
            x = torch.cat([x[:, :1] + self.detail_gain * energy, x[:, 1:]], dim=1)
        return x

    def forward(self, images: torch.Tensor):
        pre = self.pre_pool(images)
        global_, local = self.attnpool(pre)
        return global_, local, pre.permute(0, 2, 3, 1)


class OpenClipVisualTower(nn.Module):
    """open_clip ModifiedResNet with a token-preserving attention pool."""

    def __init__(self, visual: nn.Module):
        super().__init__()
        if not hasattr(visual, "attnpool"):
            raise BackboneError("visual tower has no attention pool over a spatial grid")
        self.visual = visual
        ap = visual.attnpool
        spacial = int(round(math.sqrt(ap.positional_embedding.shape[0] - 1)))
        self.attnpool = AttentionPool(spacial, ap.k_proj.in_features, ap.num_heads, ap.c_proj.out_features)
        self.attnpool.load_state_dict(ap.state_dict())
        self.image_size = spacial * 32
        self.embed_dim = ap.c_proj.out_features

    def forward(self, images: torch.Tensor):
        v = self.visual
        x = v.stem(images) if hasattr(v, "stem") else images
        x = v.layer4(v.layer3(v.layer2(v.layer1(x))))
        global_, local = self.attnpool(x)
        return global_, local, x.permute(0, 2, 3, 1)


# ------------------------------------------------------------------ tokenizers

class WordTokenizer:
    """Whitespace tokenizer over a closed vocabulary; full stops are their own token."""

    PAD, SOT, EOT, UNK = "<pad>", "<sot>", "<eot>", "<unk>"
    _split = re.compile(r"[^\s.]+|\.")

    def __init__(self, words, context_length: int = 16):
        specials = [self.PAD, self.SOT, self.EOT, self.UNK]
        self.vocab = specials + sorted(set(words) - set(specials))
        self.ids = {w: i for i, w in enumerate(self.vocab)}
        self.context_length = context_length

    def __len__(self):
        return len(self.vocab)

    def words(self, text: str) -> list[str]:
        return self._split.findall(text)

    def encode(self, text: str) -> list[int]:
        words = self.words(text)
        if not words:
            raise DataError("empty prompt")
        ids = [self.ids[self.SOT]] + [self.ids.get(w, self.ids[self.UNK]) for w in words] + [self.ids[self.EOT]]
        if len(ids) > self.context_length:
            raise DataError(f"prompt needs {len(ids)} tokens, context holds {self.context_length}")
        return ids + [0] * (self.context_length - len(ids))

    def decode(self, ids) -> str:
        words = [self.vocab[int(i)] for i in ids if int(i) > 0 and self.vocab[int(i)] not in (self.SOT, self.EOT)]
        return " ".join(words).replace(" .", ".")

    def token_id(self, word: str) -> int:
        return self.ids[word]


class OpenClipTokenizer:
    def __init__(self, model_name: str = "RN50"):
        import open_clip

        self._tok = open_clip.get_tokenizer(model_name)
        self.context_length = getattr(self._tok, "context_length", 77)

    def encode(self, text: str) -> list[int]:
        if not text.strip():
            raise DataError("empty prompt")
        return self._tok([text])[0].tolist()

    def decode(self, ids) -> str:
        from open_clip.tokenizer import decode

        return decode(torch.tensor([i for i in ids if i not in (0, 49406, 49407)])).strip()

    def token_id(self, word: str) -> int:
        ids = self.encode(word)
        return ids[1]


# ------------------------------------------------------------------ text towers

class StubTextTower(nn.Module):
    """Linear text encoder: mean of (token + position) embeddings, then a projection.

    With ``width <= embed_dim`` the projection has full column rank almost surely,
    so the output is injective in any single token slot.
    """

    def __init__(self, vocab_size: int, context_length: int = 16, width: int = 24, embed_dim: int = 32, seed=1):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.token_embedding = nn.Embedding(vocab_size, width)
        self.positional_embedding = nn.Parameter(torch.empty(context_length, width))
        self.text_projection = nn.Parameter(torch.empty(width, embed_dim))
        with torch.no_grad():
            self.token_embedding.weight.copy_(torch.randn(vocab_size, width, generator=gen))
            self.positional_embedding.copy_(0.1 * torch.randn(context_length, width, generator=gen))
            self.text_projection.copy_(torch.randn(width, embed_dim, generator=gen) / math.sqrt(width))
        self.context_length = context_length

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.token_embedding(ids)

    def forward(self, x: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        mask = (ids != 0).to(x.dtype).unsqueeze(-1)
        x = (x + self.positional_embedding.to(x.dtype)) * mask
        pooled = x.sum(dim=1) / mask.sum(dim=1)
        return pooled @ self.text_projection


class OpenClipTextTower(nn.Module):
    def __init__(self, model: nn.Module):
        super().__init__()
        self.token_embedding = model.token_embedding
        self.positional_embedding = model.positional_embedding
        self.transformer = model.transformer
        self.ln_final = model.ln_final
        self.text_projection = model.text_projection
        self.register_buffer("attn_mask", model.attn_mask, persistent=False)
        self.context_length = self.positional_embedding.shape[0]

    def embed_tokens(self, ids):
        return self.token_embedding(ids)

    def forward(self, x, ids):
        x = x + self.positional_embedding.to(x.dtype)
        x = self.transformer(x, attn_mask=self.attn_mask)
        x = self.ln_final(x)
        x = x[torch.arange(x.shape[0]), ids.argmax(dim=-1)]
        proj = self.text_projection
        return proj(x) if isinstance(proj, nn.Linear) else x @ proj


# ------------------------------------------------------------- fragment towers

class StubFragmentEncoder(nn.Module):
    """One linear map per mini-patch: (S_f*S_f*3) pixels -> d_f, shared over cells and frames."""

    def __init__(self, patch_size: int = 32, out_dim: int = 16, seed: int = 2):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size * 3, out_dim)
        with torch.no_grad():
            self.proj.weight.copy_(torch.randn(self.proj.weight.shape, generator=gen) / patch_size)
            self.proj.bias.copy_(torch.randn(out_dim, generator=gen))
        self.out_dim = out_dim

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        # video: (T, 3, H, W), raw [0, 1] intensities
        t, c, h, w = video.shape
        s = self.patch_size
        if h % s or w % s:
            raise GeometryMismatchError(f"fragment of {h}x{w} is not a multiple of patch size {s}")
        cells = video.reshape(t, c, h // s, s, w // s, s).permute(0, 2, 4, 1, 3, 5)
        return self.proj(cells.reshape(t, h // s, w // s, c * s * s))


class SwinFragmentEncoder(nn.Module):
    """torchvision Video Swin-T trunk; output grid is (T/2, H/32, W/32, 768)."""

    def __init__(self, state_dict_path: str | None = None):
        super().__init__()
        from torchvision.models.video import swin3d_t

        model = swin3d_t()
        if state_dict_path:
            try:
                state = torch.load(state_dict_path, map_location="cpu", weights_only=True)
            except Exception as exc:
                raise BackboneError(f"cannot load fragment backbone weights {state_dict_path}: {exc}") from exc
            state = state.get("state_dict", state)
            missing, _ = model.load_state_dict(state, strict=False)
            if missing and len(missing) == len(model.state_dict()):
                raise BackboneError(f"no fragment backbone weights matched in {state_dict_path}")
        self.patch_embed = model.patch_embed
        self.pos_drop = model.pos_drop
        self.features = model.features
        self.norm = model.norm
        self.out_dim = model.norm.normalized_shape[0]

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        x = video.permute(1, 0, 2, 3).unsqueeze(0)  # (1, 3, T, H, W)
        x = self.pos_drop(self.patch_embed(x))
        x = self.norm(self.features(x))  # (1, T', H', W', C)
        return x[0]


def swin_output_grid(num_frames: int, height: int, width: int, patch=(2, 4, 4), merges: int = 3):
    """Output (T', H', W') of a Video Swin trunk: padded patch embedding, then ``merges`` 2x spatial merges."""
    t = math.ceil(num_frames / patch[0])
    h = math.ceil(height / patch[1])
    w = math.ceil(width / patch[2])
    for _ in range(merges):
        h, w = math.ceil(h / 2), math.ceil(w / 2)
    return t, h, w


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index whose cell contains the centre of each destination cell."""
    return np.minimum(((np.arange(dst) + 0.5) * src / dst).astype(np.int64), src - 1)


def align_grid(features: torch.Tensor, num_frames: int, grid: int) -> torch.Tensor:
    """Nearest-cell resampling of a (T', G', G', C) grid to (num_frames, grid, grid, C)."""
    t_src, h_src, w_src, _ = features.shape
    ti = torch.from_numpy(nearest_indices(t_src, num_frames))
    hi = torch.from_numpy(nearest_indices(h_src, grid))
    wi = torch.from_numpy(nearest_indices(w_src, grid))
    return features[ti][:, hi][:, :, wi]


# --------------------------------------------------------------------- fusion

class FusionMLP(nn.Module):
    """Residual cell-wise fusion: local + FC2(Drop(GELU(FC1([fragment, local]))))."""

    def __init__(self, local_dim: int, fragment_dim: int, hidden_dim: int | None = None, dropout: float = 0.5):
        super().__init__()
        hidden_dim = hidden_dim or local_dim
        self.fc1 = nn.Linear(fragment_dim + local_dim, hidden_dim)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden_dim, local_dim)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)
        self.local_dim = local_dim
        self.fragment_dim = fragment_dim

    def forward(self, local: torch.Tensor, fragment: torch.Tensor) -> torch.Tensor:
        if local.shape[-1] != self.local_dim or fragment.shape[-1] != self.fragment_dim:
            raise GeometryMismatchError(
                f"fusion expects widths ({self.local_dim}, {self.fragment_dim}), "
                f"got ({local.shape[-1]}, {fragment.shape[-1]})")
        if local.shape[:-1] != fragment.shape[:-1]:
            raise GeometryMismatchError(f"unaligned grids {tuple(local.shape)} vs {tuple(fragment.shape)}")
        x = torch.cat([fragment, local], dim=-1)
        return self.fc2(self.drop(self.act(self.fc1(x)))) + local


def fuse(local: torch.Tensor, fragment: torch.Tensor, mlp: FusionMLP) -> torch.Tensor:
    return mlp(local, fragment)


# ------------------------------------------------------------------- registry

@dataclass
class DualEncoder:
    name: str
    visual: nn.Module
    text: nn.Module
    tokenizer: object

    @property
    def embed_dim(self) -> int:
        return self.visual.embed_dim

    @property
    def image_size(self) -> int:
        return self.visual.image_size


@dataclass
class FragmentEncoder:
    name: str
    model: nn.Module
    mean: tuple | None = None
    std: tuple | None = None

    @property
    def out_dim(self) -> int:
        return self.model.out_dim


def stub_vocabulary() -> list[str]:
    from .dimensions import registry

    words = {"A", "X", "photo", "."}
    tok = WordTokenizer([])
    for spec in registry():
        for text in (spec.positive_desc, spec.negative_desc, spec.name):
            words.update(tok.words(text))
    return sorted(words)


def load_dual_encoder(name: str = "stub", dtype=torch.float32, **kwargs) -> DualEncoder:
    if name == "stub":
        tokenizer = WordTokenizer(stub_vocabulary(), context_length=kwargs.pop("context_length", 16))
        embed_dim = kwargs.pop("embed_dim", 32)
        visual = StubVisualTower(embed_dim=embed_dim, **kwargs)
        text = StubTextTower(len(tokenizer), tokenizer.context_length, embed_dim=embed_dim)
    elif name.startswith("openclip-"):
        arch = {"openclip-rn50": "RN50"}.get(name)
        if arch is None:
            raise BackboneError(f"unknown dual encoder {name!r}")
        try:
            import open_clip

            model = open_clip.create_model(arch, pretrained=kwargs.get("pretrained", "openai"))
        except Exception as exc:
            raise BackboneError(f"cannot load {name}: {exc}") from exc
        visual = OpenClipVisualTower(model.visual)
        text = OpenClipTextTower(model)
        tokenizer = OpenClipTokenizer(arch)
    else:
        raise BackboneError(f"unknown dual encoder {name!r}")
    visual, text = freeze(visual.to(dtype)), freeze(text.to(dtype))
    return DualEncoder(name, visual, text, tokenizer)


def load_fragment_encoder(name: str = "stub", dtype=torch.float32, **kwargs) -> FragmentEncoder:
    if name == "stub":
        return FragmentEncoder(name, freeze(StubFragmentEncoder(**kwargs).to(dtype)))
    if name == "swin3d-t":
        return FragmentEncoder(name, freeze(SwinFragmentEncoder(kwargs.get("checkpoint")).to(dtype)),
                               FRAGMENT_MEAN, FRAGMENT_STD)
    raise BackboneError(f"unknown fragment encoder {name!r}")


# --------------------------------------------------------------- entry points

@torch.no_grad()
def encode_frames(frames: np.ndarray, encoder: DualEncoder):
    """Frames (T, H, W, 3) uint8 -> (global (T, d), local (T, G, G, d), pre-pool (T, G, G, w))."""
    dtype = next(encoder.visual.parameters()).dtype
    x = to_tensor(frames, CLIP_MEAN, CLIP_STD, size=encoder.image_size, dtype=dtype)
    return encoder.visual(x)


@torch.no_grad()
def encode_fragments(view: FragmentView, encoder: FragmentEncoder, grid: int | None = None) -> torch.Tensor:
    """Fragment features on the grid ``grid`` (defaults to the fragment grid count)."""
    model = encoder.model
    dtype = next(model.parameters()).dtype
    if getattr(model, "patch_size", view.plan.patch_size) != view.plan.patch_size:
        raise GeometryMismatchError(
            f"fragment encoder expects {model.patch_size}px mini-patches, view has {view.plan.patch_size}")
    if encoder.mean is not None:
        x = to_tensor(view.frames, encoder.mean, encoder.std, dtype=dtype)
    else:
        x = torch.from_numpy(view.frames).permute(0, 3, 1, 2).to(dtype) / 255.0
    feats = model(x)
    grid = grid or view.plan.grid_count
    return align_grid(feats, view.plan.num_frames, grid)


def encode_text(ids: torch.Tensor, encoder: DualEncoder, token_embeddings: torch.Tensor | None = None):
    """Encode token ids; ``token_embeddings`` overrides the lookup (context substitution)."""
    if ids.numel() == 0 or (ids != 0).sum() == 0:
        raise DataError("empty token sequence")
    if ids.shape[-1] > encoder.text.context_length:
        raise DataError(f"token sequence longer than context length {encoder.text.context_length}")
    x = encoder.text.embed_tokens(ids) if token_embeddings is None else token_embeddings
    return encoder.text(x, ids)
