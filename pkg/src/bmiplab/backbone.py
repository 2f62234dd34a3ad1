"""Toy-scale dual encoder: text tower, vision tower, shared embedding space.

The two towers share their depth so prompt depths can align across
modalities, but deliberately differ in width (their projection heads into
the shared space are non-square and cannot silently degenerate to the
identity). Classification follows the cosine-softmax rule with a
log-parameterized temperature.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .data import PAD_TOKEN, LabeledExample
from .nn import LayerNorm, Linear, TransformerBlock, normal_param
from .optim import Sgd
from .tensor import Tensor, concat, embedding, no_grad, tile_leading

TAU_MIN, TAU_MAX = 0.01, 1.0


@dataclass(frozen=True)
class TextEncoderConfig:
    depth: int = 6
    width: int = 32
    heads: int = 4
    max_len: int = 8
    vocab_size: int = 32


@dataclass(frozen=True)
class VisionEncoderConfig:
    depth: int = 6
    width: int = 48
    heads: int = 4
    image_side: int = 16
    patch_size: int = 4

    @property
    def n_patches(self) -> int:
        return (self.image_side // self.patch_size) ** 2


@dataclass(frozen=True)
class ClipConfig:
    text: TextEncoderConfig = TextEncoderConfig()
    vision: VisionEncoderConfig = VisionEncoderConfig()
    shared_dim: int = 32

    def validate(self) -> None:
        if self.text.depth != self.vision.depth:
            raise ValueError(
                f"encoders must share depth: text {self.text.depth} != vision {self.vision.depth}"
            )
        if self.text.width % self.text.heads != 0:
            raise ValueError(f"text width {self.text.width} not divisible by heads {self.text.heads}")
        if self.vision.width % self.vision.heads != 0:
            raise ValueError(
                f"vision width {self.vision.width} not divisible by heads {self.vision.heads}"
            )
        if self.vision.image_side % self.vision.patch_size != 0:
            raise ValueError(
                f"image side {self.vision.image_side} not divisible by patch {self.vision.patch_size}"
            )

    @property
    def depth(self) -> int:
        return self.text.depth


def extract_patches(images: np.ndarray, patch_size: int) -> np.ndarray:
    """[B, s, s] -> [B, m, patch_size**2], row-major over patch grid."""
    if images.ndim == 2:
        images = images[None]
    b, s, s2 = images.shape
    if s != s2 or s % patch_size != 0:
        raise ValueError(f"image shape {images.shape[1:]} incompatible with patch size {patch_size}")
    g = s // patch_size
    patches = images.reshape(b, g, patch_size, g, patch_size)
    patches = patches.transpose(0, 1, 3, 2, 4).reshape(b, g * g, patch_size * patch_size)
    return patches


class TextTower:
    def __init__(self, cfg: TextEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.token_emb = normal_param(rng, (cfg.vocab_size, cfg.width))
        self.pos_emb = normal_param(rng, (cfg.max_len, cfg.width))
        self.blocks = [TransformerBlock(rng, cfg.width, cfg.heads) for _ in range(cfg.depth)]
        self.ln_final = LayerNorm(cfg.width)

    def embed(self, captions: np.ndarray) -> Tensor:
        """[N, x] token ids -> [N, x, width] with positions added."""
        captions = np.asarray(captions)
        if captions.ndim == 1:
            captions = captions[None]
        if captions.shape[1] != self.cfg.max_len:
            raise ValueError(
                f"caption length {captions.shape[1]} != configured max_len {self.cfg.max_len}"
            )
        return embedding(self.token_emb, captions) + self.pos_emb

    def named_params(self, prefix: str):
        out = [(f"{prefix}.token_emb", self.token_emb), (f"{prefix}.pos_emb", self.pos_emb)]
        for i, blk in enumerate(self.blocks):
            out += blk.named_params(f"{prefix}.block{i}")
        out += self.ln_final.named_params(f"{prefix}.ln_final")
        return out


class VisionTower:
    def __init__(self, cfg: VisionEncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_proj = Linear(rng, cfg.patch_size * cfg.patch_size, cfg.width)
        self.cls_seed = normal_param(rng, (1, cfg.width))
        self.pos_emb = normal_param(rng, (1 + cfg.n_patches, cfg.width))
        self.blocks = [TransformerBlock(rng, cfg.width, cfg.heads) for _ in range(cfg.depth)]
        self.ln_post = LayerNorm(cfg.width)

    def embed(self, images: np.ndarray) -> Tensor:
        """[B, s, s] pixels -> [B, 1 + m, width]: CLS prepended, positions added."""
        patches = extract_patches(np.asarray(images, dtype=np.float64), self.cfg.patch_size)
        tokens = self.patch_proj(Tensor(patches))  # [B, m, width]
        cls = tile_leading(self.cls_seed, tokens.shape[0])  # [B, 1, width]
        return concat([cls, tokens], axis=1) + self.pos_emb

    def named_params(self, prefix: str):
        out = self.patch_proj.named_params(f"{prefix}.patch_proj")
        out += [(f"{prefix}.cls", self.cls_seed), (f"{prefix}.pos_emb", self.pos_emb)]
        for i, blk in enumerate(self.blocks):
            out += blk.named_params(f"{prefix}.block{i}")
        out += self.ln_post.named_params(f"{prefix}.ln_post")
        return out


class ClipBackbone:
    """Dual encoder with projection heads and temperature."""

    def __init__(self, cfg: ClipConfig, seed: int = 0, tau_init: float = 0.07):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([0xC11F, seed]))
        self.text = TextTower(cfg.text, rng)
        self.vision = VisionTower(cfg.vision, rng)
        self.text_proj = normal_param(rng, (cfg.text.width, cfg.shared_dim))
        self.image_proj = normal_param(rng, (cfg.vision.width, cfg.shared_dim))
        self.log_tau = Tensor(np.array(math.log(tau_init)), requires_grad=True)

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau.data))

    # -- plain (promptless) forward paths ------------------------------------

    def encode_text(self, captions: np.ndarray) -> Tensor:
        """Class features: final representation at the class-name position,
        projected to the shared space. The class-name position is the last
        non-pad token of each caption."""
        captions = np.asarray(captions)
        if captions.ndim == 1:
            captions = captions[None]
        x = self.text.embed(captions)
        for blk in self.text.blocks:
            x, _ = blk(x)
        return self.text_features_from_tokens(x, captions)

    def text_features_from_tokens(self, tokens: Tensor, captions: np.ndarray) -> Tensor:
        """Shared extraction tail: ln -> class-name row -> TextProj."""
        normed = self.text.ln_final(tokens)
        offset = tokens.shape[1] - captions.shape[1]  # caption rows sit at the tail
        positions = offset + last_nonpad_positions(captions)
        rows = normed[np.arange(captions.shape[0]), positions]
        return rows @ self.text_proj

    def encode_image(self, images: np.ndarray) -> Tensor:
        x = self.vision.embed(images)
        for blk in self.vision.blocks:
            x, _ = blk(x)
        return self.image_features_from_tokens(x)

    def image_features_from_tokens(self, tokens: Tensor) -> Tensor:
        """Shared extraction tail: ln -> CLS row -> ImageProj."""
        cls = self.vision.ln_post(tokens[:, 0, :])
        return cls @ self.image_proj

    # -- parameters -----------------------------------------------------------

    def named_params(self):
        out = self.text.named_params("backbone.text")
        out += self.vision.named_params("backbone.vision")
        out.append(("backbone.text_proj", self.text_proj))
        out.append(("backbone.image_proj", self.image_proj))
        out.append(("backbone.log_tau", self.log_tau))
        return out

    def freeze(self) -> None:
        for _, p in self.named_params():
            p.requires_grad = False

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, p in sorted(self.named_params()):
            h.update(name.encode())
            h.update(p.data.tobytes())
        return h.hexdigest()


def last_nonpad_positions(captions: np.ndarray) -> np.ndarray:
    """Index of the last non-pad token per caption (the class-name slot)."""
    nonpad = captions != PAD_TOKEN
    if not nonpad.any(axis=1).all():
        raise ValueError("caption with no non-pad token has no class-name position")
    return captions.shape[1] - 1 - np.argmax(nonpad[:, ::-1], axis=1)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between rows of ``a`` [n, d] and ``b`` [m, d]."""
    for t, side in ((a, "left"), (b, "right")):
        norms = np.linalg.norm(t.data, axis=-1)
        if np.any(norms == 0.0):
            raise ValueError(f"cosine: zero-norm feature vector on the {side} side")
    an = a * (a * a).sum(axis=-1, keepdims=True).pow(-0.5)
    bn = b * (b * b).sum(axis=-1, keepdims=True).pow(-0.5)
    return an @ bn.transpose(1, 0)


def classify(image_features: Tensor, class_features: Tensor, tau: float) -> Tensor:
    """Class probabilities: softmax over cosine similarities scaled by 1/tau."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = cosine_matrix(image_features, class_features) * (1.0 / tau)
    return logits.softmax(axis=-1)


# -- contrastive pretraining ----------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 400
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    pretrain_per_concept: int = 24


def contrastive_loss(backbone: ClipBackbone, images: np.ndarray, captions: np.ndarray) -> Tensor:
    """Symmetric cross-entropy over the in-batch cosine similarity matrix."""
    n = images.shape[0]
    if n < 2:
        raise ValueError("contrastive batch must contain at least 2 pairs")
    img_f = backbone.encode_image(images)
    txt_f = backbone.encode_text(captions)
    inv_tau = (-backbone.log_tau).exp()
    logits = cosine_matrix(img_f, txt_f) * inv_tau
    targets = np.arange(n)
    row_nll = -logits.log_softmax(axis=-1)[targets, targets].mean()
    col_nll = -logits.transpose(1, 0).log_softmax(axis=-1)[targets, targets].mean()
    return (row_nll + col_nll) * 0.5


def pretrain(backbone: ClipBackbone, pool: list[LabeledExample], cfg: PretrainConfig) -> list[float]:
    """Align the two towers on (image, caption) pairs; returns per-step losses.

    Deterministic in (backbone seed, pool, cfg). The backbone is frozen by
    the caller afterwards; this routine trains every backbone parameter
    including the temperature (clamped to a sane range each step).
    """
    if cfg.batch_size < 2:
        raise ValueError("contrastive pretraining needs batch_size >= 2")
    params = backbone.named_params()
    opt = Sgd(params, lr=cfg.lr, momentum=cfg.momentum)
    rng = np.random.default_rng(np.random.SeedSequence([0x93E, cfg.seed]))
    images = np.stack([ex.image for ex in pool])
    captions = np.stack([ex.caption for ex in pool])
    losses = []
    for _ in range(cfg.steps):
        idx = rng.choice(len(pool), size=min(cfg.batch_size, len(pool)), replace=False)
        loss = contrastive_loss(backbone, images[idx], captions[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        # keep the temperature in a numerically sane band
        backbone.log_tau.data = np.clip(
            backbone.log_tau.data, math.log(TAU_MIN), math.log(TAU_MAX)
        )
        losses.append(float(loss.data))
    return losses


def zero_shot_accuracy(backbone: ClipBackbone, examples: list[LabeledExample],
                       class_captions: np.ndarray, class_ids: list[int]) -> float:
    """Top-1 accuracy of the frozen backbone over the given label space."""
    with no_grad():
        feats = backbone.encode_image(np.stack([ex.image for ex in examples]))
        z = backbone.encode_text(class_captions[class_ids])
        probs = classify(feats, z, backbone.tau)
    pred = np.argmax(probs.data, axis=1)
    truth = np.array([class_ids.index(ex.class_id) for ex in examples])
    return float((pred == truth).mean())
