"""Deterministic synthetic bimodal dataset generator.

The "world" is a fixed vocabulary of visual concepts: each concept token id
maps to a blob-layout prototype through a dataset-independent seed stream, so
every dataset generated from this module shares the same token-to-appearance
semantics. A dataset picks a subset of concepts as its classes, renders
noisy examples of their prototypes, and pairs each image with a fixed
template caption ending in the class-name token.

Two knobs steer the regime:

* ``visual_variance`` jitters blob geometry/intensity and adds pixel noise,
  raising intra-class visual spread.
* ``textual_separation`` controls how many adjacent class pairs share a
  class-name token: at 1.0 every class has a distinct name, at 0.0 every
  adjacent pair is named identically (maximal textual confusion).

Generation is a pure function of the spec: no global random state is read
or written, and identical specs produce byte-identical datasets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

PAD_TOKEN = 0
TEMPLATE_TOKENS = (1, 2, 3, 4)  # fixed "a photo of a" analogue
FIRST_CONCEPT_TOKEN = 1 + len(TEMPLATE_TOKENS)

_WORLD_TAG = 0xB41F  # seeds the concept-token -> prototype stream
SHIFT_NAMES = ("brightness", "noise", "style_permutation")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 10
    train_shots: int = 16
    test_per_class: int = 50
    visual_variance: float = 0.35
    textual_separation: float = 0.5
    image_side: int = 16
    vocab_size: int = 32
    seed: int = 0
    caption_len: int = 8

    def validate(self) -> None:
        if self.n_classes < 4:
            raise ValueError(f"n_classes must be >= 4 for base/new splits, got {self.n_classes}")
        if self.vocab_size < FIRST_CONCEPT_TOKEN + self.n_classes:
            raise ValueError(
                f"vocab_size {self.vocab_size} too small: need {FIRST_CONCEPT_TOKEN} reserved "
                f"tokens plus {self.n_classes} concept tokens"
            )
        if self.visual_variance < 0:
            raise ValueError(f"visual_variance must be >= 0, got {self.visual_variance}")
        if not 0.0 <= self.textual_separation <= 1.0:
            raise ValueError(
                f"textual_separation must be in [0, 1], got {self.textual_separation}"
            )
        if self.train_shots < 1 or self.test_per_class < 1:
            raise ValueError("train_shots and test_per_class must be >= 1")
        if self.caption_len < len(TEMPLATE_TOKENS) + 2:
            raise ValueError(f"caption_len must be >= {len(TEMPLATE_TOKENS) + 2}")


@dataclass
class LabeledExample:
    image: np.ndarray  # [side, side] float64 in [0, 1]
    caption: np.ndarray  # [caption_len] int token ids
    class_id: int


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    class_concepts: list[int]  # concept token per class
    class_name_tokens: list[int]  # caption name token per class (delta_t sharing)
    class_captions: np.ndarray  # [n_classes, caption_len]
    train: list[LabeledExample]
    test: list[LabeledExample]
    pretrain_pool: list[LabeledExample]

    @property
    def n_classes(self) -> int:
        return self.spec.n_classes


# -- world prototypes ----------------------------------------------------------


def concept_prototype(token: int, image_side: int) -> list[dict]:
    """Blob layout for a concept token; depends on the token alone."""
    rng = np.random.default_rng(np.random.SeedSequence([_WORLD_TAG, token, image_side]))
    blobs = []
    for _ in range(3):
        blobs.append(
            {
                "cy": rng.uniform(0.2, 0.8) * image_side,
                "cx": rng.uniform(0.2, 0.8) * image_side,
                "radius": rng.uniform(0.10, 0.22) * image_side,
                "amp": rng.uniform(0.55, 1.0),
            }
        )
    return blobs


def _render(blobs: list[dict], side: int, rng: np.random.Generator, sigma_v: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    img = np.zeros((side, side))
    for blob in blobs:
        cy = blob["cy"] + rng.normal(0.0, sigma_v * 0.20 * side)
        cx = blob["cx"] + rng.normal(0.0, sigma_v * 0.20 * side)
        r = blob["radius"] * (1.0 + rng.normal(0.0, sigma_v * 0.5))
        r = max(r, 0.02 * side)
        amp = blob["amp"] * (1.0 + rng.normal(0.0, sigma_v * 0.5))
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * r * r))
    img += rng.normal(0.0, sigma_v * 0.15, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _caption(name_token: int, caption_len: int) -> np.ndarray:
    cap = np.full(caption_len, PAD_TOKEN, dtype=np.int64)
    cap[: len(TEMPLATE_TOKENS)] = TEMPLATE_TOKENS
    cap[len(TEMPLATE_TOKENS)] = name_token  # class-name position: last non-pad token
    return cap


# -- dataset generation ------------------------------------------------------------


def generate(spec: SyntheticSpec, pretrain_per_concept: int = 24) -> SyntheticDataset:
    """Materialize a dataset. Pure in (spec, pretrain_per_concept)."""
    spec.validate()
    ss = np.random.SeedSequence([0x5D, spec.seed])
    sel_ss, pre_ss, train_ss, test_ss = ss.spawn(4)

    all_concepts = list(range(FIRST_CONCEPT_TOKEN, spec.vocab_size))
    sel_rng = np.random.default_rng(sel_ss)
    class_concepts = [int(t) for t in sel_rng.choice(all_concepts, size=spec.n_classes, replace=False)]

    # delta_t: the first k adjacent pairs share the lower class's name token
    name_tokens = list(class_concepts)
    n_pairs = spec.n_classes // 2
    shared = int(round((1.0 - spec.textual_separation) * n_pairs))
    for k in range(shared):
        name_tokens[2 * k + 1] = name_tokens[2 * k]

    captions = np.stack([_caption(t, spec.caption_len) for t in name_tokens])

    def draw(rng: np.random.Generator, class_id: int, count: int) -> list[LabeledExample]:
        proto = concept_prototype(class_concepts[class_id], spec.image_side)
        out = []
        for _ in range(count):
            img = _render(proto, spec.image_side, rng, spec.visual_variance)
            out.append(LabeledExample(image=img, caption=captions[class_id].copy(), class_id=class_id))
        return out

    train_rng = np.random.default_rng(train_ss)
    test_rng = np.random.default_rng(test_ss)
    train: list[LabeledExample] = []
    test: list[LabeledExample] = []
    for c in range(spec.n_classes):
        train += draw(train_rng, c, spec.train_shots)
        test += draw(test_rng, c, spec.test_per_class)

    # broad pretraining pool: every concept in the vocabulary with its canonical name
    pre_rng = np.random.default_rng(pre_ss)
    pool: list[LabeledExample] = []
    for token in all_concepts:
        proto = concept_prototype(token, spec.image_side)
        cap = _caption(token, spec.caption_len)
        for _ in range(pretrain_per_concept):
            img = _render(proto, spec.image_side, pre_rng, spec.visual_variance)
            pool.append(LabeledExample(image=img, caption=cap.copy(), class_id=-1))

    return SyntheticDataset(
        spec=spec,
        class_concepts=class_concepts,
        class_name_tokens=name_tokens,
        class_captions=captions,
        train=train,
        test=test,
        pretrain_pool=pool,
    )


def split_base_new(dataset: SyntheticDataset, fraction: float = 0.5) -> tuple[list[int], list[int]]:
    """Deterministic class partition into (base, new) ids."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n = dataset.n_classes
    rng = np.random.default_rng(np.random.SeedSequence([0x9A27, dataset.spec.seed]))
    order = list(rng.permutation(n))
    n_base = int(round(n * fraction))
    if n_base == 0 or n_base == n:
        raise ValueError(f"fraction {fraction} leaves one side of the split empty for N={n}")
    base = sorted(int(c) for c in order[:n_base])
    new = sorted(int(c) for c in order[n_base:])
    return base, new


# -- distribution shifts -------------------------------------------------------------


def make_shifted_variant(dataset: SyntheticDataset, shift: str, magnitude: float) -> SyntheticDataset:
    """Label-preserving pixel-statistics shift; magnitude 0 is the identity."""
    if magnitude < 0:
        raise ValueError(f"magnitude must be >= 0, got {magnitude}")
    if shift not in SHIFT_NAMES:
        raise ValueError(f"unknown shift '{shift}'; expected one of {SHIFT_NAMES}")

    rng = np.random.default_rng(np.random.SeedSequence([0xD15, dataset.spec.seed, SHIFT_NAMES.index(shift)]))
    lut = rng.permutation(256) / 255.0  # style remap table, fixed per dataset+shift

    def apply(img: np.ndarray) -> np.ndarray:
        if shift == "brightness":
            return np.clip(img + magnitude, 0.0, 1.0)
        if shift == "noise":
            noise = rng.normal(0.0, magnitude, size=img.shape) if magnitude > 0 else 0.0
            return np.clip(img + noise, 0.0, 1.0)
        # style_permutation: blend toward a permuted intensity palette
        idx = np.minimum((img * 255.0).astype(np.int64), 255)
        return np.clip((1.0 - magnitude) * img + magnitude * lut[idx], 0.0, 1.0)

    def shift_examples(examples: list[LabeledExample]) -> list[LabeledExample]:
        return [
            LabeledExample(image=apply(ex.image), caption=ex.caption.copy(), class_id=ex.class_id)
            for ex in examples
        ]

    return SyntheticDataset(
        spec=dataset.spec,
        class_concepts=list(dataset.class_concepts),
        class_name_tokens=list(dataset.class_name_tokens),
        class_captions=dataset.class_captions.copy(),
        train=shift_examples(dataset.train),
        test=shift_examples(dataset.test),
        pretrain_pool=shift_examples(dataset.pretrain_pool),
    )


# -- export and hashing ----------------------------------------------------------------


def example_digest(ex: LabeledExample) -> str:
    h = hashlib.sha256()
    h.update(ex.image.tobytes())
    h.update(ex.caption.astype(np.int64).tobytes())
    h.update(ex.class_id.to_bytes(8, "little", signed=True))
    return h.hexdigest()


def export_records(examples: list[LabeledExample], path) -> None:
    """One JSON object per line, field order: class_id, caption, image (row-major)."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            record = {
                "class_id": int(ex.class_id),
                "caption": [int(t) for t in ex.caption],
                "image": [float(v) for v in ex.image.reshape(-1)],
            }
            fh.write(json.dumps(record) + "\n")


def load_records(path, image_side: int) -> list[LabeledExample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            out.append(
                LabeledExample(
                    image=np.array(rec["image"], dtype=np.float64).reshape(image_side, image_side),
                    caption=np.array(rec["caption"], dtype=np.int64),
                    class_id=int(rec["class_id"]),
                )
            )
    return out


def permuted_variant_spec(spec: SyntheticSpec, seed_offset: int) -> SyntheticSpec:
    """A transfer target: same world and knobs, different class draw/noise."""
    return replace(spec, seed=spec.seed + 1000 + seed_offset)
