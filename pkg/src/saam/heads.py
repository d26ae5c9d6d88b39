"""Prediction heads mapping sentence feature matrices to document outputs.

Three attribution heads share one structure: a rating score layer (class
scores or a scalar score per sentence), a softmax attribution layer that
distributes each sentence's score over the aspects plus one or two extra
slots, and an aggregation of the scaled scores into per-aspect document
predictions. Variants:

* C1 - classification; the overall distribution comes from a dedicated
  fully connected layer over the flattened feature matrix; attribution has
  |A|+1 slots, the extra one letting the model discard a sentence.
* C2 - classification; no dedicated overall layer. Attribution has |A|+2
  slots: slot |A| scales scores toward the overall prediction, slot |A|+1
  is the discard slot.
* R - regression; scalar scores. The overall score is a sentence-count
  normalized linear form over the whole matrix; each aspect score is the
  attribution-weighted average of the sentence scores (guarded by epsilon
  against an aspect receiving no attribution mass).

``flat-c``/``flat-r`` are ablation baselines with one independent linear
head per target over the concatenated sentence features and no attribution
mechanism.

Hard mask mode (default) drops padded sentence slots from every sum and
from the sentence count; soft mode treats all slots as real so the model
must learn to discard padding by itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoders import SentenceEmbeddingMatrix, xavier_uniform

VARIANTS = ("C1", "C2", "R", "flat-c", "flat-r")
CLASSIFICATION_VARIANTS = ("C1", "C2", "flat-c")
REGRESSION_VARIANTS = ("R", "flat-r")

NONE_SLOT_LABEL = "none"
OVERALL_SLOT_LABEL = "overall"

# An aspect whose total attribution mass falls below this is flagged: its
# guarded weighted average is formally defined but carries no evidence.
LOW_ATTRIBUTION_MASS = 1e-3


@dataclass
class HeadConfig:
    variant: str
    n_aspects: int
    feature_dim: int
    s_max: int
    n_classes: int = 5
    epsilon: float = 1e-8
    attribution_mask_mode: str = "hard"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; known: {VARIANTS}")
        if self.n_aspects < 1:
            raise ValueError("n_aspects must be >= 1")
        if self.is_classification and self.n_classes < 2:
            raise ValueError("classification needs n_classes >= 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.attribution_mask_mode not in ("hard", "soft"):
            raise ValueError(f"unknown attribution_mask_mode {self.attribution_mask_mode!r}")

    @property
    def is_classification(self) -> bool:
        return self.variant in CLASSIFICATION_VARIANTS

    @property
    def n_attribution_slots(self) -> int:
        if self.variant == "C2":
            return self.n_aspects + 2
        return self.n_aspects + 1

    def to_dict(self) -> dict:
        return {"variant": self.variant, "n_aspects": self.n_aspects,
                "feature_dim": self.feature_dim, "s_max": self.s_max,
                "n_classes": self.n_classes, "epsilon": self.epsilon,
                "attribution_mask_mode": self.attribution_mask_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "HeadConfig":
        return cls(**d)


@dataclass
class PredictionSet:
    """Document-level outputs: overall plus one entry per real aspect.

    Classification entries are rank-1 distributions over the rating
    classes; regression entries are scalars. All are graph tensors so a
    loss can backpropagate through them.
    """
    kind: str
    overall: Tensor
    per_aspect: list
    low_attribution_aspects: list = field(default_factory=list)

    def overall_value(self):
        return self.overall.data.copy() if self.kind == "classification" else float(self.overall.data)

    def aspect_values(self):
        if self.kind == "classification":
            return [t.data.copy() for t in self.per_aspect]
        return [float(t.data) for t in self.per_aspect]


@dataclass
class AttributionResult:
    """Detached per-sentence internals: who said what about which aspect.

    ``scaled_scores[i][j]`` is exactly ``aspect_dist[i][j] * rating_scores[i]``.
    """
    aspect_dist: np.ndarray    # [n_real, slots]
    rating_scores: np.ndarray  # [n_real, |C|] or [n_real]
    scaled_scores: np.ndarray  # [n_real, slots, |C|] or [n_real, slots]
    variant: str

    @property
    def n_sentences(self) -> int:
        return self.aspect_dist.shape[0]


def init_head_params(config: HeadConfig, rng: np.random.Generator) -> dict:
    d = config.feature_dim
    c = config.n_classes
    params = {}
    if config.variant in ("C1", "C2", "R"):
        score_out = c if config.is_classification else 1
        k = config.n_attribution_slots
        params["head.w_score"] = ad.parameter(xavier_uniform(rng, d, score_out, (d, score_out)))
        params["head.b_score"] = ad.parameter(np.zeros(score_out))
        params["head.w_attr"] = ad.parameter(xavier_uniform(rng, d, k, (d, k)))
        params["head.b_attr"] = ad.parameter(np.zeros(k))
    if config.variant == "C1":
        flat = config.s_max * d
        params["head.w_overall"] = ad.parameter(xavier_uniform(rng, flat, c, (flat, c)))
        params["head.b_overall"] = ad.parameter(np.zeros((1, c)))
    elif config.variant == "R":
        params["head.w_overall"] = ad.parameter(xavier_uniform(rng, config.s_max, d, (config.s_max, d)))
        params["head.b_overall"] = ad.parameter(np.zeros(()))
    elif config.variant == "flat-c":
        flat = config.s_max * d
        for t in range(config.n_aspects + 1):  # slot 0 = overall
            params[f"head.w_flat{t}"] = ad.parameter(xavier_uniform(rng, flat, c, (flat, c)))
            params[f"head.b_flat{t}"] = ad.parameter(np.zeros((1, c)))
    elif config.variant == "flat-r":
        for t in range(config.n_aspects + 1):
            params[f"head.w_flat{t}"] = ad.parameter(
                xavier_uniform(rng, config.s_max, d, (config.s_max, d)))
            params[f"head.b_flat{t}"] = ad.parameter(np.zeros(()))
    return params


def _real_rows(u: SentenceEmbeddingMatrix, config: HeadConfig):
    """Select the sentence rows that take part in the head computation.

    Hard mode keeps the real prefix only, so appended pad slots never enter
    the graph at all. Soft mode treats all s_max slots (padding included)
    as real sentences the attribution layer must learn to discard.
    """
    if u.values.shape[0] > config.s_max:
        raise ad.DimensionError(
            f"{u.values.shape[0]} sentence slots exceed configured s_max {config.s_max}")
    if u.values.data.ndim != 2 or u.values.shape[1] != config.feature_dim:
        raise ad.DimensionError(
            f"feature matrix shape {u.values.shape} does not match head config "
            f"(d={config.feature_dim})")
    mask = list(u.sentence_mask)
    if not any(mask):
        raise ValueError("document has zero real sentences")
    if config.attribution_mask_mode == "soft":
        return ad.pad_rows(u.values, config.s_max), config.s_max
    n = 0
    for m in mask:
        if not m:
            break
        n += 1
    if any(mask[n:]):
        raise ValueError("sentence mask must be a true-prefix (real sentences first)")
    return ad.slice_rows(u.values, 0, n), n


def _bias_rows(n: int, bias: Tensor) -> Tensor:
    return ad.outer(ad.constant(np.ones(n)), bias)


def _score_and_attribution(u_real: Tensor, n: int, params: dict):
    score = ad.add(ad.matmul(u_real, params["head.w_score"]),
                   _bias_rows(n, params["head.b_score"]))
    logits = ad.add(ad.matmul(u_real, params["head.w_attr"]),
                    _bias_rows(n, params["head.b_attr"]))
    aspect = ad.softmax_lastdim(logits)
    return score, aspect


def _attribution_result(aspect: Tensor, score: Tensor, config: HeadConfig) -> AttributionResult:
    a = aspect.data.copy()
    if config.is_classification:
        s = score.data.copy()
        scaled = a[:, :, None] * s[:, None, :]
    else:
        s = score.data.reshape(-1).copy()
        scaled = a * s[:, None]
    return AttributionResult(a, s, scaled, config.variant)


def head_c1_forward(u: SentenceEmbeddingMatrix, params: dict, config: HeadConfig):
    u_real, n = _real_rows(u, config)
    score, aspect = _score_and_attribution(u_real, n, params)
    sums = ad.matmul(ad.transpose(aspect), score)        # [slots x |C|], slot |A| discarded
    dists = ad.softmax_lastdim(sums)
    per_aspect = [ad.reshape(ad.slice_rows(dists, j, j + 1), (config.n_classes,))
                  for j in range(config.n_aspects)]
    flat = ad.reshape(ad.pad_rows(u_real, config.s_max), (1, config.s_max * config.feature_dim))
    overall_logits = ad.add(ad.matmul(flat, params["head.w_overall"]), params["head.b_overall"])
    overall = ad.reshape(ad.softmax_lastdim(overall_logits), (config.n_classes,))
    preds = PredictionSet("classification", overall, per_aspect)
    return preds, _attribution_result(aspect, score, config)


def head_c2_forward(u: SentenceEmbeddingMatrix, params: dict, config: HeadConfig):
    u_real, n = _real_rows(u, config)
    score, aspect = _score_and_attribution(u_real, n, params)
    sums = ad.matmul(ad.transpose(aspect), score)        # [slots x |C|]
    dists = ad.softmax_lastdim(sums)
    per_aspect = [ad.reshape(ad.slice_rows(dists, j, j + 1), (config.n_classes,))
                  for j in range(config.n_aspects)]
    # slot |A| aggregates toward the overall rating; slot |A|+1 is discarded
    overall = ad.reshape(ad.slice_rows(dists, config.n_aspects, config.n_aspects + 1),
                         (config.n_classes,))
    preds = PredictionSet("classification", overall, per_aspect)
    return preds, _attribution_result(aspect, score, config)


def head_r_forward(u: SentenceEmbeddingMatrix, params: dict, config: HeadConfig):
    u_real, n = _real_rows(u, config)
    score, aspect = _score_and_attribution(u_real, n, params)
    numer = ad.reshape(ad.matmul(ad.transpose(aspect), score), (config.n_attribution_slots,))
    mass = ad.reduce_sum(aspect, axis=0)
    l_all = ad.div(numer, ad.add(mass, config.epsilon))
    per_aspect = [ad.reshape(ad.slice_rows(l_all, j, j + 1), ())
                  for j in range(config.n_aspects)]
    u_full = ad.pad_rows(u_real, config.s_max)
    inner = ad.add(ad.reduce_sum(ad.mul(params["head.w_overall"], u_full)),
                   params["head.b_overall"])
    overall = ad.scale(inner, 1.0 / n)
    low = [j for j in range(config.n_aspects)
           if float(mass.data[j]) < LOW_ATTRIBUTION_MASS]
    preds = PredictionSet("regression", overall, per_aspect, low_attribution_aspects=low)
    return preds, _attribution_result(aspect, score, config)


def head_flat_forward(u: SentenceEmbeddingMatrix, params: dict, config: HeadConfig):
    u_real, n = _real_rows(u, config)
    u_full = ad.pad_rows(u_real, config.s_max)
    outputs = []
    if config.variant == "flat-c":
        flat = ad.reshape(u_full, (1, config.s_max * config.feature_dim))
        for t in range(config.n_aspects + 1):
            logits = ad.add(ad.matmul(flat, params[f"head.w_flat{t}"]), params[f"head.b_flat{t}"])
            outputs.append(ad.reshape(ad.softmax_lastdim(logits), (config.n_classes,)))
        preds = PredictionSet("classification", outputs[0], outputs[1:])
    else:
        for t in range(config.n_aspects + 1):
            inner = ad.add(ad.reduce_sum(ad.mul(params[f"head.w_flat{t}"], u_full)),
                           params[f"head.b_flat{t}"])
            outputs.append(ad.scale(inner, 1.0 / n))
        preds = PredictionSet("regression", outputs[0], outputs[1:])
    return preds, None


_FORWARD = {"C1": head_c1_forward, "C2": head_c2_forward, "R": head_r_forward,
            "flat-c": head_flat_forward, "flat-r": head_flat_forward}


def head_forward(u: SentenceEmbeddingMatrix, params: dict, config: HeadConfig):
    return _FORWARD[config.variant](u, params, config)


def extract_attribution(result: AttributionResult, aspect_names) -> list:
    """Dominant-slot label and its probability for every real sentence.

    The slot after the real aspects maps to "none" (C1/R) or "overall"
    (C2, whose final slot is then "none"). Ties go to the lowest index.
    """
    n_aspects = len(aspect_names)
    labels = list(aspect_names)
    if result.variant == "C2":
        labels += [OVERALL_SLOT_LABEL, NONE_SLOT_LABEL]
    else:
        labels += [NONE_SLOT_LABEL]
    if result.aspect_dist.shape[1] != len(labels):
        raise ad.DimensionError(
            f"attribution has {result.aspect_dist.shape[1]} slots but {n_aspects} aspects "
            f"imply {len(labels)} for variant {result.variant}")
    out = []
    for row in result.aspect_dist:
        idx = int(np.argmax(row))
        out.append((labels[idx], float(row[idx])))
    return out


def sentence_scalar_scores(result: AttributionResult, n_classes: int | None = None) -> np.ndarray:
    """Scalar sentiment per sentence: the raw score (regression) or the
    expected rating value under softmax(score) (classification)."""
    if result.rating_scores.ndim == 1:
        return result.rating_scores.copy()
    logits = result.rating_scores
    shifted = logits - logits.max(axis=-1, keepdims=True)
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=-1, keepdims=True)
    classes = np.arange(1, logits.shape[1] + 1, dtype=np.float64)
    return probs @ classes
