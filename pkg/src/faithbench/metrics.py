"""Deletion / Insertion traces, AUC statistics, 1-NN OOD scores and logit energy."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from faithbench.attributions import Explanation
from faithbench.baselines import BaselineContext, chain
from faithbench.models import Model

SCORE_MODES = ("softmax", "logit")
TRACE_COLUMNS = ("step", "fraction", "score", "logit_energy", "ood_raw", "ood_normalized")


@dataclass(frozen=True)
class MetricConfig:
    score_mode: str = "softmax"
    steps: int | None = 100  # None: one step per feature
    record_ood: bool = True
    record_energy: bool = True

    def __post_init__(self):
        if self.score_mode not in SCORE_MODES:
            raise ValueError(f"score_mode must be one of {SCORE_MODES}")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")

    def resolve_steps(self, d: int) -> int:
        k = d if self.steps is None else min(self.steps, d)
        return k


@dataclass(frozen=True)
class MetricTrace:
    metric: str  # "deletion" | "insertion"
    fractions: np.ndarray
    scores: np.ndarray
    logit_energy: np.ndarray | None = None
    ood_raw: np.ndarray | None = None
    ood_normalized: np.ndarray | None = None

    @property
    def auc(self) -> float:
        return auc(self.fractions, self.scores)

    @property
    def step_sum(self) -> float:
        """Sum of the scores after step 0 (the discrete step-sum form of the metric)."""
        return float(np.sum(self.scores[1:]))

    def rows(self):
        n = len(self.fractions)
        empty = [math.nan] * n
        cols = (
            range(n),
            self.fractions,
            self.scores,
            self.logit_energy if self.logit_energy is not None else empty,
            self.ood_raw if self.ood_raw is not None else empty,
            self.ood_normalized if self.ood_normalized is not None else empty,
        )
        return [
            (int(s), float(f), float(v), float(e), float(o), float(on)) for s, f, v, e, o, on in zip(*cols)
        ]


def write_trace_csv(trace: MetricTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace.rows():
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])


# ---------------------------------------------------------------------------
# OOD index


@dataclass(frozen=True)
class FeatureIndex:
    """Penultimate training features plus the median train-to-train 1-NN distance."""

    features: np.ndarray
    reference_scale: float
    sq_norms: np.ndarray

    @classmethod
    def from_features(cls, features, reference_scale: float | None = None) -> "FeatureIndex":
        feats = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ValueError("feature index needs a nonempty 2-D feature matrix")
        norms = np.einsum("ij,ij->i", feats, feats)
        if reference_scale is None:
            reference_scale = _median_self_nn(feats, norms)
        return cls(feats, float(reference_scale), norms)


def build_feature_index(model, train_images, batch: int = 1000) -> FeatureIndex:
    x = np.asarray(train_images, dtype=np.float64).reshape(len(train_images), -1)
    feats = np.concatenate([model.features(x[i : i + batch]) for i in range(0, len(x), batch)])
    return FeatureIndex.from_features(feats)


def _candidate_distances(feats, norms, queries):
    q = np.asarray(queries, dtype=np.float64)
    qn = np.einsum("ij,ij->i", q, q)
    approx = qn[:, None] + norms[None, :] - 2.0 * (q @ feats.T)
    best = approx.min(axis=1)
    # the expansion can misrank near-ties; re-check every candidate within rounding slack
    slack = 1e-9 * (qn + norms.max()) + 1e-12
    out = np.empty(len(q))
    for i in range(len(q)):
        cand = np.flatnonzero(approx[i] <= best[i] + slack[i])
        diff = feats[cand] - q[i]
        out[i] = np.sqrt(np.min(np.einsum("ij,ij->i", diff, diff)))
    return out


def _median_self_nn(feats, norms, batch: int = 1000) -> float:
    if len(feats) < 2:
        return 0.0
    dists = []
    for start in range(0, len(feats), batch):
        q = feats[start : start + batch]
        approx = np.einsum("ij,ij->i", q, q)[:, None] + norms[None, :] - 2.0 * (q @ feats.T)
        approx[np.arange(len(q)), np.arange(start, start + len(q))] = np.inf
        best = approx.min(axis=1)
        slack = 1e-9 * (norms[start : start + len(q)] + norms.max()) + 1e-12
        for i in range(len(q)):
            cand = np.flatnonzero(approx[i] <= best[i] + slack[i])
            cand = cand[cand != start + i]
            diff = feats[cand] - q[i]
            dists.append(np.sqrt(np.min(np.einsum("ij,ij->i", diff, diff))))
    return float(np.median(dists))


def nearest_distance(index: FeatureIndex, queries) -> np.ndarray:
    """Exact Euclidean 1-NN distance for each query feature row."""
    return _candidate_distances(index.features, index.sq_norms, np.atleast_2d(queries))


def nearest_distance_scan(index: FeatureIndex, queries) -> np.ndarray:
    """Brute-force linear scan, one query at a time (reference implementation)."""
    out = []
    for q in np.atleast_2d(np.asarray(queries, dtype=np.float64)):
        diff = index.features - q
        out.append(np.sqrt(np.min(np.einsum("ij,ij->i", diff, diff))))
    return np.asarray(out)


def ood_1nn(index: FeatureIndex, model, image) -> tuple[float, float]:
    """(raw, normalized) 1-NN distance of the image's penultimate features."""
    feats = model.features(np.asarray(image, dtype=np.float64).reshape(1, -1))
    raw = float(nearest_distance(index, feats)[0])
    scale = index.reference_scale
    return raw, raw / scale if scale > 0 else math.inf


def info_removal_energy(model: Model, image) -> float:
    """L2 norm of the logit vector."""
    return float(np.linalg.norm(model.logits(np.asarray(image, dtype=np.float64).reshape(1, -1))[0]))


# ---------------------------------------------------------------------------
# traces


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _trace(metric, model, x, explanation, ctx, cfg, index, target):
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    order = np.asarray(explanation.ordering, dtype=np.int64)
    if order.size != d or not np.array_equal(np.sort(order), np.arange(d)):
        raise ValueError("explanation ordering is not a permutation of the input indices")
    k = cfg.resolve_steps(d)
    counts = np.array([-(-i * d // k) for i in range(k + 1)])
    if metric == "deletion":
        batch = chain(x, order, ctx, counts)
    else:
        # restore the top counts[t] features into the fully-baselined image
        batch = chain(x, order[::-1], ctx, d - counts)
    logits = model.logits(batch)
    if target is None:
        target = 0 if logits.shape[1] == 1 else int(np.argmax(model.logits(x.reshape(1, -1))[0]))
    if cfg.score_mode == "logit":
        scores = logits[:, target]
    else:
        scores = _softmax(logits)[:, target]
    energy = np.linalg.norm(logits, axis=1) if cfg.record_energy else None
    ood_raw = ood_norm = None
    if cfg.record_ood and index is not None:
        ood_raw = nearest_distance(index, model.features(batch))
        scale = index.reference_scale
        ood_norm = ood_raw / scale if scale > 0 else np.full_like(ood_raw, math.inf)
    return MetricTrace(metric, counts / d, scores, energy, ood_raw, ood_norm)


def deletion_trace(
    model: Model,
    x,
    explanation: Explanation,
    ctx: BaselineContext,
    cfg: MetricConfig = MetricConfig(),
    index: FeatureIndex | None = None,
    target: int | None = None,
) -> MetricTrace:
    """Scores as the top-ranked features are progressively replaced by the baseline.

    Step ``i`` replaces the first ``ceil(i d / k)`` indices of the ordering;
    step 0 is the clean image. The tracked class is fixed from the clean image.
    """
    return _trace("deletion", model, x, explanation, ctx, cfg, index, target)


def insertion_trace(
    model: Model,
    x,
    explanation: Explanation,
    ctx: BaselineContext,
    cfg: MetricConfig = MetricConfig(),
    index: FeatureIndex | None = None,
    target: int | None = None,
) -> MetricTrace:
    """Scores as the top-ranked features are restored into the fully-baselined image."""
    return _trace("insertion", model, x, explanation, ctx, cfg, index, target)


# ---------------------------------------------------------------------------
# summaries


def auc(fractions, scores=None) -> float:
    """Trapezoid area under (fraction, score); accepts a :class:`MetricTrace`."""
    if isinstance(fractions, MetricTrace):
        fractions, scores = fractions.fractions, fractions.scores
    f = np.asarray(fractions, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if f.size == 0:
        raise ValueError("empty trace")
    if f.size == 1:
        return float(s[0])
    return float(np.trapezoid(s, f))


def srg(insertion_auc: float, deletion_auc: float) -> float:
    """Symmetric relevance gain: insertion minus deletion."""
    return insertion_auc - deletion_auc


@dataclass(frozen=True)
class Concentration:
    fraction: float
    degenerate: bool = False


def auc_concentration(fractions, scores=None, level: float = 0.8) -> Concentration:
    """Smallest fraction ``s`` with trapezoid AUC on ``[0, s]`` reaching ``level`` of the total.

    The score is linear inside each segment, so the crossing solves a quadratic.
    Needs non-negative scores; an all-zero trace reports 1.0 flagged degenerate.
    """
    if isinstance(fractions, MetricTrace):
        fractions, scores = fractions.fractions, fractions.scores
    f = np.asarray(fractions, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if np.any(s < 0):
        raise ValueError("auc_concentration needs non-negative scores (use softmax mode)")
    seg = 0.5 * (s[1:] + s[:-1]) * np.diff(f)
    total = seg.sum()
    if total <= 0:
        return Concentration(1.0, True)
    goal = level * total
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    i = int(np.searchsorted(cum, goal, side="left")) - 1
    i = min(max(i, 0), len(seg) - 1)
    need = goal - cum[i]
    width = f[i + 1] - f[i]
    s0, s1 = s[i], s[i + 1]
    slope = (s1 - s0) / width
    # s0 * t + slope * t^2 / 2 = need, in the cancellation-free root form
    t = 2.0 * need / (s0 + math.sqrt(max(s0 * s0 + 2.0 * slope * need, 0.0)))
    return Concentration(float(f[i] + min(max(t, 0.0), width)))


def mean_ood_within(trace: MetricTrace, upto: float) -> float:
    """Mean normalized OOD over steps whose fraction is within ``[0, upto]``."""
    if trace.ood_normalized is None:
        raise ValueError("trace has no OOD record")
    keep = trace.fractions <= upto + 1e-12
    return float(np.mean(trace.ood_normalized[keep]))


def classify_topk(model: Model, image, k: int = 5) -> list[tuple[int, float]]:
    """Top-``k`` classes by softmax, ties broken by ascending class index."""
    if k > model.classes:
        raise ValueError(f"k={k} exceeds class count {model.classes}")
    p = _softmax(model.logits(np.asarray(image, dtype=np.float64).reshape(1, -1))[0])
    order = np.argsort(-p, kind="stable")[:k]
    return [(int(c), float(p[c])) for c in order]
