"""Baseline functions: what a "removed" pixel is replaced with.

Every kind materializes a full replacement image once per (image, seed);
:func:`apply` then copies replacement pixels into the chosen indices. This
keeps the perturbation a deterministic function of the index set, so the
images along a deletion ordering form a nested chain.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from faithbench.spectral import (
    irfft2,
    rfft2,
    scramble_magnitude_spectrum,
    scramble_phase_spectrum,
)

STATIC_KINDS = (
    "zero",
    "random_color",
    "uniform",
    "normal",
    "mean",
    "local_mean",
    "median",
    "permutation",
    "local_permutation",
    "scramble_magnitude",
    "scramble_phase",
)
KINDS = STATIC_KINDS + ("featviz",)
NOISE_KINDS = ("uniform", "normal", "random_color")
LOCAL_WINDOW = 4


@dataclass(frozen=True)
class DatasetStats:
    mean: float
    median: float

    @classmethod
    def from_images(cls, images) -> "DatasetStats":
        arr = np.asarray(images, dtype=np.float64)
        return cls(float(arr.mean()), float(np.median(arr)))


@dataclass(frozen=True)
class BaselineContext:
    kind: str
    replacement: np.ndarray

    def __post_init__(self):
        self.replacement.setflags(write=False)


def _rng(seed: int, kind: str) -> np.random.Generator:
    return np.random.default_rng([seed, KINDS.index(kind) if kind in KINDS else len(KINDS)])


def local_permutation(x: np.ndarray, rng: np.random.Generator, window: int = LOCAL_WINDOW) -> np.ndarray:
    """Shuffle pixels within non-overlapping ``window x window`` tiles."""
    if x.ndim != 2:
        raise ValueError("local_permutation needs a 2-D image")
    out = x.copy()
    h, w = x.shape
    for i in range(0, h, window):
        for j in range(0, w, window):
            tile = out[i : i + window, j : j + window]
            flat = tile.ravel()
            tile[...] = flat[rng.permutation(flat.size)].reshape(tile.shape)
    return out


def scrambled(x: np.ndarray, kind: str, rng: np.random.Generator) -> np.ndarray:
    """Unclipped spectral scramble of a 2-D image."""
    if x.ndim != 2:
        raise ValueError(f"{kind} needs a 2-D image")
    spec = rfft2(x)
    if kind == "scramble_phase":
        return irfft2(scramble_phase_spectrum(spec, rng))
    if kind == "scramble_magnitude":
        return irfft2(scramble_magnitude_spectrum(spec, rng))
    raise ValueError(f"not a spectral kind: {kind!r}")


def build_context(
    kind: str,
    x,
    stats: DatasetStats | None = None,
    seed: int = 0,
    featviz_image=None,
) -> BaselineContext:
    """Materialize the replacement image for ``kind`` on image ``x``."""
    x = np.asarray(x, dtype=np.float64)
    rng = _rng(seed, kind)
    if kind in ("mean", "median") and stats is None:
        raise ValueError(f"{kind} baseline needs dataset statistics")
    if kind == "zero":
        rep = np.zeros_like(x)
    elif kind == "random_color":
        rep = np.full_like(x, rng.uniform(0.0, 1.0))
    elif kind == "uniform":
        rep = rng.uniform(0.0, 1.0, size=x.shape)
    elif kind == "normal":
        rep = np.clip(rng.normal(0.0, 1.0, size=x.shape), 0.0, 1.0)
    elif kind == "mean":
        rep = np.full_like(x, stats.mean)
    elif kind == "median":
        rep = np.full_like(x, stats.median)
    elif kind == "local_mean":
        rep = np.full_like(x, x.mean())
    elif kind == "permutation":
        rep = x.ravel()[rng.permutation(x.size)].reshape(x.shape)
    elif kind == "local_permutation":
        rep = local_permutation(x, rng)
    elif kind in ("scramble_magnitude", "scramble_phase"):
        rep = np.clip(scrambled(x, kind, rng), 0.0, 1.0)
    elif kind == "featviz":
        if featviz_image is None:
            raise ValueError("featviz baseline needs the optimized image")
        rep = np.asarray(featviz_image, dtype=np.float64)
        if rep.shape != x.shape:
            raise ValueError(f"featviz image shape {rep.shape} does not match input {x.shape}")
        if rep.min() < 0.0 or rep.max() > 1.0:
            raise ValueError("featviz image must lie in [0, 1]")
        rep = rep.copy()
    else:
        raise ValueError(f"unknown baseline kind {kind!r}; expected one of {KINDS}")
    return BaselineContext(kind, rep)


def apply(x, indices: Iterable[int], ctx: BaselineContext) -> np.ndarray:
    """``x`` with the flat ``indices`` replaced by the context's replacement pixels."""
    x = np.asarray(x, dtype=np.float64)
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise IndexError(f"index out of range for input of size {x.size}")
    out = x.ravel().copy()
    out[idx] = ctx.replacement.ravel()[idx]
    return out.reshape(x.shape)


def chain(x, ordering, ctx: BaselineContext, counts) -> np.ndarray:
    """Batch of perturbed images, row ``t`` replacing the first ``counts[t]`` ordered indices."""
    x = np.asarray(x, dtype=np.float64).ravel()
    ordering = np.asarray(ordering, dtype=np.int64)
    rank = np.empty_like(ordering)
    rank[ordering] = np.arange(ordering.size)
    replaced = rank[None, :] < np.asarray(counts)[:, None]
    return np.where(replaced, ctx.replacement.ravel()[None, :], x[None, :])


Perturbation = Callable[[np.ndarray, np.ndarray], np.ndarray]


def monotone_nesting_check(x, ordering, ctx: BaselineContext | Perturbation) -> bool:
    """True iff consecutive prefixes of ``ordering`` differ only at the newly added index."""
    x = np.asarray(x, dtype=np.float64)
    ordering = np.asarray(ordering, dtype=np.int64)
    perturb = ctx if callable(ctx) else (lambda img, idx: apply(img, idx, ctx))
    prev = np.asarray(perturb(x, ordering[:0])).ravel()
    if not np.array_equal(prev, x.ravel()):
        return False
    for i in range(ordering.size):
        cur = np.asarray(perturb(x, ordering[: i + 1])).ravel()
        changed = np.flatnonzero(cur != prev)
        if changed.size > 1 or (changed.size == 1 and changed[0] != ordering[i]):
            return False
        prev = cur
    return True
