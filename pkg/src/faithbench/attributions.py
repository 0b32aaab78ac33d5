"""Attribution methods and their closed forms on linear models.

Every method returns an :class:`Explanation`: one score per input feature
(same shape as the input) and the deletion ordering over flattened indices,
highest score first with ties broken by ascending index.

For multi-class models the attributed quantity is the logit of the class
predicted on the unperturbed input.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from faithbench.models import Model

METHODS = (
    "saliency",
    "gradient_input",
    "smoothgrad",
    "integrated_gradients",
    "occlusion",
    "rise",
)
# stable small integers mixed into per-method random streams
METHOD_IDS = {name: i for i, name in enumerate(METHODS)}


def ordering_from_scores(scores) -> np.ndarray:
    """Indices sorted by descending score; equal scores keep ascending index order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64).ravel(), kind="stable")


@dataclass(frozen=True)
class Explanation:
    scores: np.ndarray
    ordering: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        if self.ordering is None:
            object.__setattr__(self, "ordering", ordering_from_scores(scores))
        else:
            order = np.asarray(self.ordering, dtype=np.int64)
            if not np.array_equal(np.sort(order), np.arange(scores.size)):
                raise ValueError("ordering must be a permutation of the feature indices")
            object.__setattr__(self, "ordering", order)


@dataclass(frozen=True)
class AttributionConfig:
    smooth_sigma: float = 0.1
    smooth_samples: int = 32
    ig_steps: int = 32
    ig_reference: np.ndarray | float = 0.0
    occlusion_patch: int = 2
    occlusion_fill: float = 0.0
    rise_probability: float = 0.5
    rise_masks: int = 2000
    seed: int = 0
    saliency_absolute: bool = False

    def __post_init__(self):
        if min(self.smooth_samples, self.ig_steps, self.rise_masks) < 1:
            raise ValueError("sample counts must be >= 1")
        if not 0.0 < self.rise_probability < 1.0:
            raise ValueError("rise_probability must lie in (0, 1)")
        if self.occlusion_patch < 1:
            raise ValueError("occlusion_patch must be >= 1")
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")


def method_rng(seed: int, method: str) -> np.random.Generator:
    return np.random.default_rng([seed, METHOD_IDS[method]])


def target_class(model: Model, x) -> int:
    """Class whose logit is attributed: the argmax on the clean input (0 for scalar models)."""
    if model.classes == 1:
        return 0
    return int(np.argmax(model.logits(x)[0]))


def _flat(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).ravel()


def _score(model: Model, batch: np.ndarray, target: int) -> np.ndarray:
    return model.logits(batch)[:, target]


def saliency(model: Model, x, cfg: AttributionConfig | None = None, *, absolute: bool | None = None) -> Explanation:
    """Raw input gradient; ``absolute=True`` takes its magnitude."""
    cfg = cfg or AttributionConfig()
    absolute = cfg.saliency_absolute if absolute is None else absolute
    x = np.asarray(x, dtype=np.float64)
    grad = model.input_gradient(_flat(x)[None], target_class(model, x))[0]
    if absolute:
        grad = np.abs(grad)
    return Explanation(grad.reshape(x.shape))


def gradient_input(model: Model, x, cfg: AttributionConfig | None = None) -> Explanation:
    x = np.asarray(x, dtype=np.float64)
    grad = model.input_gradient(_flat(x)[None], target_class(model, x))[0]
    return Explanation((grad * _flat(x)).reshape(x.shape))


def smoothgrad(model: Model, x, cfg: AttributionConfig | None = None) -> Explanation:
    """Mean gradient over Gaussian-perturbed copies of ``x``."""
    cfg = cfg or AttributionConfig()
    x = np.asarray(x, dtype=np.float64)
    rng = method_rng(cfg.seed, "smoothgrad")
    flat = _flat(x)
    noise = rng.normal(0.0, 1.0, size=(cfg.smooth_samples, flat.size)) * cfg.smooth_sigma
    grads = model.input_gradient(flat + noise, target_class(model, x))
    # anchored mean: exact when every sample has the same gradient
    mean = grads[0] + (grads - grads[0]).mean(axis=0)
    return Explanation(mean.reshape(x.shape))


def path_weights(steps: int, rule: str = "trapezoid") -> tuple[np.ndarray, np.ndarray]:
    """Nodes and quadrature weights on [0, 1]."""
    if rule == "trapezoid":
        alphas = np.arange(steps + 1) / steps
        weights = np.full(steps + 1, 1.0 / steps)
        weights[[0, -1]] = 0.5 / steps
    elif rule == "left":
        alphas = np.arange(steps) / steps
        weights = np.full(steps, 1.0 / steps)
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return alphas, weights


def integrated_gradients(
    model: Model, x, cfg: AttributionConfig | None = None, *, rule: str = "trapezoid"
) -> Explanation:
    """``(x - x0) * integral_0^1 d/dx [f(x0 + a (x - x0))] da``.

    The integrand is the gradient of the path point with respect to ``x``,
    which carries the chain-rule factor ``a``; on a linear model the result
    is ``(x - x0) * w / 2``.
    """
    cfg = cfg or AttributionConfig()
    x = np.asarray(x, dtype=np.float64)
    flat = _flat(x)
    ref = np.broadcast_to(np.asarray(cfg.ig_reference, dtype=np.float64).ravel(), flat.shape)
    alphas, weights = path_weights(cfg.ig_steps, rule)
    path = ref + alphas[:, None] * (flat - ref)
    grads = model.input_gradient(path, target_class(model, x))
    coef = weights * alphas
    integral = coef.sum() * grads[0] + coef @ (grads - grads[0])
    return Explanation(((flat - ref) * integral).reshape(x.shape))


def _patches(shape: tuple[int, ...], p: int) -> list[np.ndarray]:
    """Flat index groups of side-``p`` patches (ragged at the edges)."""
    if len(shape) == 2:
        h, w = shape
        grid = np.arange(h * w).reshape(h, w)
        return [grid[i : i + p, j : j + p].ravel() for i in range(0, h, p) for j in range(0, w, p)]
    n = int(np.prod(shape))
    return [np.arange(i, min(i + p, n)) for i in range(0, n, p)]


def occlusion(model: Model, x, cfg: AttributionConfig | None = None) -> Explanation:
    """Score drop when each patch is set to the fill value; patch members share the score."""
    cfg = cfg or AttributionConfig()
    x = np.asarray(x, dtype=np.float64)
    flat = _flat(x)
    target = target_class(model, x)
    groups = _patches(x.shape, cfg.occlusion_patch)
    batch = np.repeat(flat[None], len(groups) + 1, axis=0)
    for row, idx in enumerate(groups, start=1):
        batch[row, idx] = cfg.occlusion_fill
    scores_all = _score(model, batch, target)
    out = np.empty_like(flat)
    for row, idx in enumerate(groups, start=1):
        out[idx] = scores_all[0] - scores_all[row]
    return Explanation(out.reshape(x.shape))


def rise_estimate(model: Model, x, cfg: AttributionConfig | None = None, batch_size: int = 2000):
    """Monte-Carlo ``E[f(x * m) | m_i = 1]`` with per-feature Bernoulli masks.

    Returns ``(mean, standard_error)`` per feature, both shaped like ``x``.
    """
    cfg = cfg or AttributionConfig()
    x = np.asarray(x, dtype=np.float64)
    flat = _flat(x)
    target = target_class(model, x)
    rng = method_rng(cfg.seed, "rise")
    total = np.zeros_like(flat)
    total_sq = np.zeros_like(flat)
    count = np.zeros_like(flat)
    remaining = cfg.rise_masks
    while remaining > 0:
        n = min(batch_size, remaining)
        masks = (rng.random((n, flat.size)) < cfg.rise_probability).astype(np.float64)
        f = _score(model, masks * flat, target)
        total += f @ masks
        total_sq += (f * f) @ masks
        count += masks.sum(axis=0)
        remaining -= n
    never = count == 0
    if never.any():
        warnings.warn(f"{int(never.sum())} features were never included in any RISE mask; scored 0")
    safe = np.where(never, 1.0, count)
    mean = np.where(never, 0.0, total / safe)
    var = np.where(count > 1, (total_sq / safe - mean * mean) * count / np.maximum(count - 1, 1), 0.0)
    stderr = np.sqrt(np.maximum(var, 0.0) / safe)
    return mean.reshape(x.shape), stderr.reshape(x.shape)


def rise(model: Model, x, cfg: AttributionConfig | None = None) -> Explanation:
    mean, _ = rise_estimate(model, x, cfg)
    return Explanation(mean)


_DISPATCH = {
    "saliency": saliency,
    "gradient_input": gradient_input,
    "smoothgrad": smoothgrad,
    "integrated_gradients": integrated_gradients,
    "occlusion": occlusion,
    "rise": rise,
}


def explain(method: str, model: Model, x, cfg: AttributionConfig | None = None) -> Explanation:
    try:
        fn = _DISPATCH[method]
    except KeyError:
        raise ValueError(f"unknown attribution method {method!r}; expected one of {METHODS}") from None
    return fn(model, x, cfg)


def linear_closed_form(method: str, w, b: float, x) -> Explanation:
    """Exact attribution of ``f(x) = x w + b`` (zero reference, fill 0, q = 1/2)."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if method in ("saliency", "smoothgrad"):
        scores = w.copy()
    elif method in ("gradient_input", "occlusion"):
        scores = x * w
    elif method == "integrated_gradients":
        scores = 0.5 * x * w
    elif method == "rise":
        scores = b + 0.5 * (x @ w + x * w)
    else:
        raise ValueError(f"unknown attribution method {method!r}")
    return Explanation(scores)


__all__ = [
    "METHODS",
    "AttributionConfig",
    "Explanation",
    "explain",
    "gradient_input",
    "integrated_gradients",
    "linear_closed_form",
    "occlusion",
    "ordering_from_scores",
    "rise",
    "rise_estimate",
    "saliency",
    "smoothgrad",
]
