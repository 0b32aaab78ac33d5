"""Model-dependent "zero information" baseline by phase-only feature visualization.

The image is parameterized in Fourier space with a fixed magnitude (the mean
magnitude spectrum of the training set) and a free phase. The phase is
optimized so that the penultimate activations of the model vanish.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from faithbench import autodiff as ad
from faithbench.data import write_pgm
from faithbench.models import MLPModel
from faithbench.spectral import hermitian_layout, hermitian_phase, phase_image

MAX_HALVINGS = 20


class FeatVizError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatVizConfig:
    max_steps: int = 512
    learning_rate: float = 0.05
    threshold: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 1 or self.learning_rate <= 0:
            raise ValueError("max_steps must be >= 1 and learning_rate > 0")


@dataclass
class FeatVizResult:
    phase: np.ndarray
    image: np.ndarray  # clipped to [0, 1]
    raw_image: np.ndarray
    trace: list[float] = field(default_factory=list)
    clip_fraction: float = 0.0

    @property
    def final_objective(self) -> float:
        return self.trace[-1]


def mean_magnitude_spectrum(images) -> np.ndarray:
    """Elementwise mean of ``|rfft2(x)|`` over a stack of equal-shape images."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("need a nonempty stack of 2-D images")
    return np.abs(np.fft.rfft2(arr)).mean(axis=0)


def _width(model: MLPModel, r: np.ndarray) -> int:
    h, w = model.input_shape
    if r.shape != (h, w // 2 + 1):
        raise ValueError(f"magnitude shape {r.shape} does not fit a {h}x{w} input")
    return w


def objective_program(model: MLPModel, r: np.ndarray) -> ad.Program:
    """``phi -> ||f_penultimate(irfft2(r e^{i phi}))||^2`` as a differentiable program."""
    r = np.asarray(r, dtype=np.float64)
    w = _width(model, r)

    def fn(phi):
        img = ad.reshape(phase_image(phi, r, w), (1, model.dim))
        _, feats = model._graph(img)
        return ad.sqnorm(feats)

    return ad.Program(fn, {"phi": r.shape})


def objective(model: MLPModel, r, phi) -> float:
    return float(ad.evaluate(objective_program(model, np.asarray(r)), {"phi": phi}))


def objective_gradient(model: MLPModel, r, phi) -> np.ndarray:
    return ad.gradient(objective_program(model, np.asarray(r)), {"phi": phi}, "phi")


def render(r, phi, width: int) -> np.ndarray:
    """Unclipped image ``irfft2(r e^{i phi})`` after Hermitian projection of ``phi``."""
    r = np.asarray(r, dtype=np.float64)
    psi = hermitian_phase(np.asarray(phi, dtype=np.float64), hermitian_layout(r.shape[0], width))
    return np.fft.irfft2(r * np.exp(1j * psi), s=(r.shape[0], width))


def optimize_baseline(model: MLPModel, r, cfg: FeatVizConfig = FeatVizConfig()) -> FeatVizResult:
    """Gradient descent on the phase with step halving.

    A step that would increase the objective is halved and retried (at most
    ``MAX_HALVINGS`` times); the run stops at ``cfg.max_steps``, when no
    halving helps, or when the relative decrease falls below
    ``cfg.threshold``. The trace is therefore non-increasing.
    """
    if len(model.layers) < 1 or len(model.input_shape) != 2:
        raise ValueError("featviz needs an MLP over 2-D images")
    r = np.asarray(r, dtype=np.float64)
    width = _width(model, r)
    prog = objective_program(model, r)
    rng = np.random.default_rng(cfg.seed)
    phi = rng.uniform(-math.pi, math.pi, size=r.shape)

    def value(p):
        v = float(ad.evaluate(prog, {"phi": p}))
        if not math.isfinite(v):
            raise FeatVizError(f"non-finite objective {v}")
        return v

    current = value(phi)
    trace = [current]
    lr = cfg.learning_rate
    for _ in range(cfg.max_steps):
        grad = ad.gradient(prog, {"phi": phi}, "phi")
        if not np.all(np.isfinite(grad)):
            raise FeatVizError("non-finite phase gradient")
        step = lr
        accepted = None
        for _ in range(MAX_HALVINGS + 1):
            candidate = phi - step * grad
            cand_value = value(candidate)
            if cand_value <= current:
                accepted = (candidate, cand_value)
                break
            step *= 0.5
        if accepted is None:
            break
        phi, new_value = accepted
        decrease = current - new_value
        current = new_value
        trace.append(current)
        if decrease <= cfg.threshold * max(trace[-2], np.finfo(float).tiny):
            break

    raw = render(r, phi, width)
    clip_fraction = float(np.mean((raw < 0.0) | (raw > 1.0)))
    return FeatVizResult(
        phase=phi,
        image=np.clip(raw, 0.0, 1.0),
        raw_image=raw,
        trace=trace,
        clip_fraction=clip_fraction,
    )


def export_baseline(result: FeatVizResult, json_path=None, pgm_path=None) -> None:
    """Write the baseline image as a JSON tensor and/or a PGM image."""
    if json_path is not None:
        doc = {
            "shape": list(result.image.shape),
            "data": [float(v) for v in result.image.ravel()],
            "objective_trace": [float(v) for v in result.trace],
            "clip_fraction": result.clip_fraction,
        }
        Path(json_path).write_text(json.dumps(doc))
    if pgm_path is not None:
        write_pgm(pgm_path, result.image)


def load_baseline_image(path) -> np.ndarray:
    """Read an image written by :func:`export_baseline` (JSON) or a PGM."""
    path = Path(path)
    if path.suffix == ".pgm":
        from faithbench.data import read_pgm

        return read_pgm(path)
    doc = json.loads(path.read_text())
    return np.asarray(doc["data"], dtype=np.float64).reshape(doc["shape"])
