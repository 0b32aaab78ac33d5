"""Real 2-D Fourier transforms, Hermitian bookkeeping and the phase-image primitive.

Convention: the forward transform is unnormalized and the inverse is scaled
by ``1 / (H * W)``, so ``||x||^2 == ||X||^2 / (H * W)`` when ``X`` is the
full (Hermitian-completed) spectrum.

Spectra use numpy's half-plane layout: shape ``(H, W // 2 + 1)``. Columns 0
and (for even W) ``W // 2`` are *edge* columns whose rows ``k`` and ``-k mod
H`` are complex conjugates of each other; every other column is free.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from faithbench.autodiff import Var, _lift


@dataclass(frozen=True)
class Spectrum:
    """Half-plane spectrum of a real ``height x width`` image."""

    height: int
    width: int
    coeffs: np.ndarray  # complex, (height, width // 2 + 1)

    def __post_init__(self):
        expected = (self.height, self.width // 2 + 1)
        if self.coeffs.shape != expected:
            raise ValueError(
                f"spectrum layout {self.coeffs.shape} does not match {expected} "
                f"for a {self.height}x{self.width} image"
            )

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.coeffs)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.coeffs)

    @classmethod
    def from_polar(cls, height: int, width: int, magnitude, phase) -> "Spectrum":
        return cls(height, width, np.asarray(magnitude) * np.exp(1j * np.asarray(phase)))


def rfft2(image) -> Spectrum:
    """Unnormalized forward transform of a real 2-D image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"rfft2 needs a 2-D image, got shape {img.shape}")
    return Spectrum(img.shape[0], img.shape[1], np.fft.rfft2(img))


def irfft2(spectrum: Spectrum) -> np.ndarray:
    """Inverse of :func:`rfft2` (scaled by ``1 / (H * W)``); always real."""
    return np.fft.irfft2(spectrum.coeffs, s=(spectrum.height, spectrum.width))


@dataclass(frozen=True)
class HermitianLayout:
    """Which half-plane bins are independent for a real ``height x width`` image.

    ``free`` marks one representative of every conjugate pair plus all
    interior bins; ``self_conjugate`` marks bins equal to their own conjugate
    (they must be real); ``partner`` gives, for every bin, the flat index of
    the bin that mirrors it (itself for interior and self-conjugate bins).
    ``weight`` is how many full-plane bins each half-plane bin stands for.
    """

    height: int
    width: int
    free: np.ndarray
    self_conjugate: np.ndarray
    mirrored: np.ndarray
    partner: np.ndarray
    weight: np.ndarray


@lru_cache(maxsize=32)
def hermitian_layout(height: int, width: int) -> HermitianLayout:
    wh = width // 2 + 1
    edge_cols = [0] + ([width // 2] if width % 2 == 0 and width > 1 else [])
    free = np.ones((height, wh), dtype=bool)
    selfc = np.zeros((height, wh), dtype=bool)
    mirrored = np.zeros((height, wh), dtype=bool)
    partner = np.arange(height * wh).reshape(height, wh)
    weight = np.full((height, wh), 2.0)
    for j in edge_cols:
        weight[:, j] = 1.0
        for k in range(height):
            k2 = (-k) % height
            partner[k, j] = k2 * wh + j
            if k2 == k:
                selfc[k, j] = True
                free[k, j] = False
            elif k2 < k:
                free[k, j] = False
                mirrored[k, j] = True
    for arr in (free, selfc, mirrored, partner, weight):
        arr.setflags(write=False)
    return HermitianLayout(height, width, free, selfc, mirrored, partner.ravel(), weight)


def hermitian_phase(phase: np.ndarray, layout: HermitianLayout) -> np.ndarray:
    """Project a half-plane phase array onto a Hermitian-consistent one.

    Free bins keep their phase, mirrored bins take the negated phase of
    their partner and self-conjugate bins get phase 0.
    """
    flat = np.asarray(phase, dtype=np.float64).ravel()
    out = np.where(layout.free.ravel(), flat, 0.0)
    m = layout.mirrored.ravel()
    out[m] = -flat[layout.partner[m]]
    return out.reshape(phase.shape)


def irfft2_adjoint(grad_image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Cotangent of the half-plane coefficients for a cotangent on the image.

    ``irfft2`` is real-linear in ``(Re Z, Im Z)``; the returned complex array
    packs ``dL/dRe Z + i dL/dIm Z``.
    """
    layout = hermitian_layout(height, width)
    return layout.weight * np.fft.rfft2(grad_image) / (height * width)


def phase_image(phase, magnitude: np.ndarray, width: int) -> Var:
    """Differentiable ``irfft2(r * exp(i * phase))`` with a fixed magnitude ``r``.

    The phase is projected with :func:`hermitian_phase` first, so the image is
    real by construction and, for a conjugate-symmetric ``r`` (any ``|rfft2|``
    is one), its spectrum has magnitude exactly ``r``. Gradients reach only
    the free bins.
    """
    phase = _lift(phase)
    r = np.asarray(magnitude, dtype=np.float64)
    height = r.shape[0]
    layout = hermitian_layout(height, width)
    psi = hermitian_phase(phase.value, layout)
    z = r * np.exp(1j * psi)
    image = np.fft.irfft2(z, s=(height, width))

    def backward(g):
        gz = irfft2_adjoint(g, height, width)
        dpsi = np.imag(gz * np.conj(z)).ravel()
        dphi = np.where(layout.free.ravel(), dpsi, 0.0)
        m = layout.mirrored.ravel()
        np.subtract.at(dphi, layout.partner[m], dpsi[m])
        return (dphi.reshape(phase.shape),)

    return Var(image, (phase,), backward)


def full_energy(magnitude: np.ndarray, width: int) -> float:
    """``sum |X|^2`` over the full plane for a Hermitian half-plane magnitude."""
    r = np.asarray(magnitude, dtype=np.float64)
    layout = hermitian_layout(r.shape[0], width)
    return float(np.sum(layout.weight * r * r))


def _hermitian_fill(coeffs: np.ndarray, layout: HermitianLayout) -> np.ndarray:
    flat = coeffs.ravel().copy()
    m = layout.mirrored.ravel()
    flat[m] = np.conj(flat[layout.partner[m]])
    return flat.reshape(coeffs.shape)


def scramble_phase_spectrum(spec: Spectrum, rng: np.random.Generator) -> Spectrum:
    """Permute phases among free bins; magnitudes stay in place.

    Self-conjugate bins keep their (real) value so the result stays Hermitian.
    """
    layout = hermitian_layout(spec.height, spec.width)
    mag, ph = spec.magnitude.ravel(), spec.phase.ravel().copy()
    idx = np.flatnonzero(layout.free.ravel())
    ph[idx] = ph[idx[rng.permutation(idx.size)]]
    coeffs = np.where(layout.self_conjugate.ravel(), spec.coeffs.ravel(), mag * np.exp(1j * ph))
    return Spectrum(spec.height, spec.width, _hermitian_fill(coeffs.reshape(spec.coeffs.shape), layout))


def scramble_magnitude_spectrum(spec: Spectrum, rng: np.random.Generator) -> Spectrum:
    """Permute magnitudes among free and self-conjugate bins; phases stay in place."""
    layout = hermitian_layout(spec.height, spec.width)
    mag, ph = spec.magnitude.ravel().copy(), spec.phase.ravel()
    idx = np.flatnonzero((layout.free | layout.self_conjugate).ravel())
    mag[idx] = mag[idx[rng.permutation(idx.size)]]
    coeffs = (mag * np.exp(1j * ph)).reshape(spec.coeffs.shape)
    selfc = layout.self_conjugate
    # real bins: phase is 0 or pi, drop the rounding residue of exp(i*pi)
    coeffs[selfc] = np.real(coeffs[selfc])
    return Spectrum(spec.height, spec.width, _hermitian_fill(coeffs, layout))
