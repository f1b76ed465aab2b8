"""Channel comparison losses and their location gradient.

The phase-sensitive (PS) distance is the Frobenius distance between the
measured channel and the model channel at a candidate location; its global
minimum identifies the location but neighbouring minima sit roughly one
central wavelength apart.  The phase-insensitive (PI) distance discards
global scale and phase, trading resolution for a far smoother landscape,
and is used for grid-search initialization only (no gradient is defined).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelMatrix, _entries
from .errors import DegenerateChannelError, DimensionMismatchError
from .model import ChannelModel

PS_CONVERGED_LOSS = 1e-12
"""Below this PS loss the gradient is reported as zero (descent converged)."""

KIND_PS = "ps"
KIND_PI = "pi"


@dataclass(frozen=True)
class LossValue:
    value: float
    kind: str

    def __post_init__(self):
        if self.kind not in (KIND_PS, KIND_PI):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.value < 0:
            raise ValueError("loss value must be nonnegative")


def similarity(H_a, H_b) -> float:
    """1 - ||H_a - H_b||_F; equals one only for exactly equal channels."""
    a, b = _entries(H_a), _entries(H_b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch {a.shape} vs {b.shape}")
    return 1.0 - float(np.linalg.norm(a - b))


def ps_values(H, candidates: np.ndarray) -> np.ndarray:
    """PS loss of each candidate channel in a (B, n_a, n_s) stack."""
    h = _entries(H)
    diff = candidates - h[None, :, :]
    return np.sqrt(np.sum(np.abs(diff) ** 2, axis=(1, 2)))


def pi_values(H, candidates: np.ndarray) -> np.ndarray:
    """PI loss of each candidate channel; zero-norm candidates map to sqrt(2)."""
    h = _entries(H)
    h_norm = np.linalg.norm(h)
    if h_norm == 0.0:
        raise DegenerateChannelError("measured channel has zero norm")
    corr = np.abs(np.einsum("jk,bjk->b", np.conj(h), candidates))
    norms = np.sqrt(np.sum(np.abs(candidates) ** 2, axis=(1, 2)))
    coh = np.zeros(len(candidates))
    nz = norms > 0
    coh[nz] = corr[nz] / (h_norm * norms[nz])
    return np.sqrt(np.clip(2.0 - 2.0 * coh, 0.0, None))


def ps_distance(H, x_cand, model: ChannelModel) -> LossValue:
    """Frobenius distance between H and the model channel at x_cand."""
    f = model.eval(x_cand).entries
    return LossValue(float(ps_values(H, f[None])[0]), KIND_PS)


def pi_distance(H, x_cand, model: ChannelModel) -> LossValue:
    """Scale- and global-phase-invariant distance, in [0, sqrt(2)]."""
    f = model.eval(x_cand).entries
    if np.linalg.norm(f) == 0.0:
        raise DegenerateChannelError("model channel has zero norm")
    return LossValue(float(pi_values(H, f[None])[0]), KIND_PI)


def ps_gradient_core(h_entries: np.ndarray, f_entries: np.ndarray,
                     d_dx: np.ndarray, d_dy: np.ndarray, loss: float) -> np.ndarray:
    """PS gradient from precomputed model entries and channel partials."""
    if loss < PS_CONVERGED_LOSS:
        return np.zeros(2)
    resid = f_entries - h_entries
    gx = float(np.sum((np.conj(resid) * d_dx).real))
    gy = float(np.sum((np.conj(resid) * d_dy).real))
    return np.array([gx, gy]) / loss


def ps_gradient(H, x_cand, model: ChannelModel) -> np.ndarray:
    """Exact gradient of the PS loss wrt the candidate location.

    Chain rule of the Frobenius norm:
    ``d L/d x = Re<f(x) - H, d f/d x> / L`` with ``<A, B> = sum conj(A) B``.
    At (numerically) zero loss the zero vector is returned so descent can
    treat the point as converged rather than fail on the norm kink.
    """
    h = _entries(H)
    f = model.eval(x_cand).entries
    if f.shape != h.shape:
        raise DimensionMismatchError(f"shape mismatch {f.shape} vs {h.shape}")
    loss = float(np.linalg.norm(f - h))
    g = model.grad(x_cand)
    return ps_gradient_core(h, f, g.d_dx, g.d_dy, loss)
