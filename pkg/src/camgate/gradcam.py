"""Class-activation heatmaps from convolutional feature maps.

Given the activation tensor A (K, H, W) of a chosen convolutional layer and
the gradient G (K, H, W) of a class score with respect to it, the map is
built in three steps:

1. channel weights: ``alpha[k] = mean over (i, j) of G[k, i, j]``
2. raw map:        ``cam = relu(sum over k of alpha[k] * A[k])``
3. normalization:  divide by the raw maximum so values land in [0, 1];
   an all-zero raw map stays all zero and is flagged degenerate.

Accumulations run channel by channel (and element by element within the
mean) in index order, so a straightforward scalar reimplementation produces
bit-identical numbers. The combined map over a set of samples is the
pixel-wise arithmetic mean of the normalized maps, summed in sample_id
order, which makes it independent of the order samples were processed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .imaging import resize_plane

__all__ = [
    "Heatmap",
    "CombinedHeatmap",
    "channel_weights",
    "cam",
    "normalize",
    "gradcam_for",
    "combined",
    "write_value_grid",
    "read_value_grid",
]


@dataclass(frozen=True)
class Heatmap:
    """Normalized class-activation map for one sample.

    ``values`` is (H, W) float64 in [0, 1]; ``raw_max`` is the peak of the
    raw (pre-normalization) map. ``raw_max == 0`` means no positive evidence
    survived the ReLU and the map carries no localization signal.
    """

    values: np.ndarray
    raw_max: float
    sample_id: str
    class_index: int
    class_label: str

    @property
    def degenerate(self) -> bool:
        return self.raw_max == 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class CombinedHeatmap:
    """Pixel-wise mean of normalized maps across contributing samples."""

    values: np.ndarray
    sample_ids: tuple[str, ...]
    excluded_ids: tuple[str, ...]

    @property
    def contributing(self) -> int:
        return len(self.sample_ids)


def channel_weights(gradient: np.ndarray) -> np.ndarray:
    """Global-average-pool the gradient: alpha[k] = (1/(H*W)) sum G[k, i, j].

    The inner sum folds positions one at a time in row-major order.
    """
    g = np.asarray(gradient, dtype=np.float64)
    if g.ndim != 3:
        raise InputError(f"gradient must be (K, H, W), got shape {g.shape}")
    k, h, w = g.shape
    flat = g.reshape(k, h * w)
    acc = np.zeros(k)
    for t in range(h * w):
        acc += flat[:, t]
    return acc / float(h * w)


def cam(activation: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted channel sum clamped at zero: relu(sum_k weights[k] * A[k]).

    Channels fold in ascending k so the result is reproducible exactly.
    """
    a = np.asarray(activation, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if a.ndim != 3:
        raise InputError(f"activation must be (K, H, W), got shape {a.shape}")
    if w.shape != (a.shape[0],):
        raise InputError(
            f"weights shape {w.shape} does not match {a.shape[0]} channels"
        )
    acc = np.zeros(a.shape[1:])
    for k in range(a.shape[0]):
        acc += w[k] * a[k]
    return np.maximum(acc, 0.0)


def normalize(raw: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a nonnegative raw map by its maximum; all-zero maps pass through.

    Division by the true maximum makes the peak exactly 1.0.
    """
    r = np.asarray(raw, dtype=np.float64)
    if r.size == 0:
        raise InputError("cannot normalize an empty map")
    if r.min() < 0.0:
        raise InputError("raw activation map must be nonnegative")
    peak = float(r.max())
    if peak == 0.0:
        return r.copy(), 0.0
    return r / peak, peak


def gradcam_for(model, record, class_index: int | None = None,
                out_size: tuple[int, int] | None = None,
                sample_id: str = "") -> Heatmap:
    """Build the heatmap for one inference record.

    ``class_index`` defaults to the record's predicted class. ``out_size``
    is (width, height); when given, the map is bilinearly upsampled and then
    renormalized so its maximum is exactly 1.0 at the output resolution too.
    """
    from .model import class_score_gradient  # local import to avoid a cycle

    idx = record.predicted_class if class_index is None else class_index
    grad = class_score_gradient(model, record, idx)
    weights = channel_weights(grad)
    raw = cam(record.target_activation, weights)
    values, raw_max = normalize(raw)
    if out_size is not None:
        out_w, out_h = out_size
        values = resize_plane(values, out_w, out_h)
        if raw_max != 0.0:
            # Renormalize so the peak is exactly 1.0 at the output resolution
            # as well. A map whose signal vanished entirely in resampling
            # (possible only under extreme downsampling) becomes degenerate.
            values, peak = normalize(values)
            if peak == 0.0:
                raw_max = 0.0
    return Heatmap(
        values=values,
        raw_max=raw_max,
        sample_id=sample_id,
        class_index=idx,
        class_label=model.class_labels[idx],
    )


def combined(heatmaps) -> CombinedHeatmap:
    """Average normalized maps pixel-wise, excluding degenerate ones.

    Contributors are folded in ascending sample_id order, so any input
    ordering yields the identical result. Raises when nothing contributes.
    """
    included = sorted(
        (h for h in heatmaps if not h.degenerate), key=lambda h: h.sample_id
    )
    excluded = tuple(
        sorted(h.sample_id for h in heatmaps if h.degenerate)
    )
    if not included:
        raise InputError("no valid heatmaps to combine")
    shape = included[0].shape
    for h in included:
        if h.shape != shape:
            raise InputError(
                f"cannot combine heatmaps of different sizes: {shape} vs {h.shape} "
                f"(sample {h.sample_id})"
            )
    acc = np.zeros(shape)
    for h in included:
        acc += h.values
    return CombinedHeatmap(
        values=acc / float(len(included)),
        sample_ids=tuple(h.sample_id for h in included),
        excluded_ids=excluded,
    )


def write_value_grid(values: np.ndarray, path: str) -> None:
    """Write a 2-D map as CSV, one row per line, full-precision floats."""
    v = np.asarray(values, dtype=np.float64)
    with open(path, "w", encoding="ascii") as fh:
        for row in v:
            fh.write(",".join(repr(float(x)) for x in row))
            fh.write("\n")


def read_value_grid(path: str) -> np.ndarray:
    """Read a CSV written by :func:`write_value_grid` back, bit for bit."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(x) for x in line.split(",")])
    if not rows:
        raise InputError(f"empty value grid in {path}")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise InputError(f"ragged value grid in {path}")
    return np.array(rows, dtype=np.float64)
