"""Per-pixel losses that reward offsets for moving toward well-classified points.

Two mechanisms are built on plain cross-entropy:

* guided weighting: compare the loss of the offset-refined prediction with
  the loss of a plain-bilinear prediction (no gradient) pixel by pixel and
  multiply by 1 + lambda wherever the refined one is not strictly better.
  Staying put is therefore always penalized.
* coordinate regression: build five candidate samplings per pixel (the
  offset-refined one plus the four floor/ceil lattice corners), pick the
  coordinates of whichever classifies best, and pull the predicted offset
  toward them with a smooth-L1 term of strength gamma.

Auxiliary losses and selected targets are constants under differentiation;
gradient reaches the network only through the refined prediction's own loss
and through the predicted coordinates inside the smooth-L1 term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import LabelMap, ShapeError, as_tensor4
from .samplers import (
    CORNERS,
    OffsetField,
    corner_source_coords,
    corner_upsample,
    lau_forward,
    lau_source_coords,
)

__all__ = [
    "CandidateSet",
    "CoordinateMap",
    "LossMap",
    "build_candidate_set",
    "cross_entropy_backward",
    "cross_entropy_map",
    "guided_weight",
    "offset_guided_loss",
    "reduce_loss",
    "regression_loss",
    "regression_weight",
    "select_theta_opt",
    "smooth_l1",
    "smooth_l1_grad",
    "SMOOTH_L1_BETA",
]

# Quadratic/linear transition of the smooth-L1 kernel, the bounding-box
# regression convention.
SMOOTH_L1_BETA = 1.0


@dataclass
class LossMap:
    """Nonnegative per-pixel loss values with a validity mask.

    Invalid pixels (ignored labels) carry value 0 and weight 0 everywhere
    downstream.
    """

    values: np.ndarray  # (n, h, w) float64
    valid: np.ndarray  # (n, h, w) bool

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        if self.values.ndim != 3 or self.values.shape != self.valid.shape:
            raise ShapeError(
                f"values/valid must be matching (n, h, w), got {self.values.shape} and {self.valid.shape}"
            )

    @property
    def shape(self):
        return self.values.shape


@dataclass
class CoordinateMap:
    """Per-pixel source coordinates (px, py) in input-grid units."""

    px: np.ndarray
    py: np.ndarray

    def __post_init__(self):
        self.px = np.ascontiguousarray(self.px, dtype=np.float64)
        self.py = np.ascontiguousarray(self.py, dtype=np.float64)
        if self.px.ndim != 3 or self.px.shape != self.py.shape:
            raise ShapeError(
                f"px/py must be matching (n, h, w), got {self.px.shape} and {self.py.shape}"
            )
        if not (np.all(np.isfinite(self.px)) and np.all(np.isfinite(self.py))):
            raise ValueError("coordinates must be finite")

    @property
    def shape(self):
        return self.px.shape


@dataclass
class CandidateSet:
    """Aligned 5-way loss and coordinate candidates.

    Index 0 is the offset-refined sampler's own entry; indices 1..4 are the
    lattice corners in the order (floor,floor), (ceil,floor), (floor,ceil),
    (ceil,ceil) of (x, y) rounding. The four corner entries carry no
    gradient by contract.
    """

    losses: list  # 5 LossMaps
    coords: list  # 5 CoordinateMaps

    def __post_init__(self):
        if len(self.losses) != 5 or len(self.coords) != 5:
            raise ShapeError("candidate set needs exactly 5 losses and 5 coordinate maps")
        shape = self.losses[0].shape
        for lm in self.losses:
            if lm.shape != shape:
                raise ShapeError("all candidate loss maps must share one shape")
        for cm in self.coords:
            if cm.shape != shape:
                raise ShapeError("coordinate maps must match the loss-map shape")

    @property
    def shape(self):
        return self.losses[0].shape

    def loss_stack(self) -> np.ndarray:
        return np.stack([lm.values for lm in self.losses])


def cross_entropy_map(logits: np.ndarray, labels: LabelMap) -> LossMap:
    """-log softmax probability of the true class, per valid pixel.

    Computed with max subtraction so large logits stay finite.
    """
    logits = as_tensor4(logits)
    n, c, h, w = logits.shape
    if c != labels.num_classes:
        raise ShapeError(f"logit channels {c} != num_classes {labels.num_classes}")
    if (n, h, w) != (labels.n, labels.h, labels.w):
        raise ShapeError(
            f"logit spatial dims {(n, h, w)} != labels {(labels.n, labels.h, labels.w)}"
        )
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    valid = labels.valid
    safe = np.where(valid, labels.labels, 0)
    picked = np.take_along_axis(z, safe[:, None], axis=1)[:, 0]
    values = np.where(valid, lse - picked, 0.0)
    # Guard against tiny negative round-off on saturated pixels.
    return LossMap(np.maximum(values, 0.0), valid)


def cross_entropy_backward(
    logits: np.ndarray, labels: LabelMap, weights: np.ndarray
) -> np.ndarray:
    """Gradient of sum_i weights_i * CE_i w.r.t. the logits.

    weights is (n, h, w); invalid pixels contribute nothing regardless of
    their weight entry.
    """
    logits = as_tensor4(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    softmax = ez / ez.sum(axis=1, keepdims=True)
    valid = labels.valid
    safe = np.where(valid, labels.labels, 0)
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
    wmap = np.where(valid, weights, 0.0)[:, None]
    return (softmax - onehot) * wmap


def _huber(d: np.ndarray) -> np.ndarray:
    ad = np.abs(d)
    return np.where(ad < SMOOTH_L1_BETA, 0.5 * d * d / SMOOTH_L1_BETA, ad - 0.5 * SMOOTH_L1_BETA)


def _huber_grad(d: np.ndarray) -> np.ndarray:
    return np.where(np.abs(d) < SMOOTH_L1_BETA, d / SMOOTH_L1_BETA, np.sign(d))


def smooth_l1(pred: CoordinateMap, target: CoordinateMap) -> LossMap:
    """Smooth-L1 distance between coordinate pairs, summed over x and y."""
    if pred.shape != target.shape:
        raise ShapeError(f"coordinate shapes differ: {pred.shape} vs {target.shape}")
    values = _huber(pred.px - target.px) + _huber(pred.py - target.py)
    return LossMap(values, np.ones(values.shape, dtype=bool))


def smooth_l1_grad(pred: CoordinateMap, target: CoordinateMap):
    """d smooth_l1 / d pred, per pixel and axis, with target held constant."""
    if pred.shape != target.shape:
        raise ShapeError(f"coordinate shapes differ: {pred.shape} vs {target.shape}")
    return _huber_grad(pred.px - target.px), _huber_grad(pred.py - target.py)


def guided_weight(loss: LossMap, aux: LossMap, lam: float) -> np.ndarray:
    """1 where the refined loss is strictly smaller than the plain one, else 1+lambda."""
    if loss.shape != aux.shape:
        raise ShapeError(f"loss shapes differ: {loss.shape} vs {aux.shape}")
    return np.where(loss.values < aux.values, 1.0, 1.0 + lam)


def offset_guided_loss(loss: LossMap, aux: LossMap, lam: float) -> LossMap:
    """Reweight the per-pixel loss by 1+lambda wherever it failed to beat `aux`.

    Ties count as failures, so a zero offset is always penalized. `aux`
    carries no gradient; differentiating this op scales the incoming
    gradient by the weight only.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    w = guided_weight(loss, aux, lam)
    valid = loss.valid & aux.valid
    return LossMap(np.where(valid, loss.values * w, 0.0), valid)


def _pool_mean(values: np.ndarray, valid: np.ndarray, r: int) -> LossMap:
    """Mean over each r-by-r block's valid pixels; a block is valid if any are."""
    n, hh, ww = values.shape
    vsum = values.reshape(n, hh // r, r, ww // r, r).sum(axis=(2, 4))
    count = valid.reshape(n, hh // r, r, ww // r, r).sum(axis=(2, 4))
    ok = count > 0
    mean = np.where(ok, vsum / np.maximum(count, 1), 0.0)
    return LossMap(mean, ok)


def build_candidate_set(
    u: np.ndarray,
    off: OffsetField,
    k: int,
    logits_fn: Callable[[np.ndarray], np.ndarray],
    labels: LabelMap,
) -> CandidateSet:
    """Assemble the 5-way candidate losses and coordinates for one batch.

    Each candidate runs its sampler at ratio k, maps the result through
    `logits_fn` (identity when the upsampled tensor already is the logits),
    and scores it with cross-entropy against `labels`. If `logits_fn`
    enlarges the map by a further integer factor, the per-pixel losses are
    averaged back over that factor's blocks so losses and coordinates agree
    on the sampler's output grid. Corner entries are constants; only the
    index-0 path is meant to carry gradient.
    """
    u = as_tensor4(u)
    if off.m != 1:
        raise ShapeError("candidate machinery needs shared offsets (m = 1)")
    n, c, h, w = u.shape

    def score(v: np.ndarray) -> LossMap:
        logits = logits_fn(v)
        lm = cross_entropy_map(logits, labels)
        lh, lw = lm.shape[1], lm.shape[2]
        if (lh, lw) == (off.h_out, off.w_out):
            return lm
        if lh % off.h_out or lw % off.w_out or lh // off.h_out != lw // off.w_out:
            raise ShapeError(
                f"loss resolution {(lh, lw)} is not an integer multiple of ({off.h_out}, {off.w_out})"
            )
        return _pool_mean(lm.values, lm.valid, lh // off.h_out)

    losses = [score(lau_forward(u, off, k))]
    for corner in CORNERS:
        losses.append(score(corner_upsample(u, k, corner)))

    qx, qy = lau_source_coords(h, w, off, k)
    coords = [CoordinateMap(qx[:, 0], qy[:, 0])]
    for corner in CORNERS:
        xs, ys = corner_source_coords(h, w, off.h_out, off.w_out, k, corner)
        px = np.broadcast_to(xs[None, None, :].astype(np.float64), (n, off.h_out, off.w_out))
        py = np.broadcast_to(ys[None, :, None].astype(np.float64), (n, off.h_out, off.w_out))
        coords.append(CoordinateMap(px.copy(), py.copy()))
    return CandidateSet(losses, coords)


def select_theta_opt(cs: CandidateSet) -> CoordinateMap:
    """Coordinates of the minimum-loss candidate per pixel.

    Ties go to the lowest index, so the refined sampler (index 0) wins any
    tie against a corner.
    """
    stack = cs.loss_stack()
    best = stack.argmin(axis=0)  # argmin takes the first minimum
    px = np.stack([cm.px for cm in cs.coords])
    py = np.stack([cm.py for cm in cs.coords])
    sel = best[None]
    return CoordinateMap(
        np.take_along_axis(px, sel, axis=0)[0], np.take_along_axis(py, sel, axis=0)[0]
    )


def regression_weight(cs: CandidateSet, lam: float) -> np.ndarray:
    """1 where the refined loss is <= every candidate, else 1+lambda."""
    stack = cs.loss_stack()
    return np.where(stack[0] <= stack.min(axis=0), 1.0, 1.0 + lam)


def regression_loss(cs: CandidateSet, gamma: float, lam: float) -> LossMap:
    """Coordinate-regression loss: gamma * smooth-L1 to the best candidate
    plus the weighted refined loss.

    The smooth-L1 target and the candidate losses are constants under
    differentiation; gradient flows through the refined loss (scaled by its
    weight) and through the predicted coordinates only.
    """
    if gamma < 0 or lam < 0:
        raise ValueError(f"gamma and lambda must be >= 0, got {gamma}, {lam}")
    theta_opt = select_theta_opt(cs)
    sl1 = smooth_l1(cs.coords[0], theta_opt)
    w = regression_weight(cs, lam)
    main = cs.losses[0]
    valid = main.valid
    values = np.where(valid, gamma * sl1.values + main.values * w, 0.0)
    return LossMap(values, valid)


def reduce_loss(lm: LossMap) -> float:
    """Mean loss over valid pixels."""
    count = int(lm.valid.sum())
    if count == 0:
        raise ValueError("loss reduction over zero valid pixels")
    return float(lm.values[lm.valid].sum() / count)
