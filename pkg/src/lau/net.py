"""Toy segmentation network with explicit backpropagation and SGD training.

The network is deliberately small: a two-layer conv decoder produces a
feature map F, a 1x1 head turns F into low-resolution class logits, and an
offset branch (1x1 conv + leaky ReLU + 3x3 conv + pixel shuffle) predicts
one sub-pixel displacement pair per output position of the offset-refined
upsampler. The refined map is brought to full label resolution by a final
plain bilinear stage covering the remaining factor.

No autograd framework: every forward op has a hand-written adjoint, and
`gradcheck` verifies them against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, LabelMap, Rng, ShapeError, as_tensor4
from .losses import (
    LossMap,
    build_candidate_set,
    cross_entropy_backward,
    cross_entropy_map,
    guided_weight,
    reduce_loss,
    regression_loss,
    regression_weight,
    select_theta_opt,
    smooth_l1_grad,
)
from .samplers import (
    OffsetField,
    bilinear_upsample,
    bilinear_upsample_backward,
    lau_backward,
    lau_forward,
    pixel_shuffle,
    pixel_unshuffle,
)
from . import synth

__all__ = [
    "ConvLayer",
    "GradcheckReport",
    "OffsetPredictor",
    "SegNet",
    "TrainConfig",
    "TrainResult",
    "build_net",
    "conv2d_backward",
    "conv2d_forward",
    "decoder_forward",
    "evaluate",
    "gradcheck",
    "leaky_relu",
    "leaky_relu_backward",
    "load_checkpoint",
    "network_forward",
    "offset_predictor_forward",
    "poly_lr",
    "save_checkpoint",
    "sgd_step",
    "train",
]


@dataclass
class ConvLayer:
    """2-D cross-correlation layer; 3x3 kernels use zero padding 1, 1x1 none."""

    in_ch: int
    out_ch: int
    kernel: int
    weights: np.ndarray  # (out_ch, in_ch, kernel, kernel)
    bias: np.ndarray  # (out_ch,)
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.kernel not in (1, 3):
            raise ValueError(f"kernel must be 1 or 3, got {self.kernel}")
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        want = (self.out_ch, self.in_ch, self.kernel, self.kernel)
        if self.weights.shape != want:
            raise ShapeError(f"weights shape {self.weights.shape} != {want}")
        if self.bias.shape != (self.out_ch,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.out_ch},)")

    @classmethod
    def init(cls, in_ch, out_ch, kernel, rng: Rng, weight_decay=0.0, zero=False):
        shape = (out_ch, in_ch, kernel, kernel)
        if zero:
            w = np.zeros(shape)
            b = np.zeros(out_ch)
        else:
            bound = 1.0 / np.sqrt(in_ch * kernel * kernel)
            w = rng.uniforms(shape) * (2 * bound) - bound
            b = rng.uniforms((out_ch,)) * (2 * bound) - bound
        return cls(in_ch, out_ch, kernel, w, b, weight_decay)


def conv2d_forward(layer: ConvLayer, x: np.ndarray) -> np.ndarray:
    x = as_tensor4(x)
    n, cin, h, w = x.shape
    if cin != layer.in_ch:
        raise ShapeError(f"input channels {cin} != layer in_ch {layer.in_ch}")
    kk = layer.kernel
    pad = (kk - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((n, layer.out_ch, h, w))
    for dy in range(kk):
        for dx in range(kk):
            out += np.einsum(
                "oc,nchw->nohw",
                layer.weights[:, :, dy, dx],
                xp[:, :, dy : dy + h, dx : dx + w],
                optimize=True,
            )
    out += layer.bias[None, :, None, None]
    return out


def conv2d_backward(layer: ConvLayer, x: np.ndarray, dy_out: np.ndarray):
    """Exact adjoints of conv2d_forward: returns (dX, dW, db)."""
    x = as_tensor4(x)
    dy_out = as_tensor4(dy_out)
    n, cin, h, w = x.shape
    if dy_out.shape != (n, layer.out_ch, h, w):
        raise ShapeError(f"dY shape {dy_out.shape} != ({n},{layer.out_ch},{h},{w})")
    kk = layer.kernel
    pad = (kk - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    db = dy_out.sum(axis=(0, 2, 3))
    dw = np.zeros_like(layer.weights)
    dxp = np.zeros_like(xp)
    for dy in range(kk):
        for dx in range(kk):
            patch = xp[:, :, dy : dy + h, dx : dx + w]
            dw[:, :, dy, dx] = np.einsum("nohw,nchw->oc", dy_out, patch, optimize=True)
            dxp[:, :, dy : dy + h, dx : dx + w] += np.einsum(
                "oc,nohw->nchw", layer.weights[:, :, dy, dx], dy_out, optimize=True
            )
    dxin = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return dxin, dw, db


def leaky_relu(x: np.ndarray, alpha: float) -> np.ndarray:
    """x where x >= 0, else alpha * x. Zero counts as nonnegative."""
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_backward(x: np.ndarray, dy: np.ndarray, alpha: float) -> np.ndarray:
    return dy * np.where(x >= 0, 1.0, alpha)


@dataclass
class OffsetPredictor:
    """Offset branch: 1x1 reduce, leaky ReLU, 3x3 expand, pixel shuffle.

    The expand layer starts at exactly zero so the first forward pass emits
    zero offsets and the refined upsampler degenerates to plain bilinear.
    The shuffled channels interleave the displacement pairs: channel 2g is
    the x shift of group g, channel 2g+1 its y shift.
    """

    reduce: ConvLayer
    expand: ConvLayer
    ratio: int
    groups: int
    slope: float

    def __post_init__(self):
        want = 2 * self.groups * self.ratio * self.ratio
        if self.expand.out_ch != want:
            raise ShapeError(f"expand out_ch {self.expand.out_ch} != 2*m*k^2 = {want}")

    @classmethod
    def init(cls, in_ch, reduced_ch, ratio, groups, slope, rng: Rng):
        # no weight decay on either conv: the offsets must stay free to grow
        reduce = ConvLayer.init(in_ch, reduced_ch, 1, rng, weight_decay=0.0)
        expand = ConvLayer.init(
            reduced_ch, 2 * groups * ratio * ratio, 3, rng, weight_decay=0.0, zero=True
        )
        return cls(reduce, expand, ratio, groups, slope)


def _predictor_forward(pred: OffsetPredictor, f: np.ndarray):
    ar = conv2d_forward(pred.reduce, f)
    hr = leaky_relu(ar, pred.slope)
    ae = conv2d_forward(pred.expand, hr)
    o = pixel_shuffle(ae, pred.ratio)
    off = OffsetField(o[:, 0::2], o[:, 1::2])
    return off, (ar, hr)


def offset_predictor_forward(pred: OffsetPredictor, f: np.ndarray) -> OffsetField:
    return _predictor_forward(pred, f)[0]


def _predictor_backward(pred: OffsetPredictor, f: np.ndarray, cache, doff: OffsetField):
    ar, hr = cache
    do = np.empty((doff.n, 2 * doff.m, doff.h_out, doff.w_out))
    do[:, 0::2] = doff.dx
    do[:, 1::2] = doff.dy
    dae = pixel_unshuffle(do, pred.ratio)
    dhr, dwe, dbe = conv2d_backward(pred.expand, hr, dae)
    dar = leaky_relu_backward(ar, dhr, pred.slope)
    df, dwr, dbr = conv2d_backward(pred.reduce, f, dar)
    return df, {"reduce": (dwr, dbr), "expand": (dwe, dbe)}


@dataclass
class SegNet:
    """Decoder, logits head, and (optionally) the offset branch.

    With no predictor the pipeline is the plain-bilinear baseline at the
    same total upsampling factor.
    """

    conv1: ConvLayer
    conv2: ConvLayer
    head: ConvLayer
    predictor: OffsetPredictor | None
    lau_ratio: int
    total_ratio: int
    slope: float

    def named_layers(self):
        layers = [("conv1", self.conv1), ("conv2", self.conv2), ("head", self.head)]
        if self.predictor is not None:
            layers += [("reduce", self.predictor.reduce), ("expand", self.predictor.expand)]
        return layers


def build_net(
    in_channels: int,
    num_classes: int,
    decoder_channels: int,
    reduced_channels: int,
    lau_ratio: int,
    total_ratio: int,
    offset_groups: int,
    slope: float,
    rng: Rng,
    weight_decay: float,
    with_predictor: bool = True,
) -> SegNet:
    conv1 = ConvLayer.init(in_channels, decoder_channels, 3, rng, weight_decay)
    conv2 = ConvLayer.init(decoder_channels, decoder_channels, 3, rng, weight_decay)
    head = ConvLayer.init(decoder_channels, num_classes, 1, rng, weight_decay)
    pred = None
    if with_predictor:
        groups = num_classes if offset_groups == 0 else offset_groups
        pred = OffsetPredictor.init(decoder_channels, reduced_channels, lau_ratio, groups, slope, rng)
    return SegNet(conv1, conv2, head, pred, lau_ratio, total_ratio, slope)


def decoder_forward(net: SegNet, x: np.ndarray):
    """Two 3x3 conv + leaky ReLU stages, then the 1x1 logits head.

    Returns (F, U): the shared feature map that also feeds the offset
    branch, and the low-resolution class logits.
    """
    a1 = conv2d_forward(net.conv1, x)
    h1 = leaky_relu(a1, net.slope)
    a2 = conv2d_forward(net.conv2, h1)
    f = leaky_relu(a2, net.slope)
    u = conv2d_forward(net.head, f)
    return f, u


def network_forward(net: SegNet, x: np.ndarray):
    """Full pipeline forward; returns (full-res logits, cache for backward)."""
    a1 = conv2d_forward(net.conv1, x)
    h1 = leaky_relu(a1, net.slope)
    a2 = conv2d_forward(net.conv2, h1)
    f = leaky_relu(a2, net.slope)
    u = conv2d_forward(net.head, f)
    rest = net.total_ratio // net.lau_ratio
    if net.predictor is not None:
        off, pcache = _predictor_forward(net.predictor, f)
        v1 = lau_forward(u, off, net.lau_ratio)
    else:
        off, pcache = None, None
        v1 = bilinear_upsample(u, net.lau_ratio)
    logits = bilinear_upsample(v1, rest) if rest > 1 else v1
    cache = {"x": x, "a1": a1, "h1": h1, "a2": a2, "f": f, "u": u,
             "off": off, "pcache": pcache, "v1": v1, "rest": rest}
    return logits, cache


def network_backward(net: SegNet, cache, dlogits: np.ndarray, doff_extra: OffsetField | None = None):
    """Backpropagate dlogits (plus any direct offset gradient) to all layers."""
    rest = cache["rest"]
    v1 = cache["v1"]
    dv1 = bilinear_upsample_backward(v1.shape, rest, dlogits) if rest > 1 else dlogits
    grads = {}
    if net.predictor is not None:
        du, doff = lau_backward(cache["u"], cache["off"], net.lau_ratio, dv1)
        if doff_extra is not None:
            doff = OffsetField(doff.dx + doff_extra.dx, doff.dy + doff_extra.dy)
        df_pred, pgrads = _predictor_backward(net.predictor, cache["f"], cache["pcache"], doff)
        grads.update(pgrads)
    else:
        du = bilinear_upsample_backward(cache["u"].shape, net.lau_ratio, dv1)
        df_pred = 0.0
    df_head, dwh, dbh = conv2d_backward(net.head, cache["f"], du)
    grads["head"] = (dwh, dbh)
    df = df_head + df_pred
    da2 = leaky_relu_backward(cache["a2"], df, net.slope)
    dh1, dw2, db2 = conv2d_backward(net.conv2, cache["h1"], da2)
    grads["conv2"] = (dw2, db2)
    da1 = leaky_relu_backward(cache["a1"], dh1, net.slope)
    _, dw1, db1 = conv2d_backward(net.conv1, cache["x"], da1)
    grads["conv1"] = (dw1, db1)
    return grads


def poly_lr(base: float, iteration: int, total: int, power: float) -> float:
    """Polynomial decay: base * (1 - iteration/total) ** power."""
    if not 0 <= iteration <= total:
        raise ValueError(f"iteration {iteration} outside [0, {total}]")
    return base * (1.0 - iteration / total) ** power


def sgd_step(params, grads, velocities, lr: float, momentum: float, decays) -> None:
    """One momentum-SGD update, in place: v <- mu*v + (g + wd*w); w <- w - lr*v."""
    for w, g, v, wd in zip(params, grads, velocities, decays):
        if w.shape != g.shape or w.shape != v.shape:
            raise ShapeError(f"parameter/gradient/buffer shapes differ: {w.shape}")
        v *= momentum
        v += g + wd * w
        w -= lr * v


@dataclass
class TrainConfig:
    """Everything one training run needs, resolved and validated."""

    num_classes: int
    in_channels: int
    decoder_channels: int
    reduced_channels: int
    offset_groups: int
    slope: float
    lau_ratio: int
    total_upsample: int
    upsampler: str  # "lau" | "bilinear"
    loss_kind: str  # "ce" | "off" | "reg"
    lam: float
    gamma: float
    base_lr: float
    power: float
    momentum: float
    weight_decay: float
    epochs: int
    batch: int
    seed: int
    total_iters: int = 0  # 0 = epochs * batches per epoch


@dataclass
class TrainResult:
    net: SegNet
    metrics: list  # rows: dict(epoch, split, loss, pixacc, miou, speckle)


def _batches(count: int, batch: int):
    return [(i, min(i + batch, count)) for i in range(0, count, batch)]


def _stack_features(samples, idx):
    return np.concatenate([samples[i].features for i in idx], axis=0)


def _stack_labels(samples, idx, num_classes, ignore_value):
    labels = np.concatenate([samples[i].labels.labels for i in idx], axis=0)
    return LabelMap(labels, num_classes, ignore_value)


def _loss_forward(net: SegNet, cfg: TrainConfig, logits, cache, labels: LabelMap):
    """Scalar loss plus what the backward pass needs (per-pixel CE weights
    at label resolution, and any direct offset gradient)."""
    ce = cross_entropy_map(logits, labels)
    nv = int(ce.valid.sum())
    if nv == 0:
        raise ValueError("batch contains no valid pixels")
    if cfg.loss_kind == "ce" or net.predictor is None:
        scalar = reduce_loss(ce)
        weights = np.where(ce.valid, 1.0 / nv, 0.0)
        return scalar, weights, None
    if cfg.loss_kind == "off":
        aux_v1 = bilinear_upsample(cache["u"], net.lau_ratio)
        aux = bilinear_upsample(aux_v1, cache["rest"]) if cache["rest"] > 1 else aux_v1
        ce_aux = cross_entropy_map(aux, labels)
        lam_w = guided_weight(ce, ce_aux, cfg.lam)
        scalar = reduce_loss(LossMap(np.where(ce.valid, ce.values * lam_w, 0.0), ce.valid))
        weights = np.where(ce.valid, lam_w / nv, 0.0)
        return scalar, weights, None
    if cfg.loss_kind == "reg":
        rest = cache["rest"]
        rest_fn = (lambda v: bilinear_upsample(v, rest)) if rest > 1 else (lambda v: v)
        cs = build_candidate_set(cache["u"], cache["off"], net.lau_ratio, rest_fn, labels)
        out = regression_loss(cs, cfg.gamma, cfg.lam)
        scalar = reduce_loss(out)
        ns = int(out.valid.sum())
        lam_w = regression_weight(cs, cfg.lam)
        # CE gradient: each full-res pixel inherits its stage block's weight
        # over (stage count * block valid count); with rest == 1 this is the
        # plain lambda-weight / valid-count map.
        if rest > 1:
            n, sh, sw = out.shape
            counts = ce.valid.reshape(n, sh, rest, sw, rest).sum(axis=(2, 4))
            per_block = np.where(out.valid, lam_w / (ns * np.maximum(counts, 1)), 0.0)
            weights = np.repeat(np.repeat(per_block, rest, axis=1), rest, axis=2)
            weights = np.where(ce.valid, weights, 0.0)
        else:
            weights = np.where(ce.valid, lam_w / ns, 0.0)
        # direct offset gradient from the smooth-L1 pull toward theta_opt
        theta = select_theta_opt(cs)
        gx, gy = smooth_l1_grad(cs.coords[0], theta)
        scale = np.where(out.valid, cfg.gamma / ns, 0.0)
        doff = OffsetField((gx * scale)[:, None], (gy * scale)[:, None])
        return scalar, weights, doff
    raise ConfigError("loss", f"unknown loss kind {cfg.loss_kind!r}")


def _train_iteration(net: SegNet, cfg: TrainConfig, features, labels, velocities, lr):
    logits, cache = network_forward(net, features)
    scalar, weights, doff_extra = _loss_forward(net, cfg, logits, cache, labels)
    dlogits = cross_entropy_backward(logits, labels, weights)
    grads = network_backward(net, cache, dlogits, doff_extra)
    names = [name for name, _ in net.named_layers()]
    params, gs, decays = [], [], []
    for name, layer in net.named_layers():
        dw, db = grads[name]
        params += [layer.weights, layer.bias]
        gs += [dw, db]
        decays += [layer.weight_decay, layer.weight_decay]
    sgd_step(params, gs, velocities, lr, cfg.momentum, decays)
    return scalar


def evaluate(net: SegNet, cfg: TrainConfig, samples) -> dict:
    """Split-level loss and metrics with the current parameters."""
    loss_sum = 0.0
    loss_count = 0
    preds = []
    gts = []
    eval_batch = max(cfg.batch, 64)
    for lo, hi in _batches(len(samples), eval_batch):
        idx = range(lo, hi)
        features = _stack_features(samples, idx)
        labels = _stack_labels(samples, idx, cfg.num_classes, samples[lo].labels.ignore_value)
        logits, cache = network_forward(net, features)
        scalar, _, _ = _loss_forward(net, cfg, logits, cache, labels)
        nv = int(labels.valid.sum())
        loss_sum += scalar * nv
        loss_count += nv
        preds.append(np.argmax(logits, axis=1))
        gts.append(labels.labels)
    pred_map = LabelMap(np.concatenate(preds), cfg.num_classes)
    gt_map = LabelMap(np.concatenate(gts), cfg.num_classes, samples[0].labels.ignore_value)
    return {
        "loss": loss_sum / loss_count,
        "pixacc": synth.pix_acc(pred_map, gt_map),
        "miou": synth.miou(pred_map, gt_map, cfg.num_classes),
        "speckle": synth.speckle_rate(pred_map),
    }


def train(cfg: TrainConfig, train_samples, val_samples) -> TrainResult:
    """Run the configured training loop; deterministic given cfg.seed."""
    _validate_train_config(cfg, train_samples)
    rng = Rng(cfg.seed)
    net = build_net(
        cfg.in_channels,
        cfg.num_classes,
        cfg.decoder_channels,
        cfg.reduced_channels,
        cfg.lau_ratio,
        cfg.total_upsample,
        cfg.offset_groups,
        cfg.slope,
        rng,
        cfg.weight_decay,
        with_predictor=(cfg.upsampler == "lau"),
    )
    velocities = []
    for _, layer in net.named_layers():
        velocities += [np.zeros_like(layer.weights), np.zeros_like(layer.bias)]
    batches = _batches(len(train_samples), cfg.batch)
    total = cfg.total_iters if cfg.total_iters > 0 else cfg.epochs * len(batches)
    metrics = []
    it = 0
    order = list(range(len(train_samples)))
    ignore = train_samples[0].labels.ignore_value
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        for lo, hi in batches:
            idx = order[lo:hi]
            features = _stack_features(train_samples, idx)
            labels = _stack_labels(train_samples, idx, cfg.num_classes, ignore)
            lr = poly_lr(cfg.base_lr, min(it, total), total, cfg.power)
            _train_iteration(net, cfg, features, labels, velocities, lr)
            it += 1
        for split, samples in (("train", train_samples), ("val", val_samples)):
            row = {"epoch": epoch, "split": split}
            row.update(evaluate(net, cfg, samples))
            metrics.append(row)
    return TrainResult(net, metrics)


def _validate_train_config(cfg: TrainConfig, train_samples):
    if cfg.total_upsample % cfg.lau_ratio != 0:
        raise ConfigError("lau_ratio", f"{cfg.lau_ratio} does not divide total {cfg.total_upsample}")
    if cfg.lam < 0:
        raise ConfigError("lambda", "must be >= 0")
    if cfg.gamma < 0:
        raise ConfigError("gamma", "must be >= 0")
    if cfg.loss_kind not in ("ce", "off", "reg"):
        raise ConfigError("loss", f"unknown kind {cfg.loss_kind!r}")
    if cfg.upsampler not in ("lau", "bilinear"):
        raise ConfigError("upsampler", f"unknown upsampler {cfg.upsampler!r}")
    if cfg.upsampler == "bilinear" and cfg.loss_kind != "ce":
        raise ConfigError("loss", "bilinear baseline supports only loss=ce")
    if cfg.loss_kind == "reg" and cfg.offset_groups != 1:
        raise ConfigError("m_channels", "loss=reg needs shared offsets (m=1)")
    if not train_samples:
        raise ConfigError("train_count", "empty training set")
    if cfg.epochs < 1:
        raise ConfigError("epochs", "must be >= 1")
    if cfg.batch < 1:
        raise ConfigError("batch", "must be >= 1")
    if not 0 <= cfg.momentum < 1:
        raise ConfigError("momentum", "must be in [0, 1)")
    if cfg.base_lr <= 0:
        raise ConfigError("lr", "must be > 0")


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradcheckReport:
    subject: str
    cases: int
    max_rel_err: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def gradcheck(fn, points, h: float = 1e-6, tolerance: float = 1e-5, subject: str = "fn") -> GradcheckReport:
    """Compare fn's analytic gradient with central differences at each point.

    fn maps a flat float64 vector to (scalar value, gradient vector). The
    relative error is |a - n| / max(1e-8, |a| + |n|); entries above the
    tolerance are recorded as failures, never raised.
    """
    max_rel = 0.0
    failures = []
    for pi, x in enumerate(points):
        x = np.asarray(x, dtype=np.float64)
        _, grad = fn(x)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != x.shape:
            raise ShapeError(f"gradient shape {grad.shape} != point shape {x.shape}")
        for j in range(x.size):
            xp = x.copy()
            xp[j] += h
            xm = x.copy()
            xm[j] -= h
            num = (fn(xp)[0] - fn(xm)[0]) / (2.0 * h)
            a = grad[j]
            rel = abs(a - num) / max(1e-8, abs(a) + abs(num))
            if rel > max_rel:
                max_rel = rel
            if rel > tolerance:
                failures.append(f"point {pi} coord {j}: analytic {a:.6e} numeric {num:.6e} rel {rel:.3e}")
    return GradcheckReport(subject, len(points), max_rel, failures)


def flatten_params(net: SegNet) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, layer in net.named_layers()
                           for arr in (layer.weights, layer.bias)])


def set_params(net: SegNet, vector: np.ndarray) -> None:
    pos = 0
    for _, layer in net.named_layers():
        for arr in (layer.weights, layer.bias):
            arr[...] = vector[pos : pos + arr.size].reshape(arr.shape)
            pos += arr.size
    if pos != vector.size:
        raise ShapeError(f"parameter vector length {vector.size} != {pos}")


def network_loss_fn(net: SegNet, cfg: TrainConfig, features, labels):
    """Wrap the full pipeline as a gradcheck subject over its parameters."""

    def fn(vector):
        set_params(net, vector)
        logits, cache = network_forward(net, features)
        scalar, weights, doff_extra = _loss_forward(net, cfg, logits, cache, labels)
        dlogits = cross_entropy_backward(logits, labels, weights)
        grads = network_backward(net, cache, dlogits, doff_extra)
        flat = np.concatenate([
            np.concatenate([grads[name][0].ravel(), grads[name][1].ravel()])
            for name, _ in net.named_layers()
        ])
        return scalar, flat

    return fn


# ---------------------------------------------------------------------------
# checkpoints: one text manifest line, then weight+bias dumps per layer

def save_checkpoint(path, net: SegNet) -> None:
    from .core import _HEADER  # shared binary convention

    entries = []
    for name, layer in net.named_layers():
        o, i, kh, kw = layer.weights.shape
        entries.append(f"{name}:{o},{i},{kh},{kw}")
    with open(path, "wb") as fh:
        fh.write((" ".join(entries) + "\n").encode("ascii"))
        for _, layer in net.named_layers():
            fh.write(_HEADER.pack(*layer.weights.shape))
            fh.write(layer.weights.astype("<f8").tobytes())
            fh.write(_HEADER.pack(1, layer.out_ch, 1, 1))
            fh.write(layer.bias.reshape(1, -1, 1, 1).astype("<f8").tobytes())


def load_checkpoint(path, net: SegNet) -> None:
    from .core import _HEADER

    with open(path, "rb") as fh:
        manifest = fh.readline().decode("ascii").strip()
        expected = []
        for name, layer in net.named_layers():
            o, i, kh, kw = layer.weights.shape
            expected.append(f"{name}:{o},{i},{kh},{kw}")
        if manifest != " ".join(expected):
            raise IOError(f"checkpoint manifest {manifest!r} does not match this network")
        for _, layer in net.named_layers():
            for arr, want_dims in (
                (layer.weights, layer.weights.shape),
                (layer.bias, (1, layer.out_ch, 1, 1)),
            ):
                dims = _HEADER.unpack(fh.read(_HEADER.size))
                if dims != tuple(want_dims):
                    raise IOError(f"checkpoint tensor dims {dims} != {tuple(want_dims)}")
                count = int(np.prod(dims))
                payload = fh.read(8 * count)
                if len(payload) != 8 * count:
                    raise IOError("truncated checkpoint payload")
                arr[...] = np.frombuffer(payload, dtype="<f8").reshape(arr.shape)
