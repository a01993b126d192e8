"""Command-line entry point: gradient checks, sampler demos, training, sweeps.

All outputs (CSV, PPM, checkpoints) are pure functions of the configuration
and the input files, so re-running a command overwrites its artifacts with
byte-identical content. Set LAU_THREADS to run sweep points in parallel;
0 or unset keeps everything sequential.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .checks import standard_suite
from .core import ConfigError, read_tensor
from .net import TrainConfig, network_forward, save_checkpoint, train
from .samplers import (
    Corner,
    OffsetField,
    bilinear_upsample,
    corner_upsample,
    lau_forward,
    pixel_shuffle,
)
from .synth import gen_sample

__all__ = ["ExperimentConfig", "main", "write_ppm"]

# offset applied to the per-sample index stream so validation data never
# overlaps training data generated from the same seed
_VAL_INDEX_BASE = 1 << 20

PALETTE = np.array(
    [
        (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25),
        (0, 130, 200), (245, 130, 48), (145, 30, 180), (70, 240, 240),
        (240, 50, 230), (210, 245, 60), (250, 190, 212), (0, 128, 128),
        (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    ],
    dtype=np.uint8,
)


@dataclass
class ExperimentConfig:
    """JSON-configurable experiment description; unknown keys are an error."""

    seed: int = 0
    classes: int = 4
    image_size: int = 64
    output_stride: int = 8
    lau_ratio: int = 4
    lam: float = 0.3  # JSON key "lambda"
    gamma: float = 0.1
    loss: str = "off"
    upsampler: str = "lau"
    lr: float = 0.001
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch: int = 8
    m_channels: int = 1
    hidden_channels: int = 64
    leaky_slope: float = 0.01
    noise_std: float = 0.25
    train_count: int = 256
    val_count: int = 64

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)} - {"lam"} | {"lambda"}
        for key in obj:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        kwargs = {("lam" if k == "lambda" else k): v for k, v in obj.items()}
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, field_name, message):
            if not cond:
                raise ConfigError(field_name, message)

        need(isinstance(self.seed, int), "seed", "must be an integer")
        need(isinstance(self.classes, int) and self.classes >= 2, "classes", "must be an integer >= 2")
        need(isinstance(self.output_stride, int) and self.output_stride >= 1,
             "output_stride", "must be an integer >= 1")
        need(isinstance(self.image_size, int) and self.image_size >= self.output_stride
             and self.image_size % self.output_stride == 0,
             "image_size", f"must be a positive multiple of output_stride {self.output_stride}")
        need(isinstance(self.lau_ratio, int) and self.lau_ratio >= 1,
             "lau_ratio", "must be an integer >= 1")
        need(self.output_stride % self.lau_ratio == 0,
             "lau_ratio", f"{self.lau_ratio} does not divide output_stride {self.output_stride}")
        need(self.lam >= 0, "lambda", "must be >= 0")
        need(self.gamma >= 0, "gamma", "must be >= 0")
        need(self.loss in ("ce", "off", "reg"), "loss", "must be one of ce, off, reg")
        need(self.upsampler in ("lau", "bilinear"), "upsampler", "must be lau or bilinear")
        if self.upsampler == "bilinear":
            need(self.loss == "ce", "loss", "bilinear baseline supports only loss=ce")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.power >= 0, "power", "must be >= 0")
        need(0 <= self.momentum < 1, "momentum", "must be in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay", "must be >= 0")
        need(isinstance(self.epochs, int) and self.epochs >= 1, "epochs", "must be an integer >= 1")
        need(isinstance(self.batch, int) and self.batch >= 1, "batch", "must be an integer >= 1")
        need(self.m_channels in (1, self.classes), "m_channels",
             f"must be 1 (shared) or the class count {self.classes}")
        if self.loss == "reg":
            need(self.m_channels == 1, "m_channels", "loss=reg needs shared offsets (m=1)")
        need(isinstance(self.hidden_channels, int) and self.hidden_channels >= 1,
             "hidden_channels", "must be an integer >= 1")
        need(0 <= self.leaky_slope < 1, "leaky_slope", "must be in [0, 1)")
        need(self.noise_std >= 0, "noise_std", "must be >= 0")
        need(isinstance(self.train_count, int) and self.train_count >= 1,
             "train_count", "must be an integer >= 1")
        need(isinstance(self.val_count, int) and self.val_count >= 1,
             "val_count", "must be an integer >= 1")

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            num_classes=self.classes,
            in_channels=self.classes,
            decoder_channels=self.hidden_channels,
            reduced_channels=self.hidden_channels,
            offset_groups=self.m_channels,
            slope=self.leaky_slope,
            lau_ratio=self.lau_ratio,
            total_upsample=self.output_stride,
            upsampler=self.upsampler,
            loss_kind=self.loss,
            lam=self.lam,
            gamma=self.gamma,
            base_lr=self.lr,
            power=self.power,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch=self.batch,
            seed=self.seed,
        )

    def datasets(self):
        args = (self.image_size, self.image_size, self.classes, self.output_stride, self.noise_std)
        train_set = [gen_sample(self.seed, i, *args) for i in range(self.train_count)]
        val_set = [gen_sample(self.seed, _VAL_INDEX_BASE + i, *args) for i in range(self.val_count)]
        return train_set, val_set


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ConfigError("config", "top-level JSON value must be an object")
    return ExperimentConfig.from_json(obj)


def write_ppm(path, labels: np.ndarray) -> None:
    """Write one (h, w) label map as binary PPM with the fixed 16-color palette."""
    if labels.ndim != 2:
        raise ValueError(f"expected a single (h, w) map, got shape {labels.shape}")
    rgb = PALETTE[labels.astype(np.intp) % len(PALETTE)]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{labels.shape[1]} {labels.shape[0]}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def _fmt(v: float) -> str:
    return f"{v:.17g}"


# ---------------------------------------------------------------------------
# subcommands

def cmd_gradcheck(args) -> int:
    reports = standard_suite(seed=args.seed, h=args.h, tolerance=args.tolerance)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "gradcheck.csv")
    with open(path, "w") as fh:
        fh.write("subject,cases,max_rel_err,failures\n")
        for r in reports:
            fh.write(f"{r.subject},{r.cases},{_fmt(r.max_rel_err)},{len(r.failures)}\n")
    total_failures = sum(len(r.failures) for r in reports)
    for r in reports:
        status = "ok" if not r.failures else f"{len(r.failures)} FAILURES"
        print(f"{r.subject}: {r.cases} cases, max rel err {r.max_rel_err:.3e}, {status}")
    print(f"report written to {path}")
    return 0 if total_failures == 0 else 1


_CORNER_NAMES = {
    "corner-ff": Corner("floor", "floor"),
    "corner-cf": Corner("ceil", "floor"),
    "corner-fc": Corner("floor", "ceil"),
    "corner-cc": Corner("ceil", "ceil"),
}


def cmd_demo(args) -> int:
    k = args.ratio
    if args.infile:
        u = read_tensor(args.infile)
    else:
        sample = gen_sample(args.seed, 0, args.size, args.size, args.classes, k, 0.25)
        u = sample.features
    if args.upsampler == "bilinear":
        v = bilinear_upsample(u, k)
    elif args.upsampler == "lau":
        off = OffsetField.zeros(u.shape[0], 1, k * u.shape[2], k * u.shape[3])
        v = lau_forward(u, off, k)
    elif args.upsampler == "pixelshuffle":
        v = pixel_shuffle(u, k)
    else:
        v = corner_upsample(u, k, _CORNER_NAMES[args.upsampler])
    os.makedirs(args.out, exist_ok=True)
    before = os.path.join(args.out, "before.ppm")
    after = os.path.join(args.out, "after.ppm")
    write_ppm(before, np.argmax(u[0], axis=0))
    write_ppm(after, np.argmax(v[0], axis=0))
    print(f"wrote {before} and {after}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    train_set, val_set = cfg.datasets()
    result = train(cfg.to_train_config(), train_set, val_set)
    metrics_path = os.path.join(args.out, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write("epoch,split,loss,pixacc,miou,speckle\n")
        for row in result.metrics:
            fh.write(
                f"{row['epoch']},{row['split']},{_fmt(row['loss'])},"
                f"{_fmt(row['pixacc'])},{_fmt(row['miou'])},{_fmt(row['speckle'])}\n"
            )
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), result.net)
    for i in range(min(4, len(val_set))):
        logits, _ = network_forward(result.net, val_set[i].features)
        write_ppm(os.path.join(args.out, f"pred_{i}.ppm"), np.argmax(logits[0], axis=0))
        write_ppm(os.path.join(args.out, f"gt_{i}.ppm"), val_set[i].labels.labels[0])
    final = result.metrics[-1]
    print(f"metrics written to {metrics_path}")
    print(f"final val: loss={final['loss']:.4f} pixacc={final['pixacc']:.4f} miou={final['miou']:.4f}")
    return 0


def _sweep_point(task):
    """One sweep run; module-level so process pools can pickle it."""
    base_json, param, value, seed = task
    obj = dict(base_json)
    obj["seed"] = seed
    if param == "lambda":
        obj["lambda"] = value
    else:
        if value != int(value):
            return (param, value, seed, None, None, f"ratio must be an integer, got {value}")
        obj["lau_ratio"] = int(value)
    try:
        cfg = ExperimentConfig.from_json(obj)
        train_set, val_set = cfg.datasets()
        result = train(cfg.to_train_config(), train_set, val_set)
    except (ConfigError, ValueError) as exc:
        return (param, value, seed, None, None, str(exc))
    final = [r for r in result.metrics if r["split"] == "val"][-1]
    return (param, value, seed, final["miou"], final["pixacc"], None)


def cmd_sweep(args) -> int:
    with open(args.config) as fh:
        base_json = json.load(fh)
    if not isinstance(base_json, dict):
        raise ConfigError("config", "top-level JSON value must be an object")
    ExperimentConfig.from_json(base_json)  # fail fast on a broken base config
    values = [float(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise ConfigError("values", "need at least one value")
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    else:
        seeds = [int(base_json.get("seed", 0))]
    tasks = [(base_json, args.param, v, s) for v in values for s in seeds]

    threads = int(os.environ.get("LAU_THREADS", "0") or "0")
    if threads > 1 and len(tasks) > 1:
        import multiprocessing as mp

        with mp.Pool(min(threads, len(tasks))) as pool:
            results = pool.map(_sweep_point, tasks)
    else:
        results = [_sweep_point(t) for t in tasks]

    results.sort(key=lambda r: (r[0], r[1], r[2]))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    errors = []
    with open(path, "w") as fh:
        fh.write("param,value,seed,final_miou,final_pixacc\n")
        for param, value, seed, miou_v, pixacc_v, err in results:
            if err is None:
                fh.write(f"{param},{value:g},{seed},{_fmt(miou_v)},{_fmt(pixacc_v)}\n")
            else:
                fh.write(f"{param},{value:g},{seed},,\n")
                errors.append(f"{param}={value:g} seed={seed}: {err}")
    if errors:
        with open(os.path.join(args.out, "errors.txt"), "w") as fh:
            fh.write("\n".join(errors) + "\n")
        for e in errors:
            print(f"failed: {e}", file=sys.stderr)
    print(f"sweep written to {path} ({len(results)} rows, {len(errors)} failed)")
    return 0 if not errors else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lau", description="location-aware upsampling experiments"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--out", default=".", help="directory for gradcheck.csv")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("demo", help="upsample a feature map and dump label images")
    p.add_argument("--upsampler", default="bilinear",
                   choices=["bilinear", "lau", "pixelshuffle"] + sorted(_CORNER_NAMES))
    p.add_argument("--ratio", type=int, default=2)
    p.add_argument("--in", dest="infile", default=None, help="tensor dump to upsample")
    p.add_argument("--out", default="demo", help="output directory for PPMs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--size", type=int, default=32, help="synthetic image size when no --in")
    p.set_defaults(fn=cmd_demo)

    p = sub.add_parser("train", help="train on the synthetic benchmark")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="one training run per parameter value")
    p.add_argument("--param", required=True, choices=["lambda", "ratio"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: config seed)")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"invalid config - {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
