"""Operator CLI: keymorph {synth|pretrain|train|register|sweep|eval|serve}."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import detector as det
from . import harness, report
from . import synthdata as sd
from .errors import KeymorphError
from .registration import register as run_register
from .training import (
    AugmentationRanges,
    PretrainSettings,
    TrainConfig,
    pretrain as run_pretrain,
    train as run_train,
)
from .warp import Image, load_image, load_labels, save_image


def _fail(message, code=2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _require(path, what):
    if not Path(path).exists():
        _fail(f"{what} not found: {path}")
    return Path(path)


def _load_weights(path):
    _require(path, "weights")
    return det.load_weights(path)


@click.group()
def main():
    """Keypoint-based registration with closed-form affine/TPS solves."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--subjects", default=40, show_default=True)
@click.option("--shape", default="64,64", show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth(out, subjects, shape, seed):
    """Generate a synthetic multi-modal phantom dataset."""
    shape = tuple(int(s) for s in shape.split(","))
    sd.write_dataset(out, subjects, shape=shape, base_seed=seed)
    click.echo(f"wrote {subjects} subjects to {out}")


@main.command()
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--steps", default=200, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--keypoints", default=16, show_default=True)
@click.option("--subject-index", default=0, show_default=True)
def pretrain(data, out, steps, seed, keypoints, subject_index):
    """Self-supervised pretraining on one subject's aligned modalities."""
    _require(data, "dataset")
    dataset = sd.load_dataset(data)
    mods = dataset[subject_index]["modalities"]
    d = mods[0].ndim
    cfg = det.DetectorConfig(d=d, num_keypoints=keypoints, input_extent=mods[0].shape[0])
    weights = det.init_weights(cfg, seed=seed)
    trace = []
    run_pretrain(weights, mods, steps, np.random.default_rng(seed), trace=trace)
    det.save_weights(out, weights)
    report.write_json(Path(out) / "loss_trace.json", trace)
    report.loss_trace_figure(trace, Path(out) / "loss_trace.png")
    click.echo(f"pretrained {steps} steps; loss {trace[0]:.4f} -> {trace[-1]:.4f}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--weights", required=True, type=click.Path(), help="initial weights directory")
@click.option("--out", required=True, type=click.Path())
def train(config_path, weights, out):
    """Train from a JSON config: {variant, transform, steps, seed, dataset, ...}."""
    _require(config_path, "config")
    with open(config_path) as f:
        raw = json.load(f)
    data_path = raw.pop("dataset", None)
    if data_path is None:
        _fail("config must name a dataset path")
    _require(data_path, "dataset")
    cfg = TrainConfig.from_dict(raw)
    w = _load_weights(weights)
    dataset = sd.load_dataset(data_path)
    w, trace = run_train(w, dataset, cfg, checkpoint_dir=out)
    det.save_weights(out, w)
    report.write_json(Path(out) / "loss_trace.json", trace)
    report.loss_trace_figure(trace, Path(out) / "loss_trace.png")
    click.echo(f"trained {cfg.steps} steps; final loss {trace[-1]:.6f}")


def _read_pair(moving, fixed, labels, fixed_labels):
    _require(moving, "moving image")
    _require(fixed, "fixed image")
    m = load_image(moving)
    f = load_image(fixed)
    ml = load_labels(labels) if labels else None
    fl = load_labels(fixed_labels) if fixed_labels else None
    return m, f, ml, fl


@main.command()
@click.option("--weights", required=True, type=click.Path())
@click.option("--moving", required=True, type=click.Path())
@click.option("--fixed", required=True, type=click.Path())
@click.option("--labels", type=click.Path(), help="moving label map (KMT)")
@click.option("--fixed-labels", type=click.Path(), help="fixed label map (KMT)")
@click.option("--transform", "kind", default="tps", type=click.Choice(["affine", "tps"]))
@click.option("--lambda", "lam", default=None, type=float)
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
def register(weights, moving, fixed, labels, fixed_labels, kind, lam, out, seed):
    """Register one pair; writes warped image, transform, keypoints, metrics."""
    if lam is not None and lam < 0:
        _fail("lambda must be nonnegative")
    w = _load_weights(weights)
    m, f, ml, fl = _read_pair(moving, fixed, labels, fixed_labels)
    try:
        result = run_register(w, m, f, kind=kind, lam=lam, moving_labels=ml, fixed_labels=fl)
    except KeymorphError as e:
        _fail(str(e), code=1)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(out / "warped.kmt", result.warped)
    if result.warped.d == 2:
        save_image(out / "warped.png", result.warped)
    payload = result.to_dict()
    if kind == "tps":
        payload["control_point_error"] = harness.control_point_error(result)
    report.write_json(out / "transform.json", payload["transform"])
    report.write_json(
        out / "keypoints.json",
        {"moving": payload["moving_keypoints"], "fixed": payload["fixed_keypoints"]},
    )
    report.write_json(
        out / "metrics.json",
        {k: payload[k] for k in ("metrics", "lambda", "timing_ms", "control_point_error") if k in payload},
    )
    click.echo(f"registered; outputs in {out}")


@main.command()
@click.option("--weights", required=True, type=click.Path())
@click.option("--moving", required=True, type=click.Path())
@click.option("--fixed", required=True, type=click.Path())
@click.option("--labels", type=click.Path())
@click.option("--fixed-labels", type=click.Path())
@click.option("--lambdas", default=None, help="comma-separated lambda list")
@click.option("--log-range", default=None, help="lo_exp,hi_exp,count (base 10)")
@click.option("--out", required=True, type=click.Path())
def sweep(weights, moving, fixed, labels, fixed_labels, lambdas, log_range, out):
    """Run a lambda sweep from one keypoint detection per image."""
    if lambdas:
        try:
            lam_list = [float(x) for x in lambdas.split(",")]
        except ValueError:
            _fail(f"bad --lambdas value: {lambdas}")
    elif log_range:
        lo, hi, count = log_range.split(",")
        lam_list = list(np.logspace(float(lo), float(hi), int(count)))
    else:
        lam_list = [0.0, 0.01, 0.1, 1.0, 10.0]
    if any(l < 0 for l in lam_list):
        _fail("lambdas must be nonnegative")
    w = _load_weights(weights)
    m, f, ml, fl = _read_pair(moving, fixed, labels, fixed_labels)
    results = harness.lambda_sweep(w, m, f, lam_list, moving_labels=ml, fixed_labels=fl)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    per_label = {}
    for i, (lam, result) in enumerate(results.items()):
        entry_dir = out / f"lam{i:03d}"
        entry_dir.mkdir(exist_ok=True)
        save_image(entry_dir / "warped.kmt", result.warped)
        if result.warped.d == 2:
            save_image(entry_dir / "warped.png", result.warped)
        report.write_json(entry_dir / "result.json", result.to_dict())
        index.append({"lambda": lam, "dir": entry_dir.name,
                      "dice": result.metrics.dice_mean if result.metrics else None})
        if result.metrics:
            for lab, v in result.metrics.dice_per_label.items():
                per_label.setdefault(lab, []).append(v)
    report.write_json(out / "index.json", {"entries": index})
    if per_label:
        report.lambda_sweep_figure(list(results.keys()), per_label, out / "dice_vs_lambda.png")
        report.write_csv(
            out / "dice_vs_lambda.csv",
            [[lam] + [per_label[lab][i] for lab in sorted(per_label)]
             for i, lam in enumerate(results.keys())],
            ["lambda"] + [f"label_{lab}" for lab in sorted(per_label)],
        )
    click.echo(f"swept {len(lam_list)} lambdas; index at {out / 'index.json'}")


@main.command(name="eval")
@click.option("--weights", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--angles", default="0,30,60,90,120,150", show_default=True)
@click.option("--transform", "kind", default="affine", type=click.Choice(["affine", "tps"]))
@click.option("--lambda", "lam", default=None, type=float)
@click.option("--subjects", "max_subjects", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
def eval_cmd(weights, data, out, angles, kind, lam, max_subjects, seed):
    """Evaluation harness: robustness curve, discriminability, repeatability."""
    w = _load_weights(weights)
    _require(data, "dataset")
    meta = json.loads((Path(data) / "meta.json").read_text())
    subjects = [
        sd.generate_subject(meta["base_seed"] + i, tuple(meta["shape"]))
        for i in range(min(max_subjects, meta["num_subjects"]))
    ]
    angle_list = [float(a) for a in angles.split(",")]
    curve = harness.robustness_sweep(w, subjects, angle_list, kind=kind, lam=lam, seed=seed)
    matrix, diag, off = harness.discriminability(w, subjects)
    rng = np.random.default_rng(seed)
    from .training import sample_augmentation

    transforms = [
        sample_augmentation(
            rng,
            AugmentationRanges(rotation_deg=180.0, translation_voxels=15.0,
                               reference_extent=meta["shape"][0] * 4,
                               scale=(1.0, 1.0), shear=(0.0, 0.0)),
            subjects[0].labels.data.ndim,
        )
        for _ in range(10)
    ]
    rep = harness.repeatability(w, subjects[0].images[0], transforms)
    layer_corr, flags = harness.layer_correlation(w, subjects[0])

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "seed": seed,
        "config_hash": hash(json.dumps(w.config.to_dict(), sort_keys=True)) & 0xFFFFFFFF,
        "robustness": curve,
        "discriminability": {"diag_mean": diag, "offdiag_mean": off,
                             "matrix": matrix.tolist()},
        "repeatability_voxels": rep,
        "layer_correlation": {"per_layer": layer_corr, "skipped_constant": flags},
    }
    report.write_json(out / "report.json", payload)
    report.write_csv(
        out / "robustness.csv",
        list(zip(curve["angles"], curve["dice"], curve["baseline_dice"])),
        ["angle_deg", "dice", "baseline_dice"],
    )
    report.robustness_figure(curve, out / "robustness.png")
    report.discriminability_figure(matrix, out / "discriminability.png")
    click.echo(f"report at {out / 'report.json'}")


@main.command()
@click.option("--weights", required=True, type=click.Path())
@click.option("--data", required=True, type=click.Path())
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--static-dir", default=None, type=click.Path())
def serve(weights, data, port, host, static_dir):
    """Serve the registration API and the lambda-explorer UI."""
    import uvicorn

    from .service import create_app

    w = _load_weights(weights)
    _require(data, "dataset")
    if static_dir is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if bundled.is_dir():
            static_dir = bundled
    app = create_app(w, data, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
