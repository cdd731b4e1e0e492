"""Command-line entry point: every pipeline as a subcommand.

Config files are flat `section.key=value` text; command-line flags override
file values. The fully resolved configuration is written into the run
directory so any run can be reproduced from it.
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import evaluation, inference, synthetic
from .data import DataError, load_dataset_root, load_image, load_mask, save_image, save_mask
from .losses import GENERATOR_TERMS, LossWeights
from .training import TrainConfig, get_device, load_checkpoint, train


def parse_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


# config-file key -> argparse dest (keys without a mapping use their last segment)
CONFIG_KEYS = {
    "data.root": "data",
    "net.res": "res",
    "net.sep": "sep",
    "train.steps": "steps",
    "train.batch": "batch",
    "train.seed": "seed",
    "train.checkpoint_every": "checkpoint_every",
    "loss.lambda1": "lambda1",
    "loss.lambda2": "lambda2",
    "loss.lambda3": "lambda3",
    "loss.lambda4": "lambda4",
    "loss.lambda5": "lambda5",
    "loss.drop": "drop",
    "loss.recon1_norm": "recon1_norm",
    "loss.recon2_norm": "recon2_norm",
    "loss.mask_l2": "mask_l2",
    "infer.threshold": "threshold",
    "eval.max_pairs": "max_pairs",
}


def weights_from_args(args) -> LossWeights:
    dropped = frozenset(args.drop or ())
    return LossWeights(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        lambda3=args.lambda3,
        lambda4=args.lambda4,
        lambda5=args.lambda5,
        dropped=dropped,
        recon1_norm=args.recon1_norm,
        recon2_norm=args.recon2_norm,
        mask_l2_coeff=args.mask_l2,
    )


def train_config_from_args(args, steps=None) -> TrainConfig:
    return TrainConfig(
        steps=steps if steps is not None else args.steps,
        batch_size=args.batch,
        weights=weights_from_args(args),
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        resolution=args.res,
        sep=args.sep,
    )


def write_run_config(args, config: TrainConfig, out_dir: Path):
    w = config.weights
    lines = [
        f"data.root={args.data}",
        f"net.res={config.resolution}",
        f"net.sep={config.sep}",
        f"train.steps={config.steps}",
        f"train.batch={config.batch_size}",
        f"train.seed={config.seed}",
        f"train.checkpoint_every={config.checkpoint_every}",
        f"loss.lambda1={w.lambda1}",
        f"loss.lambda2={w.lambda2}",
        f"loss.lambda3={w.lambda3}",
        f"loss.lambda4={w.lambda4}",
        f"loss.lambda5={w.lambda5}",
        f"loss.recon1_norm={w.recon1_norm}",
        f"loss.recon2_norm={w.recon2_norm}",
    ]
    if w.dropped:
        lines.append("loss.drop=" + ",".join(sorted(w.dropped)))
    if w.mask_l2_coeff is not None:
        lines.append(f"loss.mask_l2={w.mask_l2_coeff}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n")


def add_loss_flags(p):
    p.add_argument("--lambda1", type=float, default=5.0)
    p.add_argument("--lambda2", type=float, default=5.0)
    p.add_argument("--lambda3", type=float, default=1.0)
    p.add_argument("--lambda4", type=float, default=0.7)
    p.add_argument("--lambda5", type=float, default=0.7)
    p.add_argument(
        "--drop", action="append", choices=GENERATOR_TERMS, help="disable a loss term"
    )
    p.add_argument("--recon1-norm", choices=("l1", "l2"), default="l1", dest="recon1_norm")
    p.add_argument("--recon2-norm", choices=("l1", "l2"), default="l1", dest="recon2_norm")
    p.add_argument(
        "--mask-l2", type=float, default=None, dest="mask_l2",
        help="replace the self-reconstruction pair with an L2 mask penalty",
    )


def add_train_flags(p):
    p.add_argument("--data", required=True, help="dataset root (trainA/trainB/...)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--sep", type=int, default=100)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=1000, dest="checkpoint_every")
    add_loss_flags(p)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="masktransfer",
        description="Mask-based unsupervised content transfer between two image domains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def command(name, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="flat key=value config file")
        subparsers[name] = p
        return p

    p = command("synth", help="generate the synthetic two-domain dataset")
    p.add_argument("--n", type=int, default=2000, help="train images per domain")
    p.add_argument("--n-test", type=int, default=None, help="test images per domain")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("train", help="train a model on an unpaired dataset")
    add_train_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=100, dest="log_every")

    p = command("transfer", help="guided content transfer a + separate(b)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="target image or directory")
    p.add_argument("--guide", required=True, help="guide image or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", action="store_true", help="emit one comparison grid image")

    p = command("segment", help="weakly supervised segmentation of a B image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None, help="output directory (default: alongside input)")

    p = command("remove", help="remove the separate content of an image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)

    p = command("interpolate", help="interpolate between two guides' separate codes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--guide1", required=True)
    p.add_argument("--guide2", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out", required=True)

    p = command("seq", help="sequential transfer through two models")
    p.add_argument("--ckpt1", required=True)
    p.add_argument("--ckpt2", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--guide1", required=True)
    p.add_argument("--guide2", required=True)
    p.add_argument("--out", required=True)

    p = command("swap", help="remove with one model, then add with another")
    p.add_argument("--ckpt-rm", required=True, dest="ckpt_rm")
    p.add_argument("--ckpt-add", required=True, dest="ckpt_add")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--guide", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = command("eval", help="compute the full metric report on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-pairs", type=int, default=200, dest="max_pairs")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)

    p = command("ablate", help="run the loss-toggle matrix at a short budget")
    add_train_flags(p)
    p.set_defaults(steps=None)
    p.add_argument(
        "--budget-fraction", type=float, default=0.25, dest="budget_fraction",
        help="fraction of --steps used per ablation row",
    )
    p.add_argument("--full-steps", type=int, default=4000, dest="full_steps")
    p.add_argument("--max-pairs", type=int, default=200, dest="max_pairs")

    return parser, subparsers


def apply_config_file(argv, parser, subparsers):
    """Pre-scan argv for --config and install its values as defaults."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return
    values = parse_config_file(path)
    for name, sp in subparsers.items():
        defaults = {}
        actions = {a.dest: a for a in sp._actions}
        for key, raw in values.items():
            dest = CONFIG_KEYS.get(key, key.split(".")[-1])
            action = actions.get(dest)
            if action is None:
                continue
            if isinstance(action, argparse._AppendAction):
                defaults[dest] = [v for v in raw.split(",") if v]
            elif action.type is not None:
                defaults[dest] = action.type(raw)
            else:
                defaults[dest] = raw
        if defaults:
            sp.set_defaults(**defaults)
            for dest in defaults:
                actions[dest].required = False


def _load(path, resolution) -> torch.Tensor:
    return torch.from_numpy(load_image(path, resolution))


def _bundle(path):
    ckpt = load_checkpoint(path)
    return ckpt.bundle(get_device()), ckpt


def cmd_synth(args):
    n_test = args.n_test if args.n_test is not None else max(1, args.n // 10)
    train_ds = synthetic.generate_synthetic(args.n, args.res, args.seed)
    test_ds = synthetic.generate_synthetic(n_test, args.res, args.seed + 1000003)
    synthetic.write_dataset(args.out, train_ds, test_ds)
    print(f"wrote {args.n}+{n_test} images per domain to {args.out}")
    return 0


def cmd_train(args):
    config = train_config_from_args(args)
    out_dir = Path(args.out)
    write_run_config(args, config, out_dir)
    dataset = load_dataset_root(args.data, config.resolution, "train")
    resume = load_checkpoint(args.resume, expect_config=config) if args.resume else None
    train(config, dataset, out_dir=out_dir, resume=resume, log_every=args.log_every)
    print(f"finished {config.steps} steps; final checkpoint: {out_dir / 'ckpt_final'}")
    return 0


def cmd_transfer(args):
    bundle, _ = _bundle(args.ckpt)
    res = bundle.config.resolution
    out_dir = Path(args.out)
    in_path, guide_path = Path(args.input), Path(args.guide)
    if args.grid:
        sources = sorted(in_path.iterdir())[:8] if in_path.is_dir() else [in_path]
        guides = sorted(guide_path.iterdir())[:8] if guide_path.is_dir() else [guide_path]
        grid = np.ones((3, (len(guides) + 1) * res, (len(sources) + 1) * res), np.float32)
        for j, s in enumerate(sources):
            grid[:, :res, (j + 1) * res : (j + 2) * res] = load_image(s, res)
        for i, g in enumerate(guides):
            grid[:, (i + 1) * res : (i + 2) * res, :res] = load_image(g, res)
            for j, s in enumerate(sources):
                out = inference.transfer(bundle, _load(s, res), _load(g, res)).output
                grid[:, (i + 1) * res : (i + 2) * res, (j + 1) * res : (j + 2) * res] = (
                    out.numpy()
                )
        save_image(grid, out_dir / "grid.png")
        print(f"wrote {out_dir / 'grid.png'}")
        return 0
    result = inference.transfer(bundle, _load(in_path, res), _load(guide_path, res))
    stem = in_path.stem
    save_image(result.output.numpy(), out_dir / f"{stem}_transfer.png")
    save_mask(result.mask.numpy()[0], out_dir / f"{stem}_mask.png")
    save_image(result.raw.numpy(), out_dir / f"{stem}_raw.png")
    print(f"wrote {out_dir / (stem + '_transfer.png')}")
    return 0


def cmd_segment(args):
    bundle, _ = _bundle(args.ckpt)
    in_path = Path(args.input)
    binary = inference.segment(bundle, _load(in_path, bundle.config.resolution), args.threshold)
    out_dir = Path(args.out) if args.out else in_path.parent
    out_path = out_dir / f"{in_path.stem}_mask.png"
    save_mask(binary.mask.numpy()[0], out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_remove(args):
    bundle, _ = _bundle(args.ckpt)
    in_path = Path(args.input)
    out = inference.remove(bundle, _load(in_path, bundle.config.resolution), args.threshold)
    out_dir = Path(args.out) if args.out else in_path.parent
    out_path = out_dir / f"{in_path.stem}_removed.png"
    save_image(out.numpy(), out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_interpolate(args):
    bundle, _ = _bundle(args.ckpt)
    res = bundle.config.resolution
    frames = inference.interpolate(
        bundle, _load(args.input, res), _load(args.guide1, res), _load(args.guide2, res),
        args.steps,
    )
    out_dir = Path(args.out)
    for i, frame in enumerate(frames):
        save_image(frame.output.numpy(), out_dir / f"frame_{i:03d}.png")
        save_mask(frame.mask.numpy()[0], out_dir / f"frame_{i:03d}_mask.png")
    print(f"wrote {len(frames)} frames to {out_dir}")
    return 0


def cmd_seq(args):
    m1, _ = _bundle(args.ckpt1)
    m2, _ = _bundle(args.ckpt2)
    res = m1.config.resolution
    out = inference.sequential_transfer(
        m1, m2, _load(args.input, res), _load(args.guide1, res), _load(args.guide2, res)
    )
    out_path = Path(args.out) / f"{Path(args.input).stem}_seq.png"
    save_image(out.numpy(), out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_swap(args):
    m_rm, _ = _bundle(args.ckpt_rm)
    m_add, _ = _bundle(args.ckpt_add)
    res = m_rm.config.resolution
    out = inference.remove_then_add(
        m_rm, m_add, _load(args.input, res), _load(args.guide, res), args.threshold
    )
    out_path = Path(args.out) / f"{Path(args.input).stem}_swap.png"
    save_image(out.numpy(), out_path)
    print(f"wrote {out_path}")
    return 0


def _load_gt_masks(root, test_set):
    masks_dir = Path(root) / "masksB"
    if not masks_dir.is_dir():
        return None
    files = sorted(masks_dir.glob("test_*.png"))
    if len(files) != test_set.n_b:
        return None
    return np.stack([load_mask(f) for f in files])


def cmd_eval(args):
    bundle, _ = _bundle(args.ckpt)
    res = bundle.config.resolution
    train_set = load_dataset_root(args.data, res, "train")
    test_set = load_dataset_root(args.data, res, "test")
    classifier, acc = evaluation.train_domain_classifier(
        train_set, holdout=test_set, seed=args.seed
    )
    print(f"domain classifier held-out accuracy: {acc:.2f}%")
    report = evaluation.evaluate(
        bundle, test_set, classifier,
        gt_masks=_load_gt_masks(args.data, test_set),
        max_pairs=args.max_pairs, threshold=args.threshold, seed=args.seed,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    (out_dir / "report.txt").write_text(report.table() + "\n")
    report.write_csv(out_dir / "per_image.csv")
    print(report.table())
    return 0


ABLATION_ROWS = (
    ("full", {}),
    ("w/o dc", {"dropped": frozenset({"dc"})}),
    ("w/o recon1_a", {"dropped": frozenset({"recon1_a"})}),
    ("w/o recon1_b", {"dropped": frozenset({"recon1_b"})}),
    ("w/o cycle", {"dropped": frozenset({"cycle"})}),
    ("w/o recon2_a", {"dropped": frozenset({"recon2_a"})}),
    ("w/o recon2_b", {"dropped": frozenset({"recon2_b"})}),
    ("l2 recon1", {"recon1_norm": "l2"}),
    ("l2 recon2", {"recon2_norm": "l2"}),
    ("l2 mask reg", {"mask_l2_coeff": 0.7}),
)


def cmd_ablate(args):
    import dataclasses
    import json

    full_steps = args.steps if args.steps is not None else args.full_steps
    budget = max(1, int(round(full_steps * args.budget_fraction)))
    base_weights = weights_from_args(args)
    train_set = load_dataset_root(args.data, args.res, "train")
    test_set = load_dataset_root(args.data, args.res, "test")
    classifier, acc = evaluation.train_domain_classifier(
        train_set, holdout=test_set, seed=args.seed
    )
    print(f"domain classifier held-out accuracy: {acc:.2f}%")
    rows = ABLATION_ROWS
    if args.drop:
        rows = [("w/o " + ",".join(args.drop), {"dropped": frozenset(args.drop)})]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    header = f"{'variant':<14} {'Class.':>8} {'Sim.':>8} {'KID':>14} {'Perc.':>8}"
    print(header)
    for name, overrides in rows:
        weights = dataclasses.replace(base_weights, **overrides)
        config = train_config_from_args(args, steps=budget)
        config = dataclasses.replace(config, weights=weights, checkpoint_every=budget)
        run_dir = out_dir / name.replace("/", "_").replace(" ", "_")
        ckpt = train(config, train_set, out_dir=run_dir)
        report = evaluation.evaluate(
            ckpt.bundle(), test_set, classifier,
            gt_masks=_load_gt_masks(args.data, test_set),
            max_pairs=args.max_pairs, seed=args.seed,
        )
        results.append({"variant": name, "report": json.loads(report.to_json())})
        print(
            f"{name:<14} {report.classifier_accuracy:>7.1f}% "
            f"{report.mean_cosine_similarity:>8.3f} "
            f"{report.kid_mean:>6.2f} +- {report.kid_sd:<4.2f} "
            f"{report.mask_coverage_percent:>7.1f}%"
        )
    (out_dir / "ablation.json").write_text(json.dumps(results, indent=1) + "\n")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "segment": cmd_segment,
    "remove": cmd_remove,
    "interpolate": cmd_interpolate,
    "seq": cmd_seq,
    "swap": cmd_swap,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        apply_config_file(argv, parser, subparsers)
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
