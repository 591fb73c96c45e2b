import argparse
import csv
import logging
import sys
from pathlib import Path

from .errors import DADError


def cmd_train(args):
    from .config import load_config, parse_assignments
    from .training import train
    cfg = load_config(args.config, args.profile, parse_assignments(args.set))
    result = train(cfg, resume=args.resume)
    print(f"checkpoint: {result.checkpoint}")
    print(f"loss curve: {result.loss_curve}")
    print(f"figure: {result.figure}")


def cmd_eval(args):
    from .evaluation import evaluate
    out = args.out or Path(args.ckpt).parent / "eval"
    report = evaluate(args.ckpt, args.data, out)
    print(report.to_csv(), end="")
    print(report.summary())


def cmd_predict(args):
    from .evaluation import predict
    out = args.out or Path(args.ckpt).parent / "predictions"
    for path in predict(args.ckpt, args.image, out, all_stages=args.all_stages):
        print(path)


def cmd_ablate(args):
    from .ablation import load_grid, run_ablation
    grid = load_grid(args.grid)
    out = args.out or grid.get("output_dir") or "runs/ablation"
    path = run_ablation(grid, out)
    print(Path(path).read_text(), end="")
    print(f"written: {path}")


def cmd_rf(args):
    from .blocks import rf_table
    rows = rf_table(args.in_channels)
    fields = ["module", "branch", "dilations", "rf"]
    writer = csv.DictWriter(sys.stdout, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        from .plotting import plot_receptive_fields
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "receptive_fields.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        plot_receptive_fields(rows, out / "receptive_fields.png")


def cmd_synth(args):
    from .data import write_synthetic_dataset
    print(write_synthetic_dataset(args.out, args.n, args.size, args.seed))


def build_parser():
    p = argparse.ArgumentParser(prog="dad", description="Difference-aware decoder for binary segmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--profile", choices=["paper", "desk"], default="paper")
    t.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="extra config overrides")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset folder")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write prediction and heat-map overlay PNGs")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--image", required=True)
    r.add_argument("--out")
    r.add_argument("--all-stages", action="store_true")
    r.set_defaults(func=cmd_predict)

    a = sub.add_parser("ablate", help="run an ablation grid")
    a.add_argument("--grid", required=True)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    f = sub.add_parser("rf-analyze", help="print analytical receptive fields")
    f.add_argument("--in-channels", type=int, default=64)
    f.add_argument("--out", help="also write CSV and figure here")
    f.set_defaults(func=cmd_rf)

    s = sub.add_parser("synth", help="write a synthetic images/masks dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DADError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
