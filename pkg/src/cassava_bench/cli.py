"""Command-line entry point: ``cassava-bench <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import plots
from .dataset import class_distribution, format_distribution, load_manifest, verify_images
from .errors import BenchError, ConfigInvalidError
from .experiment import compare, evaluate_run, load_config, load_rows, make_split, run
from .splitter import split_report
from .synthetic import SyntheticDatasetSpec, generate_synthetic

log = logging.getLogger("cassava_bench")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override the global seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="experiment config (JSON)")


def _config(args):
    path = args.config_pos or args.config
    if path is None:
        raise ConfigInvalidError("a config file is required (positional or --config)")
    return load_config(path, seed=args.seed, out=args.out)


def _archs(args, config) -> list[str]:
    return [args.arch] if args.arch else list(config.architectures)


def cmd_eda(args) -> int:
    root = None
    if args.config:
        root = load_config(args.config).image_root
    manifest = load_manifest(args.manifest, root=args.root or root)
    dist = class_distribution(manifest)
    print(format_distribution(dist, manifest.registry))
    if args.verify:
        bad = verify_images(manifest)
        print(f"\n{len(bad)} missing or unreadable images")
        for image_id in bad:
            print(f"  {image_id}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "distribution.txt").write_text(format_distribution(dist, manifest.registry) + "\n", encoding="utf-8")
        written = plots.emit_plots(out / "plots", dist, manifest if manifest.root.is_dir() else None,
                                   seed=args.seed or 0)
        for p in written:
            print(f"wrote {p}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticDatasetSpec.from_json(args.spec)
    if args.seed is not None:
        spec = SyntheticDatasetSpec(spec.n_samples, spec.image_side, spec.class_fractions,
                                    spec.pattern_strength, args.seed)
    out = args.out_pos or args.out
    if out is None:
        raise ConfigInvalidError("synth needs an output directory")
    _, manifest = generate_synthetic(spec, out)
    print(f"wrote {len(manifest)} images and {Path(out) / 'manifest.csv'}")
    print(format_distribution(class_distribution(manifest)))
    return 0


def cmd_split(args) -> int:
    config = _config(args)
    for arch in _archs(args, config):
        manifest, assignment, run_dir = make_split(config, arch)
        print(f"[{arch}] split written to {run_dir}")
    print(split_report(assignment, manifest).format(manifest.registry.codes))
    return 0


def cmd_train(args) -> int:
    config = _config(args)
    for arch in _archs(args, config):
        art = run(config, arch)
        best = min(art.history, key=lambda e: e.val_loss)
        print(f"[{arch}] {len(art.history)} epochs, best epoch {best.epoch} (val loss {best.val_loss:.4f})")
        print(art.report.render_text())
    return 0


def cmd_eval(args) -> int:
    config = _config(args)
    for arch in _archs(args, config):
        art = evaluate_run(config, arch)
        print(f"[{arch}] test report")
        print(art.report.render_text())
    return 0


def cmd_compare(args) -> int:
    table = compare(load_rows(args.run_dirs))
    print(table.render_text(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.txt").write_text(table.render_text(), encoding="utf-8")
        (out / "comparison.csv").write_text(table.to_csv(), encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cassava-bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eda", help="class distribution of a manifest")
    p.add_argument("manifest")
    p.add_argument("--root", default=None, help="image directory (default: next to the manifest)")
    p.add_argument("--verify", action="store_true", help="also check every image decodes")
    _common(p)
    p.set_defaults(func=cmd_eda)

    p = sub.add_parser("synth", help="generate a synthetic imbalanced dataset")
    p.add_argument("spec", help="synthetic dataset spec (JSON)")
    p.add_argument("out_pos", nargs="?", metavar="out")
    _common(p)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("split", cmd_split, "write stratified train/val/test files"),
        ("train", cmd_train, "train, then evaluate on the test split"),
        ("eval", cmd_eval, "re-evaluate a saved checkpoint"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config_pos", nargs="?", metavar="config")
        p.add_argument("--arch", default=None, help="architecture (default: all in the config)")
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="table of completed runs sorted by weighted F1")
    p.add_argument("run_dirs", nargs="+")
    _common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except BenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
