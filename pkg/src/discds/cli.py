"""Command-line front end for the two-stage augmentation pipeline.

Subcommands: gen-ref, select-neg, synth, train-eval, e2e, report.  Exit
codes: 0 success, 2 config error, 3 data error, 4 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, InvariantError, load_config
from .samples import DataError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="experiment config (YAML)")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--seed", default=None,
                   help="comma-separated seed list override, e.g. 1,2,3")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap for sampling fan-out (results unchanged)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="discds",
        description=("Two-stage synthetic augmentation for long-tailed "
                     "classification on analytic mixture worlds: diverse "
                     "reference generation, confusing-class negative "
                     "selection, contrastive synthesis, and Mixup training."))
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
            ("gen-ref", "generate the diverse per-class reference set"),
            ("select-neg", "pick each class's most similar class as negative"),
            ("synth", "synthesize per-policy augmentation sets"),
            ("train-eval", "train classifiers and write metric reports"),
            ("e2e", "run the full pipeline and write a manifest"),
            ("report", "render figures next to the delimited outputs")):
        _add_common(sub.add_parser(name, help=help_))
    return ap


def _parse_seeds(text: str | None):
    if text is None:
        return None
    try:
        return [int(s) for s in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"--seed: expected integers, got {text!r}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, out_override=args.out,
                          seeds_override=_parse_seeds(args.seed),
                          threads_override=args.threads)
        from . import pipeline
        if args.command == "gen-ref":
            path = pipeline.run_gen_ref(cfg)
            print(f"wrote {path}")
        elif args.command == "select-neg":
            path = pipeline.run_select_neg(cfg)
            print(f"wrote {path}")
        elif args.command == "synth":
            paths = pipeline.run_synth(cfg)
            print(f"wrote {len(paths)} files under {cfg.out}")
        elif args.command == "train-eval":
            reports, tsv, txt = pipeline.run_train_eval(cfg)
            print(f"wrote {len(reports)} run reports; aggregate at {tsv}")
            print(txt.read_text(), end="")
        elif args.command == "e2e":
            manifest = pipeline.run_e2e(cfg)
            print(f"pipeline complete; manifest at {manifest}")
            print((cfg.out / "aggregate.txt").read_text(), end="")
        elif args.command == "report":
            from . import plotting
            made = plotting.render_report(cfg)
            if not made:
                raise DataError(
                    f"nothing to report under {cfg.out}; run the pipeline first")
            for p in made:
                print(f"wrote {p}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
