"""Command-line front end.

Usage::

    anchorreg gen-data --output_dir data/ --beta 100
    anchorreg train    --config exp.cfg --mode sar --seed 3
    anchorreg compare  --config exp.cfg --modes ce,sar,proto --seeds 0,1,2,3,4
    anchorreg anchors  --output_dir anchors/ --anchor_source MES --num_classes 10

Every ``--key value`` flag mirrors a key of the flat config file and
overrides it. Exit codes: 0 success, 2 config/input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import AnchorRegError, CapabilityError, NumericError, ParseError
from .experiment import FIELD_TYPES, anchors_report, compare, load_config, run_single, write_datasets

log = logging.getLogger("anchorreg")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anchorreg", description="Anchor-regularized long-tail experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "generate the long-tailed train/test CSVs",
        "train": "train one model and write metrics, log and anchor dumps",
        "compare": "seed sweep over several modes with summary tables",
        "anchors": "generate pre-defined anchors and their cosine matrix",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="flat key=value config file")
        for key in FIELD_TYPES:
            p.add_argument(f"--{key}", dest=f"cfg_{key}", metavar="VALUE")
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    return {k[4:]: v for k, v in vars(ns).items() if k.startswith("cfg_") and v is not None}


def cmd_gen_data(cfg) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo())
    train_ds, test_ds = write_datasets(cfg, out)
    print("class_counts: " + " ".join(str(c) for c in train_ds.class_counts))
    print(f"test_per_class: {cfg.test_per_class}")
    print(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    out = Path(cfg.output_dir)
    r = run_single(cfg, cfg.mode, cfg.seed, out)
    print(
        f"mode={r['mode']} seed={r['seed']} overall={r['overall']:.4f} head={r['head']:.4f} "
        f"body={r['body']:.4f} tail={r['tail']:.4f} compactness={r['compactness']:.4f}"
    )
    print(f"metrics: {out / 'metrics.json'}")
    return EXIT_OK


def cmd_compare(cfg) -> int:
    res = compare(cfg)
    out = Path(cfg.output_dir)
    for mode, entry in res["consistency"].items():
        rep = entry["representation"]
        print(f"consistency[{mode}] {rep['source']}={rep['mean']} centroid={entry['centroid']['mean']}")
    print(f"summary: {out / 'summary.csv'}")
    return EXIT_OK


def cmd_anchors(cfg) -> int:
    s = anchors_report(cfg, Path(cfg.output_dir))
    print(
        f"{s['source']} C={s['num_classes']} D={s['dim']} seed={s['seed']}: off-diagonal cosine "
        f"min={s['offdiag_cosine_min']:.6f} max={s['offdiag_cosine_max']:.6f} mean={s['offdiag_cosine_mean']:.6f}"
    )
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "compare": cmd_compare, "anchors": cmd_anchors}


def main(argv=None) -> int:
    ns = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(ns.config, _overrides(ns))
        return COMMANDS[ns.command](cfg)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, CapabilityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AnchorRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
