"""excite-lens command line.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 I/O error.
"""

import argparse
import configparser
import dataclasses
import logging
import os
import sys

from . import pipeline
from .errors import ConfigError, DataError
from .modelfile import save_model
from .pipeline import RunConfig

EXIT_CONFIG, EXIT_DATA, EXIT_IO = 2, 3, 4

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT = {"bins", "top_n", "top_m", "seed", "workers"}
_FLOAT = {"alpha"}


def _coerce(key, value):
    try:
        if key in _INT:
            return int(value)
        if key in _FLOAT:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def read_config_file(path):
    """``key = value`` lines (an optional ``[section]`` header is allowed)."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[run]\n" + text if not text.lstrip().startswith("[") else text)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            key = key.replace("-", "_")
            if key not in _FIELDS:
                raise ConfigError(f"{path}: unknown key {key!r}")
            out[key] = _coerce(key, value.strip().strip('"'))
    return out


def _add_run_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="key=value config file; flags override it")
    p.add_argument("--model", default=S, help="EBN1 weight file")
    p.add_argument("--manifest", default=S, help="CSV image_id,path,brand,split")
    p.add_argument("--annotations", default=S, help="CSV image_id,group,annotators")
    p.add_argument("--target-layer", dest="target_layer", default=S)
    p.add_argument("--bins", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--top-n", dest="top_n", type=int, default=S)
    p.add_argument("--top-m", dest="top_m", type=int, default=S,
                   help="top example images listed per unit")
    p.add_argument("--out-dir", dest="out_dir", default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--workers", type=int, default=S)
    p.add_argument("--group-by", dest="group_by", choices=["label", "predicted"], default=S)
    p.add_argument("--split", choices=["train", "test"], default=S)


def build_parser():
    ap = argparse.ArgumentParser(prog="excite-lens",
                                 description="Excitation Backprop brand analysis")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("predict", "argmax brand per test image -> predictions.csv"),
        ("attribute", "excitation maps + strength/extent -> maps.bin, stats.csv, scores.csv"),
        ("units", "unit rankings, specialist counts, top examples"),
        ("report", "full analysis -> report.json and CSV mirrors"),
    ]:
        _add_run_flags(sub.add_parser(name, help=helptext))
    hm = sub.add_parser("heatmap", help="render the aggregate map of one image")
    _add_run_flags(hm)
    hm.add_argument("--image-id", dest="image_id", required=True)
    hm.add_argument("--no-overlay", dest="overlay", action="store_false")

    sy = sub.add_parser("synth", help="generate the synthetic brand dataset and a matching model")
    sy.add_argument("--out-dir", dest="out_dir", required=True)
    sy.add_argument("--n-per-brand", dest="n_per_brand", type=int, default=300)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--test-fraction", dest="test_fraction", type=float, default=1.0)
    sy.add_argument("--arch", choices=["template", "minires"], default="template",
                    help="template: hand-set detectors; minires: random seeded residual net")
    return ap


def make_config(args):
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _FIELDS:
        if key in vars(args):
            values[key] = getattr(args, key)
    return RunConfig(**values)


def cmd_synth(args):
    from .synthetic import SynthConfig, build_template_net, generate_synthetic
    from .ingest import write_annotations, write_manifest
    from .zoo import build_minires

    if args.n_per_brand < 1 or not 0 <= args.test_fraction <= 1:
        raise ConfigError("need n_per_brand >= 1 and 0 <= test_fraction <= 1")
    cfg = SynthConfig(n_per_brand=args.n_per_brand, seed=args.seed,
                      test_fraction=args.test_fraction)
    _, manifest, ann = generate_synthetic(cfg, args.out_dir)
    write_manifest(os.path.join(args.out_dir, "manifest.csv"), manifest)
    write_annotations(os.path.join(args.out_dir, "annotations.csv"), ann)
    labels = [r.name for r in cfg.brands]
    if args.arch == "template":
        model = build_template_net(cfg.brands)
    else:
        model = build_minires(len(labels), seed=args.seed, class_labels=labels)
    save_model(model, os.path.join(args.out_dir, "model.ebn"))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cmd_synth(args)
            return 0
        cfg = make_config(args)
        if args.command == "predict":
            pipeline.cmd_predict(cfg)
        elif args.command == "attribute":
            pipeline.cmd_attribute(cfg)
        elif args.command == "units":
            pipeline.cmd_units(cfg)
        elif args.command == "report":
            pipeline.cmd_report(cfg)
        elif args.command == "heatmap":
            pipeline.cmd_heatmap(cfg, args.image_id, args.overlay)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
