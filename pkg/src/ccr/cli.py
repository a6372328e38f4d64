"""Command-line front end for the change retrieval engine.

Subcommands: build-vocab, index, retrieve, detect, eval, synth. Every flag
has a config-file equivalent (plain ``key = value`` lines, ``#`` comments);
precedence is flag > config > default. Exit codes: 0 success, 1 usage error,
2 data error. Diagnostics go to stderr; data goes to files or stdout only.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .errors import DataError
from .features import (
    fmt,
    read_feature_set,
    read_ground_truth,
    read_results,
    write_feature_set,
    write_ground_truth,
    write_results,
)
from .vocabulary import build_vocabulary, read_vocabulary, write_vocabulary

FORMAT_VERSIONS = "CCRFS 1, CCRVOC 1, CCRIDX 1, CCRGT 1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_config(path) -> dict[str, str]:
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, value: str, conv):
    if conv is bool:
        v = value.lower()
        if v in _BOOL_TRUE:
            return True
        if v in _BOOL_FALSE:
            return False
        raise UsageError(f"config key {key!r}: not a boolean: {value!r}")
    try:
        return conv(value)
    except ValueError:
        raise UsageError(f"config key {key!r}: bad value {value!r}")


def _resolve(args, schema: dict[str, tuple]) -> dict:
    """Merge CLI values, config values, and defaults. schema maps dest ->
    (converter, default). Unknown config keys are rejected."""
    config = _read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(config) - set(schema)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    out = {}
    for dest, (conv, default) in schema.items():
        cli_val = getattr(args, dest, None)
        if cli_val is not None:
            out[dest] = cli_val
        elif dest in config:
            out[dest] = _convert(dest, config[dest], conv)
        else:
            out[dest] = default
    return out


def _add_common(p: _Parser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument(
        "--threads",
        type=int,
        default=None,
        help="cap internal parallelism (output is identical for any value)",
    )


def _check_threads(threads):
    if threads is not None and threads < 1:
        raise UsageError("--threads must be >= 1")


def _load_training(paths):
    descs = []
    dim = None
    for path in paths:
        fs = read_feature_set(path)
        if dim is None:
            dim = fs.desc_dim
        elif fs.desc_dim != dim:
            raise DataError(
                f"{path}: descriptor dimension {fs.desc_dim} != {dim} of earlier input"
            )
        mat = fs.descriptor_matrix()
        if len(mat):
            descs.append(mat)
    if not descs:
        raise DataError("no training descriptors found in the given feature sets")
    return np.concatenate(descs, axis=0)


def _require_file(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")


# ---------------------------------------------------------------------------
# subcommands


def _cmd_build_vocab(args) -> int:
    schema = {
        "k": (int, 4096),
        "seed": (int, 0),
        "max_iters": (int, 25),
        "rel_tol": (float, 1e-4),
    }
    opts = _resolve(args, schema)
    _check_threads(args.threads)
    training = _load_training(args.inputs)
    vocab = build_vocabulary(
        training, opts["k"], opts["seed"], opts["max_iters"], opts["rel_tol"]
    )
    write_vocabulary(vocab, args.out)
    return 0


def _cmd_index(args) -> int:
    from .index import build_index, file_sha256, write_index

    _resolve(args, {})
    _check_threads(args.threads)
    _require_file(args.vocab, "vocabulary")
    vocab = read_vocabulary(args.vocab)
    feature_sets = [read_feature_set(p) for p in args.inputs]
    seen = set()
    for fs in feature_sets:
        if fs.image_id in seen:
            raise DataError(f"duplicate image_id {fs.image_id!r} in inputs")
        seen.add(fs.image_id)
    idx = build_index(vocab, feature_sets)
    write_index(idx, args.out, args.vocab, file_sha256(args.vocab))
    return 0


def _load_index(args):
    from .index import read_index

    _require_file(args.index, "index")
    return read_index(args.index, vocab_path=getattr(args, "vocab", None))


def _cmd_retrieve(args) -> int:
    from .retrieval import rank_references

    opts = _resolve(args, {"refs": (int, 40)})
    _check_threads(args.threads)
    idx = _load_index(args)
    _require_file(args.query, "query feature set")
    query = read_feature_set(args.query)
    result = rank_references(query.global_desc, idx, opts["refs"])
    lines = ["rank,image_id,similarity"]
    for rank, (image_id, sim) in enumerate(result.ranked, start=1):
        lines.append(f"{rank},{image_id},{fmt(sim)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_detect(args) -> int:
    from .change import DetectOptions, detect_changes

    schema = {
        "mode": (str, "ccr"),
        "lg": (bool, False),
        "va": (bool, False),
        "refs": (int, 40),
        "ratio": (float, 0.8),
        "delta": (float, 0.1),
        "kmax": (int, 10),
        "normalize": (bool, False),
    }
    o = _resolve(args, schema)
    _check_threads(args.threads)
    idx = _load_index(args)
    _require_file(args.query, "query feature set")
    query = read_feature_set(args.query)
    opts = DetectOptions(
        mode=o["mode"],
        lg=o["lg"],
        va=o["va"],
        ratio=o["ratio"],
        delta=o["delta"],
        k_max=o["kmax"],
        n_refs=o["refs"],
        normalize_descriptors=o["normalize"],
    ).validate()
    raw_refs = None
    if opts.mode == "dm":
        if not args.raw_refs:
            raise UsageError("--raw-refs DIR is required for --mode dm")
        if not os.path.isdir(args.raw_refs):
            raise DataError(f"raw reference directory not found: {args.raw_refs}")
        raw_refs = {}
        for name in sorted(os.listdir(args.raw_refs)):
            if name.endswith(".ccrfs"):
                fs = read_feature_set(os.path.join(args.raw_refs, name))
                raw_refs[fs.image_id] = fs
    result = detect_changes(query, idx, opts, raw_refs)
    write_results(result, args.out)
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import (
        DEFAULT_THRESHOLDS,
        ranking_percentile,
        render_table,
        render_table_csv,
        topx_table,
    )

    opts = _resolve(args, {"thresholds": (str, "")})
    _check_threads(args.threads)
    if opts["thresholds"]:
        try:
            thresholds = tuple(float(t) for t in opts["thresholds"].split(","))
        except ValueError:
            raise UsageError(f"bad --thresholds value: {opts['thresholds']!r}")
    else:
        thresholds = DEFAULT_THRESHOLDS
    _require_file(args.gt, "ground truth")
    boxes = read_ground_truth(args.gt)
    by_query = {}
    for b in boxes:
        if b.query_id in by_query:
            raise DataError(f"duplicate ground-truth box for query {b.query_id!r}")
        by_query[b.query_id] = b
    rows = {}
    for spec in args.results:
        if "=" not in spec:
            raise UsageError(f"results must be LABEL=FILE, got {spec!r}")
        label, path = spec.split("=", 1)
        _require_file(path, "results")
        outcomes = []
        for result in read_results(path):
            box = by_query.get(result.query_id)
            if box is None:
                raise DataError(
                    f"{path}: no ground-truth box for query {result.query_id!r}"
                )
            outcomes.append(ranking_percentile(result, box))
        if not outcomes:
            raise DataError(f"{path}: no results to evaluate")
        rows[label] = topx_table(outcomes, thresholds)
    text = render_table(rows, thresholds)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_table_csv(rows, thresholds))
    return 0


def _cmd_synth(args) -> int:
    from .evaluate import SceneSpec, generate_scene

    schema = {
        "seed": (int, 0),
        "desc_dim": (int, 16),
        "world_size": (int, 2000),
        "n_refs": (int, 40),
        "features_per_image": (int, 300),
        "noise_sigma": (float, 0.02),
        "change_count": (int, 10),
        "change_margin": (float, 0.16),
        "width": (float, 640.0),
        "height": (float, 480.0),
        "grid_x": (int, 8),
        "grid_y": (int, 8),
        "global_dim": (int, 8),
    }
    o = _resolve(args, schema)
    _check_threads(args.threads)
    spec = SceneSpec(
        seed=o["seed"],
        desc_dim=o["desc_dim"],
        world_size=o["world_size"],
        n_refs=o["n_refs"],
        features_per_image=o["features_per_image"],
        obs_noise_sigma=o["noise_sigma"],
        change_count=o["change_count"],
        change_margin=o["change_margin"],
        image_extent=(o["width"], o["height"]),
        superpixel_grid=(o["grid_x"], o["grid_y"]),
        global_dim=o["global_dim"],
    )
    refs, query, gt = generate_scene(spec)
    os.makedirs(args.out, exist_ok=True)
    for fs in refs:
        write_feature_set(fs, os.path.join(args.out, f"{fs.image_id}.ccrfs"))
    write_feature_set(query, os.path.join(args.out, "query.ccrfs"))
    write_ground_truth([gt], os.path.join(args.out, "gt.ccrgt"))
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="ccr", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"ccr {__version__} (formats: {FORMAT_VERSIONS})",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("build-vocab", help="train a visual vocabulary by k-means")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="feature set files for training")
    p.add_argument("--out", required=True, help="output vocabulary file")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=None)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("index", help="build the inverted index of reference images")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="reference feature set files")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output index file")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("retrieve", help="rank candidate references for a query")
    _add_common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", default=None, help="override the embedded vocab path")
    p.add_argument("--query", required=True)
    p.add_argument("--refs", type=int, default=None)
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("detect", help="score query features for change")
    _add_common(p)
    p.add_argument("--index", required=True)
    p.add_argument("--vocab", default=None, help="override the embedded vocab path")
    p.add_argument("--query", required=True)
    p.add_argument("--out", required=True, help="output results CSV")
    p.add_argument("--mode", choices=["dm", "ccr"], default=None)
    p.add_argument("--lg", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--va", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--refs", type=int, default=None)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--kmax", type=int, default=None)
    p.add_argument(
        "--normalize", action=argparse.BooleanOptionalAction, default=None,
        help="L2-normalize descriptors before comparison",
    )
    p.add_argument("--raw-refs", dest="raw_refs", default=None,
                   help="directory of raw reference .ccrfs files (DM mode)")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="aggregate results into a top-X%% table")
    _add_common(p)
    p.add_argument("results", nargs="+", help="LABEL=results.csv")
    p.add_argument("--gt", required=True, help="ground-truth file")
    p.add_argument("--thresholds", default=None, help="comma-separated percents")
    p.add_argument("--out", default=None, help="text table output (default: stdout)")
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a deterministic synthetic scene")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--desc-dim", dest="desc_dim", type=int, default=None)
    p.add_argument("--world-size", dest="world_size", type=int, default=None)
    p.add_argument("--n-refs", dest="n_refs", type=int, default=None)
    p.add_argument("--features-per-image", dest="features_per_image", type=int,
                   default=None)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
    p.add_argument("--change-count", dest="change_count", type=int, default=None)
    p.add_argument("--change-margin", dest="change_margin", type=float, default=None)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--height", type=float, default=None)
    p.add_argument("--grid-x", dest="grid_x", type=int, default=None)
    p.add_argument("--grid-y", dest="grid_y", type=int, default=None)
    p.add_argument("--global-dim", dest="global_dim", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UsageError as e:
        print(f"ccr: usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except DataError as e:
        print(f"ccr: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
