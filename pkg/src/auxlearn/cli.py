"""Command-line entry point: ``auxlearn <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Set ``AUXLEARN_LOG_LEVEL`` (e.g. ``INFO``, ``DEBUG``) for log output on stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from auxlearn import composition as CP
from auxlearn import curation as C
from auxlearn import experiment as E
from auxlearn import loss as L
from auxlearn import metrics as MT
from auxlearn import model as M
from auxlearn.errors import ConfigError, DomainError, ParseError, RoutingError

logger = logging.getLogger("auxlearn")

LOG_ENV = "AUXLEARN_LOG_LEVEL"


class UsageError(Exception):
    pass


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _floats(text):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def load_config(args) -> E.ExperimentConfig:
    """Config file values first, then any flags given on the command line."""
    values = E.parse_config_text(_read(args.config)) if args.config else {}
    overrides = {
        "seed": args.seed, "out_dir": args.out_dir, "loss": args.loss,
        "ratio": args.ratio, "epochs": args.epochs, "lr": args.lr,
        "kind": getattr(args, "kind", None),
    }
    # kind must land before loss so "--kind binary --loss wcce" is rejected
    if overrides["kind"] is not None:
        values["kind"] = overrides.pop("kind")
    values.update({k: v for k, v in overrides.items() if v is not None})
    return E.make_config(values)


# -- subcommands ---------------------------------------------------------------------

def cmd_curate(args) -> int:
    entries = C.parse_synset_mapping(_read(args.mapping))
    dogs = C.parse_name_list(_read(args.dog_breeds)) if args.dog_breeds else ()
    cats = C.parse_name_list(_read(args.cat_breeds)) if args.cat_breeds else C.DEFAULT_CAT_BREEDS
    excl = C.ExclusionList(dogs, cats)
    excluded = C.build_exclusion_set(entries, excl)
    unmatched = C.find_unmatched(entries, excl)
    retained = [e for e in entries if e.synset_id not in excluded]

    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "retained_synsets.txt").write_text(
        "".join(f"{e.synset_id} {', '.join(e.names)}\n" for e in retained), encoding="utf-8"
    )
    print(f"synsets in mapping: {len(entries)}")
    print(f"classes excluded: {len(excluded)}")
    print(f"classes retained: {len(retained)}")
    if unmatched:
        print(f"warning: {len(unmatched)} exclusion names matched no synset: {', '.join(unmatched)}")

    if args.records:
        manifest = _curate_records(args, retained, excluded)
        C.save_manifest(manifest, out / "manifest.csv")
        for split in C.SPLITS:
            counts = manifest.counts(split)
            desc = ", ".join(f"{n}={c}" for n, c in zip(manifest.class_names, counts))
            print(f"{split}: {desc}")
    return 0


def _curate_records(args, retained, excluded):
    """Label records, drop excluded synsets, split and enforce the ratio.

    The records file is CSV with header ``example_id,class_name,source_synset``;
    an empty ``class_name`` marks an auxiliary-class candidate.
    """
    keep_synsets = {e.synset_id for e in retained}
    rows = list(csv.reader(_read(args.records).splitlines()))
    if not rows or [c.strip() for c in rows[0]] != ["example_id", "class_name", "source_synset"]:
        raise ParseError("records file needs header example_id,class_name,source_synset", 1)
    known, pending, dropped = [], [], 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        ex_id, name, synset = (v.strip() for v in row)
        if name:
            if name == E.AUX_CLASS_NAME:
                raise ParseError("leave class_name empty for auxiliary candidates", lineno)
            if name not in known:
                known.append(name)
            pending.append((ex_id, name, synset or None))
        elif synset in keep_synsets:
            pending.append((ex_id, E.AUX_CLASS_NAME, synset))
        else:
            dropped += 1
    names = tuple(known) + (E.AUX_CLASS_NAME,)
    index = {n: i for i, n in enumerate(names)}
    records = [C.ManifestRecord(i, index[n], s) for i, n, s in pending]
    print(f"auxiliary candidates dropped (excluded or unknown synset): {dropped}")
    seed = args.seed if args.seed is not None else 0
    manifest = C.assign_split(records, args.train_fraction, E.derive_seed(seed, "split"), names)
    if args.ratio:
        manifest = C.enforce_ratio(manifest, args.ratio, E.derive_seed(seed, "ratio"))
    return manifest


def cmd_synth_data(args) -> int:
    cfg = load_config(args)
    corpus = E.build_corpus(cfg)
    data_path, man_path = E.save_corpus(corpus, cfg.out_dir)
    for split in C.SPLITS:
        counts = corpus.manifest.counts(split)
        print(f"{split}: " + ", ".join(f"{n}={c}" for n, c in zip(corpus.manifest.class_names, counts)))
    print(f"wrote {data_path} and {man_path}")
    return 0


def _corpus_for(args, cfg):
    if args.data or args.manifest:
        if not (args.data and args.manifest):
            raise UsageError("--data and --manifest must be given together")
        for p in (args.data, args.manifest):
            if not Path(p).is_file():
                raise UsageError(f"cannot read {p}")
        return E.load_corpus(args.data, args.manifest)
    return E.build_corpus(cfg)


def cmd_train(args) -> int:
    cfg = load_config(args)
    corpus = _corpus_for(args, cfg)
    outcome = E.train_experiment(cfg, corpus)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(outcome.model, out / "model.ckpt")
    E.write_train_log(out / "train_log.csv", outcome)
    print(f"experiment: {cfg.kind} ({E.KIND_LABELS[cfg.kind]})")
    print("train counts: " + " ".join(str(c) for c in outcome.train_counts))
    if outcome.class_weights is not None:
        w = outcome.class_weights
        print("class weights w_p: [" + ", ".join(MT.fmt_truncated(v, 9) for v in w.w_p) + "]")
        print("class weights w_n: [" + ", ".join(MT.fmt_truncated(v, 9) for v in w.w_n) + "]")
    if outcome.report.loss_history:
        print(f"final epoch loss: {outcome.report.loss_history[-1]:.5f}")
    print(f"wrote {out / 'model.ckpt'}")
    return 0


def cmd_evaluate(args) -> int:
    for p in (args.checkpoint, args.data, args.manifest):
        if not Path(p).is_file():
            raise UsageError(f"cannot read {p}")
    model = M.load_checkpoint(args.checkpoint)
    corpus = E.load_corpus(args.data, args.manifest)
    n_all = len(corpus.manifest.class_names)
    kind = "binary" if model.num_classes == n_all - 1 else "aux"
    examples, names = corpus.select("test", kind)
    if not examples:
        raise DomainError("test set is empty")
    loss_kind = args.loss or "cce"
    weights = None
    if loss_kind == "wcce":
        weights = L.compute_class_weights(args.ratio or np.bincount([e.label for e in examples], minlength=len(names)))
    label = args.label or ("Binary Classifier" if kind == "binary" else "Auxiliary model")
    ev = E.evaluate_model(model, examples, names, label, loss_kind, weights)
    text, delimited = MT.render_report([ev.result])
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluation.txt").write_text(text, encoding="utf-8")
    (out / "evaluation.csv").write_text(delimited, encoding="utf-8")
    print(f"test examples: {sum(ev.test_counts)}")
    print(f"accuracy: {MT.fmt(ev.result.report.accuracy, 5)}")
    print(f"loss ({loss_kind}): {MT.fmt(ev.result.loss, 5)}")
    print(f"majority baseline: {MT.fmt(ev.baseline, 5)} ({MT.fmt_percent(ev.baseline)})")
    print(text, end="")
    return 0


def _run_one(kind, cfg, corpus, out_dir):
    sub = E.make_config({"kind": kind}, cfg)
    outcome = E.train_experiment(sub, corpus)
    run_dir = out_dir / kind
    run_dir.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(outcome.model, run_dir / "model.ckpt")
    E.write_train_log(run_dir / "train_log.csv", outcome)
    test, names = corpus.select("test", kind)
    ev = E.evaluate_model(outcome.model, test, names, E.KIND_LABELS[kind], sub.loss_kind, outcome.class_weights)
    return outcome, ev


def cmd_reproduce(args) -> int:
    cfg = load_config(args)
    out = Path(cfg.out_dir)
    corpus = E.build_corpus(cfg)
    E.save_corpus(corpus, out / "corpus")
    kinds = list(E.KINDS)
    results, failed = {}, []
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        futures = {k: pool.submit(_run_one, k, cfg, corpus, out) for k in kinds}
        for k in kinds:
            try:
                results[k] = futures[k].result()
            except Exception as exc:  # noqa: BLE001 - report and keep the other runs
                logger.error("experiment %s failed: %s", k, exc)
                failed.append(k)

    done = [k for k in kinds if k in results]
    lines = [f"seed: {cfg.seed}"]
    for split in C.SPLITS:
        counts = corpus.manifest.counts(split)
        lines.append(f"{split} counts: " + ", ".join(f"{n}={c}" for n, c in zip(corpus.manifest.class_names, counts)))
    test_counts = corpus.manifest.counts("test")
    base = MT.majority_baseline(test_counts)
    lines.append(f"majority baseline (always '{E.AUX_CLASS_NAME}'): {MT.fmt(base, 5)} ({MT.fmt_percent(base)})")
    for k in done:
        w = results[k][0].class_weights
        if w is not None:
            lines.append(f"{E.KIND_LABELS[k]} class weights w_p: "
                         + ", ".join(MT.fmt_truncated(v, 9) for v in w.w_p))
    for k in failed:
        lines.append(f"FAILED: {E.KIND_LABELS[k]}")
    text = "\n".join(lines) + "\n\n"
    delimited = ""
    if done:
        body, delimited = MT.render_report([results[k][1].result for k in done])
        text += body
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "report.csv").write_text(delimited, encoding="utf-8")
    print(text, end="")
    return 1 if failed else 0


def cmd_route(args) -> int:
    chain = CP.load_description(args.description)
    feats = np.array(args.features)
    trace = CP.route_chain(chain, feats)
    for node, label in trace.steps:
        print(f"{node}: {label}")
    print(f"final: {trace.final_label}")
    return 0


# -- parser --------------------------------------------------------------------------

def _common(p, loss=True):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    if loss:
        p.add_argument("--loss", choices=M.LOSS_KINDS)
    p.add_argument("--ratio", type=_floats, help="class ratio, e.g. '1,1,8.75'")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auxlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="exclude cat/dog synsets and build a manifest")
    p.add_argument("--mapping", required=True, help="LOC_synset_mapping.txt")
    p.add_argument("--dog-breeds", help="dash-separated dog breed names, one per line")
    p.add_argument("--cat-breeds", help="cat breed names, one per line (default: the 5 ILSVRC cats)")
    p.add_argument("--records", help="CSV example_id,class_name,source_synset")
    p.add_argument("--train-fraction", type=float, default=0.8)
    _common(p)
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("synth-data", help="write the synthetic corpus and its manifest")
    _common(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train one experiment")
    p.add_argument("--kind", choices=E.KINDS)
    p.add_argument("--data", help="dataset file from synth-data")
    p.add_argument("--manifest", help="manifest file from synth-data")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--label")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="run binary, aux_cce and aux_wcce and compare")
    p.add_argument("--jobs", type=int, default=1, help="experiments to run concurrently")
    _common(p)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("route", help="route one feature vector through a composed chain")
    p.add_argument("--description", required=True, help="chain description (JSON)")
    p.add_argument("--features", required=True, type=_floats, help="comma-separated feature values")
    p.set_defaults(func=cmd_route)
    return parser


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get(LOG_ENV, "WARNING").upper(), None)
    logging.basicConfig(
        level=level if isinstance(level, int) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, RoutingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
