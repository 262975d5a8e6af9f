"""Command-line entry point: ``ate {ingest,coverage,train,grid,eval,stats}``.

Every failure prints a single ``error: <kind>: <message>`` line to stderr and
exits with status 2.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import tagger
from .corpus import CorpusError, load_semeval, profile, read_jsonl, token_types, write_jsonl
from .embeddings import EmbeddingError, coverage, file_stem, load_vectors, write_coverage_csv
from .evaluation import EvaluationError, aggregate, read_matrix_csv, write_matrix_csv
from .rank_stats import RankStatsError, rank_report
from .tagger import ConfigError, TaggerConfig, TrainingError

logger = logging.getLogger("ate")

RECORD_FIELDS = ("embedding", "method", "seed", "epochs_ran", "best_epoch", "val_f1",
                 "test_precision", "test_recall", "test_f1", "test_f1_strict")


class CliError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def _need_file(path):
    if not Path(path).is_file():
        raise CliError("missing-file", f"{path} does not exist")
    return path


def _read_dataset(path):
    _need_file(path)
    try:
        return read_jsonl(path)
    except (ValueError, KeyError) as exc:
        raise CliError("bad-dataset", f"{path}: {exc}") from exc


def _words_of(*datasets):
    return {w for ds in datasets for s in ds for w in s.words}


# ingest / coverage --------------------------------------------------------------


def cmd_ingest(args):
    _need_file(args.xml)
    sentences = load_semeval(args.xml)
    prof = profile(sentences)
    write_jsonl(sentences, args.out)
    print(prof.format())


def cmd_coverage(args):
    _need_file(args.vectors)
    datasets = {Path(p).stem: token_types(_read_dataset(p)) for p in args.datasets}
    keep = set().union(*datasets.values())
    table = load_vectors(args.vectors, name=args.name, keep=keep)
    report = coverage(table, datasets)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_coverage_csv([report], fh)
    else:
        write_coverage_csv([report], sys.stdout)


# training -----------------------------------------------------------------------

_TABLES = {}


def _table(path, name, words):
    # one cached table per (file, name, vocabulary) within a process
    key = (str(path), name, frozenset(words))
    if key not in _TABLES:
        _TABLES[key] = load_vectors(path, name=name, keep=words)
    return _TABLES[key]


def run_cell(embedding, vectors, method, seed, train_path, test_path, overrides=None,
             model_dir=None):
    """Train one (embedding, method, seed) cell and return its run record."""
    train_set = read_jsonl(train_path)
    test_set = read_jsonl(test_path)
    cfg = TaggerConfig.for_method(method, seed=seed, embedding_name=embedding, **(overrides or {}))
    table = _table(vectors, embedding, _words_of(train_set, test_set))
    model = tagger.build_for_data(cfg, table, train_set, test_set)
    log = tagger.train(model, train_set)
    scores = tagger.evaluate(model, test_set)
    if model_dir is not None:
        model.save(model_dir)
    return {"embedding": embedding, "method": method, "seed": seed,
            "epochs_ran": log.stopped_epoch, "best_epoch": log.best_epoch,
            "val_f1": log.best_val_f1, "test_precision": scores["precision"],
            "test_recall": scores["recall"], "test_f1": scores["f1"],
            "test_f1_strict": scores["f1_strict"]}


def _overrides(args):
    out = {}
    for key in ("word_hidden", "max_epochs", "batch_size", "dropout", "patience"):
        val = getattr(args, key)
        if val is not None:
            out[key] = val
    if args.finetune:
        out["finetune_embeddings"] = True
    return out


def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def cmd_train(args):
    tagger.parse_method(args.method)
    for p in (args.train, args.test, args.vectors):
        _need_file(p)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = args.embedding or file_stem(args.vectors)
    rec = run_cell(name, args.vectors, args.method, args.seed, args.train, args.test,
                   _overrides(args), out / "model")
    _write_json(out / "run.json", rec)
    print(json.dumps(rec, sort_keys=True))


def load_plan(path):
    """Read an experiment plan and expand it into a sorted list of jobs.

    Plan keys: ``embeddings`` (name -> vector file), ``methods`` (list, or
    omitted for all eight), optional ``cells`` (explicit ``[embedding,
    method]`` pairs instead of the full cross product), ``seeds`` (default
    1..6), ``train``, ``test``, ``out`` and optional ``config`` overrides.
    Relative paths resolve against the plan's directory.
    """
    _need_file(path)
    base = Path(path).resolve().parent
    try:
        plan = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError("bad-plan", f"{path}: {exc}") from exc
    for key in ("embeddings", "train", "test", "out"):
        if key not in plan:
            raise CliError("bad-plan", f"plan lacks {key!r}")

    def resolve(p):
        return str(p if Path(p).is_absolute() else base / p)

    embeddings = {k: resolve(v) for k, v in plan["embeddings"].items()}
    if "cells" in plan:
        cells = [tuple(c) for c in plan["cells"]]
    else:
        methods = plan.get("methods", list(tagger.TABLE_ORDER))
        cells = [(e, m) for e in embeddings for m in methods]
    if len(set(cells)) != len(cells):
        raise CliError("bad-plan", "duplicate cells in plan")
    for emb, method in cells:
        tagger.parse_method(method)
        if emb not in embeddings:
            raise CliError("bad-plan", f"cell uses undeclared embedding {emb!r}")
    overrides = plan.get("config", {})
    TaggerConfig.from_dict(overrides)
    seeds = plan.get("seeds", [1, 2, 3, 4, 5, 6])
    jobs = [{"embedding": e, "vectors": embeddings[e], "method": m, "seed": s,
             "train_path": resolve(plan["train"]), "test_path": resolve(plan["test"]),
             "overrides": overrides}
            for e, m in cells for s in seeds]
    for p in {j["train_path"] for j in jobs} | {j["test_path"] for j in jobs} | set(embeddings.values()):
        _need_file(p)
    return jobs, Path(resolve(plan["out"]))


def _record_path(run_dir, job):
    return run_dir / f"{job['embedding']}__{job['method']}__seed{job['seed']}.json"


def _grid_job(job, path):
    rec = run_cell(**job)
    _write_json(path, rec)
    return rec


def _record_key(rec):
    return (rec["embedding"], rec["method"], rec["seed"])


def cmd_grid(args):
    jobs, out = load_plan(args.plan)
    run_dir = out / "runs"
    run_dir.mkdir(parents=True, exist_ok=True)
    todo = [j for j in jobs if not _record_path(run_dir, j).exists()]
    logger.info("%d of %d runs already done", len(jobs) - len(todo), len(jobs))
    if args.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_grid_job, j, _record_path(run_dir, j)) for j in todo]
            for f in futures:
                f.result()
    else:
        for j in todo:
            _grid_job(j, _record_path(run_dir, j))
    records = [json.loads(_record_path(run_dir, j).read_text(encoding="utf-8")) for j in jobs]
    records.sort(key=_record_key)
    with open(out / "runs.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"{len(records)} run records in {out / 'runs.jsonl'}")


# evaluation / statistics ------------------------------------------------------------


def _read_records(paths):
    records = []
    for p in paths:
        _need_file(p)
        text = Path(p).read_text(encoding="utf-8")
        if p.endswith(".jsonl"):
            records += [json.loads(line) for line in text.splitlines() if line.strip()]
        else:
            records.append(json.loads(text))
    for rec in records:
        missing = [k for k in RECORD_FIELDS[:9] if k not in rec]
        if missing:
            raise CliError("bad-record", f"run record lacks {missing}")
    return records


def cmd_eval(args):
    records = _read_records(args.records)
    if not records:
        raise CliError("bad-record", "no run records")
    cells = aggregate(records, key=args.key)
    present = {c.method for c in cells}
    methods = [m for m in tagger.TABLE_ORDER if m in present]
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_matrix_csv(cells, fh, methods)
    else:
        write_matrix_csv(cells, sys.stdout, methods)


def cmd_stats(args):
    _need_file(args.matrix)
    with open(args.matrix, encoding="utf-8") as fh:
        embeddings, methods, means, _ = read_matrix_csv(fh)
    if args.treatments == "methods":
        rep = rank_report(means, methods, embeddings, args.alpha)
    else:
        transposed = [list(col) for col in zip(*means)]
        rep = rank_report(transposed, embeddings, methods, args.alpha)
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)


# parser -----------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="ate", description="Aspect term extraction experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="SemEval XML -> JSONL, printing the dataset profile")
    p.add_argument("xml")
    p.add_argument("out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("coverage", help="share of dataset word types missing from a vector file")
    p.add_argument("vectors")
    p.add_argument("datasets", nargs="+", help="JSONL datasets; subset name is the file stem")
    p.add_argument("--name", help="embedding name (default: file stem)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("train", help="train and evaluate one configuration")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--embedding", help="embedding name for the run record")
    p.add_argument("--method", required=True, help=", ".join(tagger.METHODS))
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True, help="directory for run.json and the checkpoint")
    p.add_argument("--word-hidden", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--finetune", action="store_true", help="train the word vectors too")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run an experiment plan; finished runs are skipped")
    p.add_argument("plan")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="aggregate run records into a result matrix CSV")
    p.add_argument("records", nargs="+", help="run.json files or runs.jsonl")
    p.add_argument("--key", default="test_f1", choices=["test_f1", "test_f1_strict", "val_f1"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="Friedman/Nemenyi report for a result matrix CSV")
    p.add_argument("matrix")
    p.add_argument("--alpha", type=float, default=0.05, choices=[0.05, 0.10])
    p.add_argument("--treatments", default="methods", choices=["methods", "embeddings"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)
    return ap


_KINDS = [(CorpusError, "corpus"), (EmbeddingError, "embeddings"), (ConfigError, "config"),
          (TrainingError, "training"), (EvaluationError, "evaluation"),
          (RankStatsError, "stats"), (OSError, "io")]


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, exc)
    except tuple(k for k, _ in _KINDS) as exc:
        kind = next(name for cls, name in _KINDS if isinstance(exc, cls))
        return _fail(kind, exc)
    return 0


def _fail(kind, exc):
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
