"""Command-line entry point.

Subcommands: build-memory, evaluate, tune, low-resource, neighbors,
synth-generate, subsample.  Exit codes: 0 success, 1 validation error,
2 computation error.  NEIGHBORMIX_WORKERS and NEIGHBORMIX_OUT override the
default worker count and output directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import synth
from .aggregate import HyperParams, knn_distribution
from .data_model import (
    load_base_probs,
    load_embeddings,
    load_labeled_set,
    load_manifest,
    write_embeddings,
    write_labels,
    write_manifest,
)
from .errors import ComputeError, NeighborMixError, ValidationError
from .memory import build_memory, load_memory, save_memory
from .metrics import EvalReport, evaluate, format_report, report_to_json
from .search import DistanceKind, batch_search
from .tune import (
    SearchSpace,
    greedy_search,
    hyperparams_from_dict,
    format_best,
    interpolated_distributions,
    tune_alpha,
    tune_result_to_dict,
)


def _default_workers() -> int:
    return int(os.environ.get("NEIGHBORMIX_WORKERS", "1"))


def _default_out() -> str | None:
    return os.environ.get("NEIGHBORMIX_OUT")


def _require_out_dir(args: argparse.Namespace) -> Path:
    if args.out_dir is None:
        raise ValidationError("--out-dir is required (or set NEIGHBORMIX_OUT)")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise ValidationError(f"bad numeric list {text!r}: {exc}") from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise ValidationError(f"bad integer list {text!r}: {exc}") from None


def _gold_dict(labeled) -> dict[str, int]:
    return {
        rid: int(lab)
        for rid, lab in zip(labeled.embeddings.ids, labeled.labels)
    }


def _space_from_args(args: argparse.Namespace) -> SearchSpace:
    kwargs = {}
    if args.k_grid:
        kwargs["k_grid"] = _int_list(args.k_grid)
    if args.t_grid:
        kwargs["t_grid"] = _float_list(args.t_grid)
    if args.lambda_grid:
        kwargs["lambda_grid"] = _float_list(args.lambda_grid)
    if args.alpha_grid:
        kwargs["alpha_grid"] = _float_list(args.alpha_grid)
    return SearchSpace(**kwargs)


def _write_report(out: Path, stem: str, report: EvalReport) -> None:
    (out / f"{stem}.json").write_text(report_to_json(report), encoding="utf-8")
    (out / f"{stem}.txt").write_text(format_report(report), encoding="utf-8")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_build_memory(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    labeled = load_labeled_set(manifest, args.split)
    tag = args.tag or args.split
    memory = build_memory(labeled, tag)
    save_memory(memory, args.out)
    print(f"built memory: {len(memory)} rows, dim {memory.dim}, tag {tag!r} -> {args.out}")
    return 0


def _load_eval_inputs(args: argparse.Namespace):
    manifest = load_manifest(args.manifest)
    labeled = load_labeled_set(manifest, args.split)
    probs = load_base_probs(manifest, args.split)
    memory = load_memory(args.memory)
    if memory.dim != manifest.dim:
        raise ValidationError(
            f"memory dim {memory.dim} does not match manifest dim {manifest.dim}"
        )
    second = load_memory(args.second_memory) if args.second_memory else None
    return manifest, labeled, probs, memory, second


def _side_params(args: argparse.Namespace) -> tuple[HyperParams, HyperParams | None, float | None]:
    """Resolve per-memory settings from --params or individual flags."""
    if args.params:
        doc = json.loads(Path(args.params).read_text(encoding="utf-8"))
        first = hyperparams_from_dict(doc["first"]["best"])
        second = (
            hyperparams_from_dict(doc["second"]["best"]) if "second" in doc else None
        )
        alpha = doc.get("alpha", {}).get("best")
        return first, second, alpha
    if args.k is None:
        raise ValidationError("provide --k/--temperature/--lam or --params")
    distance = DistanceKind(args.distance)
    first = HyperParams(
        k=args.k, temperature=args.temperature, lam=args.lam, distance=distance
    )
    second = None
    if args.second_memory:
        second = HyperParams(
            k=args.second_k if args.second_k is not None else args.k,
            temperature=args.second_temperature
            if args.second_temperature is not None
            else args.temperature,
            lam=args.second_lam if args.second_lam is not None else args.lam,
            distance=distance,
        )
    return first, second, args.alpha


def _vote_matrix(memory, labeled, hp, workers, exclude_self):
    neighbors = batch_search(
        memory, labeled.embeddings, hp.k, hp.distance,
        exclude_self=exclude_self, workers=workers,
    )
    votes = np.stack(
        [knn_distribution(nl, memory.vocab, hp.temperature) for nl in neighbors]
    )
    return votes, neighbors


def cmd_evaluate(args: argparse.Namespace) -> int:
    out = _require_out_dir(args)
    manifest, labeled, probs, memory, second = _load_eval_inputs(args)
    hp1, hp2, alpha = _side_params(args)
    vocab = manifest.vocab
    exclude_negative = vocab.negative_label is not None
    gold = _gold_dict(labeled)
    ids = labeled.embeddings.ids
    base_rows = np.stack([probs.row(rid) for rid in ids])

    def report_for(pred_matrix: np.ndarray) -> EvalReport:
        preds = {rid: int(p) for rid, p in zip(ids, np.argmax(pred_matrix, axis=1))}
        return evaluate(gold, preds, vocab, exclude_negative=exclude_negative)

    votes1, neighbors1 = _vote_matrix(memory, labeled, hp1, args.workers, args.exclude_self)
    reports = {
        "report_base": report_for(base_rows),
        "report_knn_only": report_for(votes1),
        "report_interpolated": report_for(hp1.lam * votes1 + (1.0 - hp1.lam) * base_rows),
    }
    if second is not None:
        if alpha is None or hp2 is None:
            raise ValidationError("--second-memory requires --alpha (or --params)")
        votes2, _ = _vote_matrix(second, labeled, hp2, args.workers, args.exclude_self)
        final1 = hp1.lam * votes1 + (1.0 - hp1.lam) * base_rows
        final2 = hp2.lam * votes2 + (1.0 - hp2.lam) * base_rows
        reports["report_combined"] = report_for(alpha * final1 + (1.0 - alpha) * final2)
    for stem, report in reports.items():
        _write_report(out, stem, report)
        print(f"{stem}: micro F1 {report.micro_f1:.4f}  macro F1 {report.macro_f1:.4f}")
    if args.dump_neighbors:
        dump = batch_search(
            memory, labeled.embeddings, args.dump_neighbors, hp1.distance,
            exclude_self=args.exclude_self, workers=args.workers,
        )
        lines = ["query_id\trank\tneighbor_id\tneighbor_label\tdistance\n"]
        for rid, nl in zip(ids, dump):
            for rank, nb in enumerate(nl):
                label = vocab.name_of(nb.label_id)
                lines.append(f"{rid}\t{rank}\t{nb.record_id}\t{label}\t{nb.distance:.10g}\n")
        (out / "neighbors.tsv").write_text("".join(lines), encoding="utf-8")
        print(f"wrote neighbor dump for {len(ids)} queries -> {out / 'neighbors.tsv'}")
    return 0


def cmd_tune(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    dev = load_labeled_set(manifest, args.split)
    dev_probs = load_base_probs(manifest, args.split)
    memory = load_memory(args.memory)
    space = _space_from_args(args)
    distance = DistanceKind(args.distance)
    result = greedy_search(
        memory, dev, dev_probs, space, distance=distance, workers=args.workers
    )
    doc: dict = {"distance": distance.value, "first": tune_result_to_dict(result)}
    print(f"first memory [{memory.source_tag}]: best (k, lam) = {format_best(result)}, "
          f"dev F1 {result.dev_f1:.4f}")
    if args.second_memory:
        second = load_memory(args.second_memory)
        result2 = greedy_search(
            second, dev, dev_probs, space, distance=distance, workers=args.workers
        )
        doc["second"] = tune_result_to_dict(result2)
        print(f"second memory [{second.source_tag}]: best (k, lam) = "
              f"{format_best(result2)}, dev F1 {result2.dev_f1:.4f}")
        gold = _gold_dict(dev)
        dists1 = interpolated_distributions(
            memory, dev, dev_probs, result.best, workers=args.workers
        )
        dists2 = interpolated_distributions(
            second, dev, dev_probs, result2.best, workers=args.workers
        )
        best_alpha, alpha_trace = tune_alpha(
            dists1, dists2, gold, space.alpha_grid,
            num_labels=len(manifest.vocab),
            negative_label=manifest.vocab.negative_label,
        )
        best_alpha_f1 = max(f1 for _, f1 in alpha_trace)
        doc["alpha"] = {
            "best": best_alpha,
            "dev_f1": best_alpha_f1,
            "trace": [{"alpha": a, "dev_f1": f} for a, f in alpha_trace],
        }
        print(f"combined: best alpha = {best_alpha:g}, dev F1 {best_alpha_f1:.4f}")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(f"wrote tuning result -> {args.out}")
    return 0


def cmd_low_resource(args: argparse.Namespace) -> int:
    out = _require_out_dir(args)
    manifest = load_manifest(args.manifest)
    train = load_labeled_set(manifest, "train")
    dev = load_labeled_set(manifest, "dev")
    test = load_labeled_set(manifest, "test")
    vocab = manifest.vocab
    ds_memory = load_memory(args.ds_memory) if args.ds_memory else None
    space = _space_from_args(args)
    distance = DistanceKind(args.distance)
    fractions = _float_list(args.fractions)
    if not fractions:
        raise ValidationError("--fractions must name at least one value")
    gold_test = _gold_dict(test)
    exclude_negative = vocab.negative_label is not None

    def test_f1(pred_matrix: np.ndarray) -> float:
        preds = {
            rid: int(p)
            for rid, p in zip(test.embeddings.ids, np.argmax(pred_matrix, axis=1))
        }
        return evaluate(gold_test, preds, vocab, exclude_negative=exclude_negative).micro_f1

    rows = []
    for fraction in fractions:
        sub = synth.subsample(train, fraction, args.seed)
        proxy_kwargs = dict(
            base_temperature=args.base_temperature,
            bias_strength=args.bias_strength,
            label_noise=args.label_noise,
            seed=args.noise_seed,
        )
        dev_probs = synth.centroid_base_probs(sub, dev.embeddings, vocab, **proxy_kwargs)
        test_probs = synth.centroid_base_probs(sub, test.embeddings, vocab, **proxy_kwargs)
        base_f1 = test_f1(test_probs.rows)
        row = {
            "fraction": fraction,
            "train_rows": len(sub),
            "base_f1": base_f1,
            "train_f1": None,
            "ds_f1": None,
        }
        sub_memory = build_memory(sub, "train")
        tuned = greedy_search(
            sub_memory, dev, dev_probs, space, distance=distance, workers=args.workers
        )
        votes, _ = _vote_matrix(sub_memory, test, tuned.best, args.workers, False)
        row["train_f1"] = test_f1(
            tuned.best.lam * votes + (1.0 - tuned.best.lam) * test_probs.rows
        )
        row["train_best"] = format_best(tuned)
        if ds_memory is not None:
            tuned_ds = greedy_search(
                ds_memory, dev, dev_probs, space, distance=distance, workers=args.workers
            )
            votes_ds, _ = _vote_matrix(ds_memory, test, tuned_ds.best, args.workers, False)
            row["ds_f1"] = test_f1(
                tuned_ds.best.lam * votes_ds
                + (1.0 - tuned_ds.best.lam) * test_probs.rows
            )
            row["ds_best"] = format_best(tuned_ds)
        rows.append(row)
        note = f"fraction {fraction:g}: base {base_f1:.4f} train {row['train_f1']:.4f}"
        if row["ds_f1"] is not None:
            note += f" ds {row['ds_f1']:.4f}"
        print(note)
    doc = {"seed": args.seed, "rows": rows}
    if ds_memory is None:
        doc["note"] = "no ds memory given; ds series omitted"
        print("note: no ds memory given; ds series omitted")
    curve_path = out / "low_resource.json"
    curve_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    lines = [f"{'fraction':>9} {'rows':>7} {'base':>8} {'train':>8} {'ds':>8}"]
    for row in rows:
        ds_cell = "-" if row["ds_f1"] is None else f"{row['ds_f1']:.4f}"
        lines.append(
            f"{row['fraction']:>9g} {row['train_rows']:>7d} {row['base_f1']:>8.4f} "
            f"{row['train_f1']:>8.4f} {ds_cell:>8}"
        )
    (out / "low_resource.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote curve -> {curve_path}")
    return 0


def cmd_neighbors(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    files = manifest.split(args.split)
    embeddings = load_embeddings(files.embeddings)
    memory = load_memory(args.memory)
    results = batch_search(
        memory, embeddings, args.k, DistanceKind(args.distance),
        exclude_self=args.exclude_self, workers=args.workers,
    )
    lines = ["query_id\trank\tneighbor_id\tneighbor_label\tdistance\n"]
    for rid, nl in zip(embeddings.ids, results):
        for rank, nb in enumerate(nl):
            label = memory.vocab.name_of(nb.label_id)
            lines.append(f"{rid}\t{rank}\t{nb.record_id}\t{label}\t{nb.distance:.10g}\n")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text("".join(lines), encoding="utf-8")
    print(f"wrote {args.k} neighbors for {len(embeddings)} queries -> {args.out}")
    return 0


def cmd_synth_generate(args: argparse.Namespace) -> int:
    out = _require_out_dir(args)
    spec = synth.load_spec(args.spec)
    data = synth.generate(spec)
    manifest_path = synth.write_dataset(data, out)
    counts = f"train {len(data.train)}, dev {len(data.dev)}, test {len(data.test)}"
    if data.ds is not None:
        counts += f", ds {len(data.ds)}"
    print(f"generated {counts} -> {manifest_path}")
    return 0


def cmd_subsample(args: argparse.Namespace) -> int:
    out = _require_out_dir(args)
    manifest = load_manifest(args.manifest)
    labeled = load_labeled_set(manifest, args.split)
    sub = synth.subsample(labeled, args.fraction, args.seed)
    emb_name = f"{args.split}_sub.emb"
    tsv_name = f"{args.split}_sub.tsv"
    write_embeddings(sub.embeddings, out / emb_name)
    write_labels(
        out / tsv_name,
        sub.embeddings.ids,
        [manifest.vocab.name_of(int(l)) for l in sub.labels],
    )
    doc: dict = {
        "dim": manifest.dim,
        "labels": list(manifest.vocab.names),
        "splits": {},
    }
    if manifest.vocab.negative_label is not None:
        doc["negative_label"] = manifest.vocab.name_of(manifest.vocab.negative_label)
    for name, files in manifest.splits.items():
        if name == args.split:
            doc["splits"][name] = {
                "embeddings": emb_name,
                "labels": tsv_name,
                "count": len(sub),
            }
        else:
            entry = {
                "embeddings": str(files.embeddings.resolve()),
                "labels": str(files.labels.resolve()),
                "count": files.count,
            }
            if files.base_probs is not None:
                entry["base_probs"] = str(files.base_probs.resolve())
            doc["splits"][name] = entry
    write_manifest(out / "manifest.json", doc)
    print(
        f"subsampled {args.split}: {len(labeled)} -> {len(sub)} rows "
        f"(fraction {args.fraction:g}) -> {out / 'manifest.json'}"
    )
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--workers", type=int, default=_default_workers(),
                     help="thread count for batch search (default: 1 or $NEIGHBORMIX_WORKERS)")
    sub.add_argument("--distance", choices=[k.value for k in DistanceKind],
                     default="sq_l2")


def _add_grid_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--k-grid", help="comma-separated k values (default 2..256 powers of 2)")
    sub.add_argument("--t-grid", help="comma-separated temperatures in (0,1]")
    sub.add_argument("--lambda-grid", help="comma-separated mix weights in [0,1]")
    sub.add_argument("--alpha-grid", help="comma-separated memory weights in [0,1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neighbormix",
        description="Retrieval-augmented classification over key-value memories",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("build-memory", help="build and save a memory from a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--tag", help="source tag stored in the file (default: split name)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_memory)

    p = subs.add_parser("evaluate", help="score base, neighbor-only, mixed, and combined runs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--memory", required=True)
    p.add_argument("--second-memory")
    p.add_argument("--params", help="tuning-result JSON produced by `tune`")
    p.add_argument("--k", type=int)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--second-k", type=int)
    p.add_argument("--second-temperature", type=float)
    p.add_argument("--second-lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--exclude-self", action="store_true",
                   help="skip memory rows sharing a query's record id")
    p.add_argument("--dump-neighbors", type=int, metavar="N",
                   help="also write top-N neighbors per query to neighbors.tsv")
    p.add_argument("--out-dir", default=_default_out())
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("tune", help="greedy grid search on a dev split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="dev")
    p.add_argument("--memory", required=True)
    p.add_argument("--second-memory")
    p.add_argument("--out", required=True)
    _add_grid_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_tune)

    p = subs.add_parser("low-resource",
                        help="fraction sweep: subsample train, rebuild, retune, score")
    p.add_argument("--manifest", required=True)
    p.add_argument("--fractions", required=True, help="comma-separated fractions in (0,1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ds-memory", help="fixed extra-supervision memory (.kvm)")
    p.add_argument("--base-temperature", type=float, default=1.0)
    p.add_argument("--bias-strength", type=float, default=0.0)
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out-dir", default=_default_out())
    _add_grid_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_low_resource)

    p = subs.add_parser("neighbors", help="dump top-k neighbors for a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--memory", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_neighbors)

    p = subs.add_parser("synth-generate", help="generate a synthetic dataset from a spec")
    p.add_argument("--spec", required=True, help="SynthSpec JSON document")
    p.add_argument("--out-dir", default=_default_out())
    p.set_defaults(func=cmd_synth_generate)

    p = subs.add_parser("subsample", help="stratified subsample of a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=_default_out())
    p.set_defaults(func=cmd_subsample)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ComputeError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 2
    except NeighborMixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a computation failure
        print(f"computation error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
