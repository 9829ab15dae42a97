"""``bitladder`` command line: ground-truth pipeline, predictor and studies.

Exit codes: 0 success, 1 configuration error, 2 partial failure (some
sequences or jobs failed; everything that succeeded is still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .bd import BDError, BDOptions, Interpolation, bd_metrics, sample_fits
from .codec import CodecConfigError, codec_from_config
from .core import (
    DEFAULT_RECIPE,
    BitrateLadder,
    RDCurve,
    RecipeError,
    dump_json,
    load_ladder,
    load_manifest,
    load_recipe,
    load_surface,
)
from .evaluation import fixed_ladder, majority_ladder, plot_data_csv, run_study
from .hull import CoverageError as HullCoverageError
from .hull import build_ladder, class_histogram, histogram_csv
from .mockcorpus import derive_seed, generate_corpus, write_corpus
from .orchestrator import (
    BitrateBounds,
    CoverageError,
    Journal,
    PlanExecutionError,
    ProbeError,
    assemble_surface,
    execute_plan,
    plan_jobs,
    probe_bounds,
)
from .predictor import (
    FocalLossConfig,
    TagrnConfig,
    TrainConfig,
    TrainingDiverged,
    load_model,
    predict_ladder,
    read_feature_file,
    save_model,
    train,
)

log = logging.getLogger("bitladder")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(Exception):
    pass


# -- shared helpers -----------------------------------------------------------

def _recipe(args):
    return load_recipe(args.recipe) if args.recipe else DEFAULT_RECIPE


def _out(args) -> Path:
    out = Path(args.out) if args.out else Path(args.workdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _codec(args):
    if not args.codec_config:
        raise ConfigError("--codec-config is required")
    path = Path(args.codec_config)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: malformed codec config ({e.msg})") from e
    return codec_from_config(doc, args.workdir)


def _manifest(args):
    if not args.manifest:
        raise ConfigError("--manifest is required")
    return load_manifest(args.manifest)


def _ids_for_split(args, split: str, available: list[str]) -> list[str]:
    """Sequences from the manifest split when a manifest is given, else all available."""
    if not args.manifest:
        return sorted(available)
    have = set(available)
    return sorted(s.sequence_id for s in load_manifest(args.manifest)
                  if s.split == split and s.sequence_id in have)


def _stems(directory: Path, suffix: str) -> list[str]:
    return sorted(p.name[:-len(suffix)] for p in directory.glob(f"*{suffix}"))


def _load_ladders(directory: Path, recipe, ids=None) -> dict[str, BitrateLadder]:
    ids = _stems(directory, ".ladder.json") if ids is None else ids
    return {i: load_ladder(directory / f"{i}.ladder.json", recipe) for i in ids}


def _load_bounds(path: Path) -> dict[str, list[BitrateBounds]]:
    doc = json.loads(path.read_text())
    return {k: [BitrateBounds.from_dict(b) for b in v] for k, v in doc["bounds"].items()}


# -- subcommands ----------------------------------------------------------------

def cmd_probe(args) -> int:
    recipe, codec, sequences = _recipe(args), _codec(args), _manifest(args)
    bounds, failures = {}, {}
    for seq in sequences:
        try:
            bounds[seq.sequence_id] = [b.to_dict() for b in probe_bounds(seq, recipe, codec)]
        except ProbeError as e:
            failures[seq.sequence_id] = str(e)
    dump_json({"bounds": bounds, "failures": failures}, _out(args) / "bounds.json")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_encode(args) -> int:
    recipe, codec, sequences = _recipe(args), _codec(args), _manifest(args)
    out = _out(args)
    (out / "rd").mkdir(exist_ok=True)
    known = _load_bounds(Path(args.bounds)) if args.bounds else {}
    journal = Journal(Path(args.workdir) / "encode_journal.jsonl")
    by_id = {s.sequence_id: s for s in sequences}
    failures = {}
    for seq in sequences:
        sid = seq.sequence_id
        try:
            bounds = known.get(sid) or probe_bounds(seq, recipe, codec)
            jobs = plan_jobs(sid, bounds, recipe)
        except (ProbeError, CoverageError) as e:
            failures[sid] = str(e)
            continue
        try:
            results = execute_plan(jobs, codec, args.workers, by_id, journal)
        except PlanExecutionError as e:
            failures[sid] = str(e)
            results = e.results
        dump_json(assemble_surface(sid, results, recipe).to_dict(), out / "rd" / f"{sid}.json")
    if failures:
        dump_json(failures, out / "encode_failures.json")
        for sid, msg in failures.items():
            log.error("%s: %s", sid, msg)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_label(args) -> int:
    recipe = _recipe(args)
    rd_dir = Path(args.rd_dir)
    out = _out(args)
    ladders, failures = [], {}
    for path in sorted(rd_dir.glob("*.json")):
        surface = load_surface(path)
        try:
            ladder = build_ladder(surface, recipe)
        except HullCoverageError as e:
            failures[surface.sequence_id] = str(e)
            log.error("%s: %s", surface.sequence_id, e)
            continue
        dump_json(ladder.to_dict(), out / f"{surface.sequence_id}.ladder.json")
        ladders.append(ladder)
    (out / "histogram.csv").write_text(histogram_csv(class_histogram(ladders, recipe), recipe))
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_train(args) -> int:
    recipe = _recipe(args)
    feat_dir, label_dir = Path(args.features_dir), Path(args.labels_dir)
    labelled = set(_stems(label_dir, ".ladder.json"))
    ids = _ids_for_split(args, "train", [i for i in _stems(feat_dir, ".tagf") if i in labelled])
    if not ids:
        raise ConfigError("no sequences with both features and labels to train on")
    ladders = _load_ladders(label_dir, recipe, ids)
    dataset = [(read_feature_file(feat_dir / f"{i}.tagf"), ladders[i]) for i in ids]
    T, D = dataset[0][0].shape
    config = TagrnConfig(tasks_b=recipe.num_bitrates, classes_r=recipe.num_resolutions,
                         t_frames=T, feature_dim=D, heads=args.heads, gru_layers=args.gru_layers,
                         gru_hidden=args.gru_hidden, dropout_p=args.dropout)
    seed = derive_seed(args.seed, "train")
    traincfg = TrainConfig(epochs=args.epochs, lr_initial=args.lr, batch_size=args.batch_size,
                           weight_decay=args.weight_decay, seed=seed)
    try:
        params, history = train(dataset, config, traincfg, FocalLossConfig(gamma=args.gamma))
    except TrainingDiverged as e:
        log.error("%s", e)
        return EXIT_PARTIAL
    out = _out(args)
    save_model(out / "model.tagm", params, seed,
               {"train": traincfg.to_dict(), "sequences": ids})
    dump_json(history.to_dict(), out / "history.json")
    return EXIT_OK


def cmd_predict(args) -> int:
    recipe = _recipe(args)
    params, _ = load_model(args.model)
    feat_dir = Path(args.features_dir)
    ids = _ids_for_split(args, "test", _stems(feat_dir, ".tagf"))
    out = _out(args)
    for i in ids:
        X = read_feature_file(feat_dir / f"{i}.tagf").values
        dump_json(predict_ladder(X, params, recipe, i).to_dict(), out / f"{i}.ladder.json")
    return EXIT_OK


def cmd_eval(args) -> int:
    recipe = _recipe(args)
    rd_dir, label_dir = Path(args.rd_dir), Path(args.labels_dir)
    preds = _load_ladders(Path(args.pred_dir), recipe)
    ids = _ids_for_split(args, "test", list(preds))
    if not ids:
        raise ConfigError("no predictions to evaluate")
    surfaces = {i: load_surface(rd_dir / f"{i}.json") for i in ids}
    truth = _load_ladders(label_dir, recipe, ids)
    fixed = fixed_ladder(recipe, args.fixed_ladder)
    methods = {"predicted": preds, "fixed": lambda _: fixed, "ground_truth": truth}
    if args.manifest:
        train_ids = _ids_for_split(args, "train", _stems(label_dir, ".ladder.json"))
        if train_ids:
            hist = class_histogram(_load_ladders(label_dir, recipe, train_ids).values(), recipe)
            majority = majority_ladder(hist, recipe)
            methods["majority"] = lambda _: majority
    report = run_study(surfaces, truth, methods,
                       BDOptions(interpolation=Interpolation(args.interpolation)))
    out = _out(args)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    (out / "plots").mkdir(exist_ok=True)
    for i in ids:
        ladders = {"predicted": preds[i], "fixed": fixed, "ground_truth": truth[i]}
        (out / "plots" / f"{i}.csv").write_text(plot_data_csv(surfaces[i], ladders))
    return EXIT_PARTIAL if report.failures else EXIT_OK


def _read_curve(path: Path) -> RDCurve:
    """Two-column CSV (kbps, quality; header optional) or JSON {"rate_kbps", "quality"}."""
    text = path.read_text()
    if path.suffix == ".json":
        doc = json.loads(text)
        return RDCurve.from_arrays(doc["rate_kbps"], doc["quality"])
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return RDCurve.from_arrays([float(r[0]) for r in rows], [float(r[1]) for r in rows])


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def cmd_bd(args) -> int:
    test, ref = _read_curve(Path(args.test)), _read_curve(Path(args.reference))
    opts = BDOptions(interpolation=Interpolation(args.interpolation))
    try:
        result = bd_metrics(test, ref, opts)
    except BDError as e:
        log.error("%s", e)
        return EXIT_PARTIAL
    text = json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _out(args)
        (out / "bd.json").write_text(text)
        if args.curves_csv:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["kbps", "test_quality", "reference_quality"])
            w.writerows([repr(a), repr(b), repr(c)] for a, b, c in sample_fits(test, ref, opts))
            (out / "bd_curves.csv").write_text(buf.getvalue())
    return EXIT_OK


def cmd_mock_gen(args) -> int:
    recipe = _recipe(args)
    corpus = generate_corpus(args.count, derive_seed(args.seed, "mock-gen"),
                             noise_scale=args.noise_scale, n_frames=args.n_frames)
    write_corpus(_out(args), corpus, holdout=args.holdout, t_frames=args.t_frames,
                 feature_dim=args.feature_dim, recipe=recipe)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--recipe", help="recipe JSON (default: 7 resolutions x 10 bitrates)")
    g.add_argument("--codec-config", help="codec adapter JSON (kind: mock | subprocess)")
    g.add_argument("--workdir", default=".", help="scratch space: journal, encodes (default .)")
    g.add_argument("--workers", type=_positive_int, default=1, help="encode worker limit")
    g.add_argument("--seed", type=int, default=0, help="root seed for all randomness")
    g.add_argument("--out", help="output directory (default: --workdir)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="bitladder", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("probe", parents=[common], help="CQP bitrate bounds per resolution")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("encode", parents=[common],
                       help="CBR encodes inside the bounds -> rd/<id>.json (resumable)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bounds", help="bounds.json from probe (probes again when absent)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("label", parents=[common],
                       help="ground-truth ladders <id>.ladder.json and histogram.csv")
    p.add_argument("--rd-dir", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common], help="fit the resolution predictor")
    p.add_argument("--features-dir", required=True)
    p.add_argument("--labels-dir", required=True)
    p.add_argument("--manifest", help="train on the 'train' split only")
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--batch-size", type=_positive_int, default=8)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--gamma", type=float, default=2.0, help="focal loss focusing parameter")
    p.add_argument("--heads", type=_positive_int, default=2)
    p.add_argument("--gru-layers", type=_positive_int, default=2)
    p.add_argument("--gru-hidden", type=_positive_int, default=32)
    p.add_argument("--dropout", type=float, default=0.25)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predicted <id>.ladder.json")
    p.add_argument("--model", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--manifest", help="predict the 'test' split only")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common],
                       help="BD and classification study -> report.json, report.csv, plots/")
    p.add_argument("--rd-dir", required=True)
    p.add_argument("--labels-dir", required=True, help="ground-truth ladders")
    p.add_argument("--pred-dir", required=True, help="predicted ladders")
    p.add_argument("--manifest", help="evaluate the 'test' split; adds a majority baseline")
    p.add_argument("--fixed-ladder", help="fixed mapping JSON (default: shipped mapping)")
    p.add_argument("--interpolation", choices=[i.value for i in Interpolation],
                   default=Interpolation.PCHIP.value)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bd", parents=[common], help="BD-Rate and BD-Quality of two curves")
    p.add_argument("test", help="CSV (kbps,quality) or JSON {rate_kbps, quality}")
    p.add_argument("reference")
    p.add_argument("--interpolation", choices=[i.value for i in Interpolation],
                   default=Interpolation.PCHIP.value)
    p.add_argument("--curves-csv", action="store_true",
                   help="also write sampled fitted curves to --out/bd_curves.csv")
    p.set_defaults(func=cmd_bd)

    p = sub.add_parser("mock-gen", parents=[common], help="synthetic corpus for offline runs")
    p.add_argument("--count", type=_positive_int, default=250)
    p.add_argument("--holdout", type=int, default=50, help="last N sequences form the test split")
    p.add_argument("--noise-scale", type=float, default=0.0, help="rate-control jitter, percent")
    p.add_argument("--n-frames", type=_positive_int, default=120)
    p.add_argument("--t-frames", type=_positive_int, default=10)
    p.add_argument("--feature-dim", type=_positive_int, default=8)
    p.set_defaults(func=cmd_mock_gen)
    return parser


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CodecConfigError, RecipeError, FileNotFoundError,
            ValueError, KeyError) as e:
        print(f"bitladder: error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
