"""Classification metrics and BD studies of ladders against ground-truth hulls."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence as Seq, Union

import numpy as np

from .bd import BDError, BDOptions, bd_quality, bd_rate, ladder_curve
from .core import BitrateLadder, EncodingRecipe, LadderError, RDSurface, Resolution
from .hull import hull_curve

LadderProvider = Union[Mapping[str, BitrateLadder], Callable[[str], BitrateLadder]]


@dataclass(frozen=True)
class ConfusionTensor:
    """counts[task, true class, predicted class]."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 3 or c.shape[1] != c.shape[2]:
            raise ValueError(f"confusion must be B x R x R, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("negative confusion counts")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_ladders(cls, predicted: Seq[BitrateLadder], truth: Seq[BitrateLadder],
                     recipe: EncodingRecipe) -> ConfusionTensor:
        _check_aligned(predicted, truth)
        B, R = recipe.num_bitrates, recipe.num_resolutions
        counts = np.zeros((B, R, R), dtype=np.int64)
        for p, t in zip(predicted, truth):
            np.add.at(counts, (np.arange(B), t.indices, p.indices), 1)
        return cls(counts)


def _check_aligned(predicted, truth):
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predictions for {len(truth)} ground truths")
    for p, t in zip(predicted, truth):
        if p.sequence_id and t.sequence_id and p.sequence_id != t.sequence_id:
            raise ValueError(f"misaligned ladders {p.sequence_id!r} / {t.sequence_id!r}")
        if [b for b, _ in p.entries] != [b for b, _ in t.entries]:
            raise ValueError("ladders use different bitrate sets")


def accuracy(predicted: Seq[BitrateLadder], truth: Seq[BitrateLadder]) -> float:
    """Share of (sequence, bitrate) cells with the right resolution."""
    _check_aligned(predicted, truth)
    cells = hits = 0
    for p, t in zip(predicted, truth):
        for (_, rp), (_, rt) in zip(p.entries, t.entries):
            cells += 1
            hits += rp == rt
    if cells == 0:
        raise ValueError("nothing to evaluate")
    return hits / cells


def _nonempty(conf: ConfusionTensor):
    if conf.counts.size == 0 or conf.counts.sum() == 0:
        raise ValueError("empty confusion tensor")


def f_score(conf: ConfusionTensor) -> float:
    """Macro F1 over classes present in the ground truth, averaged over tasks."""
    _nonempty(conf)
    per_task = []
    for m in conf.counts:
        support = m.sum(axis=1)
        predicted = m.sum(axis=0)
        f1 = []
        for c in np.flatnonzero(support):
            tp = m[c, c]
            recall = tp / support[c]
            precision = tp / predicted[c] if predicted[c] else 0.0
            f1.append(0.0 if tp == 0 else 2 * precision * recall / (precision + recall))
        per_task.append(np.mean(f1))
    return float(np.mean(per_task))


def g_mean(conf: ConfusionTensor) -> float:
    """Geometric mean of per-class recall (classes with support), averaged over tasks."""
    _nonempty(conf)
    per_task = []
    for m in conf.counts:
        support = m.sum(axis=1)
        recalls = [m[c, c] / support[c] for c in np.flatnonzero(support)]
        per_task.append(float(np.prod(recalls)) ** (1.0 / len(recalls)))
    return float(np.mean(per_task))


def classification_metrics(predicted: Seq[BitrateLadder], truth: Seq[BitrateLadder],
                           recipe: EncodingRecipe) -> dict[str, float]:
    conf = ConfusionTensor.from_ladders(predicted, truth, recipe)
    return {"accuracy": accuracy(predicted, truth), "f_score": f_score(conf),
            "g_mean": g_mean(conf)}


def fixed_ladder(recipe: EncodingRecipe,
                 mapping: Mapping[str, Any] | str | Path | None = None) -> BitrateLadder:
    """Content-agnostic ladder from a mapping document (default: the shipped DASH-style one)."""
    if mapping is None:
        doc = json.loads(resources.files("bitladder").joinpath(
            "data/dash_fixed_ladder.json").read_text())
    elif isinstance(mapping, (str, Path)):
        doc = json.loads(Path(mapping).read_text())
    else:
        doc = mapping
    entries = []
    for e in doc["entries"]:
        r = Resolution(int(e["width"]), int(e["height"]))
        if r not in recipe.resolutions:
            raise LadderError(f"fixed ladder uses {r}, which is not a recipe resolution")
        entries.append((int(e["bitrate_kbps"]), r))
    return BitrateLadder.from_entries(entries, recipe, "fixed")


def majority_ladder(histogram: np.ndarray, recipe: EncodingRecipe) -> BitrateLadder:
    """Per bitrate, the most frequent class (ties to fewer pixels)."""
    h = np.asarray(histogram)
    idx = h.shape[1] - 1 - h[:, ::-1].argmax(axis=1)
    return BitrateLadder.from_indices(idx.tolist(), recipe, "majority")


# -- studies ----------------------------------------------------------------

@dataclass
class StudyReport:
    rows: list[dict[str, Any]] = field(default_factory=list)
    aggregates: dict[str, dict[str, Any]] = field(default_factory=dict)
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)
    failures: list[dict[str, str]] = field(default_factory=list)

    def method_rows(self, method: str) -> list[dict[str, Any]]:
        return [r for r in self.rows if r["method"] == method]

    def to_dict(self) -> dict[str, Any]:
        return {"rows": self.rows, "aggregates": self.aggregates, "metrics": self.metrics,
                "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sequence_id", "method", "bd_rate_percent", "bd_quality"])
        for r in self.rows:
            w.writerow([r["sequence_id"], r["method"],
                        "" if r["bd_rate_percent"] is None else repr(r["bd_rate_percent"]),
                        "" if r["bd_quality"] is None else repr(r["bd_quality"])])
        return buf.getvalue()


def _resolve(provider: LadderProvider, sequence_id: str) -> BitrateLadder:
    return provider(sequence_id) if callable(provider) else provider[sequence_id]


def _aggregate(rows: list[dict[str, Any]]) -> dict[str, Any]:
    rates = [r["bd_rate_percent"] for r in rows if r["bd_rate_percent"] is not None]
    quals = [r["bd_quality"] for r in rows if r["bd_quality"] is not None]
    return {
        "mean_bd_rate_percent": math.fsum(rates) / len(rates) if rates else None,
        "mean_bd_quality": math.fsum(quals) / len(quals) if quals else None,
        "n_bd_rate": len(rates),
        "n_bd_quality": len(quals),
        "n_sequences": len(rows),
    }


def run_study(surfaces: Mapping[str, RDSurface], gt_ladders: Mapping[str, BitrateLadder],
              methods: Mapping[str, LadderProvider],
              options: BDOptions = BDOptions()) -> StudyReport:
    """BD-Rate and BD-Quality of each method's ladder curve against the hull curve.

    Failures (unresolvable ladder entries, degenerate curves) are recorded per
    sequence and metric; the study carries on.
    """
    report = StudyReport()
    ids = sorted(surfaces)
    for seq_id in ids:
        surface = surfaces[seq_id]
        hull = hull_curve(surface, gt_ladders[seq_id])
        for name in methods:
            row = {"sequence_id": seq_id, "method": name, "bd_rate_percent": None,
                   "bd_quality": None}
            try:
                curve = ladder_curve(_resolve(methods[name], seq_id), surface)
            except (LadderError, KeyError) as e:
                report.failures.append({"sequence_id": seq_id, "method": name,
                                        "metric": "ladder_curve", "error": str(e)})
                report.rows.append(row)
                continue
            for key, fn in (("bd_rate_percent", bd_rate), ("bd_quality", bd_quality)):
                try:
                    row[key] = float(fn(curve, hull, options))
                except BDError as e:
                    report.failures.append({"sequence_id": seq_id, "method": name,
                                            "metric": key, "error": str(e)})
            report.rows.append(row)
    for name in methods:
        report.aggregates[name] = _aggregate(report.method_rows(name))
        try:
            preds = [_resolve(methods[name], s) for s in ids]
        except KeyError:
            continue
        recipe = surfaces[ids[0]].recipe if ids else None
        if recipe is not None:
            truth = [gt_ladders[s] for s in ids]
            preds = [BitrateLadder(p.entries, p.resolutions, t.sequence_id)
                     for p, t in zip(preds, truth)]
            report.metrics[name] = classification_metrics(preds, truth, recipe)
    return report


def plot_data_csv(surface: RDSurface, ladders: Mapping[str, BitrateLadder]) -> str:
    """Per preset bitrate, (actual kbps, quality) of every method's choice."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(ladders)
    w.writerow(["target_kbps"] + [f"{n}_{k}" for n in names for k in ("kbps", "quality")])
    curves = {}
    for n in names:
        try:
            curves[n] = ladder_curve(ladders[n], surface)
        except LadderError:
            curves[n] = None
    for b in surface.recipe.target_bitrates_kbps:
        row = [b]
        for n in names:
            p = curves[n].at(b) if curves[n] is not None else None
            row += ["", ""] if p is None else [repr(p.actual_bitrate_kbps), repr(p.quality)]
        w.writerow(row)
    return buf.getvalue()
