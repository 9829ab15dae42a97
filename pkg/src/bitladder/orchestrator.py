"""Two-step ground-truth pipeline.

CQP probes at QP 16 and QP 48 bound the useful bitrate range of every
resolution; CBR jobs are then planned only inside those bounds, executed on a
bounded worker pool, and assembled into an :class:`~bitladder.core.RDSurface`.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .core import (
    EncodingRecipe,
    RDPoint,
    RDSurface,
    Resolution,
    Sequence,
    surface_from_points,
)

log = logging.getLogger(__name__)

UPPER_BOUND_QP = 16
LOWER_BOUND_QP = 48


@dataclass(frozen=True)
class BitrateBounds:
    resolution: Resolution
    lower_kbps: float
    upper_kbps: float

    def __post_init__(self):
        if not 0 < self.lower_kbps <= self.upper_kbps:
            raise ValueError(
                f"invalid bounds for {self.resolution}: {self.lower_kbps}..{self.upper_kbps}"
            )

    def admits(self, bitrate_kbps: float) -> bool:
        return self.lower_kbps <= bitrate_kbps <= self.upper_kbps

    def to_dict(self):
        return {"width": self.resolution.width, "height": self.resolution.height,
                "lower_kbps": self.lower_kbps, "upper_kbps": self.upper_kbps}

    @classmethod
    def from_dict(cls, d):
        return cls(Resolution(int(d["width"]), int(d["height"])),
                   float(d["lower_kbps"]), float(d["upper_kbps"]))


@dataclass(frozen=True)
class EncodeJob:
    sequence_id: str
    resolution: Resolution
    target_bitrate_kbps: int

    @property
    def job_id(self) -> str:
        return f"{self.sequence_id}/{self.resolution}@{self.target_bitrate_kbps}"


@dataclass(frozen=True)
class JobFailure:
    job: EncodeJob
    message: str


class ProbeError(RuntimeError):
    def __init__(self, failures: Mapping[Resolution, str], bounds: list[BitrateBounds]):
        self.failures = dict(failures)
        self.bounds = bounds
        names = ", ".join(f"{r}: {m}" for r, m in self.failures.items())
        super().__init__(f"CQP probe failed for {names}")


class CoverageError(ValueError):
    def __init__(self, bitrates: list[int]):
        self.bitrates = bitrates
        super().__init__(f"incomplete coverage: no admissible resolution at {bitrates} kbps")


class PlanExecutionError(RuntimeError):
    def __init__(self, failures: list[JobFailure], results: list[tuple[EncodeJob, RDPoint]]):
        self.failures = failures
        self.results = results
        ids = ", ".join(f.job.job_id for f in failures)
        super().__init__(f"{len(failures)} job(s) failed: {ids}")


def probe_bounds(sequence: Sequence, recipe: EncodingRecipe, codec) -> list[BitrateBounds]:
    """One single-pass CQP pair per resolution: QP 48 gives the lower bound, QP 16 the upper."""
    bounds, failures = [], {}
    for res in recipe.resolutions:
        try:
            lower = codec.encode_cqp(sequence, res, LOWER_BOUND_QP).actual_bitrate_kbps
            upper = codec.encode_cqp(sequence, res, UPPER_BOUND_QP).actual_bitrate_kbps
            bounds.append(BitrateBounds(res, lower, upper))
        except Exception as e:  # noqa: BLE001 - tagged and re-raised below
            log.error("probe %s %s failed: %s", sequence.sequence_id, res, e)
            failures[res] = str(e)
    if failures:
        raise ProbeError(failures, bounds)
    return bounds


def plan_jobs(sequence_id: str, bounds: Iterable[BitrateBounds],
              recipe: EncodingRecipe) -> list[EncodeJob]:
    """Admit (r, b) iff lower(r) <= b <= upper(r), ordered by (resolution index, bitrate)."""
    by_res = {b.resolution: b for b in bounds}
    missing = [r for r in recipe.resolutions if r not in by_res]
    if missing:
        raise ValueError(f"no bounds for {', '.join(map(str, missing))}")
    jobs = [
        EncodeJob(sequence_id, r, b)
        for r in recipe.resolutions
        for b in recipe.target_bitrates_kbps
        if by_res[r].admits(b)
    ]
    covered = {j.target_bitrate_kbps for j in jobs}
    uncovered = [b for b in recipe.target_bitrates_kbps if b not in covered]
    if uncovered:
        raise CoverageError(uncovered)
    return jobs


class Journal:
    """Append-only JSON-lines record of finished jobs; written by the collector only."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def load(self) -> dict[str, dict]:
        done = {}
        if not self.path.exists():
            return done
        for line in self.path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                # torn final line after a crash
                log.warning("ignoring unreadable journal line in %s", self.path)
                continue
            done[rec["job_id"]] = rec
        return done

    def append(self, job: EncodeJob, point: RDPoint) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps({
                "job_id": job.job_id,
                "actual_bitrate_kbps": point.actual_bitrate_kbps,
                "quality": point.quality,
            }) + "\n")
            fh.flush()


def run_job(job: EncodeJob, sequence: Sequence, codec) -> RDPoint:
    """CBR encode, upscale to the source size and measure quality as one unit."""
    outcome = codec.encode_cbr(sequence, job.resolution, job.target_bitrate_kbps)
    quality = codec.measure_quality(sequence, outcome.asset_ref, sequence.resolution)
    return RDPoint(job.resolution, job.target_bitrate_kbps, outcome.actual_bitrate_kbps, quality)


def execute_plan(jobs: list[EncodeJob], codec, worker_limit: int,
                 sequences: Mapping[str, Sequence],
                 journal: Journal | None = None) -> list[tuple[EncodeJob, RDPoint]]:
    """Run ``jobs`` on at most ``worker_limit`` threads.

    Results come back in job order regardless of completion order. Jobs found
    in ``journal`` are not re-run. If any job fails, every other job still
    settles and :class:`PlanExecutionError` carries the partial results.
    """
    if worker_limit < 1:
        raise ValueError("worker_limit must be >= 1")
    ids = [j.job_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate jobs in plan")
    done = journal.load() if journal else {}
    points: dict[str, RDPoint] = {}
    pending = []
    for job in jobs:
        rec = done.get(job.job_id)
        if rec is not None:
            points[job.job_id] = RDPoint(job.resolution, job.target_bitrate_kbps,
                                         float(rec["actual_bitrate_kbps"]), float(rec["quality"]))
        else:
            pending.append(job)
    if done:
        log.info("resuming: %d of %d jobs already journaled", len(points), len(jobs))

    failures: dict[str, JobFailure] = {}
    with ThreadPoolExecutor(max_workers=worker_limit) as pool:
        futures = {pool.submit(run_job, j, sequences[j.sequence_id], codec): j for j in pending}
        for fut in as_completed(futures):
            job = futures[fut]
            try:
                point = fut.result()
            except Exception as e:  # noqa: BLE001 - recorded per job
                log.error("job %s failed: %s", job.job_id, e)
                failures[job.job_id] = JobFailure(job, str(e))
                continue
            points[job.job_id] = point
            if journal:
                journal.append(job, point)

    results = [(j, points[j.job_id]) for j in jobs if j.job_id in points]
    if failures:
        raise PlanExecutionError([failures[j.job_id] for j in jobs if j.job_id in failures],
                                 results)
    return results


def assemble_surface(sequence_id: str, results: Iterable[tuple[EncodeJob, RDPoint]],
                     recipe: EncodingRecipe, quality_metric: str = "vmaf") -> RDSurface:
    results = list(results)
    for job, _ in results:
        if job.sequence_id != sequence_id:
            raise ValueError(f"result for {job.sequence_id} in surface of {sequence_id}")
    surface = surface_from_points(sequence_id, recipe, (p for _, p in results), quality_metric)
    if surface.incomplete:
        log.warning("surface %s incomplete: nothing encoded at %s kbps",
                    sequence_id, surface.uncovered_bitrates())
    return surface
