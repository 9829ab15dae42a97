"""Encoder / quality-tool boundary.

Two adapters share one interface:

* :class:`MockCodec` evaluates closed-form rate and quality models so the
  whole pipeline runs at desk scale without any binaries.
* :class:`SubprocessCodec` drives real tools through command templates
  (an x265 wrapper, a Lanczos upscaler, a VMAF runner ...).

An adapter exposes ``encode_cqp``, ``encode_cbr`` and ``measure_quality``.
Rescaling and quality computation are never done in-process.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import shutil
import string
import subprocess
import threading
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import Resolution, Sequence

log = logging.getLogger(__name__)

# Rate demand per megapixel at QP 36 and the saturation constant of the mock.
MOCK_BETA_KBPS = 1500.0
MOCK_KAPPA = 800.0
REFERENCE_HEIGHT = 1080

DEFAULT_WARN_DEVIATION = 0.10
DEFAULT_MAX_DEVIATION = 0.25


class CodecError(RuntimeError):
    def __init__(self, message: str, output: str = ""):
        super().__init__(message)
        self.output = output


class RateControlError(CodecError):
    pass


class CodecConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncodeOutcome:
    actual_bitrate_kbps: float
    asset_ref: str

    def __post_init__(self):
        if not (math.isfinite(self.actual_bitrate_kbps) and self.actual_bitrate_kbps > 0):
            raise CodecError(f"invalid encoded bitrate {self.actual_bitrate_kbps!r}")


def check_deviation(actual: float, target: float, warn: float = DEFAULT_WARN_DEVIATION,
                    limit: float = DEFAULT_MAX_DEVIATION, label: str = "") -> None:
    dev = abs(actual - target) / target
    if dev > limit:
        raise RateControlError(
            f"rate control failed{' for ' + label if label else ''}: "
            f"{actual:.1f} kbps vs target {target} ({dev:.1%} > {limit:.0%})"
        )
    if dev > warn:
        log.warning("bitrate deviation %.1f%% for %s (actual %.1f, target %s)",
                    100 * dev, label or "encode", actual, target)


# -- mock content model -------------------------------------------------------

@dataclass(frozen=True)
class MockContentParams:
    complexity: float = 1.0
    sharpness: float = 20.0
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.complexity > 0:
            raise ValueError("complexity must be > 0")
        if not 0.0 <= self.sharpness <= 100.0:
            raise ValueError("sharpness must be in [0, 100]")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "complexity": self.complexity,
            "sharpness": self.sharpness,
            "noise_scale": self.noise_scale,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> MockContentParams:
        return cls(float(d["complexity"]), float(d["sharpness"]),
                   float(d.get("noise_scale", 0.0)), int(d.get("seed", 0)))


def _noise(params: MockContentParams, *key: int) -> float:
    rng = np.random.default_rng([params.seed & 0xFFFFFFFFFFFFFFFF, *key])
    return float(rng.standard_normal())


def mock_quality(params: MockContentParams, resolution: Resolution, bitrate_kbps: float,
                 kappa: float = MOCK_KAPPA) -> float:
    """Saturating quality model with a resolution-dependent cap.

    Low resolutions saturate fast but cap lower for sharp content, so curves
    of different resolutions cross.
    """
    cap = 100.0 - params.sharpness * (1.0 - resolution.height / REFERENCE_HEIGHT)
    demand = kappa * resolution.pixels / 1e6
    q = cap * (1.0 - math.exp(-bitrate_kbps / (params.complexity * demand)))
    if params.noise_scale > 0:
        q += params.noise_scale * _noise(
            params, 1, resolution.width, resolution.height, int(round(bitrate_kbps * 1000))
        )
    return min(100.0, max(0.0, q))


def mock_cqp_bitrate(params: MockContentParams, resolution: Resolution, qp: int,
                     beta: float = MOCK_BETA_KBPS) -> float:
    if not 0 <= qp <= 51:
        raise ValueError(f"qp {qp} outside [0, 51]")
    return beta * params.complexity * resolution.pixels / 1e6 * 2.0 ** ((36 - qp) / 6)


def mock_cbr_bitrate(params: MockContentParams, resolution: Resolution,
                     target_kbps: int) -> float:
    """Exact when noise_scale is 0; otherwise jittered by noise_scale percent (1 sigma)."""
    if params.noise_scale == 0:
        return float(target_kbps)
    dev = params.noise_scale / 100.0 * _noise(
        params, 2, resolution.width, resolution.height, int(target_kbps)
    )
    return float(target_kbps) * max(1e-3, 1.0 + dev)


class MockCodec:
    """Deterministic codec backed by :func:`mock_cqp_bitrate` / :func:`mock_quality`.

    Content parameters come from ``params`` when given, else from the JSON
    file at ``sequence.path`` (``{"params": {...}}``, as written by mock-gen).
    """

    def __init__(self, params: Mapping[str, MockContentParams] | None = None,
                 warn_deviation: float = DEFAULT_WARN_DEVIATION,
                 max_deviation: float = DEFAULT_MAX_DEVIATION):
        self._params = dict(params or {})
        self._lock = threading.Lock()
        self.warn_deviation = warn_deviation
        self.max_deviation = max_deviation

    def params_for(self, sequence: Sequence) -> MockContentParams:
        with self._lock:
            p = self._params.get(sequence.sequence_id)
            if p is None:
                doc = json.loads(Path(sequence.path).read_text())
                p = MockContentParams.from_dict(doc["params"])
                self._params[sequence.sequence_id] = p
            return p

    def encode_cqp(self, sequence: Sequence, resolution: Resolution, qp: int) -> EncodeOutcome:
        rate = mock_cqp_bitrate(self.params_for(sequence), resolution, qp)
        return EncodeOutcome(rate, f"mock:{sequence.sequence_id}:{resolution}:{rate!r}")

    def encode_cbr(self, sequence: Sequence, resolution: Resolution,
                   target_bitrate_kbps: int) -> EncodeOutcome:
        if target_bitrate_kbps <= 0:
            raise ValueError("target bitrate must be positive")
        rate = mock_cbr_bitrate(self.params_for(sequence), resolution, target_bitrate_kbps)
        check_deviation(rate, target_bitrate_kbps, self.warn_deviation, self.max_deviation,
                        f"{sequence.sequence_id} {resolution}@{target_bitrate_kbps}")
        return EncodeOutcome(rate, f"mock:{sequence.sequence_id}:{resolution}:{rate!r}")

    def measure_quality(self, reference: Sequence, distorted_ref: str,
                        upscale_to: Resolution) -> float:
        kind, _, rest = distorted_ref.partition(":")
        seq_id, res, rate = rest.rsplit(":", 2)
        if kind != "mock" or seq_id != reference.sequence_id:
            raise CodecError(f"not a mock asset of {reference.sequence_id}: {distorted_ref}")
        return mock_quality(self.params_for(reference), Resolution.parse(res), float(rate))


# -- subprocess adapter -------------------------------------------------------

def _placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


@dataclass(frozen=True)
class CodecAdapterConfig:
    """Command templates for the subprocess adapter.

    Templates are split with shlex and each token is formatted separately, so
    no shell is involved. Placeholders:

    * encode: {input} {output} {width} {height} {bitrate_kbps} {qp} {pass} {stats}
    * upscale: {input} {output} {width} {height}
    * quality: {reference} {distorted} {output}
    * probe (optional): {input}; stdout is a number (bits/s scaled by probe_scale)

    Without a probe template the encoder must write the achieved bitrate to
    {stats}, either as a bare number (kbps) or JSON with ``bitrate_kbps``.
    """

    encode_command_template: str
    upscale_command_template: str
    quality_command_template: str
    workdir: str
    two_pass: bool = True
    cqp_command_template: str = ""
    probe_command_template: str = ""
    probe_scale: float = 0.001
    quality_key_path: str = "pooled_metrics.vmaf.mean"
    output_extension: str = ".mp4"
    warn_deviation: float = DEFAULT_WARN_DEVIATION
    max_deviation: float = DEFAULT_MAX_DEVIATION
    timeout_s: float | None = None

    def validate(self) -> CodecAdapterConfig:
        need = {
            "encode_command_template": {"input", "output", "bitrate_kbps"}
            | ({"pass"} if self.two_pass else set())
            | (set() if self.probe_command_template else {"stats"}),
            "cqp_command_template": {"input", "output", "qp"}
            | (set() if self.probe_command_template else {"stats"}),
            "upscale_command_template": {"input", "output", "width", "height"},
            "quality_command_template": {"reference", "distorted", "output"},
        }
        for name, required in need.items():
            tpl = getattr(self, name) or (
                self.encode_command_template if name == "cqp_command_template" else "")
            missing = required - _placeholders(tpl)
            if missing:
                raise CodecConfigError(f"{name} lacks placeholders {sorted(missing)}")
        if self.probe_command_template and "input" not in _placeholders(self.probe_command_template):
            raise CodecConfigError("probe_command_template lacks placeholder ['input']")
        return self

    def missing_binaries(self) -> list[tuple[str, str]]:
        """(template name, executable) pairs whose executable cannot be found."""
        out = []
        for f in ("encode_command_template", "cqp_command_template",
                  "upscale_command_template", "quality_command_template",
                  "probe_command_template"):
            tpl = getattr(self, f)
            if not tpl:
                continue
            exe = shlex.split(tpl)[0]
            if shutil.which(exe) is None:
                out.append((f, exe))
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> CodecAdapterConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"kind"}
        if unknown:
            raise CodecConfigError(f"unknown codec config keys {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k in known})


def _dig(doc: Any, key_path: str) -> Any:
    for key in key_path.split("."):
        doc = doc[int(key)] if isinstance(doc, list) else doc[key]
    return doc


class SubprocessCodec:
    """Adapter running external tools; every asset lives under ``workdir``."""

    def __init__(self, config: CodecAdapterConfig):
        self.config = config.validate()
        self.workdir = Path(config.workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)

    def _run(self, template: str, values: Mapping[str, Any], log_path: Path) -> str:
        argv = [tok.format_map(values) for tok in shlex.split(template)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True,
                                  timeout=self.config.timeout_s)
        except FileNotFoundError as e:
            raise CodecError(f"executable not found: {argv[0]}") from e
        except subprocess.TimeoutExpired as e:
            raise CodecError(f"timeout after {e.timeout}s: {argv[0]}") from e
        with open(log_path, "a") as fh:
            fh.write("$ " + shlex.join(argv) + "\n" + proc.stdout + proc.stderr)
        if proc.returncode != 0:
            raise CodecError(
                f"{argv[0]} exited with status {proc.returncode}",
                output=proc.stdout + proc.stderr,
            )
        return proc.stdout

    def _job_dir(self, sequence: Sequence, name: str) -> Path:
        d = self.workdir / sequence.sequence_id / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def _read_bitrate(self, output: Path, stats: Path, log_path: Path) -> float:
        if not output.exists():
            raise CodecError(f"encoder produced no output at {output}")
        if self.config.probe_command_template:
            raw = self._run(self.config.probe_command_template, {"input": output}, log_path)
            try:
                return float(raw.strip().splitlines()[-1]) * self.config.probe_scale
            except (ValueError, IndexError) as e:
                raise CodecError(f"unparsable probe output {raw!r}") from e
        try:
            text = stats.read_text().strip()
        except OSError as e:
            raise CodecError(f"missing stats file {stats}") from e
        try:
            return float(text)
        except ValueError:
            pass
        try:
            return float(json.loads(text)["bitrate_kbps"])
        except (ValueError, KeyError, TypeError) as e:
            raise CodecError(f"unparsable bitrate in {stats}: {text[:80]!r}") from e

    def _values(self, sequence, resolution, output, stats, **extra):
        return {
            "input": sequence.path, "output": output, "stats": stats,
            "width": resolution.width, "height": resolution.height,
            "bitrate_kbps": "", "qp": "", "pass": "", **extra,
        }

    def encode_cqp(self, sequence: Sequence, resolution: Resolution, qp: int) -> EncodeOutcome:
        if not 0 <= qp <= 51:
            raise ValueError(f"qp {qp} outside [0, 51]")
        d = self._job_dir(sequence, f"cqp_{resolution}_qp{qp}")
        out, stats = d / f"out{self.config.output_extension}", d / "stats.txt"
        tpl = self.config.cqp_command_template or self.config.encode_command_template
        self._run(tpl, self._values(sequence, resolution, out, stats, qp=qp), d / "job.log")
        return EncodeOutcome(self._read_bitrate(out, stats, d / "job.log"), str(out))

    def encode_cbr(self, sequence: Sequence, resolution: Resolution,
                   target_bitrate_kbps: int) -> EncodeOutcome:
        if target_bitrate_kbps <= 0:
            raise ValueError("target bitrate must be positive")
        d = self._job_dir(sequence, f"cbr_{resolution}_{target_bitrate_kbps}")
        out, stats = d / f"out{self.config.output_extension}", d / "stats.txt"
        passes = (1, 2) if self.config.two_pass else ("",)
        for p in passes:
            self._run(
                self.config.encode_command_template,
                self._values(sequence, resolution, out, stats,
                             bitrate_kbps=target_bitrate_kbps, **{"pass": p}),
                d / "job.log",
            )
        rate = self._read_bitrate(out, stats, d / "job.log")
        check_deviation(rate, target_bitrate_kbps, self.config.warn_deviation,
                        self.config.max_deviation,
                        f"{sequence.sequence_id} {resolution}@{target_bitrate_kbps}")
        return EncodeOutcome(rate, str(out))

    def measure_quality(self, reference: Sequence, distorted_ref: str,
                        upscale_to: Resolution) -> float:
        src = Path(distorted_ref)
        d = src.parent
        up = d / f"upscaled{self.config.output_extension}"
        self._run(self.config.upscale_command_template,
                  {"input": src, "output": up,
                   "width": upscale_to.width, "height": upscale_to.height}, d / "job.log")
        report = d / "quality.json"
        self._run(self.config.quality_command_template,
                  {"reference": reference.path, "distorted": up, "output": report},
                  d / "job.log")
        try:
            score = float(_dig(json.loads(report.read_text()), self.config.quality_key_path))
        except (OSError, ValueError, KeyError, IndexError, TypeError) as e:
            raise CodecError(f"cannot read {self.config.quality_key_path} from {report}") from e
        if not 0.0 <= score <= 100.0:
            raise CodecError(f"quality score {score} outside [0, 100]")
        return score

    def assets(self) -> list[Path]:
        """Every file this adapter has written, for cleanup."""
        return sorted(p for p in self.workdir.rglob("*") if p.is_file())


def codec_from_config(doc: Mapping[str, Any], workdir: str | Path | None = None):
    """Build an adapter from a codec config document (``kind``: mock | subprocess)."""
    kind = doc.get("kind", "subprocess")
    if kind == "mock":
        return MockCodec(
            warn_deviation=float(doc.get("warn_deviation", DEFAULT_WARN_DEVIATION)),
            max_deviation=float(doc.get("max_deviation", DEFAULT_MAX_DEVIATION)),
        )
    if kind != "subprocess":
        raise CodecConfigError(f"unknown codec kind {kind!r}")
    d = dict(doc)
    if workdir is not None and "workdir" not in d:
        d["workdir"] = str(Path(workdir) / "encodes")
    if "workdir" not in d:
        raise CodecConfigError("subprocess codec needs a workdir")
    cfg = CodecAdapterConfig.from_dict(d).validate()
    missing = cfg.missing_binaries()
    if missing:
        name, exe = missing[0]
        raise CodecConfigError(f"{name}: executable {exe!r} not found")
    return SubprocessCodec(cfg)
