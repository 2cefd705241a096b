"""Reconstruction metrics, region reports and FK comparisons.

Sections are (traces, time) arrays. Metrics are computed on the real
component only; complex models are fed the analytic signal of each trace.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ShapeError
from .io import save_npy
from .model import predict
from .signal import analytic_signal, fk


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("metrics need non-empty arrays")
    return a, b


def rms(a, b):
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class Region:
    """Rectangle of a section: traces [trace_start, trace_stop), samples [time_start, time_stop)."""

    name: str
    trace_start: int
    trace_stop: int
    time_start: int
    time_stop: int

    def __post_init__(self):
        if self.trace_stop <= self.trace_start or self.time_stop <= self.time_start:
            raise ValueError(f"region {self.name!r} is empty")
        if self.trace_start < 0 or self.time_start < 0:
            raise ValueError(f"region {self.name!r} has negative bounds")

    @classmethod
    def from_dict(cls, d):
        traces, times = d["traces"], d["times"]
        return cls(str(d["name"]), int(traces[0]), int(traces[1]), int(times[0]), int(times[1]))

    def to_dict(self):
        return {"name": self.name, "traces": [self.trace_start, self.trace_stop], "times": [self.time_start, self.time_stop]}

    def check(self, shape):
        if self.trace_stop > shape[0] or self.time_stop > shape[1]:
            raise ValueError(f"region {self.name!r} exceeds the {shape[0]}x{shape[1]} section")

    def cut(self, section):
        return section[self.trace_start : self.trace_stop, self.time_start : self.time_stop]


def load_regions(path):
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        doc = doc.get("regions", [])
    return [Region.from_dict(r) for r in doc]


@dataclass
class MetricReport:
    model_name: str
    global_rms: float
    global_mae: float
    regions: dict = field(default_factory=dict)

    def rows(self):
        yield ("global", self.global_rms, self.global_mae)
        for name, m in self.regions.items():
            yield (name, m["rms"], m["mae"])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "region", "rms", "mae"])
            for name, r, m in self.rows():
                writer.writerow([self.model_name, name, repr(r), repr(m)])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)


def _padded_length(n, factor):
    return -(-n // factor) * factor


def reconstruct(model, section):
    """Infer-mode reconstruction of a (traces, time) section, same shape back.

    Dimensions not divisible by 2**pools are reflect-padded at the far
    edges and the output cropped back, so any size works.
    """
    section = np.asarray(section, dtype=np.float64)
    if section.ndim != 2:
        raise ShapeError(f"expected a 2D (traces, time) section, got shape {section.shape}")
    factor = 2**model.spec.n_pools
    h, w = section.shape
    ph, pw = _padded_length(h, factor) - h, _padded_length(w, factor) - w
    if ph or pw:
        if ph >= h or pw >= w:
            raise ShapeError(f"section {h}x{w} is too small to reflect-pad to a multiple of {factor}")
        padded = np.pad(section, ((0, ph), (0, pw)), mode="reflect")
    else:
        padded = section
    x = padded[None, None]
    if model.is_complex:
        z, _ = analytic_signal(padded, axis=-1)
        # keep the real channel equal to the data itself, as in training
        x = (padded + 1j * z.imag)[None, None]
    out = predict(model, x)[0, 0].real
    return out[:h, :w]


def evaluate_model(model, section, regions=(), name=None):
    """Global and per-region rms/mae between a section and its reconstruction."""
    section = np.asarray(section, dtype=np.float64)
    regions = list(regions)
    for r in regions:
        r.check(section.shape)
    names = [r.name for r in regions]
    if len(set(names)) != len(names):
        raise ValueError(f"region names must be unique, got {names}")
    recon = reconstruct(model, section)
    report = MetricReport(name or model.spec.name, rms(section, recon), mae(section, recon))
    for r in regions:
        report.regions[r.name] = {"rms": rms(r.cut(section), r.cut(recon)), "mae": mae(r.cut(section), r.cut(recon))}
    return report, recon


# ---------------------------------------------------------------------------
# FK comparison


@dataclass
class FKReport:
    original: object
    reconstruction: object
    difference: np.ndarray
    split_hz: float
    low_ratio_original: float
    high_ratio_original: float
    low_ratio_reconstruction: float
    high_ratio_reconstruction: float

    def summary(self):
        return {
            "split_hz": self.split_hz,
            "original": {"low": self.low_ratio_original, "high": self.high_ratio_original},
            "reconstruction": {"low": self.low_ratio_reconstruction, "high": self.high_ratio_reconstruction},
        }


def band_ratios(spectrum, split_hz):
    """Fractions of FK energy below and at-or-above ``split_hz``."""
    power = spectrum.amplitude**2
    low = power[spectrum.frequencies < split_hz].sum()
    total = power.sum()
    if total == 0:
        return 0.0, 0.0
    return float(low / total), float(1.0 - low / total)


def fk_report(original, reconstruction, dt, dx, split_hz=50.0):
    """FK spectra of both sections, their amplitude difference and band energy ratios."""
    original, reconstruction = _pair(original, reconstruction)
    a = fk(original, dt, dx)
    b = fk(reconstruction, dt, dx)
    lo_a, hi_a = band_ratios(a, split_hz)
    lo_b, hi_b = band_ratios(b, split_hz)
    return FKReport(a, b, a.amplitude - b.amplitude, float(split_hz), lo_a, hi_a, lo_b, hi_b)


def write_pgm(path, image):
    """8-bit binary PGM quick-look; |values| scaled linearly so the maximum maps to 255."""
    image = np.abs(np.asarray(image, dtype=np.float64))
    if image.ndim != 2:
        raise ShapeError(f"PGM needs a 2D image, got shape {image.shape}")
    peak = image.max()
    scaled = np.zeros(image.shape) if peak == 0 else image / peak * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm_header(path):
    """``(width, height, maxval)`` of a binary PGM file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = raw.split(maxsplit=4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    return int(tokens[1]), int(tokens[2]), int(tokens[3])


def write_report(out_dir, report, fk_rep=None):
    """Write metrics (CSV + JSON) and FK outputs (NPY + PGM) into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    report.to_csv(os.path.join(out_dir, "metrics.csv"))
    report.to_json(os.path.join(out_dir, "metrics.json"))
    if fk_rep is None:
        return
    for tag, amp in (
        ("original", fk_rep.original.amplitude),
        ("reconstruction", fk_rep.reconstruction.amplitude),
        ("difference", fk_rep.difference),
    ):
        save_npy(os.path.join(out_dir, f"fk_{tag}.npy"), amp)
        write_pgm(os.path.join(out_dir, f"fk_{tag}.pgm"), amp)
    with open(os.path.join(out_dir, "fk_summary.json"), "w") as fh:
        json.dump(fk_rep.summary(), fh, indent=2, sort_keys=True)
