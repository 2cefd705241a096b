"""Seismic volumes: NPY I/O, normalization, patching, splitting, synthetics."""

import ast
import csv
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import FormatError, ShapeError
from .signal import fft, hilbert_volume

NPY_MAGIC = b"\x93NUMPY"
_NPY_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


# ---------------------------------------------------------------------------
# NPY v1.0


def _read_exact(buf, offset, count, what):
    end = offset + count
    if end > len(buf):
        missing = end - len(buf)
        raise FormatError(f"truncated NPY file: {what} needs {count} bytes at offset {offset}, missing {missing} bytes")
    return buf[offset:end]


def parse_npy(buf):
    """Decode NPY v1.0 bytes into a float64 array.

    Returns ``(array, dtype_str, shape)``; only C-ordered ``<f4``/``<f8``
    payloads are accepted.
    """
    magic = _read_exact(buf, 0, 6, "magic string")
    if magic != NPY_MAGIC:
        raise FormatError(f"bad NPY magic {magic!r}")
    major, minor = _read_exact(buf, 6, 2, "version")
    if (major, minor) != (1, 0):
        raise FormatError(f"unsupported NPY version {major}.{minor}; only 1.0 is read")
    (header_len,) = struct.unpack("<H", _read_exact(buf, 8, 2, "header length"))
    header = _read_exact(buf, 10, header_len, "header").decode("latin1")
    try:
        meta = ast.literal_eval(header.strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"unreadable NPY header: {header!r}") from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"NPY header must hold descr, fortran_order and shape: {meta!r}")
    descr = meta["descr"]
    if descr not in _NPY_DTYPES:
        raise FormatError(f"unsupported NPY dtype {descr!r}; expected '<f4' or '<f8'")
    if meta["fortran_order"]:
        raise FormatError("Fortran-ordered NPY arrays are not supported")
    shape = tuple(int(d) for d in meta["shape"])
    dtype = _NPY_DTYPES[descr]
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(buf, 10 + header_len, count * dtype.itemsize, "array data")
    array = np.frombuffer(payload, dtype=dtype).astype(np.float64).reshape(shape)
    return array, descr, shape


def load_npy(path):
    """Read an NPY file. Returns ``(array_float64, dtype_str, shape)``."""
    with open(path, "rb") as fh:
        return parse_npy(fh.read())


def encode_npy(array):
    array = np.asarray(array, dtype="<f8", order="C")
    header = f"{{'descr': '<f8', 'fortran_order': False, 'shape': {tuple(array.shape)!r}, }}"
    pad = (-(10 + len(header) + 1)) % 64
    header = header + " " * pad + "\n"
    return NPY_MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header.encode("latin1") + array.tobytes()


def save_npy(path, array):
    """Write a C-ordered little-endian float64 NPY v1.0 file."""
    with open(path, "wb") as fh:
        fh.write(encode_npy(array))


# ---------------------------------------------------------------------------
# volumes


@dataclass
class SeismicVolume:
    """3D amplitudes indexed (inline, crossline, time)."""

    data: np.ndarray
    dt: float = 0.004
    dx: float = 25.0
    provenance: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeError(f"a seismic volume is 3D (inline, crossline, time), got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("seismic volume contains NaN or Inf")

    @property
    def shape(self):
        return self.data.shape


def normalize(volume):
    """Scale by the global max |amplitude| into [-1, 1]. Returns ``(volume, scale)``."""
    peak = float(np.abs(volume.data).max())
    if peak == 0.0:
        raise ValueError("cannot normalize an all-zero volume")
    out = SeismicVolume(volume.data / peak, volume.dt, volume.dx, volume.provenance)
    return out, peak


def denormalize(volume, scale):
    return SeismicVolume(volume.data * scale, volume.dt, volume.dx, volume.provenance)


# ---------------------------------------------------------------------------
# patches


class PatchOrigin(NamedTuple):
    axis: str
    slice: int
    row: int
    col: int


@dataclass
class PatchSet:
    """Square patches as (count, 1, size, size) arrays plus their origins.

    Rows run along the lateral axis of the slice, columns along time. ``im``
    holds the quadrature for complex input and is ``None`` for real input.
    """

    re: np.ndarray
    im: np.ndarray = None
    origins: list = field(default_factory=list)

    def __post_init__(self):
        if self.re.ndim != 4 or self.re.shape[1] != 1:
            raise ShapeError(f"patches must be (count, 1, h, w), got {self.re.shape}")
        if self.im is not None and self.im.shape != self.re.shape:
            raise ShapeError("quadrature patches must match the real patches")
        if len(self.origins) != len(self.re):
            raise ValueError("one origin record is required per patch")

    def __len__(self):
        return len(self.re)

    @property
    def is_complex(self):
        return self.im is not None

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return PatchSet(
            self.re[index],
            None if self.im is None else self.im[index],
            [self.origins[i] for i in index],
        )

    def stacked(self):
        """(count, 2, h, w) real/imag stack for complex sets, else ``re``."""
        if self.im is None:
            return self.re
        return np.concatenate([self.re, self.im], axis=1)


def patch_starts(length, size, stride):
    """Grid start positions with a final window anchored at the far edge."""
    if size > length:
        raise ShapeError(f"patch size {size} exceeds extent {length}")
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def _slices(data, axis):
    if axis == "inline":
        return [(i, data[i]) for i in range(data.shape[0])]
    if axis == "crossline":
        return [(j, data[:, j]) for j in range(data.shape[1])]
    raise ValueError(f"unknown axis {axis!r}; use 'inline' or 'crossline'")


def extract_patches(volume, size=64, stride=32, axes=("inline", "crossline"), analytic=False):
    """Cut size x size patches from every inline and crossline slice.

    An axis whose lateral extent is smaller than ``size`` contributes no
    patches. With ``analytic=True`` the quadrature of every trace is
    computed on the whole volume first and patched alongside.
    """
    data = volume.data
    if data.shape[2] < size:
        raise ShapeError(f"time extent {data.shape[2]} is smaller than patch size {size}")
    lateral = {"inline": data.shape[1], "crossline": data.shape[0]}
    usable = [a for a in axes if lateral[a] >= size]
    if not usable:
        raise ShapeError(f"no axis among {tuple(axes)} is at least {size} traces wide")
    quad = hilbert_volume(data).imag if analytic else None

    re, im, origins = [], [], []
    for axis in usable:
        rows = patch_starts(lateral[axis], size, stride)
        cols = patch_starts(data.shape[2], size, stride)
        q_slices = dict(_slices(quad, axis)) if analytic else None
        for index, section in _slices(data, axis):
            for r in rows:
                for c in cols:
                    re.append(section[r : r + size, c : c + size])
                    if analytic:
                        im.append(q_slices[index][r : r + size, c : c + size])
                    origins.append(PatchOrigin(axis, index, r, c))
    re = np.stack(re)[:, None]
    im = np.stack(im)[:, None] if analytic else None
    return PatchSet(re, im, origins)


def write_origins_csv(patchset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_id", "axis", "slice", "row", "col"])
        for i, o in enumerate(patchset.origins):
            writer.writerow([i, o.axis, o.slice, o.row, o.col])


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitSpec:
    """Train/val/test partition of the inline axis into contiguous blocks.

    ``ranges`` optionally gives explicit [start, stop) inline ranges per
    split; otherwise the fractions carve the inline axis in order train,
    val, test. The seed only shuffles patch order within each split.
    """

    train: float = 0.7
    val: float = 0.15
    test: float = 0.15
    seed: int = 0
    ranges: dict = None

    def __post_init__(self):
        fractions = (self.train, self.val, self.test)
        if min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions}")

    def inline_ranges(self, n_inline):
        if self.ranges is not None:
            return {k: tuple(v) for k, v in self.ranges.items()}
        a = int(round(self.train * n_inline))
        b = int(round((self.train + self.val) * n_inline))
        return {"train": (0, a), "val": (a, b), "test": (b, n_inline)}


def split_patches(patchset, spec, n_inline):
    """Assign patches to splits without spatial leakage.

    Inline-slice patches follow their slice index. Crossline-slice patches
    span a range of inline indices (their rows) and are kept only when that
    range lies inside a single split's block.
    """
    ranges = spec.inline_ranges(n_inline)
    members = {name: [] for name in ranges}
    for i, o in enumerate(patchset.origins):
        lo = o.slice if o.axis == "inline" else o.row
        hi = o.slice + 1 if o.axis == "inline" else o.row + patchset.re.shape[2]
        for name, (start, stop) in ranges.items():
            if start <= lo and hi <= stop:
                members[name].append(i)
                break
    rng = np.random.default_rng(spec.seed)
    out = {}
    for name in ranges:
        idx = np.array(members[name], dtype=np.int64)
        out[name] = patchset.subset(rng.permutation(idx)) if len(idx) else None
    return out


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    layers: int = 24
    wavelet_hz: float = 25.0
    noise_std: float = 0.0
    fault_count: int = 0
    seed: int = 0
    dims: tuple = (1, 128, 256)
    dt: float = 0.004
    dx: float = 25.0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive counts, got {self.dims}")
        if self.layers < 1 or self.wavelet_hz <= 0 or self.noise_std < 0 or self.fault_count < 0:
            raise ValueError("layers >= 1, wavelet_hz > 0, noise_std >= 0 and fault_count >= 0 are required")
        if self.dt <= 0 or self.dx <= 0:
            raise ValueError("dt and dx must be positive")


def ricker(peak_hz, dt, half_length=None):
    """Zero-phase Ricker wavelet sampled at ``dt``."""
    if half_length is None:
        half_length = int(np.ceil(1.5 / (peak_hz * dt)))
    t = np.arange(-half_length, half_length + 1) * dt
    a = (np.pi * peak_hz * t) ** 2
    return (1.0 - 2.0 * a) * np.exp(-a)


MAX_THROW = 10


def synth_volume(config):
    """Layered, optionally faulted and noisy synthetic volume.

    A log-impedance profile with ``layers`` random steps on top of a random
    walk gives the reflectivity series. Its amplitude spectrum is flattened
    (phase kept), so the Ricker wavelet alone shapes the amplitude spectrum
    and the spectral peak sits at ``wavelet_hz``. Each fault is a random
    vertical plane; traces on its far side shift circularly in time by up
    to 10 samples, so events near the ends wrap around. The
    clean volume is scaled to unit peak before Gaussian noise is added.
    """
    rng = np.random.default_rng(config.seed)
    n_il, n_xl, n_t = config.dims
    length = n_t

    log_z = np.cumsum(rng.normal(0.0, 0.05, size=length + 1))
    for pos in rng.integers(1, length + 1, size=config.layers):
        log_z[pos:] += rng.normal(0.0, 0.2)
    z = np.exp(log_z)
    refl = (z[1:] - z[:-1]) / (z[1:] + z[:-1])

    spectrum = fft(refl)
    phase_only = np.exp(1j * np.angle(spectrum))
    phase_only[0] = 0.0
    wavelet = ricker(config.wavelet_hz, config.dt)
    half = len(wavelet) // 2
    kernel = np.zeros(length)
    # zero-phase wavelet centred on sample 0 of the circular grid
    kernel[: half + 1] = wavelet[half:]
    kernel[length - half :] = wavelet[:half]
    trace = fft(phase_only * fft(kernel), "inverse").real

    shift = np.zeros((n_il, n_xl), dtype=np.int64)
    ii, jj = np.meshgrid(np.arange(n_il), np.arange(n_xl), indexing="ij")
    for _ in range(config.fault_count):
        theta = rng.uniform(0.0, np.pi)
        ci, cj = rng.uniform(0, n_il), rng.uniform(0, n_xl)
        side = (ii - ci) * np.cos(theta) + (jj - cj) * np.sin(theta) > 0
        throw = int(rng.integers(1, MAX_THROW + 1)) * int(rng.choice([-1, 1]))
        shift += side * throw
    # circular shifts keep every trace's amplitude spectrum identical
    data = trace[(np.arange(n_t) - shift[..., None]) % n_t]
    peak = np.abs(data).max()
    if peak > 0:
        data = data / peak
    if config.noise_std > 0:
        data = data + rng.normal(0.0, config.noise_std, size=data.shape)
    return SeismicVolume(data, config.dt, config.dx, provenance=f"synthetic seed={config.seed}")


def dominant_frequency(volume):
    """Frequency (Hz) of the peak of the trace-averaged amplitude spectrum."""
    data = volume.data.reshape(-1, volume.data.shape[-1])
    data = data - data.mean(axis=1, keepdims=True)
    n = data.shape[1]
    amp = np.abs(fft(data)[:, : n // 2 + 1]).mean(axis=0)
    return float((int(np.argmax(amp[1:])) + 1) / (n * volume.dt))
