"""Fourier tools for seismic traces: FFT, analytic signal, FK spectra, tapers.

All transforms act along the last axis and are vectorized over leading
axes. Forward transforms are unnormalized; inverses scale by 1/N.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _radix2(x, sign):
    n = x.shape[-1]
    a = x[..., _bit_reverse(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        a = a.reshape(a.shape[:-1] + (n // size, size))
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(a.shape[:-2] + (n,))
        size *= 2
    return a


def _dft(x, sign):
    n = x.shape[-1]
    k = np.arange(n)
    # reduce the exponent mod n before scaling to keep the phase exact
    mat = np.exp(sign * 2j * np.pi * (np.outer(k, k) % n) / n)
    return x.astype(np.complex128) @ mat


def fft(x, direction="forward"):
    """Discrete Fourier transform along the last axis.

    Power-of-two lengths use an iterative radix-2 transform, other lengths a
    direct O(N^2) DFT. ``direction='inverse'`` applies the 1/N scaling.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1:
        raise ShapeError("fft: empty input")
    if direction == "forward":
        sign = -1.0
    elif direction == "inverse":
        sign = 1.0
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    out = _radix2(x, sign) if _is_pow2(n) else _dft(x, sign)
    return out / n if direction == "inverse" else out


def ifft(x):
    return fft(x, "inverse")


def fft2(section):
    """Unnormalized 2D transform of a (traces, time) section, time axis last."""
    spec = fft(np.asarray(section), "forward")
    return np.swapaxes(fft(np.swapaxes(spec, -1, -2), "forward"), -1, -2)


# ---------------------------------------------------------------------------
# analytic signal


@dataclass
class Trace:
    samples: np.ndarray
    dt: float = 0.004

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ShapeError("a trace needs at least two samples in a 1D array")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class AnalyticTrace:
    """x + i y with x the demeaned trace and y its quadrature."""

    re: np.ndarray
    im: np.ndarray
    dt: float
    mean: float = 0.0

    def to_complex(self):
        return self.re + 1j * self.im


def _one_sided_gain(n):
    gain = np.zeros(n)
    gain[0] = 1.0
    if n % 2 == 0:
        gain[1 : n // 2] = 2.0
        gain[n // 2] = 1.0
    else:
        gain[1 : (n + 1) // 2] = 2.0
    return gain


def analytic_signal(x, axis=-1):
    """Analytic signal of real data along ``axis`` after removing the mean.

    Returns ``(z, mean)`` where ``z.real`` is the demeaned input and
    ``z.imag`` the quadrature. Positive frequencies are doubled, negative
    ones zeroed; the DC and (even-length) Nyquist bins are kept once.
    """
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    n = x.shape[-1]
    if n < 4:
        raise ShapeError(f"analytic signal needs at least 4 samples, got {n}")
    mean = x.mean(axis=-1, keepdims=True)
    centred = x - mean
    z = ifft(fft(centred) * _one_sided_gain(n))
    # the real part is the input by construction; avoid round-off drift
    z = centred + 1j * z.imag
    return np.moveaxis(z, -1, axis), np.moveaxis(mean, -1, axis)


def analytic(trace):
    """Analytic signal of a single :class:`Trace`."""
    if not isinstance(trace, Trace):
        trace = Trace(trace)
    z, mean = analytic_signal(trace.samples)
    return AnalyticTrace(re=z.real.copy(), im=z.imag.copy(), dt=trace.dt, mean=float(mean[0]))


def hilbert_volume(volume):
    """Per-trace analytic signal of a volume whose last axis is time.

    Accepts a :class:`~cxseis.io.SeismicVolume` or an array; returns a
    complex array of the same shape (real part demeaned per trace).
    """
    data = getattr(volume, "data", volume)
    data = np.asarray(data, dtype=np.float64)
    try:
        z, _ = analytic_signal(data, axis=-1)
    except ShapeError as exc:
        raise ShapeError(f"hilbert_volume: time axis of shape {data.shape}: {exc}") from exc
    return z


def negative_frequency_fraction(z):
    """Energy in strictly negative frequency bins over total energy."""
    z = np.asarray(z)
    n = z.shape[-1]
    power = np.abs(fft(z)) ** 2
    neg = power[..., n // 2 + 1 :].sum()
    tot = power.sum()
    return 0.0 if tot == 0 else float(neg / tot)


# ---------------------------------------------------------------------------
# FK spectra


@dataclass
class FKSpectrum:
    """Amplitude over (non-negative frequency, centred wavenumber)."""

    amplitude: np.ndarray
    frequencies: np.ndarray
    wavenumbers: np.ndarray
    df: float
    dk: float
    total_power: float = field(default=0.0)


def fk(section, dt, dx):
    """FK amplitude spectrum of a (traces, time) section.

    Frequencies are in Hz, wavenumbers in 1/km and ordered negative to
    positive. The sign convention puts a plane wave sin(2 pi (f0 t - k0 x))
    at (f0, +k0). ``total_power`` is sum |F|^2 / (N_t N_x) over the full,
    untruncated spectrum.
    """
    section = np.asarray(section, dtype=np.float64)
    if section.ndim != 2 or min(section.shape) < 8:
        raise ShapeError(f"fk needs a 2D section of at least 8x8, got {section.shape}")
    n_x, n_t = section.shape
    # forward kernel in time, conjugate kernel across traces
    spec = fft(section, "forward")
    spec = np.swapaxes(fft(np.swapaxes(spec, 0, 1), "inverse") * n_x, 0, 1)
    total_power = float((np.abs(spec) ** 2).sum() / (n_t * n_x))
    n_f = n_t // 2 + 1
    amp = np.abs(spec[:, :n_f]).T
    amp = np.roll(amp, n_x // 2, axis=1)
    df = 1.0 / (n_t * dt)
    dk = 1000.0 / (n_x * dx)
    freqs = np.arange(n_f) * df
    ks = (np.arange(n_x) - n_x // 2) * dk
    return FKSpectrum(amp, freqs, ks, df, dk, total_power)


# ---------------------------------------------------------------------------
# tapers and windowed DC aliasing


def hanning(n):
    """Symmetric Hann window, w[j] = 0.5 (1 - cos(2 pi j / (n - 1)))."""
    if n < 2:
        raise ValueError(f"hanning needs n >= 2, got {n}")
    j = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * j / (n - 1)))


@dataclass
class AliasingRecord:
    window_size: int
    n_windows: int
    mean_abs_dc: float
    spectrum_near_zero: float
    frequencies: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray


def window_starts(length, size):
    stride = max(size // 2, 1)
    return list(range(0, length - size + 1, stride))


def dc_aliasing_profile(trace, window_sizes):
    """Mean offset of Hann-tapered cutouts as a function of window size.

    Cutouts slide with a stride of half the window. For each size the
    record holds the average |mean| of the tapered cutouts, the average
    0 Hz amplitude, and the amplitude and phase spectra of the middle
    cutout.
    """
    if not isinstance(trace, Trace):
        trace = Trace(trace)
    x = trace.samples
    records = []
    for size in window_sizes:
        size = int(size)
        if size < 2 or size > x.size:
            raise ValueError(f"window size {size} must lie in [2, {x.size}]")
        taper = hanning(size)
        starts = window_starts(x.size, size)
        cutouts = np.stack([x[s : s + size] for s in starts]) * taper
        means = np.abs(cutouts.mean(axis=1))
        spectra = fft(cutouts)
        dc = np.abs(spectra[:, 0])
        rep = spectra[len(starts) // 2]
        records.append(
            AliasingRecord(
                window_size=size,
                n_windows=len(starts),
                mean_abs_dc=float(means.mean()),
                spectrum_near_zero=float(dc.mean()),
                frequencies=np.arange(size) / (size * trace.dt),
                amplitude=np.abs(rep),
                phase=np.angle(rep),
            )
        )
    return records
