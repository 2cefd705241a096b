"""Real- and complex-valued convolutional auto-encoders for seismic data.

Everything runs on numpy: a small reverse-mode autodiff core, complex
convolution and whitening batch norm, Fourier tools (FFT, analytic
signal, FK spectra), patch pipelines, Adam training and evaluation.
"""

from .complex_ops import ComplexBNState, ComplexKernel, ComplexTensor, complex_batch_norm, complex_conv2d, inv_sqrt_2x2
from .errors import (
    ConditioningError,
    ConfigError,
    CxseisError,
    DivergenceError,
    FormatError,
    GraphError,
    NumericError,
    ShapeError,
)
from .estimator import AnalyticSignal, GlobalMaxAbsScaler, SeismicAutoencoder
from .evaluate import MetricReport, Region, evaluate_model, fk_report, mae, rms
from .io import (
    PatchSet,
    SeismicVolume,
    SplitSpec,
    SynthConfig,
    extract_patches,
    load_npy,
    normalize,
    save_npy,
    split_patches,
    synth_volume,
)
from .model import PRESETS, PUBLISHED_COUNTS, Autoencoder, build, count_params, forward, load_weights, predict, save_weights
from .signal import analytic, dc_aliasing_profile, fft, fk, hilbert_volume, ifft
from .tensor import Tape, Tensor, backward
from .train import AdamState, RunLog, TrainConfig, adam_step, multi_seed, train

__version__ = "0.1.0"
