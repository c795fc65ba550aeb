"""Self-supervised denoising and chemical unmixing for hyperspectral cubes.

The pipeline: diagnose the noise (``noisestats``), permute slices along
the least-correlated axis into training pairs (``permute``), train a
small convolutional denoiser on them (``nnet``), then quantify the
result (``metrics``) and unmix chemistry (``unmix``, ``baseline``).
``synth`` provides ground-truth phantoms and ``cubeio`` the on-disk
format; the ``spend`` executable in ``cli`` ties the stages together.
"""

from .baseline import ArplsConfig, ArplsResult, arpls, peak_extract
from .cubeio import (
    AXES,
    CubeFormatError,
    HyperCube,
    Image,
    axis_index,
    canonical_axis,
    load_cube,
    save_cube,
    slice_frame,
)
from .metrics import (
    FrcCurve,
    frc_resolution,
    frechet_distance,
    psnr,
    snr_gain,
    spectral_distortion_map,
    ssim,
    welch_t_test,
)
from .nnet import (
    DenoiserModel,
    ModelConfig,
    TrainConfig,
    augment,
    build_model,
    forward,
    load_model,
    loss_and_grad,
    parameter_count,
    predict,
    save_model,
    train,
)
from .noisestats import (
    NoiseReport,
    adjacent_pcc,
    axis_psd,
    fluctuation_score,
    noise_vs_signal,
    select_permutation_axis,
)
from .permute import PairSet, aligned_index_pairs, restore_order, split_permute
from .synth import Component, NoiseSpec, Peak, PhantomSpec, Shape, corrupt, make_phantom
from .unmix import (
    DataMatrix,
    McrOptions,
    PhasorMap,
    UnmixResult,
    lasso_unmix,
    mcr_als,
    phasor_select,
    reshape_cube,
    spectral_phasor,
    unreshape,
)

__version__ = "0.1.0"

__all__ = [
    "AXES",
    "ArplsConfig",
    "ArplsResult",
    "Component",
    "CubeFormatError",
    "DataMatrix",
    "DenoiserModel",
    "FrcCurve",
    "HyperCube",
    "Image",
    "McrOptions",
    "ModelConfig",
    "NoiseReport",
    "NoiseSpec",
    "PairSet",
    "Peak",
    "PhantomSpec",
    "PhasorMap",
    "Shape",
    "TrainConfig",
    "UnmixResult",
    "adjacent_pcc",
    "aligned_index_pairs",
    "arpls",
    "augment",
    "axis_index",
    "axis_psd",
    "build_model",
    "canonical_axis",
    "corrupt",
    "fluctuation_score",
    "forward",
    "frc_resolution",
    "frechet_distance",
    "lasso_unmix",
    "load_cube",
    "load_model",
    "loss_and_grad",
    "make_phantom",
    "mcr_als",
    "noise_vs_signal",
    "parameter_count",
    "peak_extract",
    "phasor_select",
    "predict",
    "psnr",
    "reshape_cube",
    "restore_order",
    "save_cube",
    "save_model",
    "select_permutation_axis",
    "slice_frame",
    "snr_gain",
    "spectral_distortion_map",
    "spectral_phasor",
    "split_permute",
    "ssim",
    "train",
    "unreshape",
    "welch_t_test",
]
