"""Self-supervised hyperspectral image restoration with separable networks.

Public names are imported lazily so that the command-line entry point can set
thread-count environment variables before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "cube": ["AugmentOp", "HsiCube", "Patch", "apply_augment", "dihedral_ops",
             "extract_patches", "load_cube", "normalize", "save_cube"],
    "degrade": ["DegradeSpec", "SamplingMask", "add_gaussian", "add_impulse",
                "add_line_deficits", "apply_mask", "apply_spec", "mask_from_cube",
                "mask_to_cube", "random_line_deficits", "random_mask",
                "synth_lowrank_cube"],
    "errors": ["ConfigError", "CorruptionError", "FormatError", "HsiRestoreError",
               "NonFiniteError", "ShapeError", "ValidationError"],
    "metrics": ["BandPsnrReport", "DiffHistogram", "SingularSpectrum",
                "adjacent_diff_histogram", "masked_psnr", "mode_singular_values",
                "psnr"],
    "nn": ["BatchNormLayer", "Block", "DepthwiseLayer", "PointwiseLayer",
           "SeparableCnn", "build_model", "identity_model", "load_model",
           "model_backward", "model_forward", "save_model"],
    "noise_est": ["SigmaEstimate", "estimate_sigma"],
    "optim": ["Adam", "LrSchedule"],
    "pipelines": ["GaussianTaskConfig", "HolefillTaskConfig", "MixedResult",
                  "MixedTaskConfig", "TrainResult", "denoise", "make_noisier_target",
                  "mixed_loss", "train_gaussian", "train_holefill", "train_mixed"],
    "rng": ["Rng"],
}

_NAME_TO_MODULE = {name: mod for mod, names in _EXPORTS.items() for name in names}

__all__ = sorted(_NAME_TO_MODULE)


def __getattr__(name):
    module_name = _NAME_TO_MODULE.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{module_name}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return sorted(set(globals()) | set(__all__))
