"""Facial-expression recognition from short-range FMCW radar.

Scene simulator, stream DSP (range-Doppler, micro-motion, and angle
images with temporal integration), a from-scratch CNN classifier, and a
CLI covering dataset generation through real-time streaming inference.
"""

__version__ = "0.1.0"

from .config import (
    AdcCube,
    Axis,
    C_LIGHT,
    DerivedParams,
    ImageKind,
    RadarConfig,
    RadarImage,
    default_config,
    derive_params,
    load_config,
    range_bin_of,
)
from .dsp import FeatureWindow, Pipeline, process_stream
from .formats import LABELS, Recording, read_manifest, read_recording
from .nn import FertNet
from .simulate import Scatterer, generate_dataset, scene_for_class, synth_frame
from .training import TrainConfig, build_dataset, evaluate, run_experiment, train

__all__ = [
    "AdcCube",
    "Axis",
    "C_LIGHT",
    "DerivedParams",
    "FeatureWindow",
    "FertNet",
    "ImageKind",
    "LABELS",
    "Pipeline",
    "RadarConfig",
    "RadarImage",
    "Recording",
    "Scatterer",
    "TrainConfig",
    "build_dataset",
    "default_config",
    "derive_params",
    "evaluate",
    "generate_dataset",
    "load_config",
    "process_stream",
    "range_bin_of",
    "read_manifest",
    "read_recording",
    "run_experiment",
    "scene_for_class",
    "synth_frame",
    "train",
]
