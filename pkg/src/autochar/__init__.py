"""Batch autocharacterization of printed semiconductor sample libraries.

Pipeline stages: hyperspectral/RGB ingestion, sample segmentation,
composition mapping from printer motion and pump traces, Tauc band-gap
extraction, color-calibrated degradation scoring, and benchmarking
against expert records.
"""

__version__ = "0.1.0"

from .cube_io import HyperCube, RgbFrame, FrameSequence, load_cube, save_cube, load_frames, grayscale
from .segment import SegmentationConfig, LabelMap, SampleRegion, segment, mask_spectra
from .composition import PumpTrace, RasterPath, PlateCalibration, CompositionMap, parse_gcode, build_composition_map
from .bandgap import TaucCurve, BandGapResult, tauc_transform, extract_bandgap
from .color import ColorChart, TpsModel, srgb_to_lab, fit_tps, calibrate_frame
from .stability import DegradationSeries, StabilityResult, extract_series, instability_index, classify
from .benchmark import ExpertRecord, MetricsReport, bandgap_accuracy, pr_curve, pr_auc, accuracy_sweep
