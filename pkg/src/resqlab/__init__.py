"""Classical laboratory for physics-inspired MIMO detection."""

__version__ = "0.1.0"

from .model import (ChannelSpec, Constellation, DetectionInstance, Modulation, TraceError,
                    generate_instance, load_channel_trace)
from .ising import (IsingModel, SpinMapping, build_ml_ising, build_split_forms, combine_models,
                    energy, map_spins_to_symbols, reduce_ising)
from .linear import LinearSolution, detect_mmse, detect_zf
from .oracle import FsdPlan, brute_force_ml, fsd_detect
from .pt import PtConfig, SampleSet, delta_energy, pt_solve
from .ensemble import (DetectionResult, DetectorConfig, Strategy, bmg_generate, detect,
                       detect_iotresq, detect_paramax, detect_xresq)
from .estimators import (IoTResQDetector, LinearDetector, MLDetector, ParaMaxDetector,
                         XResQDetector)

__all__ = [
    "ChannelSpec", "Constellation", "DetectionInstance", "Modulation", "TraceError",
    "generate_instance", "load_channel_trace",
    "IsingModel", "SpinMapping", "build_ml_ising", "build_split_forms", "combine_models",
    "energy", "map_spins_to_symbols", "reduce_ising",
    "LinearSolution", "detect_mmse", "detect_zf",
    "FsdPlan", "brute_force_ml", "fsd_detect",
    "PtConfig", "SampleSet", "delta_energy", "pt_solve",
    "DetectionResult", "DetectorConfig", "Strategy", "bmg_generate", "detect",
    "detect_iotresq", "detect_paramax", "detect_xresq",
    "IoTResQDetector", "LinearDetector", "MLDetector", "ParaMaxDetector", "XResQDetector",
]
