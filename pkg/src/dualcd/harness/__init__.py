from .experiment import ExperimentConfig, ExperimentResult, run_experiment
from .report import REPORT_FILES, emit_report
from .synthetic import PlantedTruth, SyntheticSpec, generate_synthetic

__all__ = ["ExperimentConfig", "ExperimentResult", "PlantedTruth", "REPORT_FILES", "SyntheticSpec",
           "emit_report", "generate_synthetic", "run_experiment"]
