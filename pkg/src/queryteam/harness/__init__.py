"""Synthetic benchmark: scenes, training, evaluation and the ablation runner."""
from .ablation import AblationReport, ablate
from .config import SETTINGS, OptimizerConfig, RunConfig, load_config, save_config, setting_config
from .metrics import Detections, Metrics, average_precision
from .scenes import SceneConfig, generate_dataset, generate_scene, read_dataset, write_dataset
from .training import TrainReport, evaluate, train
