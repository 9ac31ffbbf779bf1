"""Layer-shared multi-task architecture search with heuristic and surrogate-guided modes."""
from .encoding import BranchRecord, encode, read_csv, task_features, write_csv
from .energy import PUE, Meter, PowerProfile, co2_lbs, kwh_pue
from .graph import (LayerSpec, ModelGraph, TaskInfo, TaskKind, branch, build_base,
                    candidate_layers, default_template, stats)
from .heuristic import HeuResult, SearchError, ilash_heu
from .metrics import goodness, mae, mse, r2, rmse
from .predictive import PredResult, ilash_pred
from .surrogate import (DecisionTreeSurrogate, GradientBoostingSurrogate, LinearSurrogate,
                        RandomForestSurrogate, ReplaySurrogate, leave_one_out_fit)
from .trainer import MiniTrainer, MultiTaskDataset, TrainConfig, synth_dataset, train

__version__ = "0.1.0"
