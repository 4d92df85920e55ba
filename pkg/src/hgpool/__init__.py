"""Citywide traffic-grade prediction with hierarchical graph pooling."""

from .autodiff import ParamStore, Var, adam_step, backward, grad_check
from .data import (SampleSet, TrafficTensor, load_dataset, make_samples, minmax_normalize,
                   synth_dataset)
from .errors import (ConfigError, ConstructionError, DimensionError, GradingError,
                     HGPoolError, IngestionError, NumericalError)
from .grading import GradeCodebook, grade_dataset, order_grades, som_assign, som_train
from .graphs import (RoadGraph, RoadTopology, attribute_graph, dtw_distance, geo_graph,
                     hop_distances, normalize_adjacency, pattern_graph, topo_graph)
from .metrics import ConfusionMatrix, EvalReport, accuracy, confusion, emit_report, qw_kappa
from .pooling import (ModelConfig, PoolModel, assemble_model, model_forward, sagpool_score,
                      topk_select)

__version__ = "0.1.0"
