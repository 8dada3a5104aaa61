"""From-scratch GNN training and model-editing workbench.

GCN / GraphSAGE / MLP with hand-written gradients, GD / ENN / EGNN editors,
KL-locality landscape scans, and numerical checks of the one-layer locality theory.
"""

from .editors import (
    EditConfig,
    EditOutcome,
    EditReport,
    egnn_edit,
    egnn_prepare,
    enn_prepare,
    gd_edit,
    sequential_edit_experiment,
    single_edit_experiment,
)
from .errors import (
    CheckpointError,
    DegenerateEditError,
    EditError,
    GraphEditError,
    InvalidGraphError,
    InvalidInputError,
    NumericError,
    OracleError,
    ParseError,
    TrainingError,
)
from .eval import GeneralizationReport, LandscapeGrid, generalization_experiment, landscape_scan
from .graph import CsrGraph, Dataset, SbmConfig, generate_sbm, induced_subgraph, load_dataset, make_splits
from .linalg import AdamState, ParameterSet, adam_step, masked_cross_entropy, mean_kl, softmax_rows
from .models import (
    EgnnModel,
    ModelConfig,
    TrainHyper,
    accuracy,
    egnn_forward,
    forward,
    load_model,
    predict,
    save_model,
    train_full_batch,
)
from .theory import locality_compare, oversmoothing_check, taylor_locality

__version__ = "0.1.0"
