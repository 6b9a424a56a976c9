"""Memory-adaptive depth-wise federated learning simulator."""

from . import analysis, decomposition, federation, memory, models, nn, partition, trainer
from .analysis import (
    EvalReport,
    fairness_std,
    linear_cka,
    mean_cca,
    representation_similarity,
    top1_accuracy,
)
from .decomposition import (
    DecompositionPlan,
    decompose,
    plan_for_graph,
    preresnet20_reference_plan,
    whole_model_plan,
)
from .federation import (
    ClientState,
    FederationConfig,
    RoundRecord,
    aggregate,
    run,
    sample_clients,
)
from .memory import (
    MemoryBudget,
    MemoryCost,
    estimate_block_cost,
    estimate_training_unit_cost,
    fits,
)
from .nn import BlockGraph, ModelWeights, forward, init_weights, width_scale
from .partition import PartitionSpec, Shard, load_dataset, make_gaussian_mixture, partition
from .trainer import (
    ClientUpdateConfig,
    MKDConfig,
    SpillStore,
    baseline_update,
    client_update,
    depthwise_inference,
    mkd_update,
    train_plain,
)

__version__ = "0.1.0"
