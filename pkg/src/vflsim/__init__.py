"""Desk-scale vertical federated learning simulator.

Split training across passive parties with attacker-trace capture,
embedding-based label-inference attacks, exact and binned mutual-information
tooling, five interception-hook defenses plus the cut-layer-shift knob, and a
config-driven experiment harness.
"""

from .attacks import (AttackResult, AuxiliaryData, attack_accuracy, cluster_lia,
                      completion_lia, gradient_cluster_lia, lift_normalize,
                      sample_auxiliary)
from .data import (Dataset, PartitionedDataset, TaskSpec, builtin_task_specs,
                   gen_synthetic, load_idx, partition_features, reassign_task)
from .defenses import (DefenseConfig, cae_soft_labels, clip_gradient, compress_topk,
                       derangement, dp_gaussian, rle_extend)
from .engine import (AttackerTrace, SplitSpec, TrainedState, VflConfig,
                     aggregate_embeddings, evaluate_mta, scatter_gradient,
                     split_for_parties, split_model, train_centralized, train_vfl)
from .errors import (AttackFailedError, AttackInfeasibleError, CapacityError,
                     ConfigError, DataError, FormatError, IOFailure, ShapeError,
                     TrainingDivergedError, VflError)
from .harness import (AttackPlan, Report, ScenarioConfig, load_scenario,
                      run_scenario, write_report)
from .infotheory import (ChainMiSequences, JointTable, MarkovChainSpec, MIEstimate,
                         MiProfile, binned_mi, chain_mi_sequence, exact_entropy,
                         exact_mi, mi_profile, random_chain)
from .nn import (Gradients, LayerSpec, Model, ModelSpec, backward,
                 cross_entropy_loss, forward, init_model, mlp_spec, sgd_step)

__version__ = "0.1.0"
