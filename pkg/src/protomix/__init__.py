"""Cross-modal few-shot classification with adaptively mixed prototypes."""

from .data import (
    Category,
    CategoryLabel,
    EmbeddingTable,
    LabelEmbeddings,
    LabeledDataset,
    SyntheticTaskSpec,
    generate_synthetic_crossmodal,
    load_dataset,
    load_embedding_file,
    parse_embedding_file,
    resolve_label_embedding,
    split_categories,
    write_dataset,
    write_embedding_file,
)
from .episodes import Episode, EpisodeConfig, episode_stream, sample_episode
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    ParseError,
    ProtomixError,
    TrainingDivergedError,
    UsageError,
)
from .estimator import ProtoMixClassifier
from .model import (
    ConditioningMode,
    CrossModalModel,
    ModelConfig,
    alignment_prototype,
    cross_modal_prototype,
    load_checkpoint,
    save_checkpoint,
    visual_prototype,
    zero_shot_prototype,
)
from .tensor import (
    GradientTape,
    Parameter,
    Tensor,
    backward,
    finite_difference_check,
    gradient_of,
    sgd_momentum_step,
)
from .training import (
    EvalReport,
    TrainConfig,
    ablation_run,
    evaluate,
    harmonic_accuracy,
    lambda_statistics,
    train,
)

__version__ = "0.1.0"
