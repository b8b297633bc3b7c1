"""Transductive zero-shot learning via attribute-conditioned Gaussians
and cycle-consistent adversarial feature adaptation."""

from zslada.base_model import (
    BaseZslModel,
    GaussianClassParams,
    PretrainConfig,
    PseudoLabelReport,
    class_params,
    draw_gaussian,
    gaussian_loglik,
    load_base_model,
    loglik_matrix,
    predict,
    pretrain,
    pseudo_labels,
    sample_class,
    save_base_model,
)
from zslada.ada import (
    AdaConfig,
    AdaState,
    LabeledBatch,
    adapt,
    augment_label,
    classifier_loss_S,
    classifier_loss_T,
    critic_loss_S,
    critic_loss_T,
    cycle_loss,
    generator_loss_S,
    generator_loss_T,
    load_ada_state,
    map_prototypes,
    save_ada_state,
    total_loss,
    train_std_da,
)
from zslada.data import (
    ClassAttributeTable,
    DatasetBundle,
    FeatureDataset,
    SplitSpec,
    export_embeddings,
    load_dataset,
    load_embeddings,
    save_dataset,
)
from zslada.errors import (
    ConfigError,
    DataError,
    DimensionMismatch,
    NonFiniteGradient,
    NumericalDivergence,
    StaleCache,
    UnknownClass,
    ZsladaError,
)
from zslada.metrics import (
    AblationTable,
    EvalReport,
    ablation_run,
    inductive_accuracy,
    m1_accuracy,
    m2_accuracy,
    per_class_top1,
    read_report_csv,
    write_report_csv,
)
from zslada.profiles import build_base_model, ada_profile, pretrain_config
from zslada.synthetic import (
    SyntheticTruth,
    SyntheticWorld,
    SyntheticWorldSpec,
    load_truth,
    make_synthetic_world,
    save_synthetic_world,
)

__version__ = "0.1.0"
