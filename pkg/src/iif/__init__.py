"""Influence-function scoring and demonstration selection for in-context
learning pools, with a convex synthetic lab for end-to-end verification."""

from .core import (
    Dataset,
    ExampleRecord,
    RankedSelection,
    RngSpec,
    ScoreVector,
    minmax_normalize,
    seeded_shuffle,
    topk,
)
from .errors import IifError
from .influence import (
    DampingPolicy,
    GramCache,
    InfluenceConfig,
    InfluenceScore,
    LissaParams,
    avg_validation_gradient,
    compute_influence,
    datainf_scores,
    exact_scores,
    lambda_policy,
    lissa_invhvp,
    lissa_scores,
    tracin_scores,
)
from .metrics import (
    DetectionReport,
    detection_report,
    selection_overlap,
    spearman,
    task_match_rate,
)
from .pipelines import (
    SelectionPlan,
    assemble_prompt,
    select_average,
    select_prune,
    select_random,
    select_similarity_only,
    select_two_stage,
)
from .report import emit_report, load_report, reports_equal, stable_view
from .retrieval import (
    Bm25Index,
    Bm25Params,
    bm25_build,
    bm25_scores,
    bsr_score,
    bsr_scores,
    cosine_score,
    cosine_scores,
    tokenize,
)
from .store import (
    EmbeddingSet,
    GradientBundle,
    GradientStore,
    LayerSchema,
    load_examples,
    read_tensor_file,
    save_examples,
    verify_manifest,
    verify_schema,
    write_tensor_file,
)
from .synthlab import (
    LogRegModel,
    NoiseSpec,
    SynthSpec,
    flip_labels,
    gen_synth,
    loo_oracle,
    per_sample_gradients,
    train_logreg,
    validation_loss,
)

__version__ = "0.1.0"
