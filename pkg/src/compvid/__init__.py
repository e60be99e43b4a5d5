"""Training-free compositional conditioning in a toy video diffusion sandbox."""

from .kernel import RngStream, cosine, gaussian_field, kth_largest, softmax_rows
from .textenc import (
    EmbeddingSet,
    PromptSpec,
    SubjectSpan,
    TextEncoder,
    embed_prompt,
    pool_span,
    tokenize,
)
from .anchors import (
    SadConfig,
    SadState,
    attenuation,
    confusion_scale,
    directional_vectors,
    interpolate,
)
from .layout import (
    BoxSpan,
    LayoutSet,
    TokenGrid,
    adaptive_mask,
    correlation,
    fuse,
    rasterize_prior,
)
from .maskattn import (
    JointAttentionMask,
    MaskSemantics,
    build_fused_mask,
    context_mask,
    crossattn_masks,
    fuse_masks,
    masked_attention,
    subject_mask,
)
from .denoiser import DenoiserSpec, init_params
from .sampler import (
    RunResult,
    SamplerConfig,
    SamplerState,
    baseline_generate,
    denoise_step,
    generate,
    init_noise,
    latent_to_frames,
)
from .metrics import attention_leakage, region_color_score
from .toydata import PALETTE, ToyDataConfig, clip_prompt_spec, half_boxes, sample_clip
from .training import TrainConfig, load_params, save_params, train_toy
from .io import LayoutFile, RunConfig, parse_layout, serialize_layout

__version__ = "0.1.0"
