"""Lightweight distilled text-to-speech student: numeric kernels, encoder,
decoder, distillation losses, file formats and a CLI."""

from .alignment import (
    AlignmentError,
    HardAlignment,
    SoftAlignment,
    binarization_loss,
    duration_loss,
    durations_from_hard,
    expand_by_durations,
    forward_sum_loss,
    mas,
    soft_alignment,
)
from .decoder import DecoderConfig, DiscriminatorConfig, count_reduction, decode, discriminate, sample_latent
from .dsp import SpectrogramConfig, mel_spectrogram, multiscale_spec_distance, stft_magnitude
from .encoder import EncoderConfig, GaussianParams, encoder_infer, tokenize
from .losses import (
    DecoderLossReport,
    EncoderLossReport,
    decoder_loss,
    encoder_loss,
    fit_kl_demo,
    kl_gaussian,
    kl_gaussian_grad,
)
from .model_io import (
    Checkpoint,
    CheckpointError,
    ModelConfig,
    TeacherDump,
    count_parameters,
    load_checkpoint,
    load_teacher_dump,
    save_checkpoint,
    synth_teacher_dump,
    write_wav,
)
from .pipeline import evaluate_losses, init_checkpoint, synthesize, unpack_checkpoint
from .tensor import Conv1dSpec, conv1d, depthwise_separable_conv1d, set_num_threads, transposed_conv1d

__version__ = "0.1.0"
