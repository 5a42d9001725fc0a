"""Deterministic speech-quality laboratory.

Synthesizes an impairment-labeled speech corpus, trains small
convolutional quality predictors from scratch, and probes their latent
spaces with nearest-neighbour classification against random-projection
and MFCC baselines.
"""

__version__ = "0.1.0"

from .audio_io import AudioClip, TARGET_RATE, fix_duration, ingest_wav, read_wav, resample, write_wav
from .dsp import FramingConfig, SpectralFeature, mel_spectrogram, mfcc, stft_log_magnitude
from .errors import (
    AudioFormatError,
    CheckpointError,
    ConfigError,
    DegenerateInput,
    InvalidInput,
    ProviderError,
    SqaError,
)
from .impairments import (
    CompositeLabel,
    ImpairmentSpec,
    apply_composite,
    composite_class_names,
    sample_composite,
)
from .metrics import mse, pcc, srcc, top_k_accuracy
from .seeds import derive_seed, stream_rng
from .labeling import ExternalLabeler, LabelCache, distance_to_score, proxy_distance, proxy_label
from .dataset import (
    CLIP_SAMPLES,
    CLIP_SECONDS,
    DatasetManifest,
    ManifestEntry,
    read_manifest,
    synthesize_dataset,
    validate_manifest,
    write_manifest,
)
from .neural import (
    Adam,
    Model,
    TrainConfig,
    build_dnsmos,
    build_dnsmos_plus,
    load_checkpoint,
    predict,
    save_checkpoint,
    train_model,
)
from .probe import (
    EmbeddingSet,
    extract_latents,
    mfcc_features,
    pca_2d,
    probe_accuracy,
    random_projection_features,
    stratified_split,
)
from .synthgen import make_noise_corpus, make_speech_corpus, noise_clip, speech_clip
