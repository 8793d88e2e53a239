"""Prosody-aware speech-to-intent classification.

A six-channel prosodic front end (pitch, voicing, pitch delta, band
energies), attention pooling whose weights can come from prosodic features,
and teacher-student distillation that moves prosodic knowledge into an
acoustic encoder. Ships its own reverse-mode autodiff, an Adam optimizer,
a synthetic prosody-disambiguated dataset, and a CLI covering the full
train/eval/ablation workflow.
"""

from .audio import AudioFormatError, Waveform, crop_or_pad, load_wav, save_wav
from .checkpoint import (CheckpointError, ModelCheckpoint, load_checkpoint,
                         save_checkpoint)
from .data import (Batch, FeatureStore, ManifestEntry, SynthSpec, batch_iter,
                   build_synth_dataset, content_centroid_accuracy,
                   contour_slope_accuracy, load_manifest, split_entries,
                   synth_utterance)
from .estimators import (IntentClassifier, MelFeaturizer, ProsodyFeaturizer,
                         check_labels, check_waveform, check_waveform_list)
from .evaluation import (EvalReport, attention_map, compare_runs,
                         contour_pair_accuracy, dump_attention, evaluate,
                         macro_f1, predict_labels, voiced_attention_overlap)
from .frontend import (ENERGY_CHANNELS, PITCH_CHANNELS, PROSODY_CHANNELS,
                       FrameSpec, PitchConfig, band_energies, load_features,
                       mel_filterbank, mel_spectrogram, nccf, prosody_track,
                       save_features, track_pitch)
from .models import (EncoderConfig, IntentModel, SapConfig, align_frames,
                     build_model, sap_forward)
from .optim import Adam, grad_check
from .training import (LossBreakdown, MtlScheme, TrainConfig, TrainLog,
                       config_hash, distillation_loss, early_stop,
                       mtl_weights, train, train_baseline, train_student,
                       train_teacher)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AudioFormatError", "Batch", "CheckpointError", "EncoderConfig",
    "EvalReport", "FeatureStore", "FrameSpec", "IntentClassifier",
    "IntentModel", "LossBreakdown", "ManifestEntry", "MelFeaturizer",
    "ModelCheckpoint", "MtlScheme", "PitchConfig", "ProsodyFeaturizer",
    "SapConfig", "SynthSpec", "TrainConfig", "TrainLog", "Waveform",
    "align_frames", "attention_map", "band_energies", "batch_iter",
    "build_model", "build_synth_dataset", "check_labels", "check_waveform",
    "check_waveform_list", "compare_runs", "config_hash",
    "content_centroid_accuracy", "contour_pair_accuracy",
    "contour_slope_accuracy", "crop_or_pad", "distillation_loss",
    "dump_attention", "early_stop", "evaluate", "grad_check",
    "load_checkpoint", "load_features", "load_manifest", "load_wav",
    "macro_f1", "mel_filterbank", "mel_spectrogram", "mtl_weights", "nccf",
    "predict_labels", "prosody_track", "save_checkpoint", "save_features",
    "save_wav", "sap_forward", "split_entries", "synth_utterance", "track_pitch",
    "train", "train_baseline", "train_student", "train_teacher",
    "voiced_attention_overlap", "PROSODY_CHANNELS", "PITCH_CHANNELS",
    "ENERGY_CHANNELS",
]
