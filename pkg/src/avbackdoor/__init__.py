"""Audiovisual backdoor toolkit: triggers, poisoning, training, defenses."""

__version__ = "0.1.0"

from .audio_triggers import (AudioAttackParams, MelParams, apply_band_noise,
                             apply_sine, mel_spectrogram)
from .defense import (ACReport, PruneCurve, StripReport,
                      activation_clustering, prune, strip)
from .media import (AudioSignal, FormatError, LabeledSample, MelSpectrogram,
                    VideoClip, read_clip, read_mel, read_wav, write_clip,
                    write_mel, write_wav)
from .models import (AudioClassifier, EarlyFusionModel, LateFusionModel,
                     VideoClassifier, load_model, save_model)
from .nat_triggers import (NaturalParams, apply_frame_lag, apply_motion_blur,
                           apply_natural, apply_video_corruption)
from .poison import (DatasetManifest, FramePolicy, PoisonSpec, SampleRecord,
                     poison_dataset, poison_eval_audio, poison_eval_clip,
                     select_frames)
from .synth import SynthSpec, generate
from .trainer import (Hyper, Metrics, NumericError, dump_activations,
                      evaluate, fuse_early, fuse_late, grad_check,
                      read_activation_dump, train)
from .vid_triggers import (TriggerParams, apply_badnet, apply_blend,
                           apply_ftrojan, apply_sig, apply_wanet,
                           build_warp_field, poison_frames)

__all__ = [name for name in dir() if not name.startswith("_")]
