"""tricot: curriculum-contrastive triplet recognition on synthetic episodes.

Training stack: a tape-based float64 autodiff engine, hard-pair contrastive
pretraining with feature mixup, teacher/student self-distillation with input
mixup, and a multi-resolution temporal head over frozen frame features.
"""

__version__ = "0.1.0"
