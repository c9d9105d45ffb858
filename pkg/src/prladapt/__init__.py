"""Unsupervised domain adaptation with a parameter-reference loss."""

from .autodiff import Tape, Tensor, backward, grad_check
from .data import DomainDataset, ShiftSpec, load_csv_dataset, make_blobs, make_two_moons
from .losses import LossWeights, MMDConfig, classification_loss, mmd_loss, prl_loss
from .models import Classifier, Encoder, EncoderConfig, ParamSet, clone_params, init_encoder, sgd_step
from .trainer import AdaptConfig, PretrainConfig, TrainingLog, adapt, evaluate_accuracy, pretrain_source

__version__ = "0.1.0"
