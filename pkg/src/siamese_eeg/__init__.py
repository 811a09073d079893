"""Siamese convolutional encoder with contrastive loss and k-NN for EEG trial classification."""

from .encoder import (Architecture, EncoderParams, TrainConfig, contrastive_loss,
                      contrastive_loss_grad, embed_dataset, encoder_forward, euclidean_distance,
                      init_params, train)
from .errors import (FormatError, NumericError, RejectedInputError, TrainingError, UsageError,
                     ValidationError)

__version__ = "0.1.0"
