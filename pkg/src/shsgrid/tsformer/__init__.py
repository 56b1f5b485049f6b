from .checkpoint import Checkpoint, CheckpointFormatError, load_checkpoint, save_checkpoint
from .gradcheck import TINY, GradCheckReport, grad_check
from .model import (ModelConfig, NonFiniteError, ShapeError, TransformerParams, attention, forward, init_params,
                    layer_norm, loss, loss_and_grad, param_names, predict, softmax)
from .train import Adam, ConfusionMatrix, TrainConfig, TrainingDiverged, evaluate, predict_batch, train
