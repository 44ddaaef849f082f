"""From-scratch bidirectional LSTM classifier, Adam, and training loop."""

from adc.nn.adam import AdamState, adam_step
from adc.nn.checkpoint import load_checkpoint, save_checkpoint
from adc.nn.model import (
    BiLstmParams,
    DenseParams,
    LstmParams,
    Model,
    bilstm_forward,
    classify,
    features,
    init_params,
    loss_and_grads,
    lstm_backward,
    lstm_forward,
    predict_proba,
    softmax,
)
from adc.nn.train import EpochStats, TrainConfig, evaluate, history_csv, train
from adc.nn.gradcheck import check_case, numeric_grads, random_cases, relative_error
