"""Python access to the xmsleep core: synthetic data, spectrograms, losses,
masking, the training stages and evaluation."""

import json as _json

from . import _core
from ._core import (
    BINS,
    EPOCH_SAMPLES,
    FRAMES,
    Dataset,
    DimensionError,
    Error,
    EvaluationError,
    FormatError,
    InputError,
    Model,
    StateError,
    decode_dataset,
    encode_dataset,
    frame_magnitudes,
    generate_synthetic,
    info_nce_loss,
    mask_count,
    read_csv_epochs,
    read_dataset,
    resample_125_to_100,
    run_gradcheck_suite,
    sample_masks,
    sequence_loss,
    stft_spectrogram,
    write_dataset,
    zscore_normalize,
)


def _config(config):
    return "" if not config else _json.dumps(config)


def compute_metrics(truth, predicted):
    return _json.loads(_core.compute_metrics(list(truth), list(predicted)))


def stage0_train(dataset, config=None):
    """Returns (model, summary)."""
    return _core.stage0_train(dataset, _config(config))


def pretrain_run(dataset, config=None, init=None):
    """`init` is copied, never consumed. Without it set config["from_scratch"]."""
    return _core.pretrain_run(dataset, _config(config), init)


def finetune_run(dataset, config=None, init=None):
    return _core.finetune_run(dataset, _config(config), init)


def evaluate(dataset, model):
    return _json.loads(_core.evaluate(dataset, model))


def save_model(path, model, stage):
    _core.save_model(str(path), model, stage)


def load_model(path):
    return _core.load_model(str(path))


def model_config(model):
    return _json.loads(model.config)
