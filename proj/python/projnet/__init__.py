"""3D->2D retinal lesion segmentation with inter-modal self-supervised pretraining.

Configs and reports are plain dicts with the same fields as the JSON files
the command line tool writes. Arrays are numpy float32 or float64.
"""

import json
import os

import numpy as np

from . import _core
from ._core import (
    ConfigError,
    Error,
    FormatError,
    InsufficientData,
    InvalidArgument,
    IoError,
    PairingError,
    TransferError,
    dice_score,
    fpb_depth_trace,
    ssim_map,
    wilcoxon,
)

__all__ = [
    "ConfigError", "Error", "FormatError", "InsufficientData", "InvalidArgument", "IoError", "PairingError",
    "TransferError", "build", "compare", "dice_score", "evaluate", "fpb_depth_trace", "generate_dataset",
    "generate_sample", "load_manifest", "load_sample", "predict", "predict_run", "preprocess", "ssim_map", "train",
    "wilcoxon",
]


def _dump(cfg):
    return json.dumps(cfg or {})


def generate_dataset(out_dir, **generator):
    """Writes a synthetic dataset and returns its manifest.

    Keyword arguments are generator fields, e.g. patients=10, shape=[8, 32, 24].
    """
    return json.loads(_core.generate_dataset(os.fspath(out_dir), _dump(generator)))


def generate_sample(patient=0, index=0, **generator):
    return _core.generate_sample(_dump(generator), patient, index)


def load_manifest(data_dir):
    return json.loads(_core.load_manifest(os.fspath(data_dir)))


def load_sample(data_dir, sample_id):
    return _core.load_sample(os.fspath(data_dir), sample_id)


def preprocess(volume, surface, dtype="float32", **config):
    """flatten -> depth rescale -> z-score; returns a (1,1,H,W,D) network input."""
    return _core.preprocess(np.asarray(volume), np.asarray(surface), _dump(config), dtype)


def build(spec=None, seed=0, dtype="float32"):
    """Freshly initialized parameters as an ordered dict of arrays."""
    return _core.build(_dump(spec), seed, dtype)


def predict(spec, params, x, logits=False):
    return _core.predict(_dump(spec), params, np.asarray(x), logits)


def train(config, data_dir, run_dir):
    """Runs a training job; returns [(epoch, train_loss, val_metric), ...]."""
    return _core.train(_dump(config), os.fspath(data_dir), os.fspath(run_dir))


def evaluate(data_dir, run_dir, split="test", top_k=5, average_logits=False):
    return json.loads(_core.evaluate(os.fspath(data_dir), os.fspath(run_dir), split, top_k, average_logits))


def predict_run(run_dir, x, top_k=5, average_logits=False):
    return _core.predict_run(os.fspath(run_dir), np.asarray(x), top_k, average_logits)


def compare(report_a, report_b):
    return json.loads(_core.compare(json.dumps(report_a), json.dumps(report_b)))
