"""
Checkpoint Service - enrolled model directories

A model directory holds:
    model.json   mode, speaker map, hyperparameters, config echo
    adapter.bin  SRPLNET1 adapter (absent for CosineDirect)
    head.bin     SRPLHEAD (SRPL modes) or a baseline head block
"""
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional

from app.core.exceptions import DataError
from app.core.status import SRPL_MODES, TRAIN_MODES
from app.db import codecs
from app.db.models import EnrolledModel, Hyperparameters

logger = logging.getLogger(__name__)

MODEL_FILE = 'model.json'
ADAPTER_FILE = 'adapter.bin'
HEAD_FILE = 'head.bin'
CHECKPOINT_VERSION = 1


def save_model(model: EnrolledModel, directory, config_echo: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write a model directory.

    Args:
        model: Enrolled model
        directory: Target directory (created if missing)
        config_echo: TrainConfig.to_dict() of the run, stored for auditing

    Returns:
        Path of the directory
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if model.adapter is not None:
        codecs.write_adapter(directory / ADAPTER_FILE, model.adapter)
    if model.mode in SRPL_MODES:
        codecs.write_head(directory / HEAD_FILE, model.head)
    else:
        codecs.write_baseline_head(directory / HEAD_FILE, model.head)
    meta = {
        'version': CHECKPOINT_VERSION,
        'mode': model.mode,
        'speaker_ids': list(model.speaker_ids),
        'hyperparameters': asdict(model.hyper),
        'normalize_output': model.normalize_output,
        'has_adapter': model.adapter is not None,
        'config': config_echo or {}
    }
    (directory / MODEL_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    logger.info(f"Saved {model.mode} model with {model.n_classes} speakers to {directory}")
    return directory


def load_model(directory) -> EnrolledModel:
    """Read a model directory written by save_model."""
    directory = Path(directory)
    meta_path = directory / MODEL_FILE
    if not meta_path.is_file():
        raise DataError(f"model checkpoint not found: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text(encoding='utf-8'))
        mode = meta['mode']
        speaker_ids = list(meta['speaker_ids'])
        hyper = Hyperparameters(**meta['hyperparameters'])
        has_adapter = bool(meta['has_adapter'])
        normalize_output = bool(meta.get('normalize_output', False))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"malformed model manifest {meta_path}: {e}") from e
    if mode not in TRAIN_MODES:
        raise DataError(f"unknown mode '{mode}' in {meta_path}")
    for name in ([ADAPTER_FILE] if has_adapter else []) + [HEAD_FILE]:
        if not (directory / name).is_file():
            raise DataError(f"model checkpoint file missing: {directory / name}")

    adapter = codecs.read_adapter(directory / ADAPTER_FILE) if has_adapter else None
    if mode in SRPL_MODES:
        head = codecs.read_head(directory / HEAD_FILE)
        if head.k_known != len(speaker_ids):
            raise DataError(f"head has {head.k_known} classes but the speaker map has {len(speaker_ids)}")
    else:
        head = codecs.read_baseline_head(directory / HEAD_FILE)
    logger.info(f"Loaded {mode} model with {len(speaker_ids)} speakers from {directory}")
    return EnrolledModel(mode, adapter, head, speaker_ids, hyper, normalize_output)
