# src/services/checkpoint.py
import logging
import os
from typing import Any, Dict, Optional

import joblib
import numpy as np

from src.mps.superket import SuperketMPS

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "lltebd-superket-checkpoint"
CHECKPOINT_VERSION = 1


def state_payload(state: SuperketMPS) -> Dict[str, Any]:
    """Self-describing dump of a superket: shapes, weights, entries, bookkeeping."""
    return {
        "shapes": [tuple(t.shape) for t in state.tensors],
        "tensors": [np.array(t, copy=True) for t in state.tensors],
        "weights": [np.array(w, copy=True) for w in state.weights],
        "local_dim": state.local_dim,
        "chi_max": state.chi_max,
        "eps_cut": state.eps_cut,
        "cumulative_discard": state.cumulative_discard,
        "cutoff_deficit": state.cutoff_deficit,
        "last_trace": state.last_trace,
    }


def state_from_payload(payload: Dict[str, Any]) -> SuperketMPS:
    for shape, t in zip(payload["shapes"], payload["tensors"]):
        if tuple(t.shape) != tuple(shape):
            raise ValueError(f"checkpoint tensor shape {t.shape} disagrees with header {shape}")
    state = SuperketMPS(
        payload["tensors"], payload["weights"], payload["local_dim"],
        payload["chi_max"], payload["eps_cut"],
    )
    state.cumulative_discard = payload["cumulative_discard"]
    state.cutoff_deficit = payload.get("cutoff_deficit", 0.0)
    state.last_trace = payload["last_trace"]
    return state


def save_checkpoint(path: str, state: SuperketMPS, config_hash: str,
                    progress: Optional[Dict[str, Any]] = None) -> str:
    """
    Bit-identical checkpoint of the state plus whatever run progress the
    caller needs to resume. Written to a temp file and renamed.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    record = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "state": state_payload(state),
        "progress": progress or {},
    }
    tmp = path + ".tmp"
    joblib.dump(record, tmp)
    os.replace(tmp, path)
    logger.info("checkpoint written to %s", path)
    return path


def load_checkpoint(path: str):
    """Returns (state, config_hash, progress)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint {path} not found")
    record = joblib.load(path)
    if not isinstance(record, dict) or record.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a superket checkpoint")
    if record.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {record.get('version')}")
    return state_from_payload(record["state"]), record["config_hash"], record["progress"]
