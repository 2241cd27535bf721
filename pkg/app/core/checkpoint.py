"""
Checkpoint persistence for rule layers.

A checkpoint is one JSON document holding the alphabet, both networks, both Adam
states and the training progress. JSON floats are written in shortest round-trip
form, so loading a checkpoint restores every parameter bit for bit.
"""
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.errors import ConfigError
from app.core.label_rules import LabelAlphabet
from app.core.neural import AdamState, MlpParams
from app.core.rule_layer import RuleLayer
from app.core.utils.files import atomic_write_text

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rule-layer-checkpoint"
CHECKPOINT_VERSION = 1


class NetworkDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dims: List[int] = Field(..., description="Layer sizes, input first")
    weights: List[List[List[float]]] = Field(..., description="Weight matrices (fan_in x fan_out)")
    biases: List[List[float]] = Field(..., description="Bias vectors")


class AdamDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int = Field(..., description="Updates applied so far", ge=0)
    beta1: float
    beta2: float
    eps: float
    m: NetworkDoc
    v: NetworkDoc


class CheckpointDoc(BaseModel):
    """Schema of a checkpoint file."""
    model_config = ConfigDict(extra="forbid")

    format: str = Field(CHECKPOINT_FORMAT, description="File format marker")
    version: int = Field(CHECKPOINT_VERSION, description="Format version")
    alphabet: List[str] = Field(..., description="Label names in index order")
    K: int = Field(..., description="Number of labels", ge=2)
    M: int = Field(..., description="Feature dimension", ge=1)
    eta: float = Field(..., description="Softmax temperature", gt=0.0)
    policy: NetworkDoc
    baseline: NetworkDoc
    policy_adam: Optional[AdamDoc] = None
    baseline_adam: Optional[AdamDoc] = None
    epochs_trained: int = Field(0, description="Completed training epochs", ge=0)
    config_hash: Optional[str] = Field(None, description="SHA-256 of the resolved configuration")


@dataclass
class Checkpoint:
    """A rule layer together with its optimizer states and training progress."""

    layer: RuleLayer
    policy_adam: Optional[AdamState] = None
    baseline_adam: Optional[AdamState] = None
    epochs_trained: int = 0
    config_hash: Optional[str] = None


def _network_doc(params: MlpParams) -> NetworkDoc:
    return NetworkDoc(
        dims=list(params.dims),
        weights=[w.tolist() for w in params.weights],
        biases=[b.tolist() for b in params.biases],
    )


def _network(doc: NetworkDoc, what: str) -> MlpParams:
    try:
        params = MlpParams(
            weights=[np.array(w, dtype=np.float64).reshape(len(w), -1) for w in doc.weights],
            biases=[np.array(b, dtype=np.float64) for b in doc.biases],
        )
    except ValueError as e:
        raise ConfigError(f"malformed network: {e}", field=what)
    if list(params.dims) != doc.dims:
        raise ConfigError(f"stored dims {doc.dims} do not match the arrays {list(params.dims)}", field=what)
    return params


def _adam_doc(state: AdamState) -> AdamDoc:
    return AdamDoc(
        step=state.step, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        m=_network_doc(state.m), v=_network_doc(state.v),
    )


def _adam(doc: Optional[AdamDoc], params: MlpParams, what: str) -> Optional[AdamState]:
    if doc is None:
        return None
    state = AdamState(
        m=_network(doc.m, f"{what}.m"), v=_network(doc.v, f"{what}.v"),
        step=doc.step, beta1=doc.beta1, beta2=doc.beta2, eps=doc.eps,
    )
    if state.m.dims != params.dims or state.v.dims != params.dims:
        raise ConfigError("optimizer state does not match the network", field=what)
    return state


def checkpoint_to_dict(checkpoint: Checkpoint) -> Dict[str, Any]:
    layer = checkpoint.layer
    doc = CheckpointDoc(
        alphabet=list(layer.alphabet.names),
        K=layer.K,
        M=layer.M,
        eta=layer.eta,
        policy=_network_doc(layer.policy),
        baseline=_network_doc(layer.baseline),
        policy_adam=_adam_doc(checkpoint.policy_adam) if checkpoint.policy_adam else None,
        baseline_adam=_adam_doc(checkpoint.baseline_adam) if checkpoint.baseline_adam else None,
        epochs_trained=checkpoint.epochs_trained,
        config_hash=checkpoint.config_hash,
    )
    return doc.model_dump()


def checkpoint_from_dict(data: Dict[str, Any]) -> Checkpoint:
    """
    Rebuild a checkpoint from its JSON document.

    Raises:
        ConfigError: On a foreign format, an unsupported version or inconsistent contents
    """
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"not a rule layer checkpoint (format={data.get('format')!r})", field="format")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {data.get('version')!r}, expected {CHECKPOINT_VERSION}", field="version"
        )
    try:
        doc = CheckpointDoc.model_validate(data)
        alphabet = LabelAlphabet(names=tuple(doc.alphabet))
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(f"invalid checkpoint: {first['msg']}", field=".".join(str(p) for p in first["loc"]))
    if alphabet.K != doc.K:
        raise ConfigError(f"K={doc.K} does not match an alphabet of {alphabet.K} labels", field="K")

    policy = _network(doc.policy, "policy")
    baseline = _network(doc.baseline, "baseline")
    layer = RuleLayer(alphabet=alphabet, M=doc.M, eta=doc.eta, policy=policy, baseline=baseline)
    return Checkpoint(
        layer=layer,
        policy_adam=_adam(doc.policy_adam, policy, "policy_adam"),
        baseline_adam=_adam(doc.baseline_adam, baseline, "baseline_adam"),
        epochs_trained=doc.epochs_trained,
        config_hash=doc.config_hash,
    )


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    """
    Write a checkpoint atomically; an interrupted write leaves any previous file intact.

    Args:
        checkpoint: Layer and training state to persist
        path: Destination file
    """
    atomic_write_text(path, json.dumps(checkpoint_to_dict(checkpoint)) + "\n")
    logger.info("Saved checkpoint (%d epochs) to %s", checkpoint.epochs_trained, path)


def load_checkpoint(path: str) -> Checkpoint:
    """
    Load a checkpoint file.

    Args:
        path: Path to the checkpoint

    Returns:
        Checkpoint: The restored layer and optimizer states

    Raises:
        ConfigError: If the file is missing, is not valid JSON or fails validation
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"checkpoint not found: {path}", field="paths.checkpoint")
    except json.JSONDecodeError:
        raise ConfigError(f"invalid JSON in checkpoint file: {path}", field="paths.checkpoint")
    if not isinstance(data, dict):
        raise ConfigError(f"checkpoint {path} is not a JSON object", field="paths.checkpoint")
    return checkpoint_from_dict(data)
