"""Binary cross-entropy models: logistic regression and ReLU MLPs.

Parameters live in one flat float64 vector, laid out layer by layer as the
row-major weight matrix followed by the bias vector. Gradients and
Hessian-vector products (HVPs) share a cached forward/backward state so
that repeated HVPs at a frozen parameter vector skip the forward pass.

Logits are clamped to ``[-LOGIT_CLAMP, LOGIT_CLAMP]`` and probabilities
clipped to ``[PROB_CLIP, 1 - PROB_CLIP]`` before the loss; derivatives are
zero where a clamp binds, so gradients stay consistent with the coded
loss. The L2 penalty ``(l2_coeff / 2) * sum(W**2)`` covers weight matrices
only, never biases.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError

LOGIT_CLAMP = 30.0
PROB_CLIP = 1e-7

_CHECKPOINT_MAGIC = b"DFC1"


@dataclass(frozen=True)
class LogisticRegression:
    input_dim: int
    l2_coeff: float = 0.0


@dataclass(frozen=True)
class Mlp:
    input_dim: int
    hidden_dims: tuple[int, ...]
    l2_coeff: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))


ModelSpec = LogisticRegression | Mlp


def layer_shapes(spec: ModelSpec) -> list[tuple[int, int]]:
    """(out_dim, in_dim) per layer, ending with the scalar output layer."""
    if isinstance(spec, LogisticRegression):
        return [(1, spec.input_dim)]
    dims = [spec.input_dim, *spec.hidden_dims, 1]
    return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def num_params(spec: ModelSpec) -> int:
    return sum(o * i + o for o, i in layer_shapes(spec))


def unpack_params(
    spec: ModelSpec, theta: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-layer (W, b) views into the flat vector, no copies."""
    if theta.shape != (num_params(spec),):
        raise ValueError(
            f"parameter vector has shape {theta.shape}, "
            f"expected ({num_params(spec)},)"
        )
    out = []
    pos = 0
    for o, i in layer_shapes(spec):
        w = theta[pos : pos + o * i].reshape(o, i)
        pos += o * i
        b = theta[pos : pos + o]
        pos += o
        out.append((w, b))
    return out


def pack_params(layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """He-uniform hidden layers, Xavier-uniform output, zero biases.

    Logistic regression starts at the zero vector: the BCE objective is
    convex, so no symmetry breaking is needed.
    """
    if isinstance(spec, LogisticRegression):
        return np.zeros(num_params(spec))
    rng = np.random.Generator(np.random.Philox(key=seed))
    shapes = layer_shapes(spec)
    layers = []
    for idx, (o, i) in enumerate(shapes):
        if idx < len(shapes) - 1:
            limit = np.sqrt(6.0 / i)
        else:
            limit = np.sqrt(6.0 / (i + o))
        w = rng.uniform(-limit, limit, size=(o, i))
        layers.append((w, np.zeros(o)))
    return pack_params(layers)


def _forward_logits(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray
) -> np.ndarray:
    layers = unpack_params(spec, params)
    z = x
    for w, b in layers[:-1]:
        z = np.maximum(z @ w.T + b, 0.0)
    w, b = layers[-1]
    return (z @ w.T + b)[:, 0]


def predict(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Conversion probabilities in [PROB_CLIP, 1 - PROB_CLIP].

    Accepts a single feature vector or an (n, d) batch; the output shape
    follows the input.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != _input_dim(spec):
        raise ValueError(
            f"feature dim {batch.shape[1]} does not match model input "
            f"dim {_input_dim(spec)}"
        )
    logits = np.clip(
        _forward_logits(spec, params, batch), -LOGIT_CLAMP, LOGIT_CLAMP
    )
    probs = np.clip(1.0 / (1.0 + np.exp(-logits)), PROB_CLIP, 1.0 - PROB_CLIP)
    return probs[0] if single else probs


def _input_dim(spec: ModelSpec) -> int:
    return spec.input_dim


@dataclass
class BatchState:
    """Forward and backward quantities at a frozen parameter vector.

    ``inputs[l]`` feeds layer ``l`` (``inputs[0]`` is the feature batch),
    ``masks[l]`` is the ReLU activity mask after hidden layer ``l``, and
    ``deltas[l]`` is the per-sample loss derivative w.r.t. layer ``l``'s
    pre-activation. ``h`` is the per-sample second derivative of the loss
    in the logit. Rows can be sliced to evaluate minibatch HVPs against
    the cached full-batch state.
    """

    inputs: list[np.ndarray]
    masks: list[np.ndarray]
    deltas: list[np.ndarray]
    h: np.ndarray
    losses: np.ndarray
    n: int = field(init=False)

    def __post_init__(self) -> None:
        self.n = self.inputs[0].shape[0]


def build_state(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> BatchState:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != _input_dim(spec):
        raise ValueError("feature batch shape does not match the model")
    if y.shape != (x.shape[0],):
        raise ValueError("label vector length does not match the batch")
    layers = unpack_params(spec, params)

    inputs = [x]
    masks = []
    z = x
    for w, b in layers[:-1]:
        a = z @ w.T + b
        mask = a > 0.0
        z = np.where(mask, a, 0.0)
        inputs.append(z)
        masks.append(mask)
    w, b = layers[-1]
    logits = (z @ w.T + b)[:, 0]

    clamp_mask = np.abs(logits) < LOGIT_CLAMP
    logits_c = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    f_raw = 1.0 / (1.0 + np.exp(-logits_c))
    clip_mask = (f_raw > PROB_CLIP) & (f_raw < 1.0 - PROB_CLIP)
    f = np.clip(f_raw, PROB_CLIP, 1.0 - PROB_CLIP)

    losses = -(y * np.log(f) + (1.0 - y) * np.log1p(-f))
    smooth = clamp_mask & clip_mask
    # Where a clamp binds the coded loss is flat in the logit.
    g = np.where(smooth, f - y, 0.0)
    h = np.where(smooth, f * (1.0 - f), 0.0)

    deltas = [np.empty(0)] * len(layers)
    deltas[-1] = g[:, None]
    for l in range(len(layers) - 1, 0, -1):
        w_l, _ = layers[l]
        deltas[l - 1] = (deltas[l] @ w_l) * masks[l - 1]
    return BatchState(inputs=inputs, masks=masks, deltas=deltas, h=h,
                      losses=losses)


def _reg_grad(spec: ModelSpec, params: np.ndarray) -> list[np.ndarray]:
    return [spec.l2_coeff * w for w, _ in unpack_params(spec, params)]


def loss_and_grad(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean BCE plus L2 penalty, and its gradient, over the batch."""
    state = build_state(spec, params, x, y)
    reg = 0.5 * spec.l2_coeff * sum(
        float(np.sum(w * w)) for w, _ in unpack_params(spec, params)
    )
    loss = float(np.mean(state.losses)) + reg
    reg_grads = _reg_grad(spec, params)
    layers = []
    for l, (inputs_l, delta_l) in enumerate(zip(state.inputs, state.deltas)):
        dw = delta_l.T @ inputs_l / state.n + reg_grads[l]
        db = delta_l.mean(axis=0)
        layers.append((dw, db))
    return loss, pack_params(layers)


def batch_loss(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> float:
    return loss_and_grad(spec, params, x, y)[0]


def bce_loss(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, label: float
) -> float:
    """Loss of a single sample, including the full L2 penalty."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    x = np.asarray(x, dtype=np.float64)
    return batch_loss(spec, params, x[None, :], np.array([float(label)]))


def grad(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    return loss_and_grad(spec, params, x, y)[1]


def bce_grad_sum(
    spec: ModelSpec, params: np.ndarray, x: np.ndarray, y: np.ndarray
) -> np.ndarray:
    """Sum of per-sample BCE gradients, excluding the L2 penalty."""
    state = build_state(spec, params, x, y)
    layers = []
    for inputs_l, delta_l in zip(state.inputs, state.deltas):
        layers.append((delta_l.T @ inputs_l, delta_l.sum(axis=0)))
    return pack_params(layers)


def hvp_from_state(
    spec: ModelSpec,
    params: np.ndarray,
    state: BatchState,
    v: np.ndarray,
    rows: np.ndarray | None = None,
) -> np.ndarray:
    """Hessian-vector product via a forward-over-reverse sweep.

    Uses the cached state at the parameters it was built with; ``rows``
    restricts the product to a subset of the cached batch (the mean is
    then over that subset). The ReLU second derivative vanishes almost
    everywhere, so only activity masks from the cache are needed.
    """
    layers = unpack_params(spec, params)
    if v.shape != (num_params(spec),):
        raise ValueError("direction vector length does not match the model")
    vs = unpack_params(spec, v)

    if rows is None:
        inputs = state.inputs
        masks = state.masks
        deltas = state.deltas
        h = state.h
    else:
        inputs = [arr[rows] for arr in state.inputs]
        masks = [arr[rows] for arr in state.masks]
        deltas = [arr[rows] for arr in state.deltas]
        h = state.h[rows]
    n = inputs[0].shape[0]

    # Forward sweep: directional derivatives of activations.
    r_inputs: list[np.ndarray] = [np.zeros_like(inputs[0])]
    for l in range(len(layers) - 1):
        w_l, _ = layers[l]
        vw_l, vb_l = vs[l]
        ra = r_inputs[l] @ w_l.T + inputs[l] @ vw_l.T + vb_l
        r_inputs.append(ra * masks[l])
    w_last, _ = layers[-1]
    vw_last, vb_last = vs[-1]
    ra_out = r_inputs[-1] @ w_last.T + inputs[-1] @ vw_last.T + vb_last

    # Reverse sweep: directional derivatives of the deltas.
    r_deltas = [np.empty(0)] * len(layers)
    r_deltas[-1] = h[:, None] * ra_out
    for l in range(len(layers) - 1, 0, -1):
        w_l, _ = layers[l]
        vw_l, _ = vs[l]
        r_deltas[l - 1] = (r_deltas[l] @ w_l + deltas[l] @ vw_l) * masks[l - 1]

    out = []
    for l in range(len(layers)):
        rdw = (r_deltas[l].T @ inputs[l] + deltas[l].T @ r_inputs[l]) / n
        rdw += spec.l2_coeff * vs[l][0]
        rdb = r_deltas[l].mean(axis=0)
        out.append((rdw, rdb))
    return pack_params(out)


def hvp(
    spec: ModelSpec,
    params: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    v: np.ndarray,
) -> np.ndarray:
    """Exact HVP of the batch loss (mean BCE + L2) at ``params``."""
    state = build_state(spec, params, x, y)
    return hvp_from_state(spec, params, state, v)


def _spec_header(spec: ModelSpec) -> dict:
    if isinstance(spec, LogisticRegression):
        return {
            "kind": "logreg",
            "input_dim": spec.input_dim,
            "l2_coeff": spec.l2_coeff,
        }
    return {
        "kind": "mlp",
        "input_dim": spec.input_dim,
        "hidden_dims": list(spec.hidden_dims),
        "l2_coeff": spec.l2_coeff,
    }


def spec_from_header(header: dict) -> ModelSpec:
    try:
        kind = header["kind"]
        if kind == "logreg":
            return LogisticRegression(
                input_dim=int(header["input_dim"]),
                l2_coeff=float(header["l2_coeff"]),
            )
        if kind == "mlp":
            return Mlp(
                input_dim=int(header["input_dim"]),
                hidden_dims=tuple(int(h) for h in header["hidden_dims"]),
                l2_coeff=float(header["l2_coeff"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad checkpoint header: {exc}") from None
    raise DataFormatError(f"unknown model kind {kind!r}")


def save_checkpoint(path: str, spec: ModelSpec, params: np.ndarray) -> None:
    """Binary checkpoint: magic, JSON header, float64 little-endian params."""
    if params.shape != (num_params(spec),):
        raise ValueError("parameter vector does not match the model spec")
    header = dict(_spec_header(spec), num_params=int(num_params(spec)))
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[ModelSpec, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: not a model checkpoint")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(blob_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: corrupt header: {exc}") from None
        spec = spec_from_header(header)
        payload = fh.read()
    params = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    expected = num_params(spec)
    if header.get("num_params") != expected or params.shape != (expected,):
        raise DataFormatError(
            f"{path}: parameter payload does not match the declared model"
        )
    return spec, params
