"""A small ReLU MLP with manual backprop, SGD/AdamW, and a trainer.

Layers compute ``x @ W + b``; ReLU sits between layers (not after the last),
and an optional L2-normalisation head maps each output row to the unit sphere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, normalize_rows
from .errors import InsufficientData, MalformedHeader, ShapeMismatch, StaleCache, TruncatedPayload
from .losses import LossConfig, infonce_forward, protoclr_forward, softmax_ce_forward, supcon_forward
from .prototypes import LabeledBatch

LOSS_KINDS = ("supcon", "protoclr", "infonce", "ce")
OPTIMIZERS = ("sgd", "adamw")
CHECKPOINT_MAGIC = b"MLP1"


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    final_l2_normalize: bool = True

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2:
            raise ValueError("an MLP needs at least an input and an output dimension")
        if min(dims) < 1:
            raise ValueError(f"all layer dims must be >= 1, got {dims}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class Params:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = 0

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.version)


@dataclass
class ForwardCache:
    params: Params
    version: int
    spec: MlpSpec
    inputs: list[np.ndarray]  # input to each layer
    preacts: list[np.ndarray]  # affine output of each layer
    raw_out: np.ndarray
    out: np.ndarray


def init_params(spec: MlpSpec, rng: RngStream) -> Params:
    """He-normal weights and zero biases."""
    weights, biases = [], []
    for d_in, d_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        weights.append(rng.normal((d_in, d_out)) * np.sqrt(2.0 / d_in))
        biases.append(np.zeros(d_out))
    return Params(weights, biases)


def _check_shapes(spec: MlpSpec, params: Params):
    if len(params.weights) != spec.num_layers or len(params.biases) != spec.num_layers:
        raise ShapeMismatch("parameter count does not match the layer spec")
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        want = (spec.layer_dims[k], spec.layer_dims[k + 1])
        if w.shape != want or b.shape != (want[1],):
            raise ShapeMismatch(f"layer {k}: expected weight {want}, got {w.shape}")


def forward(spec: MlpSpec, params: Params, x) -> tuple[np.ndarray, ForwardCache]:
    _check_shapes(spec, params)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.layer_dims[0]:
        raise ShapeMismatch(f"input has {x.shape[1]} columns, spec expects {spec.layer_dims[0]}")
    inputs, preacts = [], []
    h = x
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w + b
        preacts.append(a)
        h = np.maximum(a, 0.0) if k < spec.num_layers - 1 else a
    out = normalize_rows(h) if spec.final_l2_normalize else h
    cache = ForwardCache(params, params.version, spec, inputs, preacts, h, out)
    return out, cache


def backward(cache: ForwardCache, upstream_grad) -> tuple[Params, np.ndarray]:
    """Gradients of <upstream_grad, forward(x)> w.r.t. parameters and input."""
    if cache.params.version != cache.version:
        raise StaleCache("parameters changed since this forward pass")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != cache.out.shape:
        raise ShapeMismatch(f"upstream gradient {g.shape} vs output {cache.out.shape}")
    if cache.spec.final_l2_normalize:
        # Jacobian of v / |v| is (I - u u^T) / |v|
        norms = np.linalg.norm(cache.raw_out, axis=1, keepdims=True)
        u = cache.out
        g = (g - np.einsum("ij,ij->i", g, u)[:, None] * u) / norms
    n_layers = cache.spec.num_layers
    w_grads, b_grads = [None] * n_layers, [None] * n_layers
    for k in reversed(range(n_layers)):
        if k < n_layers - 1:
            g = g * (cache.preacts[k] > 0)
        w_grads[k] = cache.inputs[k].T @ g
        b_grads[k] = g.sum(axis=0)
        g = g @ cache.params.weights[k].T
    return Params(w_grads, b_grads), g


# ----------------------------------------------------------------- optimizers


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamWState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def _split(params: Params, flat: list[np.ndarray]) -> Params:
    k = len(params.weights)
    return Params(flat[:k], flat[k:], params.version + 1)


def _match(params: Params, grads: Params):
    for p, g in zip(params.arrays(), grads.arrays()):
        if p.shape != g.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} vs parameter {p.shape}")
    if len(params.arrays()) != len(grads.arrays()):
        raise ShapeMismatch("gradient list does not match parameters")


def adamw_step(
    params: Params,
    grads: Params,
    state: AdamWState,
    lr: float,
    wd: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[Params, AdamWState]:
    """One AdamW update; weight decay is decoupled from the adaptive step."""
    _match(params, grads)
    b1, b2 = betas
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - lr * wd * p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return _split(params, new_p), AdamWState(new_m, new_v, t)


def sgd_step(params: Params, grads: Params, lr: float, wd: float = 0.0) -> Params:
    _match(params, grads)
    return _split(params, [p - lr * wd * p - lr * g for p, g in zip(params.arrays(), grads.arrays())])


# -------------------------------------------------------------------- training

DEFAULT_LR = {"ce": 5e-4, "protoclr": 5e-4, "supcon": 1e-4, "infonce": 1e-4}


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "protoclr"
    temperature: float = 0.1
    lr: float | None = None  # None -> per-loss default
    weight_decay: float = 1e-6
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    optimizer: str = "adamw"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    view_noise: float = 0.1
    prototype_mode: str = "full"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr is not None and not self.lr >= 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.view_noise < 0 or self.weight_decay < 0:
            raise ValueError("view_noise and weight_decay must be >= 0")

    @property
    def learning_rate(self) -> float:
        return DEFAULT_LR[self.loss] if self.lr is None else self.lr

    def loss_config(self) -> LossConfig:
        return LossConfig(temperature=self.temperature, prototype_mode=self.prototype_mode)


def embedding_loss(kind: str, z: np.ndarray, labels: np.ndarray, cfg: LossConfig):
    """(value, dL/dz, macs) for a contrastive loss on embeddings ``z``."""
    batch = LabeledBatch(z, labels)
    if kind == "supcon":
        res = supcon_forward(batch, cfg)
    elif kind == "protoclr":
        res = protoclr_forward(batch, cfg)
    elif kind == "infonce":
        res = infonce_forward(batch, cfg)
    else:
        raise ValueError(f"not an embedding loss: {kind!r}")
    return res.value, res.grad, res.macs


@dataclass
class TrainState:
    """Everything :func:`fit` returns besides the encoder parameters."""

    history: list[float] = field(default_factory=list)
    head: Params | None = None
    classes: np.ndarray | None = None


def _step_loss(cfg, spec, params, head_spec, head, x, labels):
    """Mean per-row loss and gradients for one mini-batch."""
    z, cache = forward(spec, params, x)
    n = z.shape[0]
    if cfg.loss == "ce":
        logits, head_cache = forward(head_spec, head, z)
        res = softmax_ce_forward(logits, labels)
        head_grads, dz = backward(head_cache, res.grad)
        grads, _ = backward(cache, dz)
        return res.value, grads, head_grads
    value, dz, _ = embedding_loss(cfg.loss, z, labels, cfg.loss_config())
    grads, _ = backward(cache, dz / n)
    return value / n, grads, None


def fit(spec: MlpSpec, train_data: LabeledBatch, cfg: TrainConfig, rng: RngStream):
    """Train the encoder with mini-batch ``cfg.optimizer`` steps.

    Contrastive losses see two noisy views of each example, interleaved so
    rows 2j and 2j+1 are twins; cross-entropy sees one noisy view through a
    linear classifier head that is returned in the ``TrainState``. The last
    incomplete mini-batch of each epoch is dropped.

    Returns ``(params, state)`` with ``state.history`` holding the mean loss
    per epoch.
    """
    n = train_data.n
    if n < cfg.batch_size:
        raise InsufficientData(f"{n} rows cannot fill a batch of {cfg.batch_size}")
    if train_data.dim != spec.layer_dims[0]:
        raise ShapeMismatch(f"data has {train_data.dim} features, spec expects {spec.layer_dims[0]}")
    classes, targets = np.unique(train_data.labels, return_inverse=True)
    params = init_params(spec, rng.substream(0))
    head_spec = head = None
    if cfg.loss == "ce":
        head_spec = MlpSpec((spec.layer_dims[-1], len(classes)), final_l2_normalize=False)
        head = init_params(head_spec, rng.substream(1))
    opt = AdamWState.zeros_like(params)
    head_opt = AdamWState.zeros_like(head) if head is not None else None
    lr = cfg.learning_rate
    x_all = train_data.embeddings

    state = TrainState(classes=classes)
    epochs_rng = rng.substream(2)
    n_batches = n // cfg.batch_size
    for epoch in range(cfg.epochs):
        erng = epochs_rng.substream(epoch)
        order = erng.permutation(n)
        losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            x, y = x_all[idx], targets[idx]
            if cfg.loss == "ce":
                x = x + cfg.view_noise * erng.normal(x.shape)
            else:
                views = x[:, None, :] + cfg.view_noise * erng.normal((len(idx), 2, x.shape[1]))
                x = views.reshape(-1, x.shape[1])
                y = np.repeat(y, 2)
            value, grads, head_grads = _step_loss(cfg, spec, params, head_spec, head, x, y)
            losses.append(value)
            if cfg.optimizer == "adamw":
                params, opt = adamw_step(params, grads, opt, lr, cfg.weight_decay, cfg.betas, cfg.eps)
                if head is not None:
                    head, head_opt = adamw_step(head, head_grads, head_opt, lr, cfg.weight_decay, cfg.betas, cfg.eps)
            else:
                params = sgd_step(params, grads, lr, cfg.weight_decay)
                if head is not None:
                    head = sgd_step(head, head_grads, lr, cfg.weight_decay)
        state.history.append(float(np.mean(losses)))
    state.head = head
    return params, state


def embed(spec: MlpSpec, params: Params, x) -> np.ndarray:
    return forward(spec, params, x)[0]


# ------------------------------------------------------------------ checkpoint


def save_checkpoint(path, spec: MlpSpec, params: Params) -> None:
    """Write an MLP1 file: magic, u32 layer count, u32 dims, then per layer
    the weight matrix (d_in x d_out, row-major) and bias as float32 LE."""
    _check_shapes(spec, params)
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", spec.num_layers)]
    parts.append(struct.pack(f"<{len(spec.layer_dims)}I", *spec.layer_dims))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, final_l2_normalize: bool = True) -> tuple[MlpSpec, Params]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise MalformedHeader(f"{path}: not an MLP1 checkpoint")
    (n_layers,) = struct.unpack_from("<I", data, 4)
    if n_layers < 1:
        raise MalformedHeader(f"{path}: layer count {n_layers}")
    offset = 8
    need = offset + 4 * (n_layers + 1)
    if len(data) < need:
        raise TruncatedPayload(f"{path}: header truncated")
    dims = struct.unpack_from(f"<{n_layers + 1}I", data, offset)
    offset = need
    spec = MlpSpec(dims, final_l2_normalize)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        size = 4 * (d_in * d_out + d_out)
        if len(data) < offset + size:
            raise TruncatedPayload(f"{path}: payload truncated")
        flat = np.frombuffer(data, dtype="<f4", count=d_in * d_out + d_out, offset=offset)
        weights.append(flat[: d_in * d_out].reshape(d_in, d_out).astype(np.float64))
        biases.append(flat[d_in * d_out :].astype(np.float64))
        offset += size
    if offset != len(data):
        raise MalformedHeader(f"{path}: {len(data) - offset} trailing bytes")
    return spec, Params(weights, biases)

