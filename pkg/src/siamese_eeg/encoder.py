"""Weight-shared Siamese encoder trained with a contrastive pair loss.

The network maps one ``channels x samples`` trial (treated as a
``channels x samples x 1`` image) to an 8-dimensional embedding::

    Conv1 5x5/(1,5) -> ReLU -> MaxPool 2x2/2 (ceil)
    Conv2 1x3 same  -> ReLU -> MaxPool 1x3/1 (same)
    Conv3 1x2 same  -> ReLU -> MaxPool 1x2/1 (same)
    Flatten -> FC 1024 -> FC 512 -> FC 256 -> FC 8

with ReLU after every fully-connected layer (after FC4 only when
``final_relu`` is on).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import tensor_core as tc
from .errors import NumericError, RejectedInputError, TrainingError

log = logging.getLogger(__name__)

EMBEDDING_DIM = 8


@dataclass(frozen=True)
class Architecture:
    """Layer sizes. The defaults are the published network; tests shrink them."""

    n_channels: int = 6
    n_samples: int = 512
    conv_filters: tuple[int, int, int] = (64, 128, 128)
    fc_sizes: tuple[int, ...] = (1024, 512, 256, EMBEDDING_DIM)

    conv1 = tc.ConvGeometry(5, 5, stride_h=1, stride_w=5, pad_left=1, pad_right=2)
    pool1 = tc.PoolGeometry(2, 2, 2, 2, mode="ceil")
    conv2 = tc.ConvGeometry.same(1, 3)
    pool2 = tc.PoolGeometry(1, 3, mode="same")
    conv3 = tc.ConvGeometry.same(1, 2)
    pool3 = tc.PoolGeometry(1, 2, mode="same")

    def conv_stack(self):
        f1, f2, f3 = self.conv_filters
        return (("conv1", self.conv1, self.pool1, 1, f1),
                ("conv2", self.conv2, self.pool2, f1, f2),
                ("conv3", self.conv3, self.pool3, f2, f3))

    def flat_size(self) -> int:
        h, w = self.n_channels, self.n_samples
        for _, conv, pool, _, _ in self.conv_stack():
            h, w = conv.output_hw(h, w)
            h, w, _ = pool.layout(h, w)
        return h * w * self.conv_filters[-1]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, conv, _, c_in, c_out in self.conv_stack():
            shapes[f"{name}.kernels"] = (c_out, conv.kernel_h, conv.kernel_w, c_in)
            shapes[f"{name}.bias"] = (c_out,)
        n_in = self.flat_size()
        for i, n_out in enumerate(self.fc_sizes, start=1):
            shapes[f"fc{i}.weights"] = (n_out, n_in)
            shapes[f"fc{i}.bias"] = (n_out,)
            n_in = n_out
        return shapes


class EncoderParams(dict):
    """Ordered mapping ``name -> array`` for every kernel, weight and bias."""

    def __init__(self, arch: Architecture, tensors):
        super().__init__(tensors)
        self.arch = arch
        expected = arch.param_shapes()
        if list(self) != list(expected):
            raise RejectedInputError(f"parameter names/order {list(self)} != {list(expected)}")
        for name, shape in expected.items():
            if self[name].shape != shape:
                raise RejectedInputError(f"{name} has shape {self[name].shape}, expected {shape}")

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.arch, {k: v.copy() for k, v in self.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values()])

    def with_flat(self, theta: np.ndarray) -> "EncoderParams":
        out, pos = {}, 0
        for k, v in self.items():
            out[k] = np.asarray(theta[pos:pos + v.size], dtype=np.float64).reshape(v.shape)
            pos += v.size
        return EncoderParams(self.arch, out)

    def num_values(self) -> int:
        return sum(v.size for v in self.values())


def init_params(arch: Architecture | None = None, seed: int = 0) -> EncoderParams:
    """He-scaled normal weights, zero biases."""
    arch = arch or Architecture()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = math.prod(shape[1:])
            tensors[name] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
    return EncoderParams(arch, tensors)


# --- forward / backward ----------------------------------------------------

@dataclass
class ForwardCache:
    contexts: list[tuple[str, tc.LayerContext]]
    shapes: list[tuple[str, tuple[int, ...]]]


def _as_batch(params: EncoderParams, trials) -> np.ndarray:
    x = np.asarray(trials, dtype=np.float64)
    arch = params.arch
    if x.ndim != 3 or x.shape[1:] != (arch.n_channels, arch.n_samples):
        raise RejectedInputError(
            f"trials must have shape (N, {arch.n_channels}, {arch.n_samples}), got {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("non-finite sample in trial data")
    return x[..., None]


def forward_batch(params: EncoderParams, trials, final_relu: bool = True
                  ) -> tuple[np.ndarray, ForwardCache]:
    """Embeddings ``(N, 8)`` for trials ``(N, channels, samples)`` plus a backward cache."""
    a = _as_batch(params, trials)
    ctxs, shapes = [], []
    for name, conv, pool, _, _ in params.arch.conv_stack():
        a, ctx = tc.conv2d_forward(a, params[f"{name}.kernels"], params[f"{name}.bias"], conv,
                                   need_input_grad=name != "conv1")
        ctxs.append((name, ctx))
        shapes.append((name, a.shape[1:]))
        a, ctx = tc.relu_forward(a)
        ctxs.append(("", ctx))
        a, ctx = tc.maxpool_forward(a, pool)
        ctxs.append(("", ctx))
        shapes.append((name.replace("conv", "maxpool"), a.shape[1:]))
    a, ctx = tc.flatten_forward(a)
    ctxs.append(("", ctx))
    shapes.append(("flatten", a.shape[1:]))
    n_fc = len(params.arch.fc_sizes)
    for i in range(1, n_fc + 1):
        a, ctx = tc.dense_forward(a, params[f"fc{i}.weights"], params[f"fc{i}.bias"])
        ctxs.append((f"fc{i}", ctx))
        shapes.append((f"fc{i}", a.shape[1:]))
        if i < n_fc or final_relu:
            a, ctx = tc.relu_forward(a)
            ctxs.append(("", ctx))
    return a, ForwardCache(ctxs, shapes)


def backward_batch(params: EncoderParams, cache: ForwardCache, d_emb) -> dict[str, np.ndarray]:
    """Parameter gradients, summed over the batch, given ``dL/d(embedding)``."""
    g = np.asarray(d_emb, dtype=np.float64)
    grads = {}
    for name, ctx in reversed(cache.contexts):
        lg = tc.backward(ctx, g)
        if name:
            for pname, value in lg.params.items():
                grads[f"{name}.{pname}"] = value
        g = lg.input
    return {k: grads[k] for k in params}


def encoder_forward(params: EncoderParams, trial, final_relu: bool = True) -> np.ndarray:
    trial = np.asarray(trial, dtype=np.float64)
    if trial.ndim != 2:
        raise RejectedInputError(f"a trial must be a channels x samples matrix, got {trial.shape}")
    return forward_batch(params, trial[None], final_relu)[0][0]


def layer_shapes(params: EncoderParams, final_relu: bool = True) -> list[tuple[str, tuple[int, ...]]]:
    """Output shape of every named layer for one zero trial."""
    arch = params.arch
    _, cache = forward_batch(params, np.zeros((1, arch.n_channels, arch.n_samples)), final_relu)
    return cache.shapes


def embed_dataset(params: EncoderParams, trials, labels=None, final_relu: bool = True,
                  chunk: int = 64) -> list[tuple[np.ndarray, int | None]]:
    """(embedding, label) per trial, in input order."""
    trials = np.asarray(trials, dtype=np.float64)
    if len(trials) == 0:
        return []
    labels = [None] * len(trials) if labels is None else list(labels)
    out = []
    for start in range(0, len(trials), chunk):
        emb, _ = forward_batch(params, trials[start:start + chunk], final_relu)
        out.extend(emb)
    return list(zip(out, labels))


def embed_array(params: EncoderParams, trials, final_relu: bool = True, chunk: int = 64) -> np.ndarray:
    trials = np.asarray(trials, dtype=np.float64)
    if len(trials) == 0:
        return np.zeros((0, params.arch.fc_sizes[-1]))
    parts = [forward_batch(params, trials[s:s + chunk], final_relu)[0]
             for s in range(0, len(trials), chunk)]
    return np.concatenate(parts)


# --- distance and loss -----------------------------------------------------

def euclidean_distance(e1, e2) -> float:
    e1, e2 = np.asarray(e1, dtype=np.float64), np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise RejectedInputError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    return float(np.sqrt(np.sum((e1 - e2) ** 2)))


def _check_pair_args(y, margin):
    if not margin > 0:
        raise RejectedInputError("margin must be positive")
    if y not in (0, 1):
        raise RejectedInputError(f"pair label must be 0 or 1, got {y!r}")


def contrastive_loss(e1, e2, y: int, margin: float = 0.5) -> float:
    """``y * D^2 / 2 + (1 - y) * max(margin - D, 0)^2 / 2``."""
    _check_pair_args(y, margin)
    d = euclidean_distance(e1, e2)
    if y == 1:
        return 0.5 * d * d
    hinge = max(margin - d, 0.0)
    return 0.5 * hinge * hinge


def contrastive_loss_grad(e1, e2, y: int, margin: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`contrastive_loss` w.r.t. both embeddings.

    At ``D == 0`` and for negatives with ``D >= margin`` the gradient is zero.
    """
    _check_pair_args(y, margin)
    diff = np.asarray(e1, dtype=np.float64) - np.asarray(e2, dtype=np.float64)
    d = float(np.sqrt(np.sum(diff ** 2)))
    if y == 1:
        g = diff.copy()
    elif 0.0 < d < margin:
        g = -(margin - d) * diff / d
    else:
        g = np.zeros_like(diff)
    return g, -g


def pair_losses(e1: np.ndarray, e2: np.ndarray, y: np.ndarray, margin: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised per-pair loss and ``dL/de1`` for rows of ``e1``, ``e2``."""
    diff = e1 - e2
    d = np.sqrt(np.sum(diff ** 2, axis=1))
    pos = y == 1
    hinge = np.maximum(margin - d, 0.0)
    loss = np.where(pos, 0.5 * d * d, 0.5 * hinge * hinge)
    active = ~pos & (d > 0.0) & (d < margin)
    scale = np.where(pos, 1.0, 0.0)
    scale[active] = -(margin - d[active]) / d[active]
    return loss, scale[:, None] * diff


# --- training --------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.5
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    batch_size: int = 180
    iterations: int = 1000
    seed: int = 0
    final_relu: bool = True
    balanced_pairs: bool = False

    def __post_init__(self):
        if not self.margin > 0:
            raise RejectedInputError("margin must be > 0")
        if not self.learning_rate > 0 or not self.epsilon > 0:
            raise RejectedInputError("learning rate and epsilon must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise RejectedInputError("beta1 and beta2 must lie in (0, 1)")
        if self.batch_size < 1 or self.iterations < 0:
            raise RejectedInputError("batch_size must be >= 1 and iterations >= 0")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class PairBatch:
    a: np.ndarray
    b: np.ndarray
    y: np.ndarray

    @property
    def size(self) -> int:
        return len(self.y)

    def pairs(self) -> list[tuple[int, int, int]]:
        return list(zip(self.a.tolist(), self.b.tolist(), self.y.tolist()))


def sample_pairs(labels, batch_size: int, rng: np.random.Generator,
                 balanced: bool = False) -> PairBatch:
    """Uniformly random index pairs ``a != b``; ``y = 1`` when labels agree.

    With ``balanced`` each pair is a positive with probability 1/2 (when the
    anchor's class has another member).
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n < 2:
        raise RejectedInputError("pair sampling needs at least 2 trials")
    if batch_size < 1:
        raise RejectedInputError("batch_size must be >= 1")
    a = rng.integers(0, n, size=batch_size)
    b = rng.integers(0, n - 1, size=batch_size)
    b = b + (b >= a)
    if balanced:
        want_pos = rng.random(batch_size) < 0.5
        u = rng.random(batch_size)
        by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
        for i in np.flatnonzero(want_pos):
            members = by_class[labels[a[i]]]
            members = members[members != a[i]]
            if len(members):
                b[i] = members[int(u[i] * len(members))]
    y = (labels[a] == labels[b]).astype(np.int64)
    return PairBatch(a, b, y)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()}, self.t)


def adam_step(params, grads, state: AdamState, config: TrainConfig, inplace: bool = False):
    """One bias-corrected ADAM update. Returns ``(params, state)``.

    Unless ``inplace`` is set, the inputs are left untouched.
    """
    for k, g in grads.items():
        if k not in params or g.shape != params[k].shape:
            raise RejectedInputError(f"gradient {k} does not match parameters")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {k}")
    if not inplace:
        if isinstance(params, EncoderParams):
            params = params.copy()
        else:
            params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        state = state.copy()
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    step = config.learning_rate / bc1
    inv_sqrt_bc2 = 1.0 / math.sqrt(bc2)
    for k in params:
        g = grads[k]
        m, v = state.m[k], state.v[k]
        tmp = np.multiply(g, 1.0 - b1)
        m *= b1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v *= b2
        v += tmp
        # tmp <- step * m_hat / (sqrt(v_hat) + eps)
        np.sqrt(v, out=tmp)
        tmp *= inv_sqrt_bc2
        tmp += config.epsilon
        np.divide(m, tmp, out=tmp)
        tmp *= step
        params[k] -= tmp
    return params, state


def batch_loss_and_grads(params: EncoderParams, trials: np.ndarray, batch: PairBatch,
                         margin: float, final_relu: bool) -> tuple[float, dict[str, np.ndarray]]:
    """Mean pair loss over ``batch`` and its gradient w.r.t. the shared parameters.

    Each distinct trial is pushed through the encoder once; the embedding
    gradients of both branches are accumulated per trial before one backward
    pass, which equals summing the per-branch parameter gradients.
    """
    uniq, inv = np.unique(np.concatenate([batch.a, batch.b]), return_inverse=True)
    emb, cache = forward_batch(params, trials[uniq], final_relu)
    k = batch.size
    ia, ib = inv[:k], inv[k:]
    losses, g1 = pair_losses(emb[ia], emb[ib], batch.y, margin)
    g1 = g1 / k
    d_emb = np.zeros_like(emb)
    # fixed order: pair index, branch a before branch b
    np.add.at(d_emb, ia, g1)
    np.add.at(d_emb, ib, -g1)
    return float(np.mean(losses)), backward_batch(params, cache, d_emb)


def train(trials, labels, config: TrainConfig = TrainConfig(),
          params: EncoderParams | None = None, arch: Architecture | None = None,
          return_state: bool = False):
    """Fit the encoder on a training set.

    Returns ``(params, loss_history)``, or ``(params, loss_history, adam_state)``
    with ``return_state``. ``params`` defaults to :func:`init_params` seeded by
    ``config.seed``.
    """
    labels = np.asarray(labels)
    trials = np.asarray(trials, dtype=np.float64)
    if len(trials) != len(labels):
        raise RejectedInputError("trials and labels differ in length")
    if len(trials) < 2:
        raise RejectedInputError("training needs at least 2 trials")
    if len(np.unique(labels)) < 2:
        warnings.warn("training set holds a single class; every pair is positive", stacklevel=2)
    if params is None:
        params = init_params(arch or Architecture(n_samples=trials.shape[2],
                                                  n_channels=trials.shape[1]), config.seed)
    else:
        params = params.copy()
    _as_batch(params, trials[:1])
    rng = np.random.default_rng([config.seed, 1])
    state = AdamState.zeros_like(params)
    history = np.zeros(config.iterations)
    for it in range(config.iterations):
        batch = sample_pairs(labels, config.batch_size, rng, config.balanced_pairs)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = batch_loss_and_grads(params, trials, batch, config.margin,
                                                   config.final_relu)
            if not math.isfinite(loss):
                raise NumericError("non-finite training loss")
            adam_step(params, grads, state, config, inplace=True)
        except NumericError as exc:
            raise TrainingError(str(exc), it) from exc
        history[it] = loss
        if it % 50 == 0 or it == config.iterations - 1:
            log.debug("iteration %d  loss %.6f", it, loss)
    if return_state:
        return params, history, state
    return params, history
