"""Held-out-word LSTM language model.

One position of a sentence is replaced by the TGT placeholder, the LSTM reads
the whole sentence left to right from a zero state, and the model predicts
the removed word from ``context = tanh(h_final @ W_c)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from ..corpus import EOS, PAD, TGT, UNK, AnnotatedInstance, Vocabulary, encode, normalize_form, truncate_around
from ..numeric import DimensionError, softmax_xent
from . import kernels

log = logging.getLogger(__name__)

PARAM_NAMES = ("E", "W_x", "W_h", "b", "W_c", "O", "b_o")
INIT_SCALE = 0.05
NON_TARGETS = (UNK, TGT, EOS, PAD)
OPTIMIZERS = ("adam", "sgd")
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingError(Exception):
    pass


class HeldOutTargetError(ValueError):
    pass


@dataclass
class ModelConfig:
    V: int
    p: int = 32
    h: int = 64
    learning_rate: float = 0.01
    clip_norm: float = 5.0
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    max_len: int = 100
    # keep at most this many training sentences (seeded sample); None = all
    max_sentences: int | None = None
    optimizer: str = "adam"  # or "sgd"

    def __post_init__(self):
        for name in ("V", "p", "h", "batch_size", "epochs", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be > 0")
        if self.max_sentences is not None and self.max_sentences < 1:
            raise ValueError("max_sentences must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class LstmParams:
    E: np.ndarray
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    W_c: np.ndarray
    O: np.ndarray
    b_o: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        """(V, p, h)"""
        return self.E.shape[0], self.E.shape[1], self.W_h.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def copy(self) -> "LstmParams":
        return LstmParams(**{n: a.copy() for n, a in self.as_dict().items()})

    def check(self) -> None:
        V, p, h = self.dims
        want = {"E": (V, p), "W_x": (p, 4 * h), "W_h": (h, 4 * h), "b": (4 * h,),
                "W_c": (h, p), "O": (V, p), "b_o": (V,)}
        for n, shape in want.items():
            a = getattr(self, n)
            if a.shape != shape:
                raise DimensionError(f"{n} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{n} contains non-finite values")


@dataclass
class ContextVector:
    values: np.ndarray
    source: tuple[str, int] = ("", 0)


@dataclass
class HeldOut:
    context: ContextVector
    logits: np.ndarray
    loss: float


def init_params(config: ModelConfig, seed: int | None = None) -> LstmParams:
    """Uniform(-0.05, 0.05) weights, zero biases except forget gate = 1."""
    rng = np.random.default_rng([config.seed if seed is None else seed, 0])
    V, p, h = config.V, config.p, config.h

    def u(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    E, W_x, W_h, W_c, O = u(V, p), u(p, 4 * h), u(h, 4 * h), u(h, p), u(V, p)
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0
    return LstmParams(E=E, W_x=W_x, W_h=W_h, b=b, W_c=W_c, O=O, b_o=np.zeros(V))


def zero_output(params: LstmParams) -> LstmParams:
    """Diagnostic copy with O and b_o zeroed, so every softmax is uniform."""
    out = params.copy()
    out.O[:] = 0.0
    out.b_o[:] = 0.0
    return out


def eligible_positions(sentence: Sequence[int]) -> list[int]:
    return [i for i, w in enumerate(sentence) if w not in NON_TARGETS]


# --------------------------------------------------------------------------- batched core


@dataclass
class _Batch:
    ids: np.ndarray  # (T, B) inputs with TGT substituted, PAD-filled
    mask: np.ndarray  # (T, B)
    targets: np.ndarray  # (B,) held-out word ids
    cache: tuple = field(default=())


def _pack(sentences: Sequence[Sequence[int]], positions: Sequence[int]) -> _Batch:
    B = len(sentences)
    T = max(len(s) for s in sentences)
    ids = np.full((T, B), PAD, dtype=np.int64)
    mask = np.zeros((T, B))
    targets = np.empty(B, dtype=np.int64)
    for r, (s, pos) in enumerate(zip(sentences, positions)):
        if not 0 <= pos < len(s):
            raise IndexError(f"target position {pos} outside sentence of length {len(s)}")
        # trailing PAD in the input is padding too
        n = len(s)
        while n > 0 and s[n - 1] == PAD:
            n -= 1
        ids[:len(s), r] = s
        mask[:n, r] = 1.0
        targets[r] = s[pos]
        ids[pos, r] = TGT
    last = int(mask.any(axis=1).nonzero()[0].max()) + 1 if mask.any() else 1
    return _Batch(ids[:last], mask[:last], targets)


def _forward(params: LstmParams, batch: _Batch):
    X = params.E[batch.ids]
    H, C, A, TC = kernels.lstm_forward(X, batch.mask, params.W_x, params.W_h, params.b)
    context = np.tanh(H[-1] @ params.W_c)
    logits = context @ params.O.T + params.b_o
    batch.cache = (X, H, C, A, TC)
    return context, logits


def contexts_for(params: LstmParams, sentences, positions) -> np.ndarray:
    """Context vectors (B, p) for a batch; no loss, so UNK targets are fine."""
    batch = _pack(sentences, positions)
    context, _ = _forward(params, batch)
    return context


def loss_and_grads(params: LstmParams, sentences, positions, with_grads: bool = True):
    """Mean held-out-word cross-entropy over a batch and its parameter gradients.

    Returns ``(loss, grads, context, logits)``; ``grads`` is None when
    ``with_grads`` is false.
    """
    batch = _pack(sentences, positions)
    V = params.E.shape[0]
    if np.any(batch.targets >= V):
        raise DimensionError("sentence id outside the model vocabulary")
    bad = np.isin(batch.targets, NON_TARGETS)
    if bad.any():
        r = int(bad.nonzero()[0][0])
        raise HeldOutTargetError(f"row {r}: held-out word id {int(batch.targets[r])} is a special/UNK token")
    context, logits = _forward(params, batch)
    loss, dlogits = softmax_xent(logits, batch.targets)
    if not with_grads:
        return loss, None, context, logits
    X, H, C, A, TC = batch.cache
    g_O = dlogits.T @ context
    g_bo = dlogits.sum(axis=0)
    dpre = (dlogits @ params.O) * (1.0 - context * context)
    g_Wc = H[-1].T @ dpre
    dh = dpre @ params.W_c.T
    dX, g_Wx, g_Wh, g_b = kernels.lstm_backward(X, batch.mask, params.W_x, params.W_h, H, C, A, TC, dh)
    g_E = np.zeros_like(params.E)
    np.add.at(g_E, batch.ids.reshape(-1), dX.reshape(-1, dX.shape[-1]))
    grads = {"E": g_E, "W_x": g_Wx, "W_h": g_Wh, "b": g_b, "W_c": g_Wc, "O": g_O, "b_o": g_bo}
    return loss, grads, context, logits


def forward_heldout(params: LstmParams, sentence: Sequence[int], target_position: int) -> HeldOut:
    V = params.E.shape[0]
    if any(w >= V or w < 0 for w in sentence):
        raise DimensionError("sentence contains ids outside the model vocabulary")
    loss, _, context, logits = loss_and_grads(params, [sentence], [target_position], with_grads=False)
    return HeldOut(ContextVector(context[0], ("", target_position)), logits[0], loss)


# --------------------------------------------------------------------------- training


def clip_global_norm(grads: dict[str, np.ndarray], clip_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``clip_norm``.

    Returns the norm before clipping.
    """
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > clip_norm:
        scale = clip_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: LstmParams, lr: float):
        self.lr = lr
        self.t = 0
        self.m = {n: np.zeros_like(a) for n, a in params.as_dict().items()}
        self.v = {n: np.zeros_like(a) for n, a in params.as_dict().items()}

    def step(self, params: LstmParams, grads: dict[str, np.ndarray]) -> None:
        b1, b2 = ADAM_BETAS
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for n, g in grads.items():
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            getattr(params, n)[...] -= self.lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


class SGD:
    def __init__(self, params: LstmParams, lr: float):
        self.lr = lr

    def step(self, params: LstmParams, grads: dict[str, np.ndarray]) -> None:
        for n, g in grads.items():
            getattr(params, n)[...] -= self.lr * g


def train(config: ModelConfig, corpus: Sequence[Sequence[int]], vocab: Vocabulary | None = None,
          params: LstmParams | None = None, log_every: int = 100) -> tuple[LstmParams, list[float]]:
    """Fit the held-out-word objective; returns final params and per-epoch mean loss.

    Each epoch visits sentences in a seeded random order and holds out one
    uniformly sampled non-UNK, non-EOS position per sentence. Gradients are
    clipped to ``config.clip_norm`` by global norm before every update.
    """
    if vocab is not None and len(vocab) != config.V:
        raise DimensionError(f"config.V={config.V} but vocabulary has {len(vocab)} entries")
    rng = np.random.default_rng([config.seed, 1])
    data = [list(s) for s in corpus if eligible_positions(s)]
    if not data:
        raise TrainingError("corpus has no eligible held-out positions")
    if config.max_sentences is not None and len(data) > config.max_sentences:
        keep = np.sort(rng.choice(len(data), size=config.max_sentences, replace=False))
        data = [data[i] for i in keep]
    elig = [eligible_positions(s) for s in data]
    params = init_params(config) if params is None else params.copy()
    params.check()
    if params.dims != (config.V, config.p, config.h):
        raise DimensionError(f"params dims {params.dims} do not match config")
    opt = (Adam if config.optimizer == "adam" else SGD)(params, config.learning_rate)
    losses = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            sents = [data[i] for i in idx]
            pos = [elig[i][int(rng.integers(len(elig[i])))] for i in idx]
            loss, grads, _, _ = loss_and_grads(params, sents, pos)
            clip_global_norm(grads, config.clip_norm)
            opt.step(params, grads)
            total += loss * len(idx)
            count += len(idx)
            step += 1
            if log_every and step % log_every == 0:
                log.info("epoch %d step %d loss %.4f", epoch + 1, step, loss)
        losses.append(total / count)
        log.info("epoch %d mean loss %.4f", epoch + 1, losses[-1])
    return params, losses


def perplexity(params: LstmParams, corpus: Sequence[Sequence[int]], batch_size: int = 64) -> float:
    """exp of mean held-out cross-entropy, holding out the middle eligible token of each sentence."""
    items = []
    for s in corpus:
        e = eligible_positions(s)
        if e:
            items.append((list(s), e[len(e) // 2]))
    if not items:
        raise TrainingError("corpus has no eligible held-out positions")
    total = 0.0
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        loss, _, _, _ = loss_and_grads(params, [s for s, _ in chunk], [p for _, p in chunk], with_grads=False)
        total += loss * len(chunk)
    return math.exp(total / len(items))


# --------------------------------------------------------------------------- annotated data


def encode_instance(instance: AnnotatedInstance, vocab: Vocabulary, lowercase: bool = True,
                    max_len: int | None = None) -> tuple[list[int], int]:
    """Token ids (EOS-terminated) and target index for an annotated occurrence."""
    toks, pos = list(instance.tokens), instance.target_position
    if max_len is not None:
        toks, pos = truncate_around(toks, pos, max_len)
    return encode([normalize_form(t, lowercase) for t in toks], vocab), pos


def extract_context(params: LstmParams, instance: AnnotatedInstance, vocab: Vocabulary,
                    lowercase: bool = True, max_len: int | None = None) -> ContextVector:
    ids, pos = encode_instance(instance, vocab, lowercase, max_len)
    return ContextVector(contexts_for(params, [ids], [pos])[0], (instance.sentence_id, instance.target_position))


def extract_contexts(params: LstmParams, instances: Sequence[AnnotatedInstance], vocab: Vocabulary,
                     lowercase: bool = True, max_len: int | None = None, batch_size: int = 64) -> np.ndarray:
    """Context vectors for many instances, shape (n, p), in input order."""
    p = params.E.shape[1]
    out = np.zeros((len(instances), p))
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        enc = [encode_instance(i, vocab, lowercase, max_len) for i in chunk]
        out[start:start + len(chunk)] = contexts_for(params, [e[0] for e in enc], [e[1] for e in enc])
    return out

