"""Post-norm transformer encoder, the appended HYDRA layer, and the task head.

Weights follow the ``y = x W^T + b`` convention with ``W`` stored as
[out, in]. Query/key/value projections are fused [d_model, d_model] matrices;
head ``h`` owns rows ``h*d_k:(h+1)*d_k``.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from hydraheads import tensor as T
from hydraheads.tensor import Parameter, Tensor

HYDRA_PREFIX = "hydra."
HEAD_PARAM_NAMES = ("hydra.attn.w_q", "hydra.attn.b_q", "hydra.attn.w_k", "hydra.attn.b_k")
HYDRA_INIT_BOUND = 0.02
MASK_LOGIT = -1e9

# Independent RNG streams per component keep the comparison variants aligned:
# every variant draws its task head (and the hydra sublayers) from the same stream.
_STREAM_BODY, _STREAM_HEADS, _STREAM_HYDRA_LAYER, _STREAM_TASK = 0, 1, 2, 3


class CompatibilityError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_body_layers: int = 2
    d_ff: int = 256
    max_len: int = 64

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([stream, seed])


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def _linear(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return T.matmul(x, T.transpose(w)) + b


class TransformerLayer:
    """Multi-head self-attention and a GELU feed-forward block, both post-norm."""

    def __init__(self, prefix: str, cfg: ModelConfig, params: dict[str, Parameter]) -> None:
        self.prefix = prefix
        self.cfg = cfg
        self.p = params

    @staticmethod
    def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
        d, f = cfg.d_model, cfg.d_ff
        return [
            ("attn.w_q", (d, d)), ("attn.b_q", (d,)),
            ("attn.w_k", (d, d)), ("attn.b_k", (d,)),
            ("attn.w_v", (d, d)), ("attn.b_v", (d,)),
            ("attn.w_o", (d, d)), ("attn.b_o", (d,)),
            ("ffn.w1", (f, d)), ("ffn.b1", (f,)),
            ("ffn.w2", (d, f)), ("ffn.b2", (d,)),
            ("ln1.gain", (d,)), ("ln1.bias", (d,)),
            ("ln2.gain", (d,)), ("ln2.bias", (d,)),
        ]

    @classmethod
    def init(cls, prefix: str, cfg: ModelConfig, rng: np.random.Generator,
             skip: Sequence[str] = ()) -> TransformerLayer:
        params: dict[str, Parameter] = {}
        for short, shape in cls.param_shapes(cfg):
            name = prefix + short
            if short in skip:
                continue
            if short.endswith(".gain"):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = _uniform(rng, shape, 1.0 / math.sqrt(shape[1]))
            params[name] = Parameter(data, name)
        return cls(prefix, cfg, params)

    def __getitem__(self, short: str) -> Parameter:
        return self.p[self.prefix + short]

    def parameters(self) -> list[Parameter]:
        return [self.p[self.prefix + short] for short, _ in self.param_shapes(self.cfg)]

    def forward(self, x: Tensor, key_bias: np.ndarray) -> Tensor:
        cfg = self.cfg
        dk = cfg.d_k
        q = _linear(x, self["attn.w_q"], self["attn.b_q"])
        k = _linear(x, self["attn.w_k"], self["attn.b_k"])
        v = _linear(x, self["attn.w_v"], self["attn.b_v"])
        bias = Tensor(key_bias[:, None, :])
        heads = []
        for h in range(cfg.n_heads):
            cols = (slice(None), slice(None), slice(h * dk, (h + 1) * dk))
            scores = T.matmul(q[cols], T.swap_last(k[cols])) * (1.0 / math.sqrt(dk)) + bias
            heads.append(T.matmul(T.softmax_rows(scores), v[cols]))
        attn = _linear(T.concat(heads, axis=-1), self["attn.w_o"], self["attn.b_o"])
        x = T.layer_norm(x + attn, self["ln1.gain"], self["ln1.bias"])
        ff = _linear(T.gelu(_linear(x, self["ffn.w1"], self["ffn.b1"])), self["ffn.w2"], self["ffn.b2"])
        return T.layer_norm(x + ff, self["ln2.gain"], self["ln2.bias"])


def key_bias_from_mask(pad_mask: np.ndarray) -> np.ndarray:
    pad_mask = np.asarray(pad_mask, dtype=np.float64)
    if not np.all((pad_mask == 0) | (pad_mask == 1)):
        raise ValueError("pad_mask entries must be 0 or 1")
    return (1.0 - pad_mask) * MASK_LOGIT


class TransformerBody:
    def __init__(self, cfg: ModelConfig, tok_emb: Parameter, pos_emb: Parameter,
                 layers: list[TransformerLayer]) -> None:
        self.cfg = cfg
        self.tok_emb = tok_emb
        self.pos_emb = pos_emb
        self.layers = layers

    def parameters(self) -> list[Parameter]:
        out = [self.tok_emb, self.pos_emb]
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    @contextlib.contextmanager
    def frozen(self) -> Iterator[None]:
        """Temporarily mark every body parameter frozen."""
        params = self.parameters()
        flags = [p.trainable for p in params]
        for p in params:
            p.trainable = False
        try:
            yield
        finally:
            for p, flag in zip(params, flags):
                p.trainable = flag

    def embed(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"ids must be [batch, seq], got shape {ids.shape}")
        s = ids.shape[1]
        if s > self.cfg.max_len:
            raise T.DimensionError(f"sequence length {s} exceeds max_len {self.cfg.max_len}")
        return T.embedding(self.tok_emb, ids) + self.pos_emb[:s]

    def forward(self, ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
        """Return the last body hidden state, shape [batch, seq, d_model]."""
        x = self.embed(ids)
        bias = key_bias_from_mask(pad_mask)
        for layer in self.layers:
            x = layer.forward(x, bias)
        return x

    __call__ = forward


def init_model(cfg: ModelConfig, seed: int) -> TransformerBody:
    """Deterministic body: weights ~ U(+-1/sqrt(fan_in)), biases 0, LN gains 1."""
    rng = _rng(seed, _STREAM_BODY)
    d = cfg.d_model
    tok = Parameter(_uniform(rng, (cfg.vocab_size, d), 1.0 / math.sqrt(d)), "body.tok_emb")
    pos = Parameter(_uniform(rng, (cfg.max_len, d), 1.0 / math.sqrt(d)), "body.pos_emb")
    layers = [TransformerLayer.init(f"body.layers.{i}.", cfg, rng) for i in range(cfg.n_body_layers)]
    return TransformerBody(cfg, tok, pos, layers)


def body_from_tensors(cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> TransformerBody:
    def param(name: str, shape: tuple[int, ...]) -> Parameter:
        if name not in tensors:
            raise CompatibilityError(f"missing tensor {name!r}")
        arr = np.asarray(tensors[name], dtype=np.float64)
        if arr.shape != shape:
            raise CompatibilityError(f"{name}: shape {arr.shape} does not match config {shape}")
        return Parameter(arr.copy(), name)

    d = cfg.d_model
    tok = param("body.tok_emb", (cfg.vocab_size, d))
    pos = param("body.pos_emb", (cfg.max_len, d))
    layers = []
    for i in range(cfg.n_body_layers):
        prefix = f"body.layers.{i}."
        params = {prefix + s: param(prefix + s, shape) for s, shape in TransformerLayer.param_shapes(cfg)}
        layers.append(TransformerLayer(prefix, cfg, params))
    return TransformerBody(cfg, tok, pos, layers)


class HydraHeads:
    """The pretrainable part of layer l+1: fused query and key projections."""

    def __init__(self, cfg: ModelConfig, w_q: Parameter, b_q: Parameter,
                 w_k: Parameter, b_k: Parameter) -> None:
        d = cfg.d_model
        for p, shape in ((w_q, (d, d)), (b_q, (d,)), (w_k, (d, d)), (b_k, (d,))):
            if p.shape != shape:
                raise CompatibilityError(f"{p.name}: shape {p.shape} incompatible with d_model={d}")
        self.cfg = cfg
        self.w_q, self.b_q, self.w_k, self.b_k = w_q, b_q, w_k, b_k

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int, bound: float = HYDRA_INIT_BOUND) -> HydraHeads:
        rng = _rng(seed, _STREAM_HEADS)
        d = cfg.d_model
        w_q = Parameter(_uniform(rng, (d, d), bound), HEAD_PARAM_NAMES[0])
        w_k = Parameter(_uniform(rng, (d, d), bound), HEAD_PARAM_NAMES[2])
        return cls(cfg, w_q, Parameter(np.zeros(d), HEAD_PARAM_NAMES[1]),
                   w_k, Parameter(np.zeros(d), HEAD_PARAM_NAMES[3]))

    @classmethod
    def from_tensors(cls, cfg: ModelConfig, tensors: dict[str, np.ndarray]) -> HydraHeads:
        missing = [n for n in HEAD_PARAM_NAMES if n not in tensors]
        if missing:
            raise CompatibilityError(f"missing head tensors {missing}")
        return cls(cfg, *(Parameter(np.array(tensors[n], dtype=np.float64), n) for n in HEAD_PARAM_NAMES))

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.b_q, self.w_k, self.b_k]

    def copy(self) -> HydraHeads:
        return HydraHeads(self.cfg, *(Parameter(p.data.copy(), p.name) for p in self.parameters()))

    def logits(self, H: Tensor, head: int) -> Tensor:
        return hydra_logits(self, H, head)

    def all_logits(self, H: Tensor) -> list[Tensor]:
        """Logits for every head from one fused projection; equal to per-head ``logits``."""
        dk = self.cfg.d_k
        q = _linear(H, self.w_q, self.b_q)
        k = _linear(H, self.w_k, self.b_k)
        scale = 1.0 / math.sqrt(dk)
        out = []
        for h in range(self.cfg.n_heads):
            cols = (slice(None), slice(None), slice(h * dk, (h + 1) * dk))
            out.append(T.matmul(q[cols], T.swap_last(k[cols])) * scale)
        return out


def hydra_logits(heads: HydraHeads | TransformerLayer, H: Tensor, head: int) -> Tensor:
    """Raw scaled attention logits q k^T / sqrt(d_k) for one head; no softmax."""
    if isinstance(heads, TransformerLayer):
        w_q, b_q, w_k, b_k = (heads[s] for s in ("attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k"))
    else:
        w_q, b_q, w_k, b_k = heads.parameters()
    cfg = heads.cfg
    if H.shape[-1] != cfg.d_model:
        raise T.DimensionError(f"hidden size {H.shape[-1]} != d_model {cfg.d_model}")
    if not 0 <= head < cfg.n_heads:
        raise IndexError(f"head {head} out of range [0, {cfg.n_heads})")
    dk = cfg.d_k
    rows = slice(head * dk, (head + 1) * dk)
    q = _linear(H, w_q[rows], b_q[rows])
    k = _linear(H, w_k[rows], b_k[rows])
    return T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(dk))


class TaskHead:
    def __init__(self, w: Parameter, b: Parameter) -> None:
        self.w, self.b = w, b

    @classmethod
    def init(cls, d_model: int, num_outputs: int, seed: int) -> TaskHead:
        rng = _rng(seed, _STREAM_TASK)
        w = Parameter(_uniform(rng, (num_outputs, d_model), 1.0 / math.sqrt(d_model)), "task.w")
        return cls(w, Parameter(np.zeros(num_outputs), "task.b"))

    @property
    def num_outputs(self) -> int:
        return self.w.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def pool_and_project(H_last: Tensor, task_head: TaskHead) -> Tensor:
    """CLS (position 0) vector through an affine map to [batch, num_outputs]."""
    return _linear(H_last[:, 0, :], task_head.w, task_head.b)


def _copy_param(p: Parameter) -> Parameter:
    return Parameter(p.data.copy(), p.name, trainable=True)


class Model:
    """Body (l layers), optional HYDRA layer l+1, optional task head."""

    def __init__(self, body: TransformerBody, hydra: TransformerLayer | None,
                 task: TaskHead | None) -> None:
        self.body = body
        self.hydra = hydra
        self.task = task

    @property
    def cfg(self) -> ModelConfig:
        return self.body.cfg

    @property
    def n_layers(self) -> int:
        return len(self.body.layers) + (self.hydra is not None)

    def parameters(self) -> list[Parameter]:
        out = self.body.parameters()
        if self.hydra is not None:
            out += self.hydra.parameters()
        if self.task is not None:
            out += self.task.parameters()
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def hidden(self, ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
        x = self.body.forward(ids, pad_mask)
        if self.hydra is not None:
            x = self.hydra.forward(x, key_bias_from_mask(pad_mask))
        return x

    def forward(self, ids: np.ndarray, pad_mask: np.ndarray) -> Tensor:
        if self.task is None:
            raise RuntimeError("model has no task head")
        return pool_and_project(self.hidden(ids, pad_mask), self.task)

    __call__ = forward

    def head_logits(self, ids: np.ndarray, pad_mask: np.ndarray) -> list[Tensor]:
        if self.hydra is None:
            raise RuntimeError("model has no HYDRA layer")
        H = self.body.forward(ids, pad_mask)
        return [hydra_logits(self.hydra, H, h) for h in range(self.cfg.n_heads)]


def hydra_layer_from_heads(cfg: ModelConfig, heads: HydraHeads, seed: int) -> TransformerLayer:
    if heads.cfg.d_model != cfg.d_model or heads.cfg.n_heads != cfg.n_heads:
        raise CompatibilityError(
            f"heads (d_model={heads.cfg.d_model}, n_heads={heads.cfg.n_heads}) do not fit "
            f"body (d_model={cfg.d_model}, n_heads={cfg.n_heads})"
        )
    layer = TransformerLayer.init(HYDRA_PREFIX, cfg, _rng(seed, _STREAM_HYDRA_LAYER),
                                  skip=("attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k"))
    for p in heads.parameters():
        layer.p[p.name] = _copy_param(p)
    return layer


def attach_hydra(body: TransformerBody, heads: HydraHeads, seed: int,
                 num_outputs: int | None = None) -> Model:
    """Copy the body and append layer l+1 built around pretrained W_q/W_k.

    The remaining sublayers of l+1 (value/output projections, feed-forward,
    layer norms) and the optional task head are fresh draws from ``seed``.
    The input body is never modified.
    """
    layer = hydra_layer_from_heads(body.cfg, heads, seed)
    task = TaskHead.init(body.cfg.d_model, num_outputs, seed) if num_outputs else None
    return Model(copy_body(body), layer, task)


def baseline_model(body: TransformerBody, seed: int, num_outputs: int | None = None) -> Model:
    task = TaskHead.init(body.cfg.d_model, num_outputs, seed) if num_outputs else None
    return Model(copy_body(body), None, task)


def copy_body(body: TransformerBody) -> TransformerBody:
    return body_from_tensors(body.cfg, {p.name: p.data for p in body.parameters()})


def count_parameters(params: Sequence[Parameter]) -> int:
    return int(sum(p.data.size for p in params))
