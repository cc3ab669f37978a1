"""Phase 1: fit the HYDRA query/key projections to dependency matrices.

The body stays frozen; only ``hydra.attn.{w,b}_{q,k}`` receive gradients.
Each head regresses the same relation matrix, and the total loss is the mean
over heads of the per-sentence masked MSE.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from hydraheads import tensor as T
from hydraheads.ingest import PAD, ParsedSentence, Vocabulary, align_sdoi_to_tokens, build_sdoi, encode_words
from hydraheads.model import HydraHeads, TransformerBody
from hydraheads.optim import Adam
from hydraheads.store import export_heads  # noqa: F401  (re-exported for phase-1 callers)
from hydraheads.tensor import Tensor

log = logging.getLogger(__name__)


class PretrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 2
    batch_size: int = 16
    lr: float = 3e-3
    seed: int = 0
    max_len: int = 64
    clip_norm: float = 1.0
    val_fraction: float = 0.1
    softmax_logits: bool = False
    sdoi_closure: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise PretrainConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise PretrainConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise PretrainConfigError("lr must be positive")
        if self.max_len < 2:
            raise PretrainConfigError("max_len must be >= 2")
        if not 0.0 <= self.val_fraction < 1.0:
            raise PretrainConfigError("val_fraction must lie in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class PretrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    initial_loss_estimate: float = float("nan")
    n_train: int = 0
    n_val: int = 0
    n_dropped: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def is_validation(sentence: ParsedSentence, val_fraction: float) -> bool:
    digest = hashlib.sha256(sentence.text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % 10_000 < int(round(val_fraction * 10_000))


def split_corpus(sentences: Sequence[ParsedSentence], val_fraction: float):
    train = [s for s in sentences if not is_validation(s, val_fraction)]
    val = [s for s in sentences if is_validation(s, val_fraction)]
    return train, val


def filter_length(sentences: Sequence[ParsedSentence], max_len: int):
    kept = [s for s in sentences if len(s) <= max_len - 1]
    return kept, len(sentences) - len(kept)


@dataclass
class Batch:
    ids: np.ndarray
    pad_mask: np.ndarray
    targets: np.ndarray
    masks: np.ndarray


def make_batch(sentences: Sequence[ParsedSentence], vocab: Vocabulary, max_len: int,
               closure: bool = False) -> Batch:
    seq = 1 + max(len(s) for s in sentences)
    b = len(sentences)
    ids = np.full((b, seq), PAD, dtype=np.int64)
    pad_mask = np.zeros((b, seq))
    targets = np.zeros((b, seq, seq))
    masks = np.zeros((b, seq, seq))
    for i, s in enumerate(sentences):
        row = encode_words([w.lower() for w in s.tokens], vocab, max_len, truncate=False)
        ids[i, : len(row)] = row
        pad_mask[i, : len(row)] = 1.0
        targets[i], masks[i] = align_sdoi_to_tokens(build_sdoi(s, closure), seq)
    return Batch(ids, pad_mask, targets, masks)


def heads_loss(heads: HydraHeads, H: Tensor, targets: np.ndarray, masks: np.ndarray,
               softmax: bool = False, head_weights: Sequence[float] | None = None) -> Tensor:
    """Mean over heads of the masked MSE between head logits and the target matrices."""
    n = heads.cfg.n_heads
    weights = [1.0] * n if head_weights is None else list(head_weights)
    total = None
    for h, logits in enumerate(heads.all_logits(H)):
        if softmax:
            logits = T.softmax_rows(logits + Tensor(np.where(masks.any(axis=1, keepdims=True), 0.0, -1e9)))
        term = T.mse_flat(logits, targets, masks) * (weights[h] / n)
        total = term if total is None else total + term
    return total


def initial_loss_estimate(sentences: Sequence[ParsedSentence], closure: bool = False) -> float:
    """Loss of heads that output all-zero logits: the mean density of ones per matrix."""
    if not sentences:
        raise PretrainConfigError("need at least one sentence")
    return float(np.mean([build_sdoi(s, closure).mean() for s in sentences]))


def _batches(items: Sequence, size: int):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def evaluate_heads(body: TransformerBody, heads: HydraHeads, sentences: Sequence[ParsedSentence],
                   vocab: Vocabulary, cfg: PretrainConfig) -> float:
    """Sentence-weighted mean loss, no parameter updates."""
    total, count = 0.0, 0
    with body.frozen():
        for chunk in _batches(list(sentences), cfg.batch_size):
            batch = make_batch(chunk, vocab, cfg.max_len, cfg.sdoi_closure)
            H = body.forward(batch.ids, batch.pad_mask).detach()
            loss = heads_loss(_inference_view(heads), H, batch.targets, batch.masks, cfg.softmax_logits)
            total += loss.item() * len(chunk)
            count += len(chunk)
    return total / count


def _inference_view(heads: HydraHeads) -> HydraHeads:
    view = heads.copy()
    for p in view.parameters():
        p.trainable = False
    return view


def pretrain_heads(
    body: TransformerBody,
    vocab: Vocabulary,
    sentences: Sequence[ParsedSentence],
    cfg: PretrainConfig,
    heads: HydraHeads | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> tuple[HydraHeads, PretrainReport]:
    """Train fresh (or given) heads against the frozen body; returns heads and a report."""
    if cfg.max_len > body.cfg.max_len:
        raise PretrainConfigError(f"max_len {cfg.max_len} exceeds the body's max_len {body.cfg.max_len}")
    t0 = time.perf_counter()
    kept, dropped = filter_length(sentences, cfg.max_len)
    if not kept:
        raise PretrainConfigError(f"no sentence has at most {cfg.max_len - 1} words")
    train, val = split_corpus(kept, cfg.val_fraction)
    if not train:
        train, val = val, []
    if not val:
        log.warning("validation split is empty; validation loss is measured on the training set")
    val_eval = val or train

    heads = HydraHeads.init(body.cfg, cfg.seed) if heads is None else heads
    params = heads.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = PretrainReport(n_train=len(train), n_val=len(val), n_dropped=dropped,
                            initial_loss_estimate=initial_loss_estimate(val_eval, cfg.sdoi_closure))
    report.initial_val_loss = evaluate_heads(body, heads, val_eval, vocab, cfg)

    with body.frozen():
        for epoch in range(1, cfg.epochs + 1):
            e0 = time.perf_counter()
            order = [train[i] for i in rng.permutation(len(train))]
            losses = []
            for chunk in _batches(order, cfg.batch_size):
                batch = make_batch(chunk, vocab, cfg.max_len, cfg.sdoi_closure)
                H = body.forward(batch.ids, batch.pad_mask).detach()
                loss = heads_loss(heads, H, batch.targets, batch.masks, cfg.softmax_logits)
                loss.backward()
                T.clip_grad_norm(params, cfg.clip_norm)
                opt.step()
                losses.append(loss.item())
            rec = EpochRecord(epoch, float(np.mean(losses)),
                              evaluate_heads(body, heads, val_eval, vocab, cfg),
                              time.perf_counter() - e0)
            report.epochs.append(rec)
            log.info("epoch %d train %.5f val %.5f (%.1fs)", rec.epoch, rec.train_loss, rec.val_loss, rec.seconds)
            if on_epoch is not None:
                on_epoch(rec)
    report.seconds = time.perf_counter() - t0
    return heads, report


def jsonl_logger(path: str | Path) -> Callable[[EpochRecord], None]:
    """Epoch callback appending one JSON record per epoch to ``path`` (truncated first)."""
    path = Path(path)
    path.write_text("", encoding="utf-8")

    def write(rec: EpochRecord) -> None:
        with path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")

    return write
