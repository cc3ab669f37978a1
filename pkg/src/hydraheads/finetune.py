"""Phase 2: sequence-level fine-tuning of the whole stack, evaluation, and the
three-way baseline comparison (body alone, fresh layer l+1, pretrained HYDRA)."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from hydraheads import tensor as T
from hydraheads.ingest import PAD, LabeledExample, Vocabulary, tokenize
from hydraheads.model import (
    HEAD_PARAM_NAMES,
    HydraHeads,
    Model,
    TransformerBody,
    attach_hydra,
    baseline_model,
)
from hydraheads.optim import Adam

VARIANTS = ("baseline", "fresh_layer", "hydra")


class FinetuneConfigError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "classification"
    num_classes: int = 2
    value_range: tuple[float, float] | None = None
    label_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("classification", "regression"):
            raise FinetuneConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and self.num_classes < 2:
            raise FinetuneConfigError("classification needs num_classes >= 2")

    @property
    def metric(self) -> str:
        return "accuracy" if self.kind == "classification" else "pearson"

    @property
    def num_outputs(self) -> int:
        return self.num_classes if self.kind == "classification" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["value_range"] = list(self.value_range) if self.value_range else None
        d["label_names"] = list(self.label_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TaskSpec:
        vr = d.get("value_range")
        return cls(kind=d["kind"], num_classes=int(d.get("num_classes", 2)),
                   value_range=tuple(vr) if vr else None,
                   label_names=tuple(d.get("label_names", ())))

    def check(self, examples: Sequence[LabeledExample]) -> None:
        for i, ex in enumerate(examples):
            if self.kind == "classification":
                if not isinstance(ex.label, (int, np.integer)) or not 0 <= ex.label < self.num_classes:
                    raise FinetuneConfigError(
                        f"example {i}: label {ex.label!r} invalid for {self.num_classes} classes")
            else:
                if not isinstance(ex.label, (int, float)) or not math.isfinite(ex.label):
                    raise FinetuneConfigError(f"example {i}: regression label {ex.label!r} is not a real")
                if self.value_range and not self.value_range[0] <= ex.label <= self.value_range[1]:
                    raise FinetuneConfigError(f"example {i}: label {ex.label} outside {self.value_range}")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 20
    lr: float = 3e-4
    batch_size: int = 8
    seed: int = 0
    max_len: int = 64

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise FinetuneConfigError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise FinetuneConfigError("lr must be positive")


@dataclass
class SplitResult:
    metric: str
    value: float
    predictions: list
    gold: list


@dataclass
class EvalReport:
    fingerprint: str
    splits: dict[str, SplitResult] = field(default_factory=dict)
    n_layers: int = 0
    best_epoch: int | None = None
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def encode_batch(texts: Sequence[str], vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    rows = [tokenize(t, vocab, max_len, truncate=True) for t in texts]
    seq = max(len(r) for r in rows)
    ids = np.full((len(rows), seq), PAD, dtype=np.int64)
    mask = np.zeros((len(rows), seq))
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    return ids, mask


def accuracy(pred: Sequence[int], gold: Sequence[int]) -> float:
    pred, gold = np.asarray(pred), np.asarray(gold)
    return float((pred == gold).mean())


def pearson(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Sample correlation; 0.0 when either side has zero variance."""
    x = np.asarray(pred, dtype=np.float64) - np.mean(pred)
    y = np.asarray(gold, dtype=np.float64) - np.mean(gold)
    denom = math.sqrt(float((x * x).sum()) * float((y * y).sum()))
    if denom == 0.0:
        return 0.0
    return float(np.clip((x * y).sum() / denom, -1.0, 1.0))


def predict(model: Model, examples: Sequence[LabeledExample], vocab: Vocabulary, task: TaskSpec,
            max_len: int = 64, batch_size: int = 64) -> list:
    params = model.parameters()
    flags = [p.trainable for p in params]
    for p in params:
        p.trainable = False
    out: list = []
    try:
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            ids, mask = encode_batch([ex.text for ex in chunk], vocab, max_len)
            logits = model.forward(ids, mask).data
            if task.kind == "classification":
                out.extend(int(i) for i in np.argmax(logits, axis=1))
            else:
                out.extend(float(v) for v in logits[:, 0])
    finally:
        for p, flag in zip(params, flags):
            p.trainable = flag
    return out


def evaluate(model: Model, examples: Sequence[LabeledExample], vocab: Vocabulary, task: TaskSpec,
             max_len: int = 64) -> SplitResult:
    if not examples:
        raise EvaluationError("cannot evaluate on an empty example list")
    preds = predict(model, examples, vocab, task, max_len)
    gold = [ex.label for ex in examples]
    value = accuracy(preds, gold) if task.metric == "accuracy" else pearson(preds, gold)
    return SplitResult(task.metric, value, preds, gold)


def task_loss(model: Model, ids: np.ndarray, mask: np.ndarray, labels: Sequence, task: TaskSpec) -> T.Tensor:
    logits = model.forward(ids, mask)
    if task.kind == "classification":
        return T.cross_entropy(logits, labels)
    return T.mean_squared_error(logits, labels)


def _data_digest(examples: Sequence[LabeledExample]) -> str:
    return fingerprint([[ex.text, ex.label] for ex in examples])


def finetune(
    model: Model,
    vocab: Vocabulary,
    train: Sequence[LabeledExample],
    dev: Sequence[LabeledExample] | None,
    task: TaskSpec,
    cfg: FinetuneConfig,
) -> tuple[Model, EvalReport]:
    """Train every parameter; keep the weights of the best dev epoch (earliest on ties).

    Without a dev set the training set doubles as the selection set.
    """
    if not train:
        raise FinetuneConfigError("training set is empty")
    if model.task is None or model.task.num_outputs != task.num_outputs:
        raise FinetuneConfigError("model task head does not match the task")
    task.check(train)
    dev = list(dev) if dev else list(train)
    task.check(dev)

    params = model.parameters()
    for p in params:
        p.trainable = True
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    report = EvalReport(
        fingerprint=fingerprint({"model": model.cfg.to_dict(), "finetune": asdict(cfg),
                                 "task": task.to_dict(), "n_layers": model.n_layers,
                                 "train": _data_digest(train), "dev": _data_digest(dev)}),
        n_layers=model.n_layers,
    )

    best_value, best_state = -math.inf, None
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train[i] for i in order[start : start + cfg.batch_size]]
            ids, mask = encode_batch([ex.text for ex in chunk], vocab, cfg.max_len)
            loss = task_loss(model, ids, mask, [ex.label for ex in chunk], task)
            loss.backward()
            opt.step()
            losses.append(loss.item())
        dev_value = evaluate(model, dev, vocab, task, cfg.max_len).value
        report.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "dev": dev_value})
        if dev_value > best_value:
            best_value, report.best_epoch = dev_value, epoch
            best_state = [p.data.copy() for p in params]

    for p, data in zip(params, best_state):
        p.data[...] = data
    report.splits["train"] = evaluate(model, train, vocab, task, cfg.max_len)
    report.splits["dev"] = evaluate(model, dev, vocab, task, cfg.max_len)
    return model, report


def build_variant(variant: str, body: TransformerBody, pretrained: HydraHeads | None,
                  num_outputs: int, seed: int) -> Model:
    if variant == "baseline":
        return baseline_model(body, seed, num_outputs)
    if variant == "fresh_layer":
        return attach_hydra(body, HydraHeads.init(body.cfg, seed), seed, num_outputs)
    if variant == "hydra":
        if pretrained is None:
            raise FinetuneConfigError("the hydra variant needs pretrained heads")
        return attach_hydra(body, pretrained, seed, num_outputs)
    raise FinetuneConfigError(f"unknown variant {variant!r}")


def differs_only_in_heads(a: Model, b: Model) -> bool:
    """True when both models hold bitwise-equal tensors under every name except hydra W_q/W_k."""
    pa, pb = a.named_parameters(), b.named_parameters()
    if pa.keys() != pb.keys():
        return False
    return all(np.array_equal(pa[n].data, pb[n].data) for n in pa if n not in HEAD_PARAM_NAMES)


@dataclass
class Comparison:
    rows: list[dict]
    means: dict[str, float]
    controlled: dict[int, bool]
    metric: str

    def to_dict(self) -> dict:
        return {"metric": self.metric, "rows": self.rows, "means": self.means,
                "controlled": {str(k): v for k, v in self.controlled.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        header = ("seed", "variant", "layers", f"train_{self.metric}", f"dev_{self.metric}")
        lines = [header] + [
            (str(r["seed"]), r["variant"], str(r["n_layers"]), f"{r['train']:.4f}", f"{r['dev']:.4f}")
            for r in self.rows
        ]
        lines += [("mean", v, "", "", f"{m:.4f}") for v, m in self.means.items()]
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in lines) + "\n"


def compare_baseline(
    body: TransformerBody,
    heads: HydraHeads,
    vocab: Vocabulary,
    train: Sequence[LabeledExample],
    dev: Sequence[LabeledExample] | None,
    task: TaskSpec,
    seeds: Sequence[int],
    cfg: FinetuneConfig,
) -> Comparison:
    """Fine-tune all three variants for every seed; non-HYDRA randomness is shared per seed."""
    if len(seeds) < 3:
        raise FinetuneConfigError("comparison needs at least 3 seeds")
    rows, controlled = [], {}
    for seed in seeds:
        models = {v: build_variant(v, body, heads, task.num_outputs, seed) for v in VARIANTS}
        controlled[seed] = differs_only_in_heads(models["fresh_layer"], models["hydra"])
        run_cfg = FinetuneConfig(**{**asdict(cfg), "seed": seed})
        for variant in VARIANTS:
            model, rep = finetune(models[variant], vocab, train, dev, task, run_cfg)
            rows.append({"seed": seed, "variant": variant, "n_layers": model.n_layers,
                         "train": rep.splits["train"].value, "dev": rep.splits["dev"].value,
                         "best_epoch": rep.best_epoch})
    means = {v: float(np.mean([r["dev"] for r in rows if r["variant"] == v])) for v in VARIANTS}
    return Comparison(rows, means, controlled, task.metric)
