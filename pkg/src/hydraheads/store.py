"""Body, heads-only and full-model checkpoints on top of the raw container format."""

from __future__ import annotations

from pathlib import Path

from hydraheads.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from hydraheads.ingest import Vocabulary
from hydraheads.model import (
    HEAD_PARAM_NAMES,
    CompatibilityError,
    HydraHeads,
    Model,
    ModelConfig,
    TaskHead,
    TransformerLayer,
    body_from_tensors,
)
from hydraheads.tensor import Parameter


def _config(ckpt: Checkpoint) -> ModelConfig:
    try:
        return ModelConfig(**ckpt.config)
    except TypeError as exc:
        raise CompatibilityError(f"bad model config in checkpoint: {exc}") from None


def _expect_kind(ckpt: Checkpoint, *kinds: str) -> None:
    if ckpt.kind not in kinds:
        raise CompatibilityError(f"expected a {' or '.join(kinds)} checkpoint, got {ckpt.kind!r}")


def save_body(path: str | Path, body, vocab: Vocabulary) -> int:
    return save_checkpoint(path, "body", body.cfg.to_dict(),
                           [(p.name, p.data) for p in body.parameters()],
                           meta={"vocab": vocab.words()})


def load_body(path: str | Path):
    """Return ``(body, vocab)`` from a body or full-model checkpoint."""
    ckpt = load_checkpoint(path)
    _expect_kind(ckpt, "body", "model")
    cfg = _config(ckpt)
    vocab = Vocabulary(ckpt.meta.get("vocab", []))
    if len(vocab) != cfg.vocab_size:
        raise CompatibilityError(f"vocabulary has {len(vocab)} entries, config says {cfg.vocab_size}")
    return body_from_tensors(cfg, ckpt.tensors), vocab


def export_heads(heads: HydraHeads, path: str | Path, meta: dict | None = None) -> int:
    """Write the heads-only checkpoint: just the hydra query/key projections."""
    try:
        return save_checkpoint(path, "heads", heads.cfg.to_dict(),
                               [(p.name, p.data) for p in heads.parameters()], meta=meta)
    except OSError as exc:
        raise OSError(f"cannot write heads checkpoint {path}: {exc}") from exc


def load_heads(path: str | Path, cfg: ModelConfig | None = None) -> HydraHeads:
    """Load heads; with ``cfg`` given, refuse heads built for another geometry."""
    ckpt = load_checkpoint(path)
    _expect_kind(ckpt, "heads", "model")
    heads_cfg = _config(ckpt)
    if cfg is not None:
        if (heads_cfg.d_model, heads_cfg.n_heads) != (cfg.d_model, cfg.n_heads):
            raise CompatibilityError(
                f"{path}: heads have d_model={heads_cfg.d_model}, n_heads={heads_cfg.n_heads}; "
                f"body has d_model={cfg.d_model}, n_heads={cfg.n_heads}"
            )
        heads_cfg = cfg
    return HydraHeads.from_tensors(heads_cfg, {n: ckpt.tensors[n] for n in HEAD_PARAM_NAMES
                                               if n in ckpt.tensors})


def save_model(path: str | Path, model: Model, vocab: Vocabulary, task: dict) -> int:
    meta = {"vocab": vocab.words(), "task": task, "has_hydra": model.hydra is not None,
            "n_layers": model.n_layers}
    return save_checkpoint(path, "model", model.cfg.to_dict(),
                           [(p.name, p.data) for p in model.parameters()], meta=meta)


def load_model(path: str | Path):
    """Return ``(model, vocab, task)`` from a full-model checkpoint."""
    ckpt = load_checkpoint(path)
    _expect_kind(ckpt, "model")
    cfg = _config(ckpt)
    vocab = Vocabulary(ckpt.meta.get("vocab", []))
    body = body_from_tensors(cfg, ckpt.tensors)
    hydra = None
    if ckpt.meta.get("has_hydra"):
        hydra = _hydra_layer(cfg, ckpt)
    task = None
    if "task.w" in ckpt.tensors:
        task = TaskHead(Parameter(ckpt.tensors["task.w"].astype(float), "task.w"),
                        Parameter(ckpt.tensors["task.b"].astype(float), "task.b"))
    return Model(body, hydra, task), vocab, ckpt.meta.get("task", {})


def _hydra_layer(cfg: ModelConfig, ckpt: Checkpoint) -> TransformerLayer:
    params = {}
    for short, shape in TransformerLayer.param_shapes(cfg):
        name = "hydra." + short
        if name not in ckpt.tensors or ckpt.tensors[name].shape != shape:
            raise CompatibilityError(f"hydra tensor {name!r} missing or misshapen")
        params[name] = Parameter(ckpt.tensors[name].astype(float), name)
    return TransformerLayer("hydra.", cfg, params)
