"""Initialization, losses, the optimization loop, and checkpointing.

Training consumes individual pair-score records (one human rating each) in
batches of 5: every pair is forwarded independently (lengths vary), the
per-pair losses are averaged, and one Adam step is taken.  The best
checkpoint is selected by a validation metric computed on rating-averaged
pairs.  A gradient-check harness compares autograd against central finite
differences in float64 for every parameter group.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from svsnet.head import CLASSIFICATION, REGRESSION, ExternalEmbedding, load_embeddings
from svsnet.metrics import MetricReport, evaluate_utterance
from svsnet.model import ModelConfig, SvsNet, build_model, scalar_score
from svsnet.signal_io import (
    GroupedPair,
    PairRecord,
    group_by_pair,
    load_waveform,
    parse_manifest,
)

LOG_NAME = "train_log.jsonl"
BEST_NAME = "best.pt"


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass
class TrainConfig:
    mode: str = REGRESSION
    frontend: str = "sinc"
    attention_mode: str = "co_attention"
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 5
    epochs: int = 30
    max_steps: int | None = None
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    validation_metric: str = "utterance_lcc"
    eval_every_steps: int = 100
    patience: int = 10
    target_train_loss: float | None = None
    # model widths (defaults match the full-size configuration)
    sinc_filters: int = 64
    filter_length: int = 251
    conv_channels: int = 64
    recurrent_hidden: int = 256
    head_hidden: int = 128
    # fusion
    feature_fusion: bool = False
    embeddings_path: str | None = None
    # classification scores are collapsed to labels unless "expected" is chosen
    label_aggregate: str = "label"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < beta < 1.0:
                raise ValueError(f"Adam betas must lie in (0,1), got {beta}")
        if self.validation_metric not in ("utterance_lcc", "utterance_srcc", "utterance_mse"):
            raise ValueError(f"unsupported validation_metric {self.validation_metric!r}")
        if self.feature_fusion and not self.embeddings_path:
            raise ValueError("feature_fusion requires embeddings_path")

    def model_config(self, embedding_dim: int | None = None) -> ModelConfig:
        return ModelConfig(
            frontend=self.frontend,
            attention_mode=self.attention_mode,
            head_mode=self.mode,
            sinc_filters=self.sinc_filters,
            filter_length=self.filter_length,
            conv_channels=self.conv_channels,
            recurrent_hidden=self.recurrent_hidden,
            head_hidden=self.head_hidden,
            embedding_dim=embedding_dim if self.feature_fusion else None,
        )


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: TrainConfig | ModelConfig, seed: int) -> SvsNet:
    """Build a model with Xavier-uniform weights, zero biases, mel sinc cutoffs."""
    if isinstance(config, TrainConfig):
        emb_dim = None
        if config.feature_fusion:
            table = load_embeddings(config.embeddings_path)
            if not table:
                raise ValueError(f"no embeddings found in {config.embeddings_path}")
            emb_dim = next(iter(table.values())).vector.size
        model_config = config.model_config(embedding_dim=emb_dim)
    else:
        model_config = config
    model = build_model(model_config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith(("low_hz_param", "band_hz_param")):
                continue  # mel-spaced cutoff initialization from construction
            if p.ndim >= 2:
                fan_in, fan_out = nn.init._calculate_fan_in_and_fan_out(p)
                a = xavier_bound(fan_in, fan_out)
                p.uniform_(-a, a, generator=gen)
            else:
                p.zero_()
    return model


def loss_mse(pred, target) -> torch.Tensor:
    """Squared error of a single prediction; batch losses are means of these."""
    pred = pred if isinstance(pred, torch.Tensor) else torch.tensor(float(pred))
    return (pred - float(target)) ** 2


def loss_ce_from_logits(logits: torch.Tensor, target_class: int) -> torch.Tensor:
    """-log softmax(logits)[target], stable via the log-sum-exp form."""
    if not 0 <= int(target_class) < logits.shape[-1]:
        raise ValueError(f"target_class {target_class} out of range 0..{logits.shape[-1] - 1}")
    return -torch.log_softmax(logits, dim=-1)[int(target_class)]


def loss_ce(probs, target_class: int) -> torch.Tensor:
    """-log(probs[target]); training computes this from logits (see pair_loss)."""
    probs = probs if isinstance(probs, torch.Tensor) else torch.as_tensor(np.asarray(probs, dtype=np.float64))
    if not 0 <= int(target_class) < probs.shape[-1]:
        raise ValueError(f"target_class {target_class} out of range 0..{probs.shape[-1] - 1}")
    if torch.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-6:
        raise ValueError("probs must lie on the simplex")
    return -torch.log(probs[int(target_class)])


def pair_loss(forward_out: dict, score: int, mode: str) -> torch.Tensor:
    """Loss of one forwarded pair against its integer rating."""
    if mode == REGRESSION:
        return loss_mse(forward_out["score"], float(score))
    target = int(score) - 1
    log_probs = [torch.log_softmax(z, dim=-1)[target] for z in forward_out["outputs"]]
    if len(log_probs) == 1:
        return -log_probs[0]
    # -log of the averaged head probabilities, kept in the log domain
    return -(torch.logaddexp(log_probs[0], log_probs[1]) - math.log(2.0))


class PairDataset:
    """Manifest-backed pair loader with waveform caching.

    Relative audio paths resolve against the manifest's directory.  When the
    manifest carries a given split label, only those records are used;
    otherwise every record is kept.
    """

    def __init__(
        self,
        manifest_path: str | Path,
        split: str | None = None,
        embeddings: dict[str, ExternalEmbedding] | None = None,
    ):
        manifest_path = Path(manifest_path)
        records = parse_manifest(manifest_path)
        if not records:
            raise ValueError(f"empty manifest: {manifest_path}")
        if split is not None:
            chosen = [r for r in records if r.split == split]
            records = chosen if chosen else records
        self.manifest_path = manifest_path
        self.records = records
        self.embeddings = embeddings
        self._cache: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.records)

    def groups(self) -> list[GroupedPair]:
        return group_by_pair(self.records)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.manifest_path.parent / p

    def samples(self, path: str) -> np.ndarray:
        if path not in self._cache:
            self._cache[path] = load_waveform(self.resolve(path)).samples
        return self._cache[path]

    def embedding_for(self, path: str) -> ExternalEmbedding | None:
        if self.embeddings is None:
            return None
        key = Path(path).stem
        if key not in self.embeddings:
            raise KeyError(f"no embedding for utterance {key!r}")
        return self.embeddings[key]

    def forward_args_for_paths(self, test_path: str, ref_path: str) -> tuple:
        return (
            torch.from_numpy(self.samples(test_path)),
            torch.from_numpy(self.samples(ref_path)),
            self.embedding_for(test_path),
            self.embedding_for(ref_path),
        )

    def forward_args(self, record: PairRecord) -> tuple:
        return self.forward_args_for_paths(record.test_path, record.ref_path)


def predict_groups(
    model: SvsNet,
    dataset: PairDataset,
    groups: list[GroupedPair] | None = None,
    aggregate: str = "label",
) -> dict[str, float]:
    """Score each grouped pair once; returns pair_id -> scalar score."""
    groups = dataset.groups() if groups is None else groups
    preds: dict[str, float] = {}
    for g in groups:
        score = model.score_pair(
            torch.from_numpy(dataset.samples(g.test_path)),
            torch.from_numpy(dataset.samples(g.ref_path)),
            dataset.embedding_for(g.test_path),
            dataset.embedding_for(g.ref_path),
        )
        preds[g.pair_id] = scalar_score(score, aggregate=aggregate)
    return preds


def _validation_value(report: MetricReport, metric: str) -> float | None:
    value = {"utterance_lcc": report.lcc, "utterance_srcc": report.srcc, "utterance_mse": report.mse}[metric]
    if value is None:
        return None
    return -value if metric == "utterance_mse" else value


@dataclass
class Checkpoint:
    path: Path
    step: int
    model_config: ModelConfig
    train_config: TrainConfig | None = None

    def load_model(self) -> SvsNet:
        return load_checkpoint(self.path)[0]


def save_checkpoint(model: SvsNet, path: str | Path, step: int, train_config: TrainConfig | None = None) -> Checkpoint:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model_config": model.config.to_dict(),
        "train_config": asdict(train_config) if train_config is not None else None,
        "state_dict": model.state_dict(),
        "step": int(step),
    }
    torch.save(payload, path)
    return Checkpoint(path=path, step=step, model_config=model.config, train_config=train_config)


def load_checkpoint(path: str | Path) -> tuple[SvsNet, TrainConfig | None, int]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = build_model(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    train_config = TrainConfig(**payload["train_config"]) if payload["train_config"] else None
    return model, train_config, payload["step"]


def _mean_loss(model: SvsNet, dataset: PairDataset, records, mode: str) -> float:
    with torch.no_grad():
        losses = [float(pair_loss(model.forward_pair(*dataset.forward_args(r)), r.score, mode)) for r in records]
    return float(np.mean(losses))


def train(
    config: TrainConfig,
    train_manifest: str | Path,
    val_manifest: str | Path,
    log_hook=None,
) -> Checkpoint:
    """Run the optimization loop; returns the best checkpoint.

    Writes {checkpoint_dir}/best.pt and a JSON-lines training log.  Raises
    TrainingDivergedError on a non-finite loss.
    """
    torch.manual_seed(config.seed)
    embeddings = load_embeddings(config.embeddings_path) if config.feature_fusion else None
    train_ds = PairDataset(train_manifest, split="train", embeddings=embeddings)
    val_ds = PairDataset(val_manifest, split="val", embeddings=embeddings)
    val_groups = val_ds.groups()

    model = init_params(config, config.seed)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    rng = np.random.default_rng(config.seed)

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / LOG_NAME
    best_path = ckpt_dir / BEST_NAME

    best_value: float | None = None
    best_saved = False
    stale_validations = 0
    step = 0
    stop = False

    def emit(entry: dict):
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")
        if log_hook is not None:
            log_hook(entry)

    # truncate any previous log for this run
    open(log_path, "w", encoding="utf-8").close()
    emit({"type": "config", "train_config": asdict(config), "n_train": len(train_ds), "n_val": len(val_groups)})

    def validate() -> None:
        nonlocal best_value, best_saved, stale_validations, stop
        preds = predict_groups(model, val_ds, val_groups, aggregate=config.label_aggregate)
        report = evaluate_utterance(preds, val_groups, mode=config.mode)
        value = _validation_value(report, config.validation_metric)
        improved = value is not None and (best_value is None or value > best_value)
        if improved:
            best_value = value
            save_checkpoint(model, best_path, step, config)
            best_saved = True
            stale_validations = 0
        else:
            stale_validations += 1
        emit(
            {
                "type": "val",
                "step": step,
                "metric": config.validation_metric,
                "value": value,
                "best": improved,
                "report": report.to_dict(),
            }
        )
        if stale_validations >= config.patience:
            emit({"type": "early_stop", "step": step, "stale_validations": stale_validations})
            stop = True

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_ds.records))
        for start in range(0, len(order), config.batch_size):
            batch = [train_ds.records[i] for i in order[start : start + config.batch_size]]
            losses = [pair_loss(model.forward_pair(*train_ds.forward_args(r)), r.score, config.mode) for r in batch]
            loss = torch.stack(losses).mean()
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (epoch {epoch}, pairs "
                    f"{[r.pair_id for r in batch]})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            emit({"type": "step", "step": step, "epoch": epoch, "loss": float(loss.detach())})

            if config.target_train_loss is not None and step % config.eval_every_steps == 0:
                train_loss = _mean_loss(model, train_ds, train_ds.records, config.mode)
                emit({"type": "train_eval", "step": step, "train_loss": train_loss})
                if train_loss < config.target_train_loss:
                    emit({"type": "target_reached", "step": step, "train_loss": train_loss})
                    stop = True
            if step % config.eval_every_steps == 0 and not stop:
                validate()
            if config.max_steps is not None and step >= config.max_steps:
                stop = True
            if stop:
                break
        if stop:
            break

    if not stop or not best_saved:
        validate()
    if not best_saved:
        # no validation ever produced a defined metric; keep the final weights
        save_checkpoint(model, best_path, step, config)
        emit({"type": "fallback_checkpoint", "step": step})
    return Checkpoint(path=best_path, step=step, model_config=model.config, train_config=config)


PARAM_GROUPS = ("sinc", "conv", "recurrent", "head")


def _param_group(name: str) -> str:
    if name.endswith(("low_hz_param", "band_hz_param")):
        return "sinc"
    if "recurrent" in name:
        return "recurrent"
    if name.startswith("head."):
        return "head"
    return "conv"


GRAD_ERR_SMOOTHING = 1e-3  # treats sub-1e-6 absolute differences as numerically zero


def gradient_check(
    model: SvsNet,
    pair: tuple,
    epsilon: float = 1e-6,
    max_entries_per_group: int | None = 1500,
    seed: int = 0,
) -> dict[str, float]:
    """Max smoothed relative error between autograd and central differences.

    ``pair`` is (wave_test, wave_ref, target_score).  The model is copied to
    float64; the loss matches the configured training mode.  Every parameter
    group is probed; within a group, entries beyond the cap are subsampled
    deterministically.  Perturbations scale with the parameter magnitude so
    Hz-valued cutoffs and unit-scale weights are both probed sensibly.

    The loss surface is only piecewise smooth (ReLU, max-pool argmax), so an
    entry whose first difference disagrees is re-probed at smaller steps: a
    genuine gradient error persists as h shrinks, while a kink lying between
    the probe points drops out.  Returns one entry per group plus "max".
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    wave_test, wave_ref, target = pair
    m = copy.deepcopy(model).double()
    m.eval()

    def compute_loss() -> float:
        out = m.forward_pair(wave_test, wave_ref)
        return float(pair_loss(out, target, m.config.head_mode))

    loss = pair_loss(m.forward_pair(wave_test, wave_ref), target, m.config.head_mode)
    m.zero_grad()
    loss.backward()

    # flatten (tensor, entry) coordinates per group
    coords: dict[str, list[tuple[torch.Tensor, torch.Tensor, int]]] = {g: [] for g in PARAM_GROUPS}
    for name, p in m.named_parameters():
        grad = p.grad if p.grad is not None else torch.zeros_like(p)
        flat, gflat = p.data.view(-1), grad.reshape(-1)
        coords[_param_group(name)].extend((flat, gflat, i) for i in range(flat.numel()))

    def central_diff(flat: torch.Tensor, i: int, h: float) -> float:
        orig = float(flat[i])
        flat[i] = orig + h
        up = compute_loss()
        flat[i] = orig - h
        down = compute_loss()
        flat[i] = orig
        return (up - down) / (2.0 * h)

    def smoothed_err(a: float, n: float) -> float:
        return abs(a - n) / (abs(a) + abs(n) + GRAD_ERR_SMOOTHING)

    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for group, entries in coords.items():
            if max_entries_per_group is not None and len(entries) > max_entries_per_group:
                pick = rng.choice(len(entries), size=max_entries_per_group, replace=False)
                entries = [entries[i] for i in pick]
            worst = 0.0
            for flat, gflat, i in entries:
                a = float(gflat[i])
                h = epsilon * max(1.0, abs(float(flat[i])))
                err = smoothed_err(a, central_diff(flat, i, h))
                refinements = 0
                while err >= 1e-4 and refinements < 2:
                    h /= 10.0
                    err = min(err, smoothed_err(a, central_diff(flat, i, h)))
                    refinements += 1
                worst = max(worst, err)
            errors[group] = worst
    errors["max"] = max(errors[g] for g in PARAM_GROUPS)
    return errors
