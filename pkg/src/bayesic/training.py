"""Joint optimisation of the embedding autoencoder and the density cascade."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .arrival import ArrivalTimeModel, fit_arrival_kde
from .config import ModelConfig, TrainingConfig, config_hash
from .dataset import EmptyDatasetError, MobilityDataset
from .duration import DurationConfig, DurationModel
from .embedding import (EmbeddingConfig, EmbeddingModel, compute_agent_embeddings, pad_windows,
                        reconstruction_loss, zero_embeddings)
from .encoding import NormalizationStats, fit_normalization, sequence_features
from .poi import PoiConfig, PoiTypeModel, poi_nll_torch, step_tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class TrainingDivergedError(RuntimeError):
    pass


class CascadeNet(nn.Module):
    """The three trainable sub-models sharing K and the latent width."""

    def __init__(self, n_poi: int, cfg: ModelConfig):
        super().__init__()
        self.n_poi = n_poi
        self.embedder = EmbeddingModel(EmbeddingConfig(
            width=n_poi + 2, d_model=cfg.d_model, n_heads=cfg.n_heads, encoder_layers=cfg.encoder_layers,
            decoder_layers=cfg.decoder_layers, ff_dim=cfg.ff_dim, latent_dim=cfg.latent_dim, window=cfg.window))
        self.poi = PoiTypeModel(PoiConfig(n_poi, cfg.latent_dim, cfg.poi_hidden, cfg.poi_layers))
        self.duration = DurationModel(DurationConfig(
            n_poi, cfg.latent_dim, cfg.n_components, cfg.duration_d_model, cfg.duration_heads,
            cfg.duration_layers, cfg.duration_ff_dim, cfg.sigma_floor))

    @property
    def latent_dim(self) -> int:
        return self.embedder.cfg.latent_dim

    @property
    def window(self) -> int:
        return self.embedder.cfg.window


# ---------------------------------------------------------------------------
# windows and batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    body: torch.Tensor  # (B, L, K+2)
    mask: torch.Tensor  # (B, L) bool, True on real steps
    poi: torch.Tensor  # (B, L) long
    t_norm: torch.Tensor  # (B, L)
    d_norm: torch.Tensor  # (B, L)

    def __len__(self) -> int:
        return self.body.shape[0]

    @property
    def n_steps(self) -> int:
        return int(self.mask.sum())


@dataclass
class WindowSet:
    body: np.ndarray
    mask: np.ndarray
    poi: np.ndarray
    t_norm: np.ndarray
    d_norm: np.ndarray
    agent_ids: np.ndarray

    def __len__(self) -> int:
        return self.body.shape[0]

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(torch.as_tensor(self.body[idx]), torch.as_tensor(self.mask[idx]),
                     torch.as_tensor(self.poi[idx]), torch.as_tensor(self.t_norm[idx]),
                     torch.as_tensor(self.d_norm[idx]))


def build_windows(dataset: MobilityDataset, stats: NormalizationStats, window: int) -> WindowSet:
    """Cut every agent sequence into non-overlapping zero-padded windows."""
    parts = {k: [] for k in ("body", "mask", "poi", "t", "d", "aid")}
    for aid, seq in dataset.agents.items():
        if len(seq) == 0:
            continue
        f = sequence_features(seq.staypoints, stats)
        body, mask = pad_windows(f.body(stats.n_poi), window)
        for name, col in (("poi", f.poi), ("t", f.t_norm), ("d", f.d_norm)):
            arr, _ = pad_windows(col[:, None].astype(np.float64), window)
            parts[name].append(arr[..., 0])
        parts["body"].append(body)
        parts["mask"].append(mask)
        parts["aid"].append(np.full(body.shape[0], aid, dtype=np.int64))
    if not parts["body"]:
        raise EmptyDatasetError("no staypoints to window")
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return WindowSet(cat["body"], cat["mask"], cat["poi"].astype(np.int64), cat["t"], cat["d"], cat["aid"])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass
class LossParts:
    l_ae: torch.Tensor
    l_f: torch.Tensor
    l_total: torch.Tensor
    poi_sum_dev: float = 0.0
    weight_sum_dev: float = 0.0


def batch_embeddings(net: CascadeNet, batch: Batch, use_embedding: bool = True):
    """(h, reconstruction) for a batch; zeros and no reconstruction when embeddings are off."""
    if not use_embedding:
        return torch.zeros(len(batch), net.latent_dim, dtype=torch.float64), None
    return net.embedder(batch.body, batch.mask)


def step_nll(net: CascadeNet, batch: Batch, h: torch.Tensor, use_poi: bool = True,
             use_duration: bool = True):
    """Per-step (poi_nll, duration_nll) tensors of shape (B, L); disabled terms are zeros.

    Also returns the largest deviation of any softmax sum from 1.
    """
    zeros = torch.zeros_like(batch.t_norm)
    poi_term, dur_term = zeros, zeros
    poi_dev = weight_dev = 0.0
    if use_poi:
        steps = step_tensor(h, batch.t_norm, batch.poi, net.n_poi)
        logits, _ = net.poi(steps)
        poi_term = poi_nll_torch(logits, batch.poi)
        with torch.no_grad():
            s = torch.softmax(logits, dim=-1).sum(-1)[batch.mask]
            poi_dev = float((s - 1).abs().max()) if s.numel() else 0.0
    if use_duration:
        b, n = batch.t_norm.shape
        hh = h[:, None, :].expand(b, n, h.shape[-1]).reshape(b * n, -1)
        logits = net.duration.logits(hh, batch.t_norm.reshape(-1), batch.poi.reshape(-1))
        dur_term = net.duration.nll(logits, batch.d_norm.reshape(-1)).reshape(b, n)
        with torch.no_grad():
            s = torch.softmax(logits, dim=-1).sum(-1).reshape(b, n)[batch.mask]
            weight_dev = float((s - 1).abs().max()) if s.numel() else 0.0
    m = batch.mask.to(torch.float64)
    return poi_term * m, dur_term * m, poi_dev, weight_dev


def cascade_loss(net: CascadeNet, batch: Batch, h: torch.Tensor, use_poi: bool = True,
                 use_duration: bool = True) -> torch.Tensor:
    """-sum over real steps of [log P(c | t, h) + log P(d | c, t, h)]."""
    p, d, _, _ = step_nll(net, batch, h, use_poi, use_duration)
    return p.sum() + d.sum()


def total_loss(net: CascadeNet, batch: Batch, cfg: Optional[TrainingConfig] = None) -> LossParts:
    use_emb = cfg.use_embedding if cfg else True
    use_poi = cfg.use_poi if cfg else True
    use_dur = cfg.use_duration if cfg else True
    h, recon = batch_embeddings(net, batch, use_emb)
    if recon is None:
        l_ae = torch.zeros((), dtype=torch.float64)
    else:
        l_ae = reconstruction_loss(batch.body, recon, batch.mask)
    p, d, pdev, wdev = step_nll(net, batch, h, use_poi, use_dur)
    l_f = p.sum() + d.sum()
    ae_w = cfg.ae_weight if cfg else 1.0
    f_w = cfg.cascade_weight if cfg else 1.0
    return LossParts(l_ae, l_f, ae_w * l_ae + f_w * l_f, pdev, wdev)


# ---------------------------------------------------------------------------
# trained pipeline
# ---------------------------------------------------------------------------


@dataclass
class TrainedPipeline:
    config: TrainingConfig
    model_config: ModelConfig
    stats: NormalizationStats
    net: CascadeNet
    arrival: ArrivalTimeModel
    embeddings: dict[int, np.ndarray]
    history: list[dict] = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.net.latent_dim

    def embedding_for(self, agent_id: int) -> np.ndarray:
        h = self.embeddings.get(agent_id)
        return np.zeros(self.latent_dim) if h is None else h

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"format_version": np.array([CHECKPOINT_FORMAT])}
        for name, p in self.net.state_dict().items():
            out[f"param.{name}"] = p.detach().numpy().copy()
        out.update(self.arrival.to_arrays())
        ids = sorted(self.embeddings)
        out["emb.ids"] = np.array(ids, dtype=np.int64)
        out["emb.values"] = (np.stack([self.embeddings[a] for a in ids]) if ids
                             else np.zeros((0, self.latent_dim)))
        return out

    def digest(self) -> str:
        """SHA-256 over every stored array, in key order."""
        hsh = hashlib.sha256()
        for k, v in sorted(self.arrays().items()):
            hsh.update(k.encode())
            hsh.update(np.ascontiguousarray(v).tobytes())
        return hsh.hexdigest()

    def sidecar(self) -> dict:
        d = {"format_version": CHECKPOINT_FORMAT, "model": asdict(self.model_config),
             "training": asdict(self.config), "stats": self.stats.to_json()}
        d["config_hash"] = config_hash({"model": d["model"], "training": d["training"]})
        return d

    def save(self, path) -> tuple[Path, Path]:
        path = Path(path)
        with path.open("wb") as fh:
            np.savez(fh, **self.arrays())
        side = path.with_suffix(".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path, side

    @classmethod
    def load(cls, path) -> "TrainedPipeline":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        if meta.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
        model_cfg = ModelConfig(**meta["model"])
        train_cfg = TrainingConfig(**meta["training"])
        stats = NormalizationStats.from_json(meta["stats"])
        net = CascadeNet(stats.n_poi, model_cfg)
        state = {k[len("param."):]: torch.as_tensor(v) for k, v in arrays.items() if k.startswith("param.")}
        net.load_state_dict(state)
        emb = {int(a): arrays["emb.values"][i].copy() for i, a in enumerate(arrays["emb.ids"])}
        return cls(train_cfg, model_cfg, stats, net, ArrivalTimeModel.from_arrays(arrays), emb)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _scalar(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def _check_finite(parts: LossParts, epoch: int, step: int):
    vals = (_scalar(parts.l_ae), _scalar(parts.l_f), _scalar(parts.l_total))
    if not all(math.isfinite(v) for v in vals):
        raise TrainingDivergedError(
            f"non-finite loss at epoch {epoch} batch {step}: L_ae={vals[0]} L_f={vals[1]} L_total={vals[2]}")


def train(
    train_set: MobilityDataset,
    config: TrainingConfig,
    model_config: Optional[ModelConfig] = None,
    on_record: Optional[Callable[[dict], None]] = None,
) -> TrainedPipeline:
    """Fit normalisation, optimise the networks on L_total, fit arrival KDEs,
    then freeze and compute per-agent embeddings.

    Every batch and every epoch produces a record (``kind`` = ``batch`` or
    ``epoch``) that is appended to the pipeline history and passed to
    ``on_record``.
    """
    if len(train_set) == 0:
        raise EmptyDatasetError("training set is empty")
    model_config = model_config or ModelConfig()
    if config.threads > 0:
        torch.set_num_threads(config.threads)
    stats = fit_normalization(train_set, config.week_anchor)
    windows = build_windows(train_set, stats, model_config.window)

    torch.manual_seed(config.seed)
    net = CascadeNet(stats.n_poi, model_config)
    net.duration.init_components(windows.d_norm[windows.mask])
    rng = np.random.default_rng(config.seed)
    history: list[dict] = []

    def emit(rec):
        history.append(rec)
        if on_record is not None:
            on_record(rec)

    def run_epochs(n_epochs, params, epoch_offset, step_cfg, phase):
        opt = torch.optim.Adam(params, lr=config.learning_rate, betas=(config.beta1, config.beta2),
                               weight_decay=config.weight_decay)
        for epoch in range(epoch_offset, epoch_offset + n_epochs):
            order = rng.permutation(len(windows))
            sums = np.zeros(3)
            for step, start in enumerate(range(0, len(order), config.batch_size)):
                batch = windows.batch(order[start:start + config.batch_size])
                parts = step_cfg(batch)
                _check_finite(parts, epoch, step)
                opt.zero_grad()
                parts.l_total.backward()
                opt.step()
                rec = {"kind": "batch", "phase": phase, "epoch": epoch, "batch": step,
                       "L_ae": _scalar(parts.l_ae), "L_f": _scalar(parts.l_f),
                       "L_total": _scalar(parts.l_total),
                       "n_steps": batch.n_steps, "poi_softmax_dev": parts.poi_sum_dev,
                       "mixture_softmax_dev": parts.weight_sum_dev}
                emit(rec)
                sums += (rec["L_ae"], rec["L_f"], rec["L_total"])
            n_batches = math.ceil(len(order) / config.batch_size)
            mean = sums / n_batches
            emit({"kind": "epoch", "phase": phase, "epoch": epoch, "L_ae": mean[0], "L_f": mean[1],
                  "L_total": mean[2]})
            log.info("epoch %d: L_ae=%.5f L_f=%.3f L_total=%.3f", epoch, *mean)

    if config.staged and config.use_embedding:
        ae_only = TrainingConfig(**{**asdict(config), "use_poi": False, "use_duration": False})
        run_epochs(config.staged_ae_epochs, net.embedder.parameters(), 0,
                   lambda b: total_loss(net, b, ae_only), "autoencoder")
        for p in net.embedder.parameters():
            p.requires_grad_(False)
        cascade_params = list(net.poi.parameters()) + list(net.duration.parameters())
        run_epochs(config.epochs, cascade_params, config.staged_ae_epochs,
                   lambda b: _frozen_h_loss(net, b, config), "cascade")
        for p in net.embedder.parameters():
            p.requires_grad_(True)
    else:
        run_epochs(config.epochs, net.parameters(), 0, lambda b: total_loss(net, b, config), "joint")

    arrival = fit_arrival_kde(train_set, config.week_anchor)
    if config.use_embedding:
        embeddings = compute_agent_embeddings(net.embedder, train_set, stats)
    else:
        embeddings = zero_embeddings(train_set.agents, model_config.latent_dim)
    return TrainedPipeline(config, model_config, stats, net, arrival, embeddings, history)


def _frozen_h_loss(net: CascadeNet, batch: Batch, cfg: TrainingConfig) -> LossParts:
    with torch.no_grad():
        h, recon = net.embedder(batch.body, batch.mask)
        l_ae = reconstruction_loss(batch.body, recon, batch.mask)
    p, d, pdev, wdev = step_nll(net, batch, h, cfg.use_poi, cfg.use_duration)
    l_f = p.sum() + d.sum()
    return LossParts(l_ae, l_f, cfg.ae_weight * l_ae + cfg.cascade_weight * l_f, pdev, wdev)


def write_training_log(history: list[dict], path) -> None:
    with Path(path).open("w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
