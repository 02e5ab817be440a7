import math

import numpy as np
import pytest
import torch
from conftest import TINY_MODEL

from bayesic.config import TrainingConfig
from bayesic.dataset import EmptyDatasetError, build_dataset
from bayesic.duration import GaussianMixture, duration_nll
from bayesic.embedding import reconstruction_loss
from bayesic.encoding import fit_normalization
from bayesic.poi import poi_nll, softmax_np
from bayesic.training import (CascadeNet, TrainedPipeline, batch_embeddings, build_windows, cascade_loss,
                              step_nll, total_loss, train, write_training_log)


@pytest.fixture(scope="module")
def net_and_batch(small_data):
    tr, _ = small_data
    stats = fit_normalization(tr)
    windows = build_windows(tr, stats, TINY_MODEL.window)
    torch.manual_seed(0)
    net = CascadeNet(stats.n_poi, TINY_MODEL)
    net.duration.init_components(windows.d_norm[windows.mask])
    return net, windows.batch(np.arange(4))


def test_windows_cover_every_staypoint(small_data):
    tr, _ = small_data
    w = build_windows(tr, fit_normalization(tr), 16)
    assert int(w.mask.sum()) == len(tr)
    assert w.body.shape[1:] == (16, len(tr.poi_vocabulary) + 2)


def test_cascade_loss_is_term_by_term_sum(net_and_batch):
    """Recompute every step through the standalone poi / duration ops."""
    net, batch = net_and_batch
    with torch.no_grad():
        h, _ = batch_embeddings(net, batch)
        got = float(cascade_loss(net, batch, h))
        from bayesic.poi import step_tensor
        logits, _ = net.poi(step_tensor(h, batch.t_norm, batch.poi, net.n_poi))
        expected = 0.0
        for b in range(len(batch)):
            for i in range(batch.t_norm.shape[1]):
                if not batch.mask[b, i]:
                    continue
                c = int(batch.poi[b, i])
                expected += poi_nll(softmax_np(logits[b, i].numpy()), c)
                d_logits = net.duration.logits(h[b:b + 1], batch.t_norm[b, i:i + 1], batch.poi[b, i:i + 1])
                gm = GaussianMixture(softmax_np(d_logits[0].numpy()), net.duration.mu.numpy(),
                                     net.duration.stds().numpy())
                expected += duration_nll(gm, float(batch.d_norm[b, i]))
    assert got == pytest.approx(expected, rel=1e-10)


def test_total_is_exact_sum(net_and_batch):
    net, batch = net_and_batch
    with torch.no_grad():
        parts = total_loss(net, batch)
        h, recon = batch_embeddings(net, batch)
    assert float(parts.l_total) == float(parts.l_ae) + float(parts.l_f)
    assert float(parts.l_ae) == float(reconstruction_loss(batch.body, recon, batch.mask))


def test_no_embedding_total_is_cascade_with_zero_h(net_and_batch):
    net, batch = net_and_batch
    with torch.no_grad():
        parts = total_loss(net, batch, TrainingConfig(seed=0, use_embedding=False))
        zero_h = torch.zeros(len(batch), net.latent_dim, dtype=torch.float64)
        assert float(parts.l_ae) == 0.0
        assert float(parts.l_total) == float(cascade_loss(net, batch, zero_h))


def test_disabled_terms_are_omitted(net_and_batch):
    net, batch = net_and_batch
    with torch.no_grad():
        h, _ = batch_embeddings(net, batch)
        p, d, _, _ = step_nll(net, batch, h, use_poi=False)
    assert float(p.abs().sum()) == 0.0 and float(d.sum()) != 0.0
    with torch.no_grad():
        p, d, _, _ = step_nll(net, batch, h, use_duration=False)
    assert float(d.abs().sum()) == 0.0


def test_padding_does_not_contribute(net_and_batch):
    net, batch = net_and_batch
    h, _ = batch_embeddings(net, batch)
    p, d, _, _ = step_nll(net, batch, h)
    assert float((p + d).detach()[~batch.mask].abs().sum()) == 0.0


def test_training_logs_and_additivity(tiny_pipeline):
    batches = [r for r in tiny_pipeline.history if r["kind"] == "batch"]
    epochs = [r for r in tiny_pipeline.history if r["kind"] == "epoch"]
    assert len(epochs) == 2 and batches
    for r in batches:
        assert r["L_total"] == r["L_ae"] + r["L_f"]
        assert r["poi_softmax_dev"] < 1e-6 and r["mixture_softmax_dev"] < 1e-6


def test_loss_decreases(small_data):
    tr, _ = small_data
    p = train(tr, TrainingConfig(seed=1, epochs=6, batch_size=8), TINY_MODEL)
    ep = [r["L_total"] for r in p.history if r["kind"] == "epoch"]
    assert ep[-1] < ep[0]


def test_same_seed_identical_checkpoints(small_data, tiny_pipeline):
    tr, _ = small_data
    again = train(tr, TrainingConfig(seed=5, epochs=2, batch_size=8), TINY_MODEL)
    assert again.digest() == tiny_pipeline.digest()


def test_use_poi_false_leaves_poi_model_untrained(small_data):
    tr, _ = small_data
    torch.manual_seed(9)
    fresh = CascadeNet(len(tr.poi_vocabulary), TINY_MODEL)
    p = train(tr, TrainingConfig(seed=9, epochs=1, batch_size=8, use_poi=False), TINY_MODEL)
    for a, b in zip(fresh.poi.parameters(), p.net.poi.parameters()):
        assert torch.equal(a, b)


def test_no_embedding_run_stores_zero_embeddings(small_data):
    tr, _ = small_data
    p = train(tr, TrainingConfig(seed=2, epochs=1, batch_size=8, use_embedding=False), TINY_MODEL)
    assert all(not v.any() for v in p.embeddings.values())
    assert all(r["L_ae"] == 0.0 for r in p.history)


def test_staged_training_runs(small_data):
    tr, _ = small_data
    p = train(tr, TrainingConfig(seed=2, epochs=1, batch_size=8, staged=True, staged_ae_epochs=1), TINY_MODEL)
    assert [r["phase"] for r in p.history if r["kind"] == "epoch"] == ["autoencoder", "cascade"]


def test_checkpoint_round_trip(tmp_path, tiny_pipeline):
    ck, side = tiny_pipeline.save(tmp_path / "ck.npz")
    assert side.exists()
    loaded = TrainedPipeline.load(ck)
    assert loaded.digest() == tiny_pipeline.digest()
    assert loaded.stats == tiny_pipeline.stats


def test_empty_training_set_rejected():
    with pytest.raises(EmptyDatasetError):
        train(build_dataset([]), TrainingConfig(seed=0))


def test_divergence_aborts(small_data):
    from bayesic.training import TrainingDivergedError
    tr, _ = small_data
    with pytest.raises(TrainingDivergedError, match="non-finite"):
        train(tr, TrainingConfig(seed=0, epochs=1, learning_rate=math.inf), TINY_MODEL)


def test_training_log_written(tmp_path, tiny_pipeline):
    write_training_log(tiny_pipeline.history, tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == len(tiny_pipeline.history)
