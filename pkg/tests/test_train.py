"""
Train service tests - Adam, determinism, checkpoints and the training log
"""
import csv

import numpy as np
import pytest

from inode_lab.core.exceptions import ConfigError, DataMismatchError, FormatError, ShapeError, TrainingError
from inode_lab.models.checkpoint import load_checkpoint, save_checkpoint
from inode_lab.models.dataset import Dataset
from inode_lab.schemas.dataset import GenConfig
from inode_lab.schemas.model import VariantConfig
from inode_lab.schemas.solver import TimeGrid
from inode_lab.schemas.training import TrainConfig
from inode_lab.services.datagen_service import gen_sinusoid, gen_sinusoid_with_content, generate_splits
from inode_lab.services.train_service import (
    BEST_CHECKPOINT,
    LAST_CHECKPOINT,
    LOG_COLUMNS,
    TRAINING_LOG,
    AdamState,
    TrainService,
    adam_step,
    batch_order,
    kl_weight,
)


@pytest.fixture
def splits(small_gen: GenConfig):
    return generate_splits("sinusoid", small_gen)


def _read_log(path):
    with path.open(newline="") as fh:
        return list(csv.reader(fh))


class TestAdam:
    """Bias-corrected Adam updates"""

    def test_first_steps(self):
        cfg = TrainConfig(lr=0.1)
        params, state = np.zeros(1), AdamState.zeros(1)
        params, state = adam_step(params, np.ones(1), state, cfg)
        assert params[0] == pytest.approx(-0.1, rel=1e-6)
        params, state = adam_step(params, np.ones(1), state, cfg)
        assert params[0] == pytest.approx(-0.2, rel=1e-6)
        assert state.t == 2

    def test_step_size_is_scale_free(self):
        cfg = TrainConfig(lr=0.01)
        small, _ = adam_step(np.zeros(2), np.array([1e-3, -1e3]), AdamState.zeros(2), cfg)
        np.testing.assert_allclose(small, [-0.01, 0.01], rtol=1e-4)

    def test_non_finite_gradient(self):
        with pytest.raises(TrainingError) as excinfo:
            adam_step(np.zeros(2), np.array([1.0, np.nan]), AdamState.zeros(2), TrainConfig())
        assert excinfo.value.step == 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.zeros(2), TrainConfig())


class TestSchedules:
    """Batch order and KL warm-up"""

    def test_batch_order_is_a_permutation(self):
        order = batch_order(3, 0, 10)
        assert sorted(order) == list(range(10))
        np.testing.assert_array_equal(order, batch_order(3, 0, 10))
        assert not np.array_equal(order, batch_order(3, 1, 10))

    def test_kl_warmup(self):
        assert kl_weight(0, 0) == 1.0
        assert kl_weight(0, 4) == pytest.approx(0.25)
        assert kl_weight(3, 4) == 1.0
        assert kl_weight(10, 4) == 1.0


class TestTraining:
    """End-to-end training on a few short sequences"""

    def test_bit_identical_checkpoints(self, tmp_path, tiny_variant, fast_train, splits):
        for name in ("a", "b"):
            TrainService(fast_train).train(tiny_variant, splits["train"], splits["val"], tmp_path / name)
        for name in (BEST_CHECKPOINT, LAST_CHECKPOINT, TRAINING_LOG):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_log_columns_and_rows(self, tmp_path, tiny_variant, fast_train, splits):
        result = TrainService(fast_train).train(tiny_variant, splits["train"], splits["val"], tmp_path)
        rows = _read_log(result.log_path)
        assert tuple(rows[0]) == LOG_COLUMNS
        assert len(rows) - 1 == result.steps == 4
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]
        assert [r[-1] != "" for r in rows[1:]] == [False, True, False, True]

    def test_best_checkpoint_has_lowest_validation(self, tmp_path, tiny_variant, splits):
        cfg = TrainConfig(batch_size=3, max_epochs=3, seed=1)
        result = TrainService(cfg).train(tiny_variant, splits["train"], splits["val"], tmp_path)
        logged = [float(r[-1]) for r in _read_log(result.log_path)[1:] if r[-1]]
        best = load_checkpoint(result.checkpoint_path)
        assert best.val_mse == pytest.approx(min(logged))
        assert result.best_val_mse == pytest.approx(min(logged))
        assert best.epoch == result.best_epoch

    def test_max_steps(self, tmp_path, tiny_variant, splits):
        cfg = TrainConfig(batch_size=3, max_epochs=10, max_steps=3, seed=0)
        result = TrainService(cfg).train(tiny_variant, splits["train"], splits["val"], tmp_path)
        assert result.steps == 3
        assert result.epochs == 1
        last = load_checkpoint(tmp_path / LAST_CHECKPOINT)
        assert (last.step, last.epoch, last.batch_offset) == (3, 1, 1)

    def test_resume_after_step_cap_matches_uninterrupted_run(self, tmp_path, tiny_variant, splits):
        """A run cut off mid-epoch continues with the batches it had not seen"""
        full = TrainConfig(batch_size=3, max_epochs=2, seed=2)
        capped = full.model_copy(update={"max_steps": 3})
        TrainService(full).train(tiny_variant, splits["train"], splits["val"], tmp_path / "straight")
        TrainService(capped).train(tiny_variant, splits["train"], splits["val"], tmp_path / "resumed")
        result = TrainService(full).train(tiny_variant, splits["train"], splits["val"], tmp_path / "resumed", resume=True)

        assert (result.steps, result.epochs) == (4, 2)
        straight = load_checkpoint(tmp_path / "straight" / LAST_CHECKPOINT)
        resumed = load_checkpoint(tmp_path / "resumed" / LAST_CHECKPOINT)
        assert (resumed.step, resumed.epoch, resumed.batch_offset) == (4, 2, 0)
        np.testing.assert_array_equal(resumed.params.vector, straight.params.vector)
        np.testing.assert_array_equal(resumed.adam_v, straight.adam_v)
        rows = _read_log(tmp_path / "resumed" / TRAINING_LOG)
        assert rows == _read_log(tmp_path / "straight" / TRAINING_LOG)

    def test_patience_without_finite_validation(self, tmp_path, tiny_variant, splits, monkeypatch):
        from inode_lab.services import train_service

        monkeypatch.setattr(train_service, "validation_mse", lambda *args: float("inf"))
        cfg = TrainConfig(batch_size=3, max_epochs=10, patience=2, seed=0)
        result = TrainService(cfg).train(tiny_variant, splits["train"], splits["val"], tmp_path)
        assert result.stopped_early
        assert (result.epochs, result.steps) == (2, 4)
        assert result.best_val_mse == float("inf")
        assert result.checkpoint_path.is_file()

    def test_resume_matches_uninterrupted_run(self, tmp_path, tiny_variant, splits):
        one = TrainConfig(batch_size=3, max_epochs=1, seed=2)
        two = one.model_copy(update={"max_epochs": 2})
        TrainService(two).train(tiny_variant, splits["train"], splits["val"], tmp_path / "straight")
        TrainService(one).train(tiny_variant, splits["train"], splits["val"], tmp_path / "resumed")
        result = TrainService(two).train(tiny_variant, splits["train"], splits["val"], tmp_path / "resumed", resume=True)

        assert result.steps == 4
        straight = load_checkpoint(tmp_path / "straight" / LAST_CHECKPOINT)
        resumed = load_checkpoint(tmp_path / "resumed" / LAST_CHECKPOINT)
        assert resumed.step == straight.step == 4
        np.testing.assert_array_equal(resumed.params.vector, straight.params.vector)
        rows = _read_log(tmp_path / "resumed" / TRAINING_LOG)
        assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]

    def test_sinode_without_ssl_equals_inode(self, tmp_path, tiny_variant, fast_train, splits):
        inode_run = TrainService(fast_train).train(tiny_variant, splits["train"], splits["val"], tmp_path / "inode")
        no_ssl = fast_train.model_copy(update={"lam": 0.0})
        sinode_run = TrainService(no_ssl).train(
            tiny_variant.for_variant("sinode"), splits["train"], splits["val"], tmp_path / "sinode"
        )
        inode = load_checkpoint(tmp_path / "inode" / BEST_CHECKPOINT)
        sinode = load_checkpoint(tmp_path / "sinode" / BEST_CHECKPOINT)
        np.testing.assert_array_equal(inode.params.vector, sinode.params.vector)
        assert sinode_run.history == inode_run.history
        assert (tmp_path / "sinode" / TRAINING_LOG).read_bytes() == (tmp_path / "inode" / TRAINING_LOG).read_bytes()

    def test_sinode_logs_ssl(self, tmp_path, tiny_variant, fast_train, splits):
        cfg = fast_train.model_copy(update={"lam": 1.0, "ssl_max_pairs": 4})
        result = TrainService(cfg).train(
            tiny_variant.for_variant("sinode"), splits["train"], splits["val"], tmp_path
        )
        ssl = [float(r[5]) for r in _read_log(result.log_path)[1:]]
        assert all(-1.0 <= s <= 1.0 for s in ssl)
        assert any(s != 0.0 for s in ssl)

    def test_node_and_content_variants_train(self, tmp_path, fast_train, small_gen):
        node = VariantConfig(variant="node", q_x=2, q_c=2, t_in=3, t_inv=6, hidden=4, ode_layers=1)
        splits = generate_splits("sinusoid", small_gen)
        result = TrainService(fast_train).train(node, splits["train"], splits["val"], tmp_path / "node")
        assert np.isfinite(result.best_val_mse)

        content = VariantConfig(variant="inode", pathways="content", q_x=2, q_c=2, t_in=3, t_inv=6, hidden=4)
        train = gen_sinusoid_with_content(small_gen, "train")
        val = gen_sinusoid_with_content(small_gen, "val")
        result = TrainService(fast_train).train(content, train, val, tmp_path / "content")
        assert load_checkpoint(result.checkpoint_path).data_dim == 2

    def test_dimension_mismatch(self, tmp_path, tiny_variant, fast_train, small_gen):
        with pytest.raises(DataMismatchError):
            TrainService(fast_train).train(
                tiny_variant, gen_sinusoid(small_gen, "train"), gen_sinusoid_with_content(small_gen, "val"), tmp_path
            )

    def test_sequences_shorter_than_context(self, tmp_path, fast_train, splits):
        cfg = VariantConfig(variant="inode", t_in=3, t_inv=20, hidden=4)
        with pytest.raises(ConfigError) as excinfo:
            TrainService(fast_train).train(cfg, splits["train"], splits["val"], tmp_path)
        assert excinfo.value.field == "model.t_inv"

    def test_resume_with_other_model(self, tmp_path, tiny_variant, fast_train, splits):
        TrainService(fast_train).train(tiny_variant, splits["train"], splits["val"], tmp_path)
        other = tiny_variant.model_copy(update={"hidden": 6})
        with pytest.raises(DataMismatchError):
            TrainService(fast_train).train(other, splits["train"], splits["val"], tmp_path, resume=True)


class TestCheckpoint:
    """Checkpoint container files"""

    def test_layout_mismatch(self, tmp_path, tiny_variant, fast_train, splits):
        TrainService(fast_train).train(tiny_variant, splits["train"], splits["val"], tmp_path)
        ckpt = load_checkpoint(tmp_path / BEST_CHECKPOINT)
        ckpt.model_cfg = ckpt.model_cfg.model_copy(update={"hidden": 7})
        save_checkpoint(ckpt, tmp_path / "broken.inode")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "broken.inode")


@pytest.mark.slow
class TestOverfit:
    """One noiseless constant sequence is learned almost exactly"""

    def test_constant_sequence(self, tmp_path, tiny_variant):
        ds = Dataset(
            name="constant",
            observations=np.full((1, 12, 1), 0.5),
            grid=TimeGrid(dt=0.1, n_points=12),
            true_params=np.zeros((1, 1)),
            param_names=("level",),
            noise_sigma=0.0,
            split="train",
            seed=0,
        )
        cfg = TrainConfig(batch_size=1, max_epochs=2000, max_steps=2000, patience=2000, lr=0.005, seed=0)
        result = TrainService(cfg).train(tiny_variant, ds, ds, tmp_path)

        assert result.steps <= 2000
        assert result.best_val_mse < 1e-3
        loss = -np.array([float(row["total"]) for row in result.history])
        smoothed = np.convolve(loss, np.ones(20) / 20, mode="valid")
        assert smoothed[-1] < smoothed[len(smoothed) // 2] < smoothed[0]
