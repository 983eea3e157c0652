import numpy as np
import pytest

from sparseodt.losses import LossParams
from sparseodt.model import ASBA, ModelConfig
from sparseodt.odtio import read_checkpoint
from sparseodt.phantom import PhantomTemplate, gen_dataset
from sparseodt.train import (
    LOSS_CSV_HEADER,
    TrainConfig,
    config_from_checkpoint,
    load_checkpoint,
    loss_csv,
    make_batch,
    model_tensors,
    prepare,
    train,
    traditional_sparse,
)

TINY = ModelConfig(n_groups=1, layers=1, channels=4, delta=4, state=2, heads=2)
SMALL = PhantomTemplate(depth=16, width=16, radius_z=(2, 4), radius_x=(3, 5), vessel_count=(1, 2))


@pytest.fixture(scope="module")
def data():
    return [prepare(s.raw, s.gt_flow) for s in gen_dataset(SMALL, 3, seed=0)]


def cfg(**kw):
    base = dict(iterations=4, batch_size=2, patch_depth=16, patch_width=8, seed=5)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_iterations_checkpoint_is_init(data, tmp_path):
    path = tmp_path / "init.ckpt"
    model, curve = train(data, TINY, cfg(iterations=0), checkpoint_path=path)
    assert curve == []
    tensors = read_checkpoint(path)
    assert config_from_checkpoint(tensors) == TINY
    init = ASBA(TINY, seed=5).state_dict()
    saved = model_tensors(tensors)
    assert set(saved) == set(init)
    for k in init:
        assert saved[k].tobytes() == init[k].tobytes()


def test_fixed_seed_is_deterministic(data, tmp_path):
    _, a = train(data, TINY, cfg(), checkpoint_path=tmp_path / "a")
    _, b = train(data, TINY, cfg(), checkpoint_path=tmp_path / "b")
    assert loss_csv(a) == loss_csv(b)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    _, c = train(data, TINY, cfg(seed=6))
    assert loss_csv(c) != loss_csv(a)


def test_resume_continues_the_same_trajectory(data, tmp_path):
    full = tmp_path / "full"
    _, curve = train(data, TINY, cfg(iterations=6, checkpoint_every=3), checkpoint_path=full)
    resumed = tmp_path / "resumed"
    _, tail = train(data, TINY, cfg(iterations=6), resume=f"{full}.iter3", checkpoint_path=resumed)
    assert [r["iteration"] for r in tail] == [3, 4, 5]
    assert loss_csv(tail) == loss_csv(curve[3:])
    assert full.read_bytes() == resumed.read_bytes()
    model, opt = load_checkpoint(full)
    assert opt.state["step"] == 6


def test_resume_rejects_other_config(data, tmp_path):
    path = tmp_path / "x"
    train(data, TINY, cfg(iterations=1), checkpoint_path=path)
    with pytest.raises(ValueError):
        train(data, ModelConfig(**{**TINY.to_dict(), "channels": 6, "heads": 3}), cfg(), resume=path)


def test_batches_are_aligned_and_reproducible(data):
    a = make_batch(data, 4, cfg(), 7)
    b = make_batch(data, 4, cfg(), 7)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()
    ms, ps, ys, md, pdense = a
    assert ms.shape == (2, 1, 16, 2) and md.shape == (2, 1, 16, 8)
    # sparse inputs are exactly the kept columns of the dense targets
    assert np.array_equal(ms, md[..., ::4])
    assert np.array_equal(ps, pdense[..., ::4])


def test_loss_csv_format():
    text = loss_csv([{"iteration": 0, "lr": 2e-4, "L": 1.5, "L_Y": 1.0, "L_M": 0.5, "L_P": 0.5}])
    lines = text.splitlines()
    assert lines[0] == ",".join(LOSS_CSV_HEADER)
    assert lines[1] == "0,0.0002,1.5,1.0,0.5,0.5"


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr_init=1e-6, lr_min=1e-4)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochs": 3})
    with pytest.raises(ValueError):
        train([], TINY, cfg())


def test_traditional_sparse_fills_to_full_width(data):
    out = traditional_sparse(data[0], 4)
    assert out.shape == data[0].M.shape
    assert np.array_equal(out[:, 0:4], np.repeat(out[:, :1], 4, axis=1))


def _moving_average(x, n):
    return np.convolve(x, np.ones(n) / n, mode="valid")


@pytest.mark.slow
def test_single_sample_overfit():
    t = PhantomTemplate(depth=16, width=16, vessel_count=(1, 2), radius_z=(3, 5), radius_x=(4, 7), noise_sigma=0.0)
    sample = gen_dataset(t, 1, seed=0)[0]
    data = [prepare(sample.raw, sample.gt_flow)]
    model_cfg = ModelConfig(n_groups=1, layers=1, channels=8, delta=1, state=4, heads=2)
    tc = TrainConfig(iterations=500, batch_size=1, lr_init=5e-3, lr_min=5e-5, patch_depth=16, patch_width=16)
    _, curve = train(data, model_cfg, tc, LossParams(), progress_every=0)
    losses = np.array([r["L"] for r in curve])
    assert losses[10] / losses[-1] >= 10
    avg = _moving_average(losses, 50)
    # iteration index of avg[j] is its window end j + 49; check windows ending after 100
    tail = avg[100 - 49 :]
    assert np.all(np.diff(tail) <= 1e-12), np.max(np.diff(tail))
