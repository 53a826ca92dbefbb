import json

import numpy as np
import pytest

from valuedecomp import checkpoint, training
from valuedecomp.config import load_config
from valuedecomp.sacd import NonFiniteLossError

SMOKE = "configs/smoke.yaml"


@pytest.fixture(scope="module")
def smoke_config(request):
    return load_config(request.config.rootpath / SMOKE)


def test_zero_step_run(tmp_path, smoke_config):
    cfg = smoke_config.replace(training={**smoke_config.training, "total_gradient_steps": 0})
    result = training.train(cfg, tmp_path)
    assert result.records == []
    assert sorted(p.name for p in tmp_path.iterdir()) == ["checkpoints", "config.yaml"]
    assert [p.name for p in (tmp_path / "checkpoints").iterdir()] == ["ckpt_00000000.bin"]


def test_smoke_run_artifacts(tmp_path, smoke_config):
    result = training.train(smoke_config, tmp_path)
    recs = training.read_metrics(tmp_path / training.METRICS_FILE)
    assert [r["step"] for r in recs] == [20, 40, 60]
    assert recs == result.records
    for r in recs:
        assert set(r["critic_loss"]) == {"forward", "control", "failure", "entropy"}
        assert abs(sum(r["cagrad_weight"].values()) - 1) < 1e-9
        assert r["influence_count"] <= 8
    # the failure weight follows its schedule
    w = [r["weights"]["failure"] for r in recs]
    assert w == sorted(w) and w[0] < 1
    ckpts = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert ckpts == ["ckpt_00000000.bin", "ckpt_00000030.bin", "ckpt_00000060.bin"]
    state, cfg = checkpoint.load(tmp_path / "checkpoints" / ckpts[-1])
    assert state.step == 60 and cfg.hash() == smoke_config.hash()
    timing = training.read_metrics(tmp_path / training.TIMING_FILE)
    assert [t["step"] for t in timing] == [20, 40, 60]


def test_records_survive_json_round_trip(tmp_path, smoke_config):
    training.train(smoke_config, tmp_path)
    for line in (tmp_path / training.METRICS_FILE).read_text().splitlines():
        rec = json.loads(line)
        assert json.loads(json.dumps(rec, sort_keys=True)) == rec


def test_rerun_from_snapshot_is_bit_identical(tmp_path, smoke_config):
    training.train(smoke_config, tmp_path / "a")
    snap = load_config(tmp_path / "a" / training.CONFIG_FILE)
    training.train(snap, tmp_path / "b")
    a = (tmp_path / "a" / training.METRICS_FILE).read_bytes()
    assert a == (tmp_path / "b" / training.METRICS_FILE).read_bytes()


def test_seed_changes_the_run(smoke_config):
    a = training.train(smoke_config).records
    b = training.train(smoke_config.replace(seed=smoke_config.seed + 1)).records
    assert a[-1]["critic_loss"] != b[-1]["critic_loss"]


def test_non_finite_loss_keeps_partial_artifacts(tmp_path, smoke_config, monkeypatch):
    real = training.update_step

    def flaky(state, batch, rng):
        if state.step == 25:
            raise NonFiniteLossError("failure", state.step)
        return real(state, batch, rng)

    monkeypatch.setattr(training, "update_step", flaky)
    with pytest.raises(NonFiniteLossError, match="failure"):
        training.train(smoke_config, tmp_path)
    assert len(training.read_metrics(tmp_path / training.METRICS_FILE)) == 1
    assert (tmp_path / "checkpoints" / "ckpt_00000025.bin").exists()


def test_eval_returns_composite_column():
    from valuedecomp.envs import Episode

    ep = Episode(np.zeros((3, 1)), np.zeros((2, 1)), np.array([[1.0, 2.0], [3.0, -1.0]]), True, False)
    table = training.eval_returns([ep], np.array([0.5, 2.0]))
    assert table.tolist() == [[4.0, 1.0, 4.0]]


def test_streams_are_independent_and_reproducible():
    a, b = training.Streams(7), training.Streams(7)
    assert a.env.integers(1 << 30) == b.env.integers(1 << 30)
    c = training.Streams(7)
    assert c.env.integers(1 << 30) != c.noise.integers(1 << 30)
