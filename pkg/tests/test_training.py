import json
import os

import numpy as np
import pytest

from ChannelGating.Analytics import classify_gates
from ChannelGating.Analytics.constants import CONDITIONAL
from ChannelGating.Datasets import DatasetSource, synthetic_conditional_dataset
from ChannelGating.Losses import PriorSpec, ShapingConfig, network_shaping_loss
from ChannelGating.Networks import NetworkConfig, build_network
from ChannelGating.Tensors import Functional as F
from ChannelGating.Tensors import Tensor, backward
from ChannelGating.Training import (
    ConfigError,
    ExperimentConfig,
    NesterovSGD,
    NonFiniteLossError,
    Trainer,
    TrainSchedule,
    dump_config,
    evaluate,
    gamma_grid,
    gamma_point,
    is_gating_parameter,
    learning_rate,
    load_config,
    loss_coefficients,
    parse_config,
    schedule_table,
    train_step,
)
from ChannelGating.Training.constants import CHECKPOINT_PATTERN, FAILURE_DUMP_FILE, METRICS_FILE


@pytest.fixture
def small_config():
    return NetworkConfig(widths=(4, 8), blocks=(1, 1), resolution=32, classes=4)


@pytest.fixture
def small_data():
    train = synthetic_conditional_dataset(0, 32, 4)
    test = synthetic_conditional_dataset(1, 16, 4, stats_from=train)
    return train, test


@pytest.fixture
def short_schedule():
    return TrainSchedule(
        epochs=2,
        batch_size=8,
        bs_lambda_start=0.75,
        bs_anneal_end_epoch=1,
        l0_start_epoch=1,
        l0_rampup_end_epoch=2,
        l0_gamma_final=0.05,
    )


class TestSchedule:
    @pytest.mark.parametrize(
        "epoch,lam,gamma,lr",
        [
            (0, 0.75, 0.0, 0.1),
            (50, 0.375, 0.0, 0.1),
            (100, 0.0, 0.0, 0.1),
            (200, 0.0, 0.025, 0.1),
            (300, 0.0, 0.05, 0.01),
            (499, 0.0, 0.05, 1e-4),
        ],
    )
    def test_cifar_full_epoch_values(self, epoch, lam, gamma, lr):
        schedule = TrainSchedule.preset("cifar-full")
        assert loss_coefficients(schedule, epoch) == pytest.approx((lam, gamma))
        assert learning_rate(schedule, epoch) == pytest.approx(lr)

    def test_bs_fixed_keeps_lambda(self):
        schedule = TrainSchedule.preset("bs-fixed")
        assert {loss_coefficients(schedule, e) for e in range(schedule.epochs)} == {(0.75, 0.0)}

    def test_per_step_interpolates_within_epoch(self):
        schedule = TrainSchedule.preset("cifar-full", per_step=True)
        lam, _ = loss_coefficients(schedule, 10, progress=0.5)
        assert lam == pytest.approx(0.75 * (1 - 10.5 / 100))

    def test_poly_policy(self):
        schedule = TrainSchedule(epochs=10, lr=0.1, lr_policy="poly")
        assert learning_rate(schedule, 0) == pytest.approx(0.1)
        assert learning_rate(schedule, 5, step=0, steps_per_epoch=4) == pytest.approx(0.1 * 0.5**0.9)

    def test_epoch_outside_schedule(self):
        with pytest.raises(ValueError, match="outside"):
            loss_coefficients(TrainSchedule.preset("cifar-desk"), 40)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"epochs": 0},
            {"milestones": [30, 20]},
            {"milestones": [0]},
            {"batch_size": 1},
            {"l0_start_epoch": 4, "l0_rampup_end_epoch": 2},
            {"l0_start_epoch": 2},
            {"lr_policy": "cosine"},
        ],
    )
    def test_invalid(self, overrides):
        with pytest.raises(ValueError, match="TrainSchedule"):
            TrainSchedule.preset("cifar-desk", **overrides)

    def test_gamma_grids(self):
        assert gamma_grid("cifar-desk") == (0.0, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20)
        assert gamma_grid("imagenet")[-1] == 0.40
        assert gamma_point("cifar-full", 3) == 0.05
        with pytest.raises(ValueError, match="outside"):
            gamma_point("cifar-full", 7)
        with pytest.raises(ValueError, match="unknown preset"):
            gamma_grid("mnist")

    def test_table_covers_every_epoch(self):
        rows = list(schedule_table(TrainSchedule.preset("cifar-desk")))
        assert [r[0] for r in rows] == list(range(40))
        assert rows[0][1:] == (0.1, 0.75, 0.0)


class TestOptimizer:
    def test_nesterov_update(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        optimizer = NesterovSGD([("w", p)], lr=0.1, momentum=0.9)
        for expected in (0.81, 0.539):
            p.grad = np.array([1.0], dtype=p.data.dtype)
            optimizer.step()
            assert p.data[0] == pytest.approx(expected, rel=1e-6)

    def test_gate_parameters_get_their_own_decay(self):
        gate = Tensor(np.array([1.0]), requires_grad=True)
        conv = Tensor(np.array([1.0]), requires_grad=True)
        optimizer = NesterovSGD(
            [("blocks.0.gate.fc1.weight", gate), ("blocks.0.conv1.weight", conv)],
            lr=0.1, momentum=0.0, weight_decay=0.5, gate_weight_decay=0.0,
        )
        gate.grad = np.zeros(1, dtype=gate.data.dtype)
        conv.grad = np.zeros(1, dtype=conv.data.dtype)
        optimizer.step()
        assert gate.data[0] == 1.0
        assert conv.data[0] == pytest.approx(0.95)

    def test_gating_parameter_names(self):
        assert is_gating_parameter("blocks.3.gate.fc2.bias")
        assert not is_gating_parameter("blocks.3.gates_total")

    def test_clip_norm(self):
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        optimizer = NesterovSGD([("w", p)], lr=1.0, momentum=0.0)
        p.grad = np.array([3.0, 4.0], dtype=p.data.dtype)
        optimizer.step(clip_norm=1.0)
        np.testing.assert_allclose(p.data, [-0.6, -0.8], rtol=1e-6)

    def test_state_dict_rejects_unknown_parameter(self):
        optimizer = NesterovSGD([("w", Tensor(np.ones(1), requires_grad=True))], lr=0.1)
        with pytest.raises(ValueError, match="no parameter"):
            optimizer.load_state_dict({"velocity.v": np.ones(1)})


class TestConfig:
    def test_empty_file_gives_defaults(self):
        assert parse_config("") == ExperimentConfig()

    def test_sections(self):
        config = parse_config(
            "seed: 3\n"
            "model: {preset: resnet20, multiplier: 10}\n"
            "schedule: {preset: cifar-desk, l0_gamma_final: 0.1}\n"
            "prior: {kind: beta, params: [0.5, 0.5]}\n"
            "loader: {workers: 2}\n"
        )
        assert config.seed == 3
        assert config.model.multiplier == 10 and config.model.widths == (16, 32, 64)
        assert config.schedule.l0_gamma_final == 0.1
        assert config.prior.params == (0.5, 0.5)
        assert config.workers == 2

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match="unknown key 'depth'") as info:
            parse_config("seed: 1\nmodel:\n  preset: desk8\n  depth: 3\n", "run.yaml")
        assert info.value.line == 4
        assert str(info.value).startswith("run.yaml:4:")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown key 'optimizer'"):
            parse_config("optimizer: {lr: 0.1}\n")

    def test_invalid_value_reports_section_line(self):
        with pytest.raises(ConfigError, match="invalid schedule") as info:
            parse_config("seed: 0\nschedule:\n  epochs: 0\n")
        assert info.value.line == 3

    def test_yaml_syntax(self):
        with pytest.raises(ConfigError, match="YAML syntax"):
            parse_config("model: [unclosed\n")

    def test_negative_seed(self):
        with pytest.raises(ConfigError, match="seed"):
            parse_config("seed: -1\n")

    def test_overrides(self):
        config = ExperimentConfig().with_overrides(seed=9, gamma=0.2, lam=0.0, output="elsewhere")
        assert (config.seed, config.output) == (9, "elsewhere")
        assert config.schedule.l0_gamma_final == 0.2
        assert config.schedule.bs_lambda_start == 0.0

    def test_dump_and_load(self, tmp_path):
        config = parse_config("model: {preset: resnet20}\ndata: {train_size: 100}\n")
        dump_config(config, tmp_path / "config.yaml")
        assert load_config(tmp_path / "config.yaml") == config

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "none.yaml")


class TestTrainer:
    def test_train_step_reports_terms(self, small_config, small_data):
        model = build_network(small_config, seed=0).train()
        optimizer = NesterovSGD(model.named_parameters(), lr=0.05)
        train, _ = small_data
        images, labels = train.images(range(8)), train.labels[:8]
        m = train_step(model, images, labels, optimizer, 0.75, 0.05, np.random.default_rng(0))
        assert m.shaping_loss > 0 and m.l0_loss > 0
        assert m.total_loss == pytest.approx(m.task_loss + m.shaping_loss + m.l0_loss, rel=1e-5)
        assert 0.0 <= m.gate_activity <= 1.0
        assert m.count == 8

    def test_zero_coefficients_leave_terms_out(self, small_config, small_data):
        model = build_network(small_config, seed=0).train()
        optimizer = NesterovSGD(model.named_parameters(), lr=0.05)
        train, _ = small_data
        m = train_step(model, train.images(range(8)), train.labels[:8], optimizer, 0.0, 0.0, np.random.default_rng(0))
        assert m.shaping_loss == 0.0 and m.l0_loss == 0.0
        assert m.total_loss == m.task_loss

    def test_train_step_needs_train_mode(self, small_config, small_data):
        model = build_network(small_config).eval()
        train, _ = small_data
        with pytest.raises(ValueError, match="eval mode"):
            train_step(model, train.images(range(2)), train.labels[:2], NesterovSGD(model.named_parameters(), lr=0.1), 0, 0, None)

    def test_run_writes_metrics_and_checkpoints(self, tmp_path, small_config, small_data, short_schedule):
        train, test = small_data
        trainer = Trainer(build_network(small_config), short_schedule, train, test, output=tmp_path, checkpoint_every=1)
        history = trainer.run()
        assert [r["epoch"] for r in history] == [0, 1]
        assert history[0]["lambda"] == 0.75 and history[1]["gamma"] == 0.0
        lines = (tmp_path / METRICS_FILE).read_text().splitlines()
        assert [json.loads(line)["epoch"] for line in lines] == [0, 1]
        assert "gate_fractions" in history[-1]
        for epoch in (0, 1):
            assert (tmp_path / CHECKPOINT_PATTERN.format(epoch=epoch)).exists()

    def test_resume_reproduces_uninterrupted_run(self, tmp_path, small_config, small_data, short_schedule):
        train, test = small_data
        full = Trainer(build_network(small_config, seed=4), short_schedule, train, test, seed=1, output=tmp_path / "a", checkpoint_every=1)
        full.run()

        resumed = Trainer(build_network(small_config, seed=4), short_schedule, train, test, seed=1, output=tmp_path / "b")
        start = resumed.resume(tmp_path / "a" / CHECKPOINT_PATTERN.format(epoch=0))
        assert start == 1
        resumed.run(start_epoch=start)

        expected = full.model.state_dict()
        for name, value in resumed.model.state_dict().items():
            np.testing.assert_array_equal(value, expected[name], err_msg=name)
        assert resumed.history == full.history[1:]

    def test_non_finite_loss_dumps_terms(self, tmp_path, small_config, small_data, short_schedule):
        train, test = small_data
        model = build_network(small_config)
        model.fc.weight.data[:] = np.nan
        trainer = Trainer(model, short_schedule, train, test, output=tmp_path)
        with pytest.raises(NonFiniteLossError) as info:
            trainer.run()
        assert not np.isfinite(info.value.terms["total_loss"])
        dump = json.loads((tmp_path / FAILURE_DUMP_FILE).read_text())
        assert (dump["epoch"], dump["step"]) == (0, 0)

    def test_too_few_images_for_a_batch(self, small_config, small_data):
        train, test = small_data
        trainer = Trainer(build_network(small_config), TrainSchedule(epochs=1, batch_size=64), train, test)
        with pytest.raises(ValueError, match="less than one batch"):
            trainer.run()

    def test_evaluate_is_deterministic(self, small_config, small_data):
        _, test = small_data
        model = build_network(small_config, seed=2)
        first, second = evaluate(model, test, batch_size=5), evaluate(model, test, batch_size=16)
        np.testing.assert_array_equal(first.predictions, second.predictions)
        np.testing.assert_array_equal(first.traces.bits, second.traces.bits)
        assert first.summary()["examples"] == 16
        assert first.traces.gate_count == small_config.gate_count


class TestTrainingInvariants:
    def test_disabled_regularizers_give_a_plain_cross_entropy_step(self, small_config, small_data):
        train, _ = small_data
        images, labels = train.images(range(8)), train.labels[:8]

        model = build_network(small_config, seed=6).train()
        optimizer = NesterovSGD(model.named_parameters(), lr=0.05, weight_decay=5e-4)
        train_step(model, images, labels, optimizer, 0.0, 0.0, np.random.default_rng(9))

        plain = build_network(small_config, seed=6).train()
        plain_optimizer = NesterovSGD(plain.named_parameters(), lr=0.05, weight_decay=5e-4)
        plain_optimizer.zero_grad()
        logits, _ = plain(Tensor(images), rng=np.random.default_rng(9))
        backward(F.cross_entropy(logits, labels))
        plain_optimizer.step()

        expected = plain.state_dict()
        for name, value in model.state_dict().items():
            np.testing.assert_array_equal(value, expected[name], err_msg=name)

    def test_shaping_alone_moves_gates_towards_the_prior(self, small_config, small_data):
        train, _ = small_data
        images = Tensor(train.images(range(16)))
        model = build_network(small_config, seed=2).train()
        gating = [(name, p) for name, p in model.named_parameters() if is_gating_parameter(name)]
        optimizer = NesterovSGD(gating, lr=0.1)
        config = ShapingConfig(prior=PriorSpec.beta(0.6, 0.4), lam=1.0)

        def distance():
            _, gates = model(images, rng=np.random.default_rng(0))
            return network_shaping_loss([g.soft for g in gates], config), gates

        start, gates = distance()
        start_logits = np.concatenate([g.logits.data for g in gates], axis=1)
        backbone = {name: p.data.copy() for name, p in model.named_parameters() if not is_gating_parameter(name)}
        for _ in range(100):
            optimizer.zero_grad()
            loss, _ = distance()
            backward(loss)
            optimizer.step()
        end, gates = distance()

        assert end.item() < start.item()
        assert not np.allclose(np.concatenate([g.logits.data for g in gates], axis=1), start_logits)
        for name, p in model.named_parameters():
            if name in backbone:
                np.testing.assert_array_equal(p.data, backbone[name])

    def test_same_seed_gives_identical_metric_logs(self, tmp_path, small_config, small_data, short_schedule):
        train, test = small_data
        for run in ("a", "b"):
            Trainer(build_network(small_config, seed=3), short_schedule, train, test, seed=8, output=tmp_path / run).run()
        assert (tmp_path / "a" / METRICS_FILE).read_bytes() == (tmp_path / "b" / METRICS_FILE).read_bytes()


def desk_data():
    # real CIFAR-10 when a directory of binary batches is given
    path = os.environ.get("CHANNEL_GATING_CIFAR")
    if path:
        return DatasetSource(kind="cifar10-binary", path=path, train_size=10000, test_size=2000).load()
    return DatasetSource(train_size=10000, test_size=2000).load()


@pytest.mark.slow
def test_desk_scale_gating_saves_compute_at_matched_accuracy():
    """
    desk8 on 10k images over the full cifar-desk schedule: the gated model
    runs well below full MACs, keeps some gates input-dependent and stays
    within three points of the same network trained without gates.
    """
    train, test = desk_data()
    config = NetworkConfig.preset("desk8")
    schedule = TrainSchedule.preset("cifar-desk")

    gated = build_network(config, seed=0)
    Trainer(gated, schedule, train, test, seed=0).run()
    gated_result = evaluate(gated, test)

    ungated = build_network(config.with_gating(False), seed=0)
    Trainer(ungated, schedule, train, test, seed=0).run()
    ungated_result = evaluate(ungated, test)

    assert gated_result.macs.average_conditional <= 0.7 * gated_result.macs.full
    assert classify_gates(gated_result.traces).overall[CONDITIONAL] >= 0.10
    assert abs(gated_result.accuracy - ungated_result.accuracy) <= 0.03
