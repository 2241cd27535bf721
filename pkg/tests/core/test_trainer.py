"""Tests for policy-gradient training of the rule layer."""
import numpy as np
import pytest

import app.core.trainer as trainer_module
from app.core.config import resolve_config
from app.core.errors import DataError, TrainingError
from app.core.label_rules import builtin_rules, rules_from_pairs
from app.core.mdp_env import RewardSpec, episode_return, run_episode
from app.core.neural import baseline_forward, mlp_forward, policy_log_probs
from app.core.rule_layer import RuleLayer
from app.core.schema import SynthConfig, TrainConfig
from app.core.trainer import (
    Trainer,
    baseline_objective,
    evaluate_dataset,
    policy_objective_coeffs,
    returns_to_go,
    switch_indicators,
    train,
)
from app.data.dataset import Dataset, Trajectory
from app.data.synth import generate_dataset


@pytest.fixture
def sleep_rules():
    return builtin_rules("sleep")


@pytest.fixture
def small_data(sleep_rules):
    """A small synthetic train/test split over the sleep alphabet."""
    cfg = SynthConfig(M=6, T=15, n_train=8, n_test=4, seed=1)
    return generate_dataset(cfg, sleep_rules)


def small_train_config(**overrides):
    values = dict(
        epochs=2, seed=3, policy_hidden=8, baseline_hidden=8, maintain_warmup_epochs=0, lr=1e-3,
    )
    values.update(overrides)
    return TrainConfig(**values)


class FixedSelector:
    def __init__(self, actions):
        self.actions = list(actions)
        self.t = 0

    def __call__(self, state):
        action = self.actions[self.t]
        self.t += 1
        return action


def episode(sleep_rules, true, pred, actions, M=3):
    rng = np.random.default_rng(0)
    traj = Trajectory(seq_id="e", true=np.array(true), pred=np.array(pred), features=rng.normal(size=(len(true), M)))
    return traj, run_episode(traj, FixedSelector(actions), RewardSpec("full", sleep_rules))


class TestObjective:
    """Tests for returns, switch indicators and the loss coefficients."""

    def test_returns_to_go_brute_force(self):
        """Test suffix sums against a double loop on a random integer list."""
        rewards = np.random.default_rng(9).integers(-4, 2, size=20)
        expected = [sum(int(r) for r in rewards[t:]) for t in range(20)]
        assert returns_to_go(rewards).tolist() == expected

    def test_returns_to_go_empty(self):
        """Test that an empty reward sequence is rejected."""
        with pytest.raises(DataError):
            returns_to_go([])

    def test_switch_indicators(self, sleep_rules):
        """Test that the first switch compares against y_hat_0."""
        _, records = episode(sleep_rules, [0, 1, 1, 2], [1, 1, 1, 2], [0, 0, 1, 1])
        assert switch_indicators(records).tolist() == [1.0, 0.0, 1.0, 0.0]

    def test_policy_coefficients(self, sleep_rules):
        """Test coefficient_t = -(G_t - b_t) + alpha * switch_t on a hand-computed episode."""
        # rewards: t0 a=y, y=y_hat -> 0; t1 a=y != y_hat -> +1; t2 keep wrong -> -1
        _, records = episode(sleep_rules, [0, 1, 2], [0, 2, 1], [0, 1, 1])
        assert [r.reward for r in records] == [0, 1, -1]
        baseline = np.array([0.5, -0.5, 0.0])
        coeffs = policy_objective_coeffs(records, baseline, alpha=2.0)
        # G = [0, 0, -1]; switches = [0, 1, 0]
        np.testing.assert_allclose(coeffs, [0.5, -0.5 + 2.0, 1.0])

    def test_centered_policy_coefficients(self, sleep_rules):
        """Test that centring subtracts the episode mean of G_t - b_t but keeps the penalty."""
        _, records = episode(sleep_rules, [0, 1, 2], [0, 2, 1], [0, 1, 1])
        baseline = np.array([0.5, -0.5, 0.0])
        coeffs = policy_objective_coeffs(records, baseline, alpha=2.0, center=True)
        # G - b = [-0.5, 0.5, -1], mean -1/3
        np.testing.assert_allclose(coeffs, [1.0 / 6.0, -5.0 / 6.0 + 2.0, 2.0 / 3.0])

    def test_centered_coefficients_ignore_return_offset(self, sleep_rules):
        """Test that a baseline far below the returns no longer pushes every sampled action the same way."""
        _, records = episode(sleep_rules, [0, 1, 2, 2], [0, 2, 1, 2], [0, 1, 1, 3])
        baseline = np.array([0.3, -0.2, 0.1, 0.0])
        near = policy_objective_coeffs(records, baseline, alpha=1.0, center=True)
        far = policy_objective_coeffs(records, baseline - 100.0, alpha=1.0, center=True)
        np.testing.assert_allclose(near, far)
        assert abs(float(np.sum(near - switch_indicators(records)))) < 1e-9
        assert np.all(policy_objective_coeffs(records, baseline - 100.0, alpha=1.0) < -90.0)

    def test_coefficients_need_aligned_baseline(self, sleep_rules):
        """Test that baseline values must match the episode length."""
        _, records = episode(sleep_rules, [0, 1], [0, 1], [0, 1])
        with pytest.raises(DataError):
            policy_objective_coeffs(records, np.zeros(3), alpha=1.0)

    def test_baseline_objective(self, sleep_rules):
        """Test that the baseline loss is sum (b - G)^2."""
        _, records = episode(sleep_rules, [0, 1, 2], [0, 2, 1], [0, 1, 1])
        layer = RuleLayer.create(sleep_rules.alphabet, 3, small_train_config())
        loss, grads = baseline_objective(records, layer.baseline)
        values, _ = baseline_forward(layer.baseline, np.stack([r.state.vector for r in records]))
        assert loss == pytest.approx(float(np.sum((values - np.array([0.0, 0.0, -1.0])) ** 2)), rel=1e-12)
        assert grads.dims == layer.baseline.dims

    def test_assembled_loss_gradient(self, sleep_rules, small_data):
        """Test the policy gradient of one episode update against finite differences."""
        train_set, _ = small_data
        cfg = small_train_config(alpha=0.7, eta=0.8)
        layer = RuleLayer.create(sleep_rules.alphabet, train_set.M, cfg)
        trainer = Trainer(layer, cfg, sleep_rules, np.random.default_rng(0))
        traj = train_set.trajectories[0]
        records = run_episode(traj, layer.selector(0.3, np.random.default_rng(1)), trainer.spec)
        states = np.stack([r.state.vector for r in records])
        actions = np.array([r.action for r in records])
        _, cache = mlp_forward(layer.policy, states)
        if any(np.min(np.abs(z)) < 1e-4 for z in cache.pre_activations[:-1]):
            pytest.skip("a hidden unit sits on a ReLU kink")

        values, _ = baseline_forward(layer.baseline, states)
        coeffs = policy_objective_coeffs(records, values, cfg.alpha, center=cfg.center_advantages)
        update = trainer._episode_update(traj, records)

        def loss(flat):
            params = layer.policy.with_flat(flat)
            return float(np.sum(coeffs * policy_log_probs(params, states, actions, cfg.eta)))

        base, grad = layer.policy.flat(), update.policy_grads.flat()
        h = 1e-5
        numeric = np.array([
            (loss(base + h * np.eye(1, base.size, i)[0]) - loss(base - h * np.eye(1, base.size, i)[0])) / (2 * h)
            for i in range(base.size)
        ])
        scale = max(np.max(np.abs(grad)), 1e-8)
        assert np.max(np.abs(grad - numeric)) / scale < 1e-4


class TestTrainer:
    """Tests for the training loop."""

    def test_deterministic(self, sleep_rules, small_data):
        """Test that equal seeds give identical stats and parameters."""
        train_set, _ = small_data
        cfg = small_train_config()
        a = train(train_set, cfg, sleep_rules)
        b = train(train_set, cfg, sleep_rules)
        assert [s.as_row() for s in a.stats] == [s.as_row() for s in b.stats]
        assert a.layer.policy.same_as(b.layer.policy)
        assert a.layer.baseline.same_as(b.layer.baseline)

    def test_seed_changes_run(self, sleep_rules, small_data):
        """Test that a different seed gives a different policy."""
        train_set, _ = small_data
        a = train(train_set, small_train_config(seed=3), sleep_rules)
        b = train(train_set, small_train_config(seed=4), sleep_rules)
        assert not a.layer.policy.same_as(b.layer.policy)

    def test_stats_per_epoch(self, sleep_rules, small_data):
        """Test one stats row per epoch with a decaying learning rate."""
        train_set, _ = small_data
        result = train(train_set, small_train_config(epochs=3), sleep_rules)
        assert [s.epoch for s in result.stats] == [0, 1, 2]
        assert result.stats[1].lr == pytest.approx(1e-3 * 0.99)
        for s in result.stats:
            assert 0.0 <= s.accuracy <= 1.0
            assert 0.0 <= s.violation_rate <= 1.0
            assert s.categories.total == len(train_set) * 15
            assert s.categories.total_reward == pytest.approx(s.mean_return * len(train_set))

    @pytest.mark.parametrize("mode,steps", [("trajectory", 8), ("epoch", 1)])
    def test_update_modes(self, sleep_rules, small_data, mode, steps):
        """Test one optimizer step per trajectory or per epoch."""
        train_set, _ = small_data
        result = train(train_set, small_train_config(epochs=1, update_mode=mode), sleep_rules)
        assert result.policy_adam.step == steps
        assert result.baseline_adam.step == steps

    def test_policy_update_ignores_baseline_offset(self, sleep_rules, small_data):
        """Test that shifting every baseline value by a constant leaves the policy gradient unchanged."""
        train_set, _ = small_data
        cfg = small_train_config()
        layer = RuleLayer.create(sleep_rules.alphabet, train_set.M, cfg)
        trainer = Trainer(layer, cfg, sleep_rules, np.random.default_rng(0))
        traj = train_set.trajectories[0]
        records = run_episode(traj, layer.selector(0.1, np.random.default_rng(2)), trainer.spec)
        before = trainer._episode_update(traj, records).policy_grads.flat()

        shifted = layer.baseline.copy()
        shifted.biases[-1] = shifted.biases[-1] - 100.0
        trainer.layer.baseline = shifted
        after = trainer._episode_update(traj, records).policy_grads.flat()
        np.testing.assert_allclose(after, before, rtol=1e-7, atol=1e-9)

    def test_warm_start_keeps_optimizer_fresh(self, sleep_rules, small_data):
        """Test that imitation passes do not count as policy-gradient updates."""
        train_set, _ = small_data
        result = train(train_set, small_train_config(epochs=1, maintain_warmup_epochs=2), sleep_rules)
        assert result.policy_adam.step == len(train_set)

    def test_warm_start_moves_towards_predictions(self, sleep_rules, small_data):
        """Test that imitation raises the likelihood of the predicted labels."""
        train_set, _ = small_data
        cfg = small_train_config(lr=1e-2)
        layer = RuleLayer.create(sleep_rules.alphabet, train_set.M, cfg)
        trainer = Trainer(layer, cfg, sleep_rules, np.random.default_rng(0))
        copy_rate_before = np.mean([np.mean(layer.correct(t) == t.pred) for t in train_set])
        trainer.warm_start(train_set.trajectories, epochs=10)
        copy_rate_after = np.mean([np.mean(trainer.layer.correct(t) == t.pred) for t in train_set])
        assert copy_rate_after > copy_rate_before

    def test_segmentation(self, sleep_rules, small_data):
        """Test that max_T splits trajectories into more, shorter episodes."""
        train_set, _ = small_data
        result = train(train_set, small_train_config(epochs=1, max_T=5), sleep_rules)
        assert result.policy_adam.step == len(train_set) * 3

    def test_epsilon_one_matches_random_selector(self, sleep_rules, small_data):
        """Test that epsilon = 1 and alpha = 0 behave like a uniform random selector within 3 sigma."""
        train_set, _ = small_data
        cfg = small_train_config(epsilon=1.0, alpha=0.0, epochs=1)
        stats = train(train_set, cfg, sleep_rules).stats[0]
        observed = stats.mean_return * len(train_set)

        spec = RewardSpec("full", sleep_rules)
        rng = np.random.default_rng(77)
        totals = []
        for _ in range(100):
            totals.append(sum(
                episode_return(run_episode(traj, lambda state: int(rng.integers(5)), spec)) for traj in train_set
            ))
        mean, std = float(np.mean(totals)), float(np.std(totals, ddof=1))
        assert abs(observed - mean) <= 3.0 * std

    def test_non_finite_loss_names_trajectory(self, sleep_rules, small_data, monkeypatch):
        """Test that a non-finite loss aborts with the trajectory id."""
        train_set, _ = small_data

        real = trainer_module.baseline_objective

        def broken(records, baseline):
            _, grads = real(records, baseline)
            return float("nan"), grads

        monkeypatch.setattr(trainer_module, "baseline_objective", broken)
        with pytest.raises(TrainingError) as excinfo:
            train(train_set, small_train_config(epochs=1), sleep_rules)
        assert "trajectory s0000" in str(excinfo.value)
        assert excinfo.value.exit_code == 4

    def test_empty_dataset(self, sleep_rules):
        """Test that training needs at least one trajectory."""
        with pytest.raises(DataError):
            train(Dataset(alphabet=sleep_rules.alphabet, M=3), small_train_config(), sleep_rules)

    def test_unlabelled_dataset(self, sleep_rules):
        """Test that training needs true labels."""
        traj = Trajectory(seq_id="u", pred=np.array([0, 1]), features=np.zeros((2, 3)))
        dataset = Dataset(alphabet=sleep_rules.alphabet, M=3, trajectories=[traj])
        with pytest.raises(DataError):
            train(dataset, small_train_config(), sleep_rules)

    def test_alphabet_mismatch(self, small_data):
        """Test that the rules must share the dataset's alphabet."""
        train_set, _ = small_data
        other = rules_from_pairs(["A", "B", "C", "D", "E"], [])
        with pytest.raises(DataError):
            train(train_set, small_train_config(), other)


def run_profile(profile, seed, overrides=()):
    cfg = resolve_config(profile, overrides=overrides, flags={"synth": {"seed": seed}, "train": {"seed": seed}})
    rules = builtin_rules(cfg.synth.rules)
    train_set, test_set = generate_dataset(cfg.synth, rules)
    result = train(train_set, cfg.train, rules)
    return cfg, result, evaluate_dataset(result.layer, test_set, RewardSpec(cfg.train.reward_variant, rules))


@pytest.mark.slow
class TestEndToEnd:
    """Full-size training runs on the builtin profiles with default hyperparameters."""

    @pytest.mark.parametrize("profile", ["sleep", "seizure"])
    def test_profile_meets_correction_targets(self, profile):
        """Test halved violations, +2 accuracy points and a growing return, averaged over five seeds."""
        rows = []
        for seed in range(5):
            _, result, evaluation = run_profile(profile, seed)
            assert len(result.stats) == 50
            rows.append([
                evaluation.pred_violation_rate, evaluation.corrected_violation_rate,
                evaluation.pred_accuracy, evaluation.corrected_accuracy,
                result.stats[0].mean_return, result.stats[-1].mean_return,
            ])
        pred_v, corr_v, pred_acc, corr_acc, first, last = np.mean(np.array(rows), axis=0)
        assert corr_v <= 0.5 * pred_v
        assert corr_acc - pred_acc >= 0.02
        assert last > first

    def test_training_does_not_undo_warm_start(self):
        """Test that policy-gradient epochs keep the accuracy of the imitation-only layer."""
        cfg = resolve_config("sleep", flags={"synth": {"seed": 0}, "train": {"seed": 0}})
        rules = builtin_rules("sleep")
        train_set, test_set = generate_dataset(cfg.synth, rules)
        spec = RewardSpec("full", rules)
        init_seed, sample_seed = np.random.SeedSequence(cfg.train.seed).spawn(2)
        warm = Trainer(
            RuleLayer.create(rules.alphabet, train_set.M, cfg.train, seed=init_seed),
            cfg.train, rules, np.random.default_rng(sample_seed),
        )
        warm.warm_start(train_set.trajectories, cfg.train.maintain_warmup_epochs)
        warm_accuracy = evaluate_dataset(warm.layer, test_set, spec).corrected_accuracy
        trained = train(train_set, cfg.train, rules)
        assert evaluate_dataset(trained.layer, test_set, spec).corrected_accuracy >= warm_accuracy - 0.01

    def test_perfect_predictor_stays_stable(self):
        """Test that training on error-free predictions keeps at least 99.5% accuracy and a near-zero return."""
        cfg, _, evaluation = run_profile("sleep", 0, overrides=["synth.predictor_error=0"])
        assert evaluation.corrected_accuracy >= 0.995
        assert evaluation.mean_return >= -0.05 * cfg.synth.T
