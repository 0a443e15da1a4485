# Tests for the SteinGAN trainer, energy-parameter gradients, pacing and sampling
import numpy as np
import pytest

from core.checkpoint import load_checkpoint
from core.exceptions import ContractError, DimensionError, NonFiniteError
from core.generator import Generator
from core.mlp import init_gaussian, layer_specs
from models.config_models import load_config, parse_config
from services.dataset_service import Dataset
from services.experiment_service import build_trainer
from services.steingan_service import (
    TRACE_COLUMNS,
    PacingMode,
    PacingState,
    SteinGanTrainer,
    mle_theta_gradient,
    mle_theta_gradient_discounted,
    pacing_update,
    random_walk,
    sample_generator,
)
from tests.conftest import CONFIG_DIR


def tiny_config(seed=0, dataset=None, **overrides):
    steingan = {
        "iterations": 6,
        "batch_size": 20,
        "noise_dim": 3,
        "generator": {"hidden": [8], "init_std": 0.3},
        "energy": {"code_dim": 2, "encoder_hidden": [6], "decoder_hidden": [6], "init_std": 0.3},
    }
    steingan.update(overrides)
    return parse_config({
        "name": "tiny-steingan",
        "mode": "steingan",
        "seed": seed,
        "dataset": dataset or {"kind": "clusters", "n": 200},
        "steingan": steingan,
    })


def tiny_generator(rng, out_dim=3, num_classes=0):
    return Generator(init_gaussian(layer_specs(2 + num_classes, [5], out_dim), 0.5, rng), 2, "uniform",
                     num_classes)


class TestThetaGradient:

    def test_zero_discount_is_plain_gradient(self, tiny_energy, rng):
        """gamma = 0 gives the plain energy-gap gradient."""
        real = rng.normal(size=(8, 3))
        fake = rng.normal(size=(8, 3))
        np.testing.assert_array_equal(mle_theta_gradient_discounted(tiny_energy, real, fake, 0.0),
                                      mle_theta_gradient(tiny_energy, real, fake))

    def test_identical_batches_give_zero_update(self, tiny_energy, rng):
        """Identical batches cancel at gamma = 0."""
        batch = rng.normal(size=(8, 3))
        grad = mle_theta_gradient_discounted(tiny_energy, batch, batch.copy(), 0.0)
        np.testing.assert_array_equal(grad, np.zeros(tiny_energy.num_params))

    def test_full_discount_keeps_only_real_term(self, tiny_energy, rng):
        """gamma = 1 leaves only the real-data term."""
        real = rng.normal(size=(8, 3))
        fake = rng.normal(size=(8, 3))
        np.testing.assert_allclose(mle_theta_gradient_discounted(tiny_energy, real, fake, 1.0),
                                   -tiny_energy.grad_theta_phi(real), atol=1e-15)

    @pytest.mark.parametrize("gamma", [-0.1, 1.5])
    def test_gamma_outside_unit_interval(self, tiny_energy, gamma):
        """gamma must lie in [0, 1]."""
        with pytest.raises(ContractError):
            mle_theta_gradient_discounted(tiny_energy, np.zeros((2, 3)), np.zeros((2, 3)), gamma)

    def test_batch_dimensions_checked(self, tiny_energy):
        """Real and fake batches must share a dimension."""
        with pytest.raises(DimensionError):
            mle_theta_gradient(tiny_energy, np.zeros((2, 3)), np.zeros((2, 2)))
        with pytest.raises(ContractError):
            mle_theta_gradient(tiny_energy, np.zeros((0, 3)), np.zeros((2, 3)))


class TestPacing:

    def test_rule_table(self):
        """Pacing follows the gap rule table."""
        rng = np.random.default_rng(8)
        state = PacingState()
        for _ in range(10_000):
            real, fake = rng.uniform(-2.0, 2.0, size=2)
            state = pacing_update(state, real, fake, 0.5)
            if abs(real - fake) > 0.5:
                expected = PacingMode.FROZEN
            elif real > fake:
                expected = PacingMode.FAST
            else:
                expected = PacingMode.NORMAL
            assert state.mode is expected
            assert state.last_real == real

    def test_gap_boundary_is_not_frozen(self):
        """A difference equal to the gap does not freeze."""
        assert pacing_update(PacingState(), 1.5, 1.0, 0.5).mode is PacingMode.FAST

    def test_non_finite_energy(self):
        """NaN energies raise NonFiniteError."""
        with pytest.raises(NonFiniteError):
            pacing_update(PacingState(), float("nan"), 1.0, 0.5)


class TestSampling:

    def test_sample_shape_and_seed(self, rng):
        """Samples have the requested shape and are seeded."""
        gen = tiny_generator(rng)
        a = sample_generator(gen, 7, seed=3)
        assert a.shape == (7, 3)
        np.testing.assert_array_equal(a, sample_generator(gen, 7, seed=3))

    def test_sample_count_must_be_positive(self, rng):
        """Sample count must be positive."""
        with pytest.raises(ContractError):
            sample_generator(tiny_generator(rng), 0, seed=0)

    def test_labels_follow_generator(self, rng):
        """Conditional sampling needs a label in range."""
        plain = tiny_generator(rng)
        conditional = tiny_generator(rng, num_classes=3)
        assert sample_generator(conditional, 4, seed=1, label=2).shape == (4, 3)
        with pytest.raises(ContractError):
            sample_generator(conditional, 4, seed=1)
        with pytest.raises(ContractError):
            sample_generator(conditional, 4, seed=1, label=3)
        with pytest.raises(ContractError):
            sample_generator(plain, 4, seed=1, label=0)

    def test_random_walk(self, rng):
        """Walk starts at the seeded code and moves in small steps."""
        gen = tiny_generator(rng)
        path = random_walk(gen, steps=10, step_size=0.01, seed=7)
        assert path.shape == (11, 3)
        start = np.random.default_rng(7).uniform(-1.0, 1.0, size=(1, 2))
        np.testing.assert_allclose(path[:1], gen(start))
        assert np.all(np.linalg.norm(np.diff(path, axis=0), axis=1) < 0.1)


class TestSteinGanTrainer:

    def test_short_run_trace(self):
        """Short run writes the expected trace columns."""
        trainer = build_trainer(tiny_config())
        result = trainer.train()
        assert result.iterations == 6
        assert result.trace.columns == TRACE_COLUMNS
        assert result.trace.column("iter") == [1, 2, 3, 4, 5, 6]
        assert set(result.trace.column("pacing_mode")) <= {"normal", "fast", "frozen"}
        assert min(result.trace.column("bandwidth")) >= 1e-6

    def test_frozen_policy_never_moves_energy(self):
        """Frozen iterations leave the energy untouched."""
        trainer = build_trainer(tiny_config(pacing="frozen"))
        theta = trainer.energy.flat_params()
        result = trainer.train()
        np.testing.assert_array_equal(trainer.energy.flat_params(), theta)
        assert result.trace.column("theta_update_norm") == [0.0] * 6

    def test_warmup_suspends_freezing(self):
        """Freezing starts only once the warmup iterations have passed."""
        trainer = build_trainer(tiny_config(pacing_warmup=3, freeze_gap=1e-12))
        result = trainer.train()
        modes = result.trace.column("pacing_mode")
        assert "frozen" not in modes[:3]
        assert modes[3:] == ["frozen"] * 3
        norms = result.trace.column("theta_update_norm")
        assert min(norms[:3]) > 0.0
        assert norms[3:] == [0.0] * 3

    def test_cluster_config_updates_energy_early(self):
        """From the packaged cluster setup the energy moves within the first 50 iterations."""
        base = load_config(CONFIG_DIR / "steingan_clusters.yaml")
        cfg = base.model_copy(update={"steingan": base.steingan.model_copy(update={"trace_every": 1})})
        result = build_trainer(cfg).train(50)
        modes = result.trace.column("pacing_mode")
        assert len(modes) == 50
        assert any(mode != "frozen" for mode in modes)
        assert max(result.trace.column("theta_update_norm")) > 0.0

    def test_cluster_start_freezes_without_warmup(self):
        """With warmup off the initial energy gap freezes theta from the first step."""
        base = load_config(CONFIG_DIR / "steingan_clusters.yaml")
        cfg = base.model_copy(update={"steingan": base.steingan.model_copy(update={"trace_every": 1,
                                                                                   "pacing_warmup": 0})})
        result = build_trainer(cfg).train(20)
        assert result.trace.column("pacing_mode") == ["frozen"] * 20

    def test_glyph_config_updates_energy_early(self):
        """The packaged glyph setup trains the joint energy from the first iteration."""
        base = load_config(CONFIG_DIR / "steingan_glyphs.yaml")
        cfg = base.model_copy(update={"steingan": base.steingan.model_copy(update={"trace_every": 1})})
        trainer = build_trainer(cfg)
        theta = trainer.energy.flat_params()
        result = trainer.train(10)
        assert "frozen" not in result.trace.column("pacing_mode")
        assert min(result.trace.column("theta_update_norm")) > 0.0
        assert not np.array_equal(trainer.energy.flat_params(), theta)

    def test_off_policy_stays_normal(self):
        """Pacing off keeps the normal mode."""
        result = build_trainer(tiny_config(pacing="off")).train()
        assert set(result.trace.column("pacing_mode")) == {"normal"}

    def test_runs_are_deterministic(self):
        """Same seed, same trace."""
        a = build_trainer(tiny_config(seed=5)).train()
        b = build_trainer(tiny_config(seed=5)).train()
        assert a.trace.to_csv() == b.trace.to_csv()

    def test_resume_reproduces_continuation(self, tmp_path):
        """Resuming from a checkpoint matches the uninterrupted run."""
        full_dir = tmp_path / "full"
        full = build_trainer(tiny_config(checkpoint_every=3), str(full_dir))
        full_result = full.train()

        resumed = build_trainer(tiny_config())
        resumed.resume(load_checkpoint(full_dir / "checkpoint_iter000003.json"))
        assert resumed.iteration == 3
        tail = resumed.train(3)

        assert tail.trace.rows == full_result.trace.rows[3:]
        np.testing.assert_array_equal(resumed.generator.net.flat_params(), full.generator.net.flat_params())
        np.testing.assert_array_equal(resumed.energy.flat_params(), full.energy.flat_params())

    def test_resume_rejects_other_kinds(self, tmp_path):
        """Only steingan checkpoints resume a trainer."""
        trainer = build_trainer(tiny_config())
        doc = trainer.checkpoint().model_copy(update={"kind": "amortize"})
        with pytest.raises(ContractError):
            trainer.resume(doc)

    def test_non_finite_energy_aborts_with_checkpoint(self, tmp_path):
        """NaN aborts training and dumps a checkpoint."""
        trainer = build_trainer(tiny_config(), str(tmp_path))
        trainer.energy.set_flat_params(np.full(trainer.energy.num_params, np.nan))
        with pytest.raises(NonFiniteError):
            trainer.train()
        assert (tmp_path / "checkpoint_abort.json").exists()

    def test_conditional_glyph_run(self):
        """Joint energy trains on labeled glyphs."""
        cfg = tiny_config(
            dataset={"kind": "glyphs", "n": 60, "num_classes": 3},
            generator={"hidden": [8], "out_activation": "sigmoid", "init_std": 0.3},
            energy={"kind": "joint", "code_dim": 4, "encoder_hidden": [8], "decoder_hidden": [8],
                    "decoder_out_activation": "sigmoid", "init_std": 0.3},
            iterations=2,
        )
        trainer = build_trainer(cfg)
        assert trainer.joint and trainer.generator.conditional
        result = trainer.train()
        assert len(result.trace) == 2
        for label in range(3):
            samples = sample_generator(trainer.generator, 5, seed=0, label=label)
            assert samples.shape == (5, 64)
            assert np.all((samples > 0.0) & (samples < 1.0))

    def test_dimension_mismatch(self, tiny_energy, rng):
        """Generator output must match the data dimension."""
        data = Dataset(rng.normal(size=(10, 3)), None, "plain")
        with pytest.raises(DimensionError):
            SteinGanTrainer(data, tiny_generator(rng, out_dim=2), tiny_energy, tiny_config().steingan)

    def test_joint_energy_needs_labels(self, tiny_joint_energy, rng):
        """A joint energy needs labeled data."""
        data = Dataset(rng.normal(size=(10, 3)), None, "plain")
        with pytest.raises(ContractError):
            SteinGanTrainer(data, tiny_generator(rng, num_classes=3), tiny_joint_energy, tiny_config().steingan)


@pytest.mark.slow
def test_two_cluster_acceptance():
    """Packaged cluster run covers both clusters."""
    base = load_config(CONFIG_DIR / "steingan_clusters.yaml")
    centers = np.array(base.dataset.centers)
    passes = 0
    first_gaps, last_gaps = [], []
    for seed in range(5):
        trainer = build_trainer(base.model_copy(update={"seed": seed}))
        result = trainer.train()
        samples = sample_generator(trainer.generator, 2000, seed=100 + seed)
        coverage = [np.mean(np.linalg.norm(samples - c, axis=1) <= 3 * base.dataset.std) for c in centers]
        background = np.random.default_rng(seed).uniform(-4.0, 4.0, size=(2000, 2))
        real_energy = trainer.energy.mean_energy(trainer.dataset.samples)
        passes += min(coverage) >= 0.3 and real_energy <= 0.5 * trainer.energy.mean_energy(background)

        gaps = np.abs(np.array(result.trace.column("mean_real_energy"))
                      - np.array(result.trace.column("mean_fake_energy")))
        window = max(len(gaps) // 10, 1)
        first_gaps.append(gaps[:window].mean())
        last_gaps.append(gaps[-window:].mean())
    assert passes >= 4
    assert np.mean(last_gaps) <= np.mean(first_gaps)


@pytest.mark.slow
def test_conditional_glyph_acceptance():
    """Packaged glyph run produces recognizable digits."""
    trainer = build_trainer(load_config(CONFIG_DIR / "steingan_glyphs.yaml"))
    trainer.train()
    data = trainer.dataset
    centroids = np.stack([data.samples[data.labels == k].mean(axis=0) for k in range(data.num_classes)])
    correct = 0
    total = 0
    for label in range(data.num_classes):
        samples = sample_generator(trainer.generator, 100, seed=label, label=label)
        dists = np.linalg.norm(samples[:, None, :] - centroids[None, :, :], axis=2)
        correct += int(np.sum(np.argmin(dists, axis=1) == label))
        total += samples.shape[0]
    assert correct / total >= 0.8
