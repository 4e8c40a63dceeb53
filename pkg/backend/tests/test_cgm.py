"""
Tests for the generative network: losses, architecture, training and ensembles
"""
import pytest
import numpy as np
import torch
from torch.func import functional_call
from datetime import date
from pathlib import Path

from backtest.backtester import cgm_training_positions, path_available_at, resolve_test_start, train_cgm
from cgm.ensemble import MANIFEST, CgmEnsemble, train_ensemble
from cgm.generator import GeneratorNetwork
from cgm.losses import (combine_custom_loss, custom_loss, custom_surrogate_loss, energy_score_loss, safe_norm,
                        soft_argmax_index)
from cgm.trainer import CgmDataset, CgmScalers, CgmTrainer
from config.settings import CgmArchitecture
from exceptions import NonFiniteLoss, SchemaMismatch, ShapeMismatch, SingleSample, UntrainedMember
from market_data.calendar import DeliveryKey

DIMS = (12, 5, 6)


def random_inputs(rng, n, dims=DIMS):
    return {
        "input1": rng.normal(size=(n, dims[0])).astype(np.float32),
        "input2": rng.normal(size=(n, dims[1])).astype(np.float32),
        "input3": rng.normal(size=(n, dims[2])).astype(np.float32),
        "weekday": rng.integers(1, 8, size=n),
    }


@pytest.fixture
def toy_data(rng):
    """Raw inputs and targets whose level depends on the first input column"""
    inputs = random_inputs(rng, 120)
    target = 40.0 + 5.0 * inputs["input1"][:, [0]] + rng.normal(size=(120, 10))
    return inputs, target


@pytest.fixture
def toy_dataset(toy_data):
    inputs, target = toy_data
    scalers = CgmScalers.fit(inputs, target)
    return CgmDataset.from_arrays(scalers.transform_inputs(inputs), scalers.target.transform(target)), scalers


class TestLosses:
    """Test the training losses"""

    def test_custom_loss_fixture(self):
        """ES 4, soft index 5, observed index 2, omega 0.5"""
        assert combine_custom_loss(4.0, 5.0, 2.0, 0.5) == pytest.approx(1.045)

    def test_energy_gradient_matches_finite_differences(self):
        """Autograd agrees with central differences in float64"""
        generator = torch.Generator().manual_seed(0)
        samples = torch.randn(6, 10, dtype=torch.float64, generator=generator, requires_grad=True)
        observation = torch.randn(10, dtype=torch.float64, generator=generator, requires_grad=True)
        assert torch.autograd.gradcheck(energy_score_loss, (samples, observation), eps=1e-6, atol=1e-5)

    def test_gradient_at_coinciding_samples(self):
        """Identical samples give a finite gradient"""
        samples = torch.ones(4, 10, dtype=torch.float64, requires_grad=True)
        energy_score_loss(samples, torch.ones(10, dtype=torch.float64)).backward()
        assert torch.all(torch.isfinite(samples.grad))
        assert float(safe_norm(torch.zeros(3))) == 0.0

    def test_nan_flows_through(self):
        """A NaN observation or sample makes the score NaN, never a number"""
        samples = torch.randn(8, 10, dtype=torch.float64)
        assert torch.isnan(energy_score_loss(samples, torch.full((10,), float("nan"), dtype=torch.float64)))
        samples[2, 4] = float("nan")
        assert torch.isnan(energy_score_loss(samples, torch.zeros(10, dtype=torch.float64)))
        assert torch.isnan(safe_norm(torch.tensor([float("nan"), 1.0])))

    def test_surrogate_gradient_matches_finite_differences(self):
        """The soft-argmax surrogate is differentiable in samples and observation"""
        generator = torch.Generator().manual_seed(4)
        samples = torch.randn(5, 10, dtype=torch.float64, generator=generator, requires_grad=True)
        observation = torch.randn(10, dtype=torch.float64, generator=generator, requires_grad=True)

        def surrogate(x, y):
            return custom_surrogate_loss(x, y, torch.tensor(3), omega=0.5)

        assert torch.autograd.gradcheck(surrogate, (samples, observation), eps=1e-6, atol=1e-5)

    def test_batched_energy_score(self):
        """Leading axes are independent markets"""
        samples = torch.randn(3, 8, 10, dtype=torch.float64)
        observation = torch.randn(3, 10, dtype=torch.float64)
        batched = energy_score_loss(samples, observation)
        single = torch.stack([energy_score_loss(samples[b], observation[b]) for b in range(3)])
        torch.testing.assert_close(batched, single)

    def test_single_sample(self):
        """M = 1 has no pairwise term"""
        with pytest.raises(SingleSample):
            energy_score_loss(torch.zeros(1, 10), torch.zeros(10))

    def test_soft_argmax(self):
        """A dominant subperiod pulls the soft index to it"""
        samples = torch.zeros(1, 2, 10, dtype=torch.float64)
        samples[..., 3] = 10.0
        assert float(soft_argmax_index(samples)) == pytest.approx(4.0, abs=1e-6)

    def test_surrogate_without_index_term(self):
        """omega 0 is half the energy score"""
        samples = torch.randn(5, 10, dtype=torch.float64)
        observation = torch.randn(10, dtype=torch.float64)
        value = custom_surrogate_loss(samples, observation, torch.tensor(3), omega=0.0)
        assert float(value) == pytest.approx(0.5 * float(energy_score_loss(samples, observation)))
        with pytest.raises(ValueError):
            custom_surrogate_loss(samples, observation, torch.tensor(3), omega=1.5)

    def test_reported_custom_loss(self):
        """The reported loss uses the hard majority vote"""
        paths = np.zeros((3, 10))
        paths[:, 4] = 1.0
        observed = np.zeros(10)
        observed[1] = 1.0
        es = float(energy_score_loss(torch.from_numpy(paths), torch.from_numpy(observed)))
        assert custom_loss(paths, observed, 0.5) == pytest.approx(0.25 * es + 0.5 * 9 / 100)


class TestGenerator:
    """Test the network layout"""

    def test_ten_dense_layers(self):
        """Default widths give ten dense layers"""
        assert GeneratorNetwork().n_dense_layers == 10

    def test_output_shape(self, tiny_architecture):
        """One path of ten prices per latent draw"""
        net = GeneratorNetwork(tiny_architecture, *DIMS)
        out = net.sample(torch.zeros(2, 12), torch.zeros(2, 5), torch.zeros(2, 6), torch.tensor([1, 7]), M=9)
        assert out.shape == (2, 9, 10)
        assert torch.all(net.delta(torch.randn(4, 5)) >= 0)

    def test_shape_mismatch(self, tiny_architecture):
        """Inputs of the wrong width are rejected"""
        net = GeneratorNetwork(tiny_architecture, *DIMS)
        with pytest.raises(ShapeMismatch):
            net.sample(torch.zeros(2, 11), torch.zeros(2, 5), torch.zeros(2, 6), torch.tensor([1, 2]), M=3)

    def test_zero_noise_scale_collapses_samples(self, tiny_architecture):
        """With delta forced to zero every draw gives the same path"""
        net = GeneratorNetwork(tiny_architecture, *DIMS)
        z = torch.randn(1, 5, tiny_architecture.latent_dim)
        out = net(torch.zeros(1, 12), torch.zeros(1, 5), torch.zeros(1, 6), torch.tensor([3]), z,
                  delta=torch.zeros(1, tiny_architecture.latent_dim))
        torch.testing.assert_close(out[0, 0].expand(5, 10), out[0])

    def test_parameter_gradients(self, tiny_architecture):
        """Energy-score gradients of weights in every module agree with central differences"""
        torch.manual_seed(0)
        net = GeneratorNetwork(tiny_architecture, *DIMS).double()
        generator = torch.Generator().manual_seed(1)
        inputs = (torch.randn(2, 12, dtype=torch.float64, generator=generator),
                  torch.randn(2, 5, dtype=torch.float64, generator=generator),
                  torch.randn(2, 6, dtype=torch.float64, generator=generator),
                  torch.tensor([2, 6]),
                  torch.randn(2, 4, tiny_architecture.latent_dim, dtype=torch.float64, generator=generator))
        observation = torch.randn(2, 10, dtype=torch.float64, generator=generator)
        names = ["h_ts.0.weight", "h_delta.0.0.weight", "embedding.weight", "h_all.2.weight", "h_all.4.bias"]
        params = {n: p.detach().clone().requires_grad_(True) for n, p in net.named_parameters() if n in names}
        assert sorted(params) == sorted(names)

        def loss(*tensors):
            paths = functional_call(net, dict(zip(params, tensors)), inputs)
            return energy_score_loss(paths, observation).sum()

        assert torch.autograd.gradcheck(loss, tuple(params.values()), eps=1e-6, atol=1e-5)

    def test_scaled_architecture(self):
        """Width scaling keeps the layer count"""
        small = CgmArchitecture().scaled(0.25)
        assert small.ts_widths == [128, 64, 16]
        assert GeneratorNetwork(small).n_dense_layers == 10


class TestTrainer:
    """Test training of one network"""

    def test_training_records_history(self, toy_dataset, tiny_architecture, tiny_train):
        """Training runs, tracks epochs and marks the network trained"""
        dataset, _ = toy_dataset
        net, history = CgmTrainer(tiny_train, tiny_architecture).train(dataset, seed=1)
        assert net.trained
        assert 1 <= len(history.epochs) <= tiny_train.max_epochs
        assert np.isfinite(history.best_loss)

    def test_custom_loss_training(self, toy_dataset, tiny_architecture, tiny_train):
        """The custom loss trains as well"""
        dataset, _ = toy_dataset
        train = tiny_train.model_copy(update={"loss": "custom", "max_epochs": 1})
        _, history = CgmTrainer(train, tiny_architecture).train(dataset, seed=1)
        assert np.isfinite(history.epochs[0]["train_loss"])

    def test_same_seed_same_network(self, toy_dataset, tiny_architecture, tiny_train):
        """Training is reproducible for a fixed seed"""
        dataset, _ = toy_dataset
        train = tiny_train.model_copy(update={"max_epochs": 1})
        first, _ = CgmTrainer(train, tiny_architecture).train(dataset, seed=5)
        second, _ = CgmTrainer(train, tiny_architecture).train(dataset, seed=5)
        for a, b in zip(first.parameters(), second.parameters()):
            torch.testing.assert_close(a, b)

    def test_non_finite_loss(self, toy_dataset, tiny_architecture, tiny_train):
        """A NaN target stops training"""
        dataset, _ = toy_dataset
        dataset.target[:] = float("nan")
        with pytest.raises(NonFiniteLoss):
            CgmTrainer(tiny_train, tiny_architecture).train(dataset, seed=1)


class TestEnsemble:
    """Test ensembles, checkpoints and pooled sampling"""

    def test_pooled_sampling(self, toy_dataset, toy_data, tiny_architecture, tiny_train):
        """Samples pool every member and come back in price units"""
        dataset, scalers = toy_dataset
        ensemble = train_ensemble(dataset, scalers, tiny_train, tiny_architecture)
        inputs, target = toy_data
        one = {name: values[:1] for name, values in inputs.items()}
        result = ensemble.sample(one, seed=3, samples_per_member=20)
        assert result.paths.shape == (2 * 20, 10)
        assert abs(result.paths.mean() - target.mean()) < 5 * target.std()
        again = ensemble.sample(one, seed=3, samples_per_member=20)
        np.testing.assert_array_equal(result.paths, again.paths)

    def test_checkpoint_round_trip(self, toy_dataset, toy_data, tiny_architecture, tiny_train, temp_dir):
        """A loaded checkpoint samples like the trained ensemble"""
        dataset, scalers = toy_dataset
        ensemble = train_ensemble(dataset, scalers, tiny_train, tiny_architecture, directory=temp_dir,
                                  config_hash="abc", train_end="2021-03-01T20:00:00")
        loaded = CgmEnsemble.load(temp_dir, "abc")
        assert loaded.train_end == "2021-03-01T20:00:00"
        one = {name: values[:1] for name, values in toy_data[0].items()}
        np.testing.assert_allclose(loaded.sample(one, 8, samples_per_member=5).paths,
                                   ensemble.sample(one, 8, samples_per_member=5).paths, rtol=1e-6)

    def test_checkpoint_of_other_configuration(self, toy_dataset, tiny_architecture, tiny_train, temp_dir):
        """A checkpoint is refused under another configuration hash"""
        dataset, scalers = toy_dataset
        train_ensemble(dataset, scalers, tiny_train, tiny_architecture, directory=temp_dir, config_hash="abc")
        with pytest.raises(SchemaMismatch):
            CgmEnsemble.load(temp_dir, "xyz")

    def test_untrained_member(self, toy_dataset, toy_data, tiny_architecture, tiny_train):
        """Sampling needs every member trained"""
        _, scalers = toy_dataset
        ensemble = CgmEnsemble(tiny_architecture, tiny_train, scalers, DIMS)
        with pytest.raises(UntrainedMember):
            ensemble.sample({name: values[:1] for name, values in toy_data[0].items()}, seed=0)

    def test_resume_keeps_trained_members(self, toy_dataset, tiny_architecture, tiny_train, temp_dir):
        """Members already on disk are not retrained"""
        dataset, scalers = toy_dataset
        first = train_ensemble(dataset, scalers, tiny_train, tiny_architecture, directory=temp_dir, config_hash="abc")
        resumed = train_ensemble(dataset, scalers, tiny_train, tiny_architecture, directory=temp_dir,
                                 config_hash="abc", resume=True)
        assert (Path(temp_dir) / MANIFEST).exists()
        for a, b in zip(first.members[0].parameters(), resumed.members[0].parameters()):
            torch.testing.assert_close(a, b)


class TestTrainingWindow:
    """Test the fixed training window before the test period"""

    def test_window_ends_before_first_origin(self, market_frame, small_config):
        """The last training market's path is public at the first forecast origin"""
        test_start = resolve_test_start(small_config, market_frame)
        assert test_start == date(2021, 3, 2)
        positions = cgm_training_positions(market_frame, test_start, 2)
        last = market_frame.key_at(int(positions[-1]))
        assert last == DeliveryKey(date(2021, 3, 1), 20)
        assert len(positions) == 48
        first_origin = DeliveryKey(test_start, 0).forecast_origin
        assert path_available_at(last) <= first_origin

    @pytest.mark.slow
    def test_train_on_market_frame(self, market_frame, small_config):
        """train-cgm writes a checkpoint the backtester can load"""
        ensemble = train_cgm(small_config, market_frame, "CGM", n_jobs=1)
        assert ensemble.train_end == "2021-03-01T20:00:00"
        assert all(m.trained for m in ensemble.members)
        loaded = CgmEnsemble.load(f"{small_config.checkpoint_dir}/CGM")
        assert loaded.train_end == ensemble.train_end
