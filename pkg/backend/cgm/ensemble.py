"""
Ensemble of independently seeded generator networks
Training in parallel, versioned checkpoints with resume, pooled sampling
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
from joblib import Parallel, delayed

from config.settings import CgmArchitecture, TrainConfig
from cgm.generator import GeneratorNetwork
from cgm.trainer import CgmDataset, CgmScalers, CgmTrainer
from exceptions import SchemaMismatch, UntrainedMember
from market_data.calendar import DeliveryKey
from samplers.path_samplers import TrajectoryEnsemble

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST = "manifest.pt"


def member_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1)[0])


def _member_file(directory: Path, index: int) -> Path:
    return directory / f"member_{index:02d}.pt"


class CgmEnsemble:
    """Pooled sampler over `members` trained networks"""

    def __init__(self, architecture: CgmArchitecture, train: TrainConfig, scalers: CgmScalers,
                 dims: Sequence[int], members: Optional[List[Optional[GeneratorNetwork]]] = None,
                 config_hash: str = "", generator_tag: str = "CGM", train_end: Optional[str] = None):
        self.architecture = architecture
        self.train_config = train
        self.scalers = scalers
        self.dims = tuple(int(d) for d in dims)
        self.members: List[Optional[GeneratorNetwork]] = members or [None] * train.members
        self.config_hash = config_hash
        self.generator_tag = generator_tag
        # last training market, used by the window bookkeeping of backtests
        self.train_end = train_end

    def check_trained(self) -> None:
        for index, member in enumerate(self.members):
            if member is None or not getattr(member, "trained", False):
                raise UntrainedMember(index)

    def sample(self, inputs: Dict[str, np.ndarray], seed: int, key: Optional[DeliveryKey] = None,
               samples_per_member: Optional[int] = None) -> TrajectoryEnsemble:
        """
        Pool samples of every member for one market, in EUR/MWh

        Args:
            inputs: raw input1/input2/input3 rows (1, dim) and weekday (1,)
            seed: sampling seed
            key: market the ensemble belongs to
            samples_per_member: defaults to the configured count (1000)
        """
        return self.sample_batch(inputs, [seed], [key], samples_per_member)[0]

    def sample_batch(self, inputs: Dict[str, np.ndarray], seeds: Sequence[int],
                     keys: Optional[Sequence[Optional[DeliveryKey]]] = None,
                     samples_per_member: Optional[int] = None) -> List[TrajectoryEnsemble]:
        """Pooled ensembles of many markets; every market draws from its own seed stream"""
        self.check_trained()
        per_member = samples_per_member or self.train_config.samples_per_member
        normalized = self.scalers.transform_inputs(inputs)
        tensors = [torch.as_tensor(normalized[n]) for n in ("input1", "input2", "input3", "weekday")]
        batch = tensors[0].shape[0]
        keys = list(keys) if keys is not None else [None] * batch

        pooled = []
        with torch.no_grad():
            for index, member in enumerate(self.members):
                z = torch.stack([
                    torch.randn(per_member, self.architecture.latent_dim,
                                generator=torch.Generator().manual_seed(member_seed(seed, index)))
                    for seed in seeds
                ])
                pooled.append(member(*tensors, z=z).double().numpy())
        paths = self.scalers.target.inverse(np.concatenate(pooled, axis=1))
        return [TrajectoryEnsemble(paths=paths[b], generator=self.generator_tag, seed=int(seeds[b]), key=keys[b])
                for b in range(batch)]

    def save(self, directory: Union[str, Path]) -> Path:
        """Write the manifest and one file per trained member"""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        reference = GeneratorNetwork(self.architecture, *self.dims)
        torch.save({
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config_hash": self.config_hash,
            "generator_tag": self.generator_tag,
            "train_end": self.train_end,
            "architecture": self.architecture.model_dump(),
            "train": self.train_config.model_dump(),
            "dims": list(self.dims),
            "layer_shapes": reference.layer_shapes(),
            "scalers": self.scalers.to_dict(),
        }, directory / MANIFEST)
        for index, member in enumerate(self.members):
            if member is not None and member.trained:
                save_member(member, directory, index, self.config_hash)
        return directory

    @classmethod
    def load(cls, directory: Union[str, Path], config_hash: Optional[str] = None) -> "CgmEnsemble":
        """
        Read a checkpoint directory; members without a file stay untrained

        Raises:
            SchemaMismatch: unknown format version, other configuration or layer shapes
        """
        directory = Path(directory)
        manifest = torch.load(directory / MANIFEST, weights_only=False)
        if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise SchemaMismatch(f"Unsupported checkpoint format {manifest.get('format_version')}")
        if config_hash is not None and manifest["config_hash"] != config_hash:
            raise SchemaMismatch(f"Checkpoint in {directory} was trained with another configuration")
        architecture = CgmArchitecture(**manifest["architecture"])
        train = TrainConfig(**manifest["train"])
        ensemble = cls(architecture, train, CgmScalers.from_dict(manifest["scalers"]), manifest["dims"],
                       config_hash=manifest["config_hash"], generator_tag=manifest.get("generator_tag", "CGM"),
                       train_end=manifest.get("train_end"))
        for index in range(train.members):
            path = _member_file(directory, index)
            if path.exists():
                ensemble.members[index] = load_member(path, architecture, ensemble.dims, manifest["layer_shapes"],
                                                      manifest["config_hash"])
        return ensemble


def save_member(net: GeneratorNetwork, directory: Path, index: int, config_hash: str) -> Path:
    path = _member_file(directory, index)
    torch.save({"format_version": CHECKPOINT_FORMAT_VERSION, "config_hash": config_hash,
                "state_dict": net.state_dict()}, path)
    return path


def load_member(path: Path, architecture: CgmArchitecture, dims: Sequence[int],
                layer_shapes: Dict[str, List[int]], config_hash: str) -> GeneratorNetwork:
    payload = torch.load(path, weights_only=False)
    if payload.get("config_hash") != config_hash:
        raise SchemaMismatch(f"{path.name} belongs to another configuration")
    shapes = {name: list(t.shape) for name, t in payload["state_dict"].items()}
    if shapes != layer_shapes:
        raise SchemaMismatch(f"{path.name} layer shapes do not match the manifest")
    net = GeneratorNetwork(architecture, *dims)
    net.load_state_dict(payload["state_dict"])
    net.eval()
    net.trained = True
    return net


def _train_member(trainer: CgmTrainer, dataset: CgmDataset, seed: int, index: int,
                  directory: Optional[Path], config_hash: str, worker: bool) -> GeneratorNetwork:
    if worker:
        torch.set_num_threads(1)
    logger.info(f"Training ensemble member {index} (seed {seed})")
    net, history = trainer.train(dataset, seed=seed)
    logger.info(f"Member {index}: best validation loss {history.best_loss:.5f} at epoch {history.best_epoch}")
    if directory is not None:
        save_member(net, directory, index, config_hash)
    return net


def train_ensemble(dataset: CgmDataset, scalers: CgmScalers, train: TrainConfig, architecture: CgmArchitecture,
                   directory: Optional[Union[str, Path]] = None, config_hash: str = "", resume: bool = False,
                   n_jobs: int = 1, generator_tag: str = "CGM", train_end: Optional[str] = None) -> CgmEnsemble:
    """
    Train every member on the same data with its own seed

    Args:
        dataset: normalized training examples
        scalers: scalers fitted on the training window
        train: training settings (members, seed, loss, ...)
        architecture: layer widths
        directory: checkpoint directory, written as members finish
        config_hash: identifies the configuration in checkpoints
        resume: keep members already present in `directory`
        n_jobs: parallel member trainings
    """
    directory = Path(directory) if directory is not None else None
    ensemble = CgmEnsemble(architecture, train, scalers, dataset.dims, config_hash=config_hash,
                           generator_tag=generator_tag, train_end=train_end)
    if directory is not None:
        if resume and (directory / MANIFEST).exists():
            ensemble.members = CgmEnsemble.load(directory, config_hash).members
            done = [i for i, m in enumerate(ensemble.members) if m is not None]
            logger.info(f"Resuming: members {done} already trained")
        ensemble.save(directory)

    todo = [i for i, m in enumerate(ensemble.members) if m is None]
    trainer = CgmTrainer(train, architecture)
    trained = Parallel(n_jobs=n_jobs)(
        delayed(_train_member)(trainer, dataset, member_seed(train.seed, i), i, directory, config_hash,
                               n_jobs != 1)
        for i in todo
    )
    for index, net in zip(todo, trained):
        net.trained = True
        ensemble.members[index] = net
    return ensemble
