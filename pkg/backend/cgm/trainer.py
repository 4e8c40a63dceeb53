"""
Training of one generator network on a fixed window
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch

from config.settings import CgmArchitecture, TrainConfig
from cgm.generator import GeneratorNetwork
from cgm.losses import custom_surrogate_loss, energy_score_loss
from exceptions import NonFiniteLoss
from market_data.features import FeatureBuilder
from market_data.transforms import ZScaler
from trading.strategies import argmax_latest

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(eq=False)
class CgmScalers:
    """Per-column ZScalers of the three inputs and one scalar ZScaler of the target"""

    input1: ZScaler
    input2: ZScaler
    input3: ZScaler
    target: ZScaler

    @classmethod
    def fit(cls, inputs: Dict[str, np.ndarray], target: np.ndarray) -> "CgmScalers":
        return cls(
            input1=ZScaler.fit(inputs["input1"]),
            input2=ZScaler.fit(inputs["input2"]),
            input3=ZScaler.fit(inputs["input3"]),
            target=ZScaler.fit(target, pooled=True),
        )

    def transform_inputs(self, inputs: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        out = {name: getattr(self, name).transform(inputs[name]).astype(np.float32)
               for name in ("input1", "input2", "input3")}
        out["weekday"] = np.asarray(inputs["weekday"], dtype=np.int64)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name).to_dict() for name in ("input1", "input2", "input3", "target")}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CgmScalers":
        return cls(**{name: ZScaler.from_dict(data[name]) for name in ("input1", "input2", "input3", "target")})


@dataclass(eq=False)
class CgmDataset:
    """Normalized training examples as tensors"""

    input1: torch.Tensor
    input2: torch.Tensor
    input3: torch.Tensor
    weekday: torch.Tensor
    target: torch.Tensor

    def __len__(self) -> int:
        return self.target.shape[0]

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.input1.shape[1], self.input2.shape[1], self.input3.shape[1]

    def subset(self, index: torch.Tensor) -> Tuple[torch.Tensor, ...]:
        return (self.input1[index], self.input2[index], self.input3[index], self.weekday[index], self.target[index])

    @classmethod
    def from_arrays(cls, inputs: Dict[str, np.ndarray], target: np.ndarray) -> "CgmDataset":
        return cls(
            input1=torch.as_tensor(inputs["input1"], dtype=torch.float32),
            input2=torch.as_tensor(inputs["input2"], dtype=torch.float32),
            input3=torch.as_tensor(inputs["input3"], dtype=torch.float32),
            weekday=torch.as_tensor(inputs["weekday"], dtype=torch.long),
            target=torch.as_tensor(target, dtype=torch.float32),
        )


def prepare_dataset(builder: FeatureBuilder, positions: np.ndarray,
                    scalers: Optional[CgmScalers] = None) -> Tuple[CgmDataset, CgmScalers]:
    """
    Gather, filter and normalize training examples

    Args:
        builder: feature builder over the market frame
        positions: grid rows of the training markets
        scalers: fitted scalers to reuse, or None to fit on these rows

    Returns:
        (dataset, scalers); rows with missing inputs or targets are dropped
    """
    positions = np.asarray(positions, dtype=int)
    inputs, complete = builder.cgm_batch(positions)
    target = builder.frame.target_matrix(positions)
    complete &= np.all(np.isfinite(target), axis=1)
    dropped = int((~complete).sum())
    if dropped:
        logger.warning(f"Dropped {dropped} of {len(positions)} training markets with incomplete data")
    inputs = {name: values[complete] for name, values in inputs.items()}
    target = target[complete]
    if scalers is None:
        scalers = CgmScalers.fit(inputs, target)
    normalized = scalers.transform_inputs(inputs)
    return CgmDataset.from_arrays(normalized, scalers.target.transform(target)), scalers


@dataclass
class TrainingHistory:
    epochs: List[Dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_loss: float = float("inf")


class CgmTrainer:
    """Adam training with early stopping on a random validation split"""

    def __init__(self, config: Optional[TrainConfig] = None, architecture: Optional[CgmArchitecture] = None):
        """
        Initialize the trainer

        Args:
            config: optimizer, loss and early-stopping settings
            architecture: network layer widths
        """
        self.config = config or TrainConfig()
        self.architecture = architecture or CgmArchitecture()

    def loss(self, samples: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Mean loss over a minibatch"""
        if self.config.loss == "custom":
            j_obs = torch.as_tensor(argmax_latest(target.detach().cpu().numpy(), axis=-1) + 1)
            return custom_surrogate_loss(samples, target, j_obs, self.config.omega, self.config.temperature).mean()
        return energy_score_loss(samples, target).mean()

    def _evaluate(self, net: GeneratorNetwork, batch: Tuple[torch.Tensor, ...], seed: int) -> float:
        if batch[4].shape[0] == 0:
            return float("nan")
        generator = torch.Generator().manual_seed(seed)
        net.eval()
        with torch.no_grad():
            samples = net.sample(*batch[:4], M=self.config.samples_per_example, generator=generator)
            return float(self.loss(samples, batch[4]))

    def train(self, dataset: CgmDataset, seed: Optional[int] = None,
              network: Optional[GeneratorNetwork] = None) -> Tuple[GeneratorNetwork, TrainingHistory]:
        """
        Train one network

        Args:
            dataset: normalized examples
            seed: seed of initialization, split, shuffling and latent draws
            network: start from this network instead of a fresh one

        Returns:
            (network restored to its best validation epoch, history)

        Raises:
            NonFiniteLoss: if a minibatch loss is NaN or infinite
        """
        cfg = self.config
        seed = cfg.seed if seed is None else seed
        if len(dataset) == 0:
            raise ValueError("Training dataset is empty")
        torch.manual_seed(seed)
        generator = torch.Generator().manual_seed(seed)
        net = network or GeneratorNetwork(self.architecture, *dataset.dims)
        optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)

        order = torch.randperm(len(dataset), generator=generator)
        n_val = int(round(cfg.validation_fraction * len(dataset))) if len(dataset) > 1 else 0
        val_index, train_index = order[:n_val], order[n_val:]
        validation = dataset.subset(val_index)

        history = TrainingHistory()
        best_state = copy.deepcopy(net.state_dict())
        waited = 0
        for epoch in range(cfg.max_epochs):
            net.train()
            shuffled = train_index[torch.randperm(len(train_index), generator=generator)]
            losses = []
            for batch_index, start in enumerate(range(0, len(shuffled), cfg.batch_size)):
                batch = dataset.subset(shuffled[start:start + cfg.batch_size])
                samples = net.sample(*batch[:4], M=cfg.samples_per_example, generator=generator)
                loss = self.loss(samples, batch[4])
                if not torch.isfinite(loss):
                    raise NonFiniteLoss(batch_index, epoch)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                losses.append(float(loss))
                logger.debug(f"epoch {epoch} batch {batch_index}: loss {losses[-1]:.6f}")

            train_loss = float(np.mean(losses))
            val_loss = self._evaluate(net, validation, seed + 1)
            monitored = train_loss if np.isnan(val_loss) else val_loss
            history.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
            logger.info(f"Epoch {epoch}: train {train_loss:.5f}, validation {val_loss:.5f}")

            if monitored < history.best_loss:
                history.best_loss = monitored
                history.best_epoch = epoch
                best_state = copy.deepcopy(net.state_dict())
                waited = 0
            else:
                waited += 1
                if waited >= cfg.patience:
                    logger.info(f"Early stop after epoch {epoch}, restoring epoch {history.best_epoch}")
                    break

        net.load_state_dict(best_state)
        net.eval()
        net.trained = True
        return net, history
