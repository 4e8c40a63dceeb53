"""
Conditional generative network for price paths
h_ts encodes the lagged history, h_delta turns volatility lags into the
scales of the latent noise, h_all maps everything to one 10-subperiod path
per latent draw
"""

import logging
from typing import List, Optional

import torch
from torch import nn

from config.settings import CgmArchitecture
from exceptions import ShapeMismatch
from market_data.calendar import N_SUBPERIODS
from market_data.features import SCHEMAS, INPUT1, INPUT2, INPUT3

logger = logging.getLogger(__name__)

N_WEEKDAYS = 7


def dense_stack(in_dim: int, widths: List[int], activate_last: bool = True) -> nn.Sequential:
    """Linear layers with ELU between them (and after the last unless told otherwise)"""
    layers = []
    for i, width in enumerate(widths):
        layers.append(nn.Linear(in_dim, width))
        if activate_last or i < len(widths) - 1:
            layers.append(nn.ELU())
        in_dim = width
    return nn.Sequential(*layers)


class GeneratorNetwork(nn.Module):
    """Three-module generator; output (batch, M, 10)"""

    def __init__(self, architecture: Optional[CgmArchitecture] = None,
                 input1_dim: int = len(SCHEMAS[INPUT1]),
                 input2_dim: int = len(SCHEMAS[INPUT2]),
                 input3_dim: int = len(SCHEMAS[INPUT3]),
                 output_dim: int = N_SUBPERIODS):
        """
        Build the network

        Args:
            architecture: layer widths and latent size
            input1_dim: length of the lagged-history input
            input2_dim: length of the volatility-lag input
            input3_dim: length of the recent-horizon input
            output_dim: subperiods per path
        """
        super().__init__()
        self.architecture = architecture or CgmArchitecture()
        arch = self.architecture
        self.input_dims = (input1_dim, input2_dim, input3_dim)
        self.latent_dim = arch.latent_dim
        self.output_dim = output_dim

        self.h_ts = dense_stack(input1_dim, arch.ts_widths)
        # softplus keeps the noise scales nonnegative
        self.h_delta = nn.Sequential(dense_stack(input2_dim, arch.delta_widths + [arch.latent_dim], activate_last=False),
                                     nn.Softplus())
        self.embedding = nn.Embedding(N_WEEKDAYS, arch.embedding_dim)
        merged = arch.ts_widths[-1] + arch.latent_dim + input3_dim + arch.embedding_dim
        self.h_all = dense_stack(merged, arch.all_widths + [output_dim], activate_last=False)
        self.trained = False

    @property
    def n_dense_layers(self) -> int:
        return sum(isinstance(m, nn.Linear) for m in self.modules())

    def delta(self, input2: torch.Tensor) -> torch.Tensor:
        """Noise scales, (batch, latent_dim)"""
        return self.h_delta(input2)

    def _check(self, input1, input2, input3, weekday, z):
        batch = input1.shape[0]
        expected = [
            ("input1", input1, (batch, self.input_dims[0])),
            ("input2", input2, (batch, self.input_dims[1])),
            ("input3", input3, (batch, self.input_dims[2])),
            ("weekday", weekday, (batch,)),
        ]
        for name, tensor, shape in expected:
            if tuple(tensor.shape) != shape:
                raise ShapeMismatch(f"{name} has shape {tuple(tensor.shape)}, expected {shape}")
        if z.ndim != 3 or z.shape[0] != batch or z.shape[2] != self.latent_dim or z.shape[1] < 1:
            raise ShapeMismatch(f"latent draws have shape {tuple(z.shape)}, expected ({batch}, M, {self.latent_dim})")

    def forward(self, input1: torch.Tensor, input2: torch.Tensor, input3: torch.Tensor,
                weekday: torch.Tensor, z: torch.Tensor, delta: Optional[torch.Tensor] = None) -> torch.Tensor:
        """
        Sample paths

        Args:
            input1: (B, 3300) normalized lagged history
            input2: (B, 165) normalized volatility lags
            input3: (B, 52) normalized recent-horizon features
            weekday: (B,) ISO weekday 1..7
            z: (B, M, latent_dim) standard normal draws
            delta: optional (B, latent_dim) override of the noise scales

        Returns:
            (B, M, 10) paths in normalized price space
        """
        self._check(input1, input2, input3, weekday, z)
        history = self.h_ts(input1)
        scales = self.delta(input2) if delta is None else delta
        context = torch.cat([history, input3, self.embedding(weekday.long() - 1)], dim=-1)
        M = z.shape[1]
        noise = scales.unsqueeze(1) * z
        merged = torch.cat([context.unsqueeze(1).expand(-1, M, -1), noise], dim=-1)
        return self.h_all(merged)

    def sample(self, input1, input2, input3, weekday, M: int,
               generator: Optional[torch.Generator] = None) -> torch.Tensor:
        """Forward pass with fresh latent draws"""
        z = torch.randn(input1.shape[0], M, self.latent_dim, generator=generator,
                        dtype=input1.dtype, device=input1.device)
        return self.forward(input1, input2, input3, weekday, z)

    def layer_shapes(self) -> dict:
        return {name: list(p.shape) for name, p in self.state_dict().items()}
