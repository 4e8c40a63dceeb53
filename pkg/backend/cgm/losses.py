"""
Training losses of the generative network
The energy score here is also the scoring module's implementation
"""

import numpy as np
import torch

from exceptions import SingleSample
from trading.strategies import majority_vote, observed_best

SOFTARGMAX_TEMPERATURE = 4.0

# Upper bound on elements of one pairwise-difference block
_PAIR_BLOCK = 4_000_000


def safe_norm(diff: torch.Tensor) -> torch.Tensor:
    """Euclidean norm over the last axis whose gradient at zero is 0"""
    sq = (diff * diff).sum(-1)
    nonzero = sq != 0  # NaN stays NaN
    root = torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq)))
    return torch.where(nonzero, root, torch.zeros_like(sq))


def energy_score_loss(samples: torch.Tensor, observation: torch.Tensor) -> torch.Tensor:
    """
    Energy score estimator

        mean_m ||x_m - y|| - 1/(M(M-1)) * sum_{m<n} ||x_m - x_n||

    Args:
        samples: (..., M, D)
        observation: (..., D)

    Returns:
        ES per leading index, shape (...)

    Raises:
        SingleSample: if M < 2
    """
    M = samples.shape[-2]
    if M < 2:
        raise SingleSample(f"Energy score needs at least 2 samples, got {M}")
    term1 = safe_norm(samples - observation.unsqueeze(-2)).mean(-1)

    lead = samples.shape[:-2]
    rows = max(1, _PAIR_BLOCK // max(1, M * samples.shape[-1] * max(1, lead.numel())))
    pair_sum = samples.new_zeros(lead)
    for start in range(0, M, rows):
        block = samples[..., start:start + rows, :]
        pair_sum = pair_sum + safe_norm(block.unsqueeze(-2) - samples.unsqueeze(-3)).sum((-2, -1))
    # the full sum counts every unordered pair twice
    term2 = pair_sum / (2 * M * (M - 1))
    return term1 - term2


def soft_argmax_index(samples: torch.Tensor, temperature: float = SOFTARGMAX_TEMPERATURE) -> torch.Tensor:
    """Mean over samples of sum_j j * softmax(temperature * x)_j, j = 1..D; shape (...)"""
    D = samples.shape[-1]
    positions = torch.arange(1, D + 1, dtype=samples.dtype, device=samples.device)
    weights = torch.softmax(temperature * samples, dim=-1)
    return (weights * positions).sum(-1).mean(-1)


def combine_custom_loss(es, j_pred, j_obs, omega: float):
    """(1 - omega) * ES / 2 + omega * (J_pred - J_obs)^2 / 100"""
    return (1 - omega) * 0.5 * es + omega * (j_pred - j_obs) ** 2 / 100


def custom_surrogate_loss(samples: torch.Tensor, observation: torch.Tensor, j_obs: torch.Tensor,
                          omega: float, temperature: float = SOFTARGMAX_TEMPERATURE) -> torch.Tensor:
    """
    Differentiable custom loss: the majority-vote index is replaced by the
    soft-argmax expectation

    Args:
        samples: (..., M, D)
        observation: (..., D)
        j_obs: realized best subperiod (1-based), shape (...)
        omega: weight of the index term in [0, 1]
    """
    if not 0 <= omega <= 1:
        raise ValueError(f"omega must be in [0, 1], got {omega}")
    es = energy_score_loss(samples, observation)
    if omega == 0:
        return 0.5 * es
    return combine_custom_loss(es, soft_argmax_index(samples, temperature), j_obs.to(samples.dtype), omega)


def custom_loss(samples, observation, omega: float) -> float:
    """
    Reported custom loss of one market, with the hard majority-vote index

    Args:
        samples: (M, D) array or TrajectoryEnsemble
        observation: (D,) observed path
        omega: weight of the index term in [0, 1]
    """
    if not 0 <= omega <= 1:
        raise ValueError(f"omega must be in [0, 1], got {omega}")
    paths = np.asarray(getattr(samples, "paths", samples), dtype=np.float64)
    observed = np.asarray(getattr(observation, "values", observation), dtype=np.float64)
    with torch.no_grad():
        es = float(energy_score_loss(torch.from_numpy(paths), torch.from_numpy(observed)))
    return float(combine_custom_loss(es, majority_vote(paths), observed_best(observed), omega))
