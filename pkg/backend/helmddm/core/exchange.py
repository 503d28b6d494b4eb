"""The exchange operator Pi: reflection across the single-trace space in the t_h geometry."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .impedance import ImpedanceMatrices
from .linsolve import cholesky_solve
from .skeleton import MultiTrace, SkeletonMap, lift_single_trace


def accumulate_skeleton(skeleton: SkeletonMap, impedance: ImpedanceMatrices, q: MultiTrace) -> np.ndarray:
    """sum_j Q_j^* T_j q_j, reduced in subdomain order."""
    g = np.zeros(skeleton.n_sigma, dtype=np.complex128)
    for local, matrix, block in zip(skeleton.local_to_skeleton, impedance.T, q.blocks):
        g[local] += matrix @ block
    return g


def single_trace_coefficients(skeleton: SkeletonMap, impedance: ImpedanceMatrices, q: MultiTrace) -> np.ndarray:
    """Skeleton coefficients of the t_h-orthogonal projection of q onto V_h(Sigma)."""
    if q.data.size != skeleton.multi_trace_dim:
        raise InvalidArgumentError("multi-trace does not match the skeleton map")
    return cholesky_solve(impedance.T_sigma_factorization, accumulate_skeleton(skeleton, impedance, q))


def apply_pi(skeleton: SkeletonMap, impedance: ImpedanceMatrices, q: MultiTrace) -> MultiTrace:
    """Pi(q) = -q + 2 Q T_Sigma^-1 sum_j Q_j^* T_j q_j."""
    v = single_trace_coefficients(skeleton, impedance, q)
    return lift_single_trace(skeleton, v) * 2.0 - q


def project_single_trace(skeleton: SkeletonMap, impedance: ImpedanceMatrices, q: MultiTrace) -> MultiTrace:
    """(q + Pi q) / 2, the t_h-orthogonal projector onto single traces."""
    return lift_single_trace(skeleton, single_trace_coefficients(skeleton, impedance, q))
