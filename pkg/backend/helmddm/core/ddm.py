"""Optimized Schwarz engine on the skeleton equation (Id + Pi S_h) p = f.

Local solves run per subdomain (optionally on a thread pool); every global
exchange is a single ordered reduction followed by one T_Sigma solve.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..schemas.run import SolverConfig
from .assembly import LocalProblem, h1_norm_from_grams
from .errors import InvalidArgumentError, PreconditionError, ResourceLimitError, SingularFactorizationError
from .exchange import apply_pi, project_single_trace
from .impedance import ImpedanceMatrices, th_norm
from .linsolve import GMRESStatus, dense_min_singular_value, gmres, lu_solve, sparse_lu_factor
from .skeleton import MultiTrace, SkeletonMap

LOGGER = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")
SkeletonOperator = Callable[[MultiTrace], MultiTrace]
IterationCallback = Callable[[int, MultiTrace], None]


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    relative_error: Optional[float]
    th_residual: float


@dataclass
class DDMState:
    p: MultiTrace
    u: list[np.ndarray]
    iteration: int = 0
    history: list[HistoryEntry] = field(default_factory=list)
    status: GMRESStatus = "max_iter"

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def final_error(self) -> Optional[float]:
        return self.history[-1].relative_error if self.history else None


def build_robin_operator(problem: LocalProblem, *, pivot_threshold: float = 0.1) -> LocalProblem:
    """Factorize A_j - i B_j^* T_j B_j once; the result is reused by every iteration."""
    if problem.T is None:
        raise PreconditionError(f"subdomain {problem.index + 1} has no impedance attached")
    robin = sp.csc_matrix(problem.A - 1j * (problem.B.T @ problem.T @ problem.B))
    factorization = sparse_lu_factor(robin, pivot_threshold=pivot_threshold, subdomain=problem.index + 1)
    return replace(problem, robin_factorization=factorization)


@dataclass(frozen=True, eq=False)
class RobinOperators:
    """The factorized local problems of every subdomain."""

    problems: tuple[LocalProblem, ...]
    workers: int = 1

    def __post_init__(self) -> None:
        missing = [p.index + 1 for p in self.problems if p.robin_factorization is None or p.T is None]
        if missing:
            raise PreconditionError(f"subdomains {missing} are not factorized")

    @property
    def num_subdomains(self) -> int:
        return len(self.problems)

    @property
    def loads(self) -> list[np.ndarray]:
        return [problem.f for problem in self.problems]

    @property
    def grams(self) -> list[sp.csr_matrix]:
        return [problem.gram for problem in self.problems]

    def map(self, fn: Callable[[LocalProblem, T], R], items: Sequence[T]) -> list[R]:
        """Apply ``fn`` per subdomain; results keep subdomain order whatever the schedule."""
        if len(items) != len(self.problems):
            raise InvalidArgumentError(f"expected {len(self.problems)} per-subdomain items, got {len(items)}")
        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                return list(pool.map(fn, self.problems, items))
        return [fn(problem, item) for problem, item in zip(self.problems, items)]

    def solve(self, p: Optional[MultiTrace], loads: Optional[Sequence[np.ndarray]]) -> list[np.ndarray]:
        """u_j = (A_j - i B_j^* T_j B_j)^-1 (B_j^* T_j p_j + f_j); either term may be absent."""
        blocks = p.blocks if p is not None else [None] * len(self.problems)
        loads = loads if loads is not None else [None] * len(self.problems)

        def local(problem: LocalProblem, pair: tuple) -> np.ndarray:
            p_j, f_j = pair
            rhs = np.zeros(problem.num_volume_dofs, dtype=np.complex128)
            if p_j is not None:
                rhs += problem.B.T @ (problem.T @ p_j)
            if f_j is not None:
                rhs += f_j
            return lu_solve(problem.robin_factorization, rhs)

        return self.map(local, list(zip(blocks, loads)))

    def traces(self, u: Sequence[np.ndarray], like: MultiTrace) -> MultiTrace:
        """(B_1 u_1, ..., B_J u_J) as a multi-trace."""
        return like.like(np.concatenate([problem.B @ block for problem, block in zip(self.problems, u)]))


def build_robin_operators(
    problems: Sequence[LocalProblem],
    matrices: Sequence[sp.spmatrix],
    *,
    workers: int = 1,
    pivot_threshold: float = 0.1,
) -> RobinOperators:
    if len(problems) != len(matrices):
        raise InvalidArgumentError("need one impedance matrix per local problem")
    attached = [replace(problem, T=sp.csr_matrix(matrix)) for problem, matrix in zip(problems, matrices)]

    def factorize(problem: LocalProblem) -> LocalProblem:
        return build_robin_operator(problem, pivot_threshold=pivot_threshold)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            factorized = list(pool.map(factorize, attached))
    else:
        factorized = [factorize(problem) for problem in attached]
    return RobinOperators(problems=tuple(factorized), workers=workers)


@dataclass(frozen=True, eq=False)
class Exchange:
    skeleton: SkeletonMap
    impedance: ImpedanceMatrices

    def apply(self, q: MultiTrace) -> MultiTrace:
        return apply_pi(self.skeleton, self.impedance, q)

    def project(self, q: MultiTrace) -> MultiTrace:
        return project_single_trace(self.skeleton, self.impedance, q)

    def norm(self, q: MultiTrace) -> float:
        return th_norm(self.impedance.T, q)

    def zeros(self) -> MultiTrace:
        return MultiTrace.zeros(self.skeleton)

    def reflect_sum(self, q: MultiTrace) -> MultiTrace:
        """2 Q T_Sigma^-1 sum_j Q_j^* T_j q_j, the non-trivial half of Pi."""
        return self.apply(q) + q


def apply_scattering(robin: RobinOperators, p: MultiTrace) -> MultiTrace:
    """S_h(p)_j = p_j + 2i B_j w_j with w_j the local solve for data p_j and no load."""
    w = robin.solve(p, None)
    return p + robin.traces(w, p) * 2j


def _rhs_from_local(robin: RobinOperators, exchange: Exchange, u_star: Sequence[np.ndarray]) -> MultiTrace:
    traces = robin.traces(u_star, exchange.zeros()) * 2j
    return traces - exchange.reflect_sum(traces)


def skeleton_rhs(robin: RobinOperators, loads: Sequence[np.ndarray], exchange: Exchange) -> MultiTrace:
    """b_j = 2i B_j u_j - 2 Q_j T_Sigma^-1 sum_k 2i Q_k^* T_k B_k u_k with u the local solve for the loads."""
    return _rhs_from_local(robin, exchange, robin.solve(None, loads))


def skeleton_matvec(robin: RobinOperators, exchange: Exchange, p: MultiTrace) -> MultiTrace:
    """(Id + Pi S_h) p computed as q_j = -2i B_j u_j + 2 Q_j T_Sigma^-1 sum_k Q_k^* T_k (p_k + 2i B_k u_k)."""
    u = robin.solve(p, None)
    traces = robin.traces(u, p) * 2j
    return exchange.reflect_sum(p + traces) - traces


def skeleton_operator(robin: RobinOperators, exchange: Exchange) -> SkeletonOperator:
    def matvec(p: MultiTrace) -> MultiTrace:
        return skeleton_matvec(robin, exchange, p)

    return matvec


def reconstruct_volume(
    robin: RobinOperators,
    p: MultiTrace,
    loads: Optional[Sequence[np.ndarray]] = None,
) -> list[np.ndarray]:
    return robin.solve(p, loads if loads is not None else robin.loads)


@dataclass(frozen=True, eq=False)
class VolumeErrorMonitor:
    """Relative broken-H1 error ||u - u_ref|| / ||u_ref|| (the error of the zero initial guess)."""

    grams: tuple[sp.csr_matrix, ...]
    reference: tuple[np.ndarray, ...]
    denominator: float

    @classmethod
    def from_global(cls, robin: RobinOperators, reference: np.ndarray) -> "VolumeErrorMonitor":
        reference = np.asarray(reference, dtype=np.complex128)
        blocks = tuple(reference[problem.topology.volume_nodes] for problem in robin.problems)
        grams = tuple(robin.grams)
        denominator = h1_norm_from_grams(grams, blocks)
        if denominator == 0.0:
            raise InvalidArgumentError("reference solution is zero; relative error undefined")
        return cls(grams=grams, reference=blocks, denominator=denominator)

    def __call__(self, u: Sequence[np.ndarray]) -> float:
        diff = [block - ref for block, ref in zip(u, self.reference)]
        return h1_norm_from_grams(self.grams, diff) / self.denominator


def _monitor(robin: RobinOperators, reference: Optional[np.ndarray]) -> Optional[VolumeErrorMonitor]:
    return VolumeErrorMonitor.from_global(robin, reference) if reference is not None else None


def richardson_solve(
    robin: RobinOperators,
    exchange: Exchange,
    loads: Sequence[np.ndarray],
    config: SolverConfig,
    reference: Optional[np.ndarray] = None,
    *,
    initial: Optional[MultiTrace] = None,
    callback: Optional[IterationCallback] = None,
) -> DDMState:
    """Relaxed fixed-point iteration p <- (1 - r) p - r Pi(p + 2i B u).

    ``th_residual`` is ||p_n - p_{n-1}||_{t_h} / r, the skeleton residual of
    the previous iterate. Without a reference, the stop test is that residual
    relative to ||f||_{t_h}.
    """
    r = config.r
    if not 0 < r < 1:
        raise InvalidArgumentError(f"relaxation must lie in (0, 1), got {r}")
    monitor = _monitor(robin, reference)
    rhs = _rhs_from_local(robin, exchange, robin.solve(None, loads))
    rhs_norm = exchange.norm(rhs)
    p = initial.copy() if initial is not None else exchange.zeros()
    state = DDMState(p=p, u=robin.solve(p, loads))

    def record(iteration: int, residual: float) -> bool:
        error = monitor(state.u) if monitor is not None else None
        state.history.append(HistoryEntry(iteration, error, residual))
        LOGGER.debug("richardson it=%d err=%s res=%.3e", iteration, error, residual)
        if error is not None:
            return error <= config.tol
        return residual <= config.tol * rhs_norm

    initial_residual = rhs_norm if initial is None else exchange.norm(rhs - skeleton_matvec(robin, exchange, p))
    if callback is not None:
        callback(0, p)
    if record(0, initial_residual):
        state.status = "converged"
        return state

    for iteration in range(1, config.max_iter + 1):
        traces = robin.traces(state.u, p) * 2j
        # 2r (i B u - Q v) with v = T_Sigma^-1 sum_j Q_j^* T_j (p_j + 2i B_j u_j)
        update = (traces - exchange.reflect_sum(p + traces)) * r
        p = p + update
        state.p, state.u, state.iteration = p, robin.solve(p, loads), iteration
        if callback is not None:
            callback(iteration, p)
        if record(iteration, exchange.norm(update) / r):
            state.status = "converged"
            break
    else:
        state.status = "max_iter"
        LOGGER.warning("Richardson hit the iteration cap (%d)", config.max_iter)

    LOGGER.info(
        "Richardson %s after %d iterations (error %s)",
        state.status,
        state.iteration,
        state.final_error,
    )
    return state


def gmres_solve(
    robin: RobinOperators,
    exchange: Exchange,
    rhs: MultiTrace,
    config: SolverConfig,
    reference: Optional[np.ndarray] = None,
    *,
    loads: Optional[Sequence[np.ndarray]] = None,
) -> DDMState:
    """Restarted GMRES on (Id + Pi S_h) p = rhs, Euclidean inner product on concatenated blocks.

    With a reference the stop test is the volume relative error, evaluated
    at every iteration or at every restart (``config.error_every``).
    """
    loads = list(loads) if loads is not None else robin.loads
    monitor = _monitor(robin, reference)
    zero = exchange.zeros()
    state = DDMState(p=zero, u=robin.solve(zero, loads))
    rhs_th = exchange.norm(rhs)
    first_error = monitor(state.u) if monitor is not None else None
    state.history.append(HistoryEntry(0, first_error, rhs_th))
    if (first_error is not None and first_error <= config.tol) or not np.any(rhs.data):
        state.status = "converged"
        return state

    def matvec(x: np.ndarray) -> np.ndarray:
        return skeleton_matvec(robin, exchange, rhs.like(x)).data

    def on_iterate(iteration: int, x: np.ndarray, residual: np.ndarray) -> bool:
        p = rhs.like(x)
        u = reconstruct_volume(robin, p, loads)
        error = monitor(u) if monitor is not None else None
        state.p, state.u, state.iteration = p, u, iteration
        state.history.append(HistoryEntry(iteration, error, exchange.norm(rhs.like(residual))))
        LOGGER.debug("gmres it=%d err=%s", iteration, error)
        return error is not None and error <= config.tol

    result = gmres(
        matvec,
        rhs.data,
        restart=config.restart,
        tol=np.finfo(np.float64).eps if monitor is not None else config.tol,
        max_iter=config.max_iter,
        callback=on_iterate,
        callback_every=config.error_every,
    )
    p = rhs.like(result.x)
    if not np.array_equal(state.p.data, p.data):
        state.p, state.u = p, reconstruct_volume(robin, p, loads)
        error = monitor(state.u) if monitor is not None else None
        entry = HistoryEntry(
            result.iterations, error, exchange.norm(rhs - skeleton_matvec(robin, exchange, p))
        )
        if state.history[-1].iteration == result.iterations:
            state.history[-1] = entry
        else:
            state.history.append(entry)
    state.iteration = result.iterations

    status = result.status
    if monitor is not None and status == "converged" and state.final_error > config.tol:
        status = "stagnated"
    state.status = status
    log = LOGGER.info if state.converged else LOGGER.warning
    log("GMRES %s after %d iterations (error %s)", state.status, state.iteration, state.final_error)
    return state


def _dense_operator(matvec: SkeletonOperator, skeleton: SkeletonMap) -> np.ndarray:
    n = skeleton.multi_trace_dim
    zero = MultiTrace.zeros(skeleton)
    columns = np.empty((n, n), dtype=np.complex128)
    for k in range(n):
        unit = np.zeros(n, dtype=np.complex128)
        unit[k] = 1.0
        columns[:, k] = matvec(zero.like(unit)).data
    return columns


def th_cholesky_factor(impedance: ImpedanceMatrices) -> np.ndarray:
    """Lower factor L of blockdiag(T_j) = L L^T, so ||p||_{t_h} = ||L^T p||."""
    try:
        blocks = [sla.cholesky(sp.csr_matrix(t).toarray(), lower=True) for t in impedance.T]
    except np.linalg.LinAlgError as exc:
        raise SingularFactorizationError(f"impedance block is not SPD ({exc})") from exc
    return sla.block_diag(*blocks)


def estimate_gamma(
    matvec: SkeletonOperator,
    skeleton: SkeletonMap,
    impedance: ImpedanceMatrices,
    *,
    max_dim: int = 2000,
) -> float:
    """Smallest singular value of Id + Pi S_h measured in the t_h norm."""
    n = skeleton.multi_trace_dim
    if n > max_dim:
        raise ResourceLimitError("multi-trace dimension for gamma", n, max_dim)
    operator = _dense_operator(matvec, skeleton)
    lower = th_cholesky_factor(impedance)
    # L^T A L^-T
    right = sla.solve_triangular(lower, operator.T, lower=True).T
    gamma = dense_min_singular_value(lower.T @ right, max_dim=max_dim)
    LOGGER.info("gamma_h = %.6f on multi-trace dimension %d", gamma, n)
    return gamma


def richardson_rate_bound(gamma: float, r: float) -> float:
    """(1 - r(1 - r) gamma^2)^(1/2)."""
    return float(np.sqrt(max(0.0, 1.0 - r * (1.0 - r) * gamma**2)))
