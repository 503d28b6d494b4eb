import numpy as np
import pytest
from scipy.linalg import solve_triangular

from helmddm.core.assembly import h1_norm_from_grams
from helmddm.core.config import get_settings
from helmddm.core.ddm import (
    RobinOperators,
    apply_scattering,
    build_robin_operator,
    estimate_gamma,
    gmres_solve,
    reconstruct_volume,
    richardson_rate_bound,
    richardson_solve,
    skeleton_matvec,
    skeleton_operator,
    skeleton_rhs,
    th_cholesky_factor,
)
from helmddm.core.errors import PreconditionError, ResourceLimitError
from helmddm.core.skeleton import MultiTrace
from helmddm.schemas import RunConfig
from helmddm.services.problem import build_problem, build_schwarz, reference_solution

TINY = dict(kappa=2.0, n_lambda=8.0, num_subdomains=4, impedance="M")


def _setup(settings=None, **overrides):
    config = RunConfig(**{**TINY, **overrides})
    problem = build_problem(config, settings=settings)
    setup = build_schwarz(problem, config.impedance_spec(), settings=settings)
    return config, problem, setup


def _dense(robin, exchange):
    zero = exchange.zeros()
    n = zero.data.size
    columns = np.empty((n, n), dtype=complex)
    for k in range(n):
        unit = np.zeros(n, dtype=complex)
        unit[k] = 1.0
        columns[:, k] = skeleton_matvec(robin, exchange, zero.like(unit)).data
    return columns


def _volume_gap(robin, first, second, reference):
    blocks = [reference[p.topology.volume_nodes] for p in robin.problems]
    diff = [a - b for a, b in zip(first, second)]
    return h1_norm_from_grams(robin.grams, diff) / h1_norm_from_grams(robin.grams, blocks)


@pytest.mark.parametrize("kappa_imag", [0.0, 0.5])
@pytest.mark.parametrize("impedance", ["M", "W", "Lambda"])
def test_scattering_is_a_contraction(rng, kappa_imag, impedance):
    _, _, setup = _setup(kappa_imag=kappa_imag, impedance=impedance)
    for _ in range(100):
        p = MultiTrace.random(setup.exchange.skeleton, rng)
        scattered = apply_scattering(setup.robin, p)
        assert setup.exchange.norm(scattered) <= (1.0 + 1e-11) * setup.exchange.norm(p)


def test_matvec_is_identity_plus_pi_of_scattering(rng):
    _, _, setup = _setup(impedance="K")
    p = MultiTrace.random(setup.exchange.skeleton, rng)
    expected = p + setup.exchange.apply(apply_scattering(setup.robin, p))
    actual = skeleton_matvec(setup.robin, setup.exchange, p)
    assert setup.exchange.norm(actual - expected) <= 1e-12 * setup.exchange.norm(p)


def test_rhs_vanishes_without_loads():
    _, problem, setup = _setup()
    zero_loads = [np.zeros_like(f) for f in setup.robin.loads]
    assert not np.any(skeleton_rhs(setup.robin, zero_loads, setup.exchange).data)
    assert np.any(skeleton_rhs(setup.robin, setup.robin.loads, setup.exchange).data)


def test_robin_operator_needs_impedance():
    _, problem, _ = _setup()
    with pytest.raises(PreconditionError, match="subdomain 1"):
        build_robin_operator(problem.local_problems[0])
    with pytest.raises(PreconditionError):
        RobinOperators(problems=problem.local_problems)


def test_gmres_recovers_direct_solution():
    config, problem, setup = _setup(impedance="W")
    reference = reference_solution(problem)
    rhs = skeleton_rhs(setup.robin, setup.robin.loads, setup.exchange)
    state = gmres_solve(setup.robin, setup.exchange, rhs, config.solver_config(), reference)
    assert state.converged
    assert state.final_error <= config.tol
    assert state.history[0].iteration == 0
    assert state.history[-1].iteration == state.iteration
    assert [entry.iteration for entry in state.history] == sorted({entry.iteration for entry in state.history})


def test_gmres_error_checked_per_restart():
    config, problem, setup = _setup(impedance="Lambda", restart=5, error_every="restart")
    reference = reference_solution(problem)
    rhs = skeleton_rhs(setup.robin, setup.robin.loads, setup.exchange)
    state = gmres_solve(setup.robin, setup.exchange, rhs, config.solver_config(), reference)
    assert state.converged
    assert all(entry.iteration % 5 == 0 for entry in state.history[1:-1])


def test_gmres_without_reference_uses_residual():
    config, problem, setup = _setup(impedance="K", tol=1e-10)
    rhs = skeleton_rhs(setup.robin, setup.robin.loads, setup.exchange)
    state = gmres_solve(setup.robin, setup.exchange, rhs, config.solver_config())
    assert state.converged
    assert state.final_error is None
    reference = reference_solution(problem)
    exact = [reference[p.topology.volume_nodes] for p in setup.robin.problems]
    assert _volume_gap(setup.robin, state.u, exact, reference) < 1e-7


def test_single_subdomain_converges():
    config, problem, setup = _setup(num_subdomains=1)
    reference = reference_solution(problem)
    rhs = skeleton_rhs(setup.robin, setup.robin.loads, setup.exchange)
    state = gmres_solve(setup.robin, setup.exchange, rhs, config.solver_config(), reference)
    assert state.converged


def test_richardson_residual_history_is_monotone():
    config, problem, setup = _setup(impedance="Lambda", solver="richardson", r=0.5)
    state = richardson_solve(
        setup.robin, setup.exchange, setup.robin.loads, config.solver_config(), reference_solution(problem)
    )
    assert state.converged
    residuals = [entry.th_residual for entry in state.history]
    assert all(b <= a * (1.0 + 1e-10) for a, b in zip(residuals, residuals[1:]))
    assert state.history[-1].relative_error <= config.tol


def test_richardson_respects_iteration_cap():
    config, problem, setup = _setup(solver="richardson", max_iter=3)
    state = richardson_solve(
        setup.robin, setup.exchange, setup.robin.loads, config.solver_config(), reference_solution(problem)
    )
    assert state.status == "max_iter"
    assert state.iteration == 3
    assert len(state.history) == 4


def test_richardson_contraction_respects_rate_bound():
    config, problem, setup = _setup(impedance="M", solver="richardson", r=0.5, tol=1e-14, max_iter=400)
    robin, exchange = setup.robin, setup.exchange
    skeleton = exchange.skeleton
    assert skeleton.multi_trace_dim <= 600

    gamma = estimate_gamma(skeleton_operator(robin, exchange), skeleton, setup.impedance)
    assert 0.0 < gamma <= 2.0 + 1e-12
    bound = richardson_rate_bound(gamma, config.r)

    rhs = skeleton_rhs(robin, robin.loads, exchange)
    exact = rhs.like(np.linalg.solve(_dense(robin, exchange), rhs.data))
    errors = []
    richardson_solve(
        robin,
        exchange,
        robin.loads,
        config.solver_config(),
        callback=lambda iteration, p: errors.append(exchange.norm(p - exact)),
    )
    assert len(errors) > 2
    for before, after in zip(errors, errors[1:]):
        if before <= 1e-9 * errors[0]:
            break
        assert after <= (bound + 1e-8) * before


def test_gamma_cap():
    _, _, setup = _setup()
    with pytest.raises(ResourceLimitError):
        estimate_gamma(
            skeleton_operator(setup.robin, setup.exchange), setup.exchange.skeleton, setup.impedance, max_dim=5
        )


def test_rate_bound_formula():
    assert richardson_rate_bound(0.0, 0.5) == 1.0
    assert richardson_rate_bound(2.0, 0.5) == 0.0
    assert richardson_rate_bound(1.0, 0.5) == pytest.approx(np.sqrt(0.75))


def test_threaded_local_solves_are_deterministic(rng):
    settings = get_settings().model_copy(update={"local_solve_workers": 3})
    _, _, serial = _setup()
    _, _, threaded = _setup(settings=settings)
    p = MultiTrace.random(serial.exchange.skeleton, rng)
    np.testing.assert_array_equal(
        skeleton_matvec(serial.robin, serial.exchange, p).data,
        skeleton_matvec(threaded.robin, threaded.exchange, p).data,
    )


@pytest.mark.slow
def test_richardson_and_gmres_agree_with_direct_solve():
    config, problem, setup = _setup(kappa=5.0, n_lambda=20.0, impedance="M")
    reference = reference_solution(problem)
    solver = config.solver_config()
    richardson = richardson_solve(
        setup.robin, setup.exchange, setup.robin.loads, solver.model_copy(update={"method": "richardson"}), reference
    )
    rhs = skeleton_rhs(setup.robin, setup.robin.loads, setup.exchange)
    krylov = gmres_solve(setup.robin, setup.exchange, rhs, solver, reference)

    assert richardson.converged and richardson.final_error <= 1e-8
    assert krylov.converged and krylov.final_error <= 1e-8
    assert krylov.iteration < richardson.iteration
    assert _volume_gap(setup.robin, richardson.u, krylov.u, reference) <= 1e-7
    volume = reconstruct_volume(setup.robin, krylov.p)
    assert _volume_gap(setup.robin, volume, krylov.u, reference) <= 1e-12


def _exact_skeleton_solution(robin, exchange):
    rhs = skeleton_rhs(robin, robin.loads, exchange)
    return rhs.like(np.linalg.solve(_dense(robin, exchange), rhs.data))


def test_rhs_is_minus_two_i_pi_of_local_traces():
    _, _, setup = _setup(impedance="K")
    robin, exchange = setup.robin, setup.exchange
    u_star = robin.solve(None, robin.loads)
    expected = exchange.apply(robin.traces(u_star, exchange.zeros())) * (-2j)
    actual = skeleton_rhs(robin, robin.loads, exchange)
    assert exchange.norm(expected) > 0
    assert exchange.norm(actual - expected) <= 1e-12 * exchange.norm(expected)


@pytest.mark.parametrize("impedance", ["M", "W", "Lambda"])
def test_skeleton_solution_glues_local_solutions_into_direct_solution(impedance):
    _, problem, setup = _setup(impedance=impedance)
    robin, exchange = setup.robin, setup.exchange
    reference = reference_solution(problem)
    p = _exact_skeleton_solution(robin, exchange)
    volume = reconstruct_volume(robin, p)
    exact = [reference[q.topology.volume_nodes] for q in robin.problems]
    assert _volume_gap(robin, volume, exact, reference) <= 1e-10

    traces = robin.traces(volume, p)
    # traces agree across subdomains and the incoming data satisfy -p = Pi(p + 2i B u)
    assert exchange.norm(traces - exchange.project(traces)) <= 1e-10 * exchange.norm(traces)
    assert exchange.norm(p + exchange.apply(p + traces * 2j)) <= 1e-10 * exchange.norm(p)


def test_skeleton_operator_is_coercive_and_bounded():
    _, _, setup = _setup(impedance="M")
    robin, exchange = setup.robin, setup.exchange
    gamma = estimate_gamma(skeleton_operator(robin, exchange), exchange.skeleton, setup.impedance)
    lower = th_cholesky_factor(setup.impedance)
    # the operator in coordinates where t_h is the Euclidean inner product
    scaled = lower.T @ solve_triangular(lower, _dense(robin, exchange).T, lower=True).T
    assert np.linalg.norm(scaled, 2) <= 2.0 + 1e-10
    hermitian_part = 0.5 * (scaled + scaled.conj().T)
    assert np.linalg.eigvalsh(hermitian_part).min() >= gamma**2 / 2.0 - 1e-10


@pytest.mark.parametrize("impedance", ["M", "K"])
def test_scattering_conserves_energy_on_interior_subdomain(rng, impedance):
    _, _, setup = _setup(partition="onion", num_subdomains=2, impedance=impedance)
    robin, exchange = setup.robin, setup.exchange
    (inner,) = [q.index for q in robin.problems if q.topology.robin_edges.shape[0] == 0]
    matrices = setup.impedance.T

    def block_norm(q, j):
        block = q.block(j)
        return np.sqrt(np.vdot(block, matrices[j] @ block).real)

    for j in range(2):
        for _ in range(10):
            blocks = [np.zeros(m.shape[0], dtype=complex) for m in matrices]
            blocks[j] = rng.standard_normal(blocks[j].size) + 1j * rng.standard_normal(blocks[j].size)
            p = MultiTrace.from_blocks(exchange.skeleton, blocks)
            scattered = apply_scattering(robin, p)
            if j == inner:
                assert block_norm(scattered, j) == pytest.approx(block_norm(p, j), rel=1e-10)
            else:
                assert block_norm(scattered, j) <= (1.0 + 1e-11) * block_norm(p, j)


def test_single_subdomain_robin_matrix_adds_impedance_mass():
    config, problem, setup = _setup(num_subdomains=1, impedance="M", kappa_r=2.5)
    (local,) = setup.robin.problems
    robin = local.A - 1j * (local.B.T @ local.T @ local.B)
    # for real kappa the global matrix is real apart from -i kappa times the boundary mass
    global_matrix = problem.global_problem.A
    expected = global_matrix + 1j * (2.5 / config.kappa) * global_matrix.imag
    assert abs(robin - expected).max() <= 1e-12 * abs(global_matrix).max()


def test_richardson_started_at_the_solution_stays_there():
    config, problem, setup = _setup(impedance="Lambda", solver="richardson", tol=1e-300, max_iter=5)
    robin, exchange = setup.robin, setup.exchange
    exact = _exact_skeleton_solution(robin, exchange)
    state = richardson_solve(
        robin, exchange, robin.loads, config.solver_config(), reference_solution(problem), initial=exact
    )
    assert state.status == "max_iter"
    assert len(state.history) == 6
    assert all(entry.relative_error <= 1e-8 for entry in state.history)
    assert exchange.norm(state.p - exact) <= 1e-10 * exchange.norm(exact)
