import numpy as np
import pytest

from core.allocate import AllocSolverConfig, gs_oma_solve
from core.errors import AllocationError
from core.joint import (ALLOCATORS, SingleLoopAllocator, build_lyapunov_reference, compare_loops,
                        lyapunov_trace, omad_solve, run_with_lyapunov, saddle_check,
                        topology_change_experiment)
from core.routing import RoutingSolverConfig
from core.utility import build_oracle

TRACE_COLUMNS = ['iter', 'algo', 'U', 'V1', 'V2', 'V', 'event']


def _fast_config(**kwargs):
    kwargs.setdefault('routing', RoutingSolverConfig(max_iterations=100, tolerance=1e-8))
    return AllocSolverConfig(**kwargs)


class TestOmad:
    def test_symmetric_pair(self, symmetric_pair, log_oracle_pair):
        result = omad_solve(symmetric_pair, log_oracle_pair, _fast_config())
        assert result.converged
        assert result.algo == 'omad'
        assert np.allclose(result.allocation.rates, [5.0, 5.0], atol=1e-6)

    def test_two_single_step_probes_per_session(self, small_network, log_oracle_three):
        allocator = SingleLoopAllocator(small_network, log_oracle_three, _fast_config(max_iterations=4, tolerance=0.0))
        result = allocator.run()
        assert result.iterations == 4
        assert result.probe_solves == 2 * 3 * 4
        assert result.routing.validate()

    def test_routing_persists_between_iterations(self, small_network, log_oracle_three):
        allocator = SingleLoopAllocator(small_network, log_oracle_three, _fast_config())
        initial = allocator.routing.fractions.copy()
        allocator.step()
        assert not np.allclose(allocator.routing.fractions, initial)

    def test_probes_do_not_touch_persisted_routing(self, small_network, log_oracle_three):
        allocator = SingleLoopAllocator(small_network, log_oracle_three, _fast_config())
        snapshot = allocator.routing.fractions.copy()
        allocator.estimate_gradient()
        assert np.array_equal(allocator.routing.fractions, snapshot)

    def test_starts_below_nested_loop(self, small_network, log_oracle_three):
        solver_config = _fast_config(max_iterations=1)
        nested = gs_oma_solve(small_network, log_oracle_three, solver_config)
        single = omad_solve(small_network, log_oracle_three, solver_config)
        assert single.trace[0] <= nested.trace[0] + 1e-9

    def test_loops_agree(self, symmetric_pair):
        oracle = build_oracle('log', [100.0, 200.0], [0.05, 0.05], 10.0)
        comparison = compare_loops(symmetric_pair, oracle, _fast_config(max_iterations=100))
        assert comparison['relative_gap'] <= 0.01
        assert comparison['gs_oma'].allocation.rates[1] > 5.0
        assert comparison['omad'].allocation.rates[1] > 5.0

    def test_registry(self):
        assert set(ALLOCATORS) == {'gs_oma', 'omad'}


class TestLyapunov:
    def test_nested_loop_has_no_routing_gap(self, symmetric_pair, log_oracle_pair):
        _, frame = run_with_lyapunov(symmetric_pair, log_oracle_pair, 'gs_oma', _fast_config())
        assert list(frame.columns) == TRACE_COLUMNS
        assert np.allclose(frame['V2'], 0.0, atol=1e-9)
        assert frame['V'].iloc[-1] == pytest.approx(0.0, abs=1e-6)

    def test_single_loop_components(self, small_network, log_oracle_three):
        result, frame = run_with_lyapunov(small_network, log_oracle_three, 'omad', _fast_config(max_iterations=5))
        assert len(frame) == result.iterations + 1
        assert (frame['V1'] >= -1e-9).all()
        assert (frame['V2'] >= -1e-9).all()
        assert np.allclose(frame['V'], frame['V1'] + frame['V2'])
        assert (frame['algo'] == 'omad').all()

    def test_given_u_star_is_kept_when_larger(self, small_network, log_oracle_three):
        allocator = SingleLoopAllocator(small_network, log_oracle_three, _fast_config(max_iterations=2))
        allocator.run()
        state = allocator.state
        reference = build_lyapunov_reference(state, log_oracle_three, {'small-network': 1e6},
                                             allocator.config.routing)
        assert reference.u_star['small-network'] == 1e6
        frame = lyapunov_trace(state, reference)
        assert (frame['V1'] > 0).all()

    def test_reference_length_mismatch(self, symmetric_pair, log_oracle_pair):
        allocator = SingleLoopAllocator(symmetric_pair, log_oracle_pair, _fast_config(max_iterations=2))
        allocator.run()
        records = allocator.closing_records()
        reference = build_lyapunov_reference(records, log_oracle_pair)
        with pytest.raises(AllocationError):
            lyapunov_trace(records[:-1], reference)

    def test_unknown_algorithm(self, symmetric_pair, log_oracle_pair):
        with pytest.raises(AllocationError):
            run_with_lyapunov(symmetric_pair, log_oracle_pair, 'omd_rt')


class TestSaddle:
    def test_converged_point_is_saddle(self, symmetric_pair, log_oracle_pair, rng):
        result = gs_oma_solve(symmetric_pair, log_oracle_pair, _fast_config())
        report = saddle_check(symmetric_pair, log_oracle_pair, result.allocation, result.routing, rng)
        assert report.passed
        assert report.samples == 20
        assert report.allocation_excess <= 1e-9

    def test_poor_allocation_fails(self, symmetric_pair, rng):
        oracle = build_oracle('log', [100.0, 200.0], [0.05, 0.05], 10.0)
        allocator = ALLOCATORS['gs_oma'](symmetric_pair, oracle, _fast_config())
        routing, _ = allocator.final_state()
        report = saddle_check(symmetric_pair, oracle, allocator.allocation, routing, rng, samples=40)
        assert not report.passed


class TestTopologySwitch:
    def test_identical_instances(self, symmetric_pair, log_oracle_pair):
        outcome = topology_change_experiment(symmetric_pair, symmetric_pair, log_oracle_pair, 3, _fast_config())
        frame = outcome.frame
        assert list(frame.columns) == TRACE_COLUMNS
        assert set(frame['algo']) == {'gs_oma', 'omad'}
        assert all(outcome.reconverged.values())
        for algo in ('gs_oma', 'omad'):
            rows = frame[frame['algo'] == algo]
            assert rows.loc[rows['iter'] == 3, 'event'].tolist() == ['topology_switch']
            assert np.allclose(rows['U'], rows['U'].iloc[0])

    def test_switch_to_narrower_network(self, symmetric_pair, narrow_pair, log_oracle_pair):
        outcome = topology_change_experiment(symmetric_pair, narrow_pair, log_oracle_pair, 3, _fast_config())
        fresh = gs_oma_solve(narrow_pair, log_oracle_pair, _fast_config())
        for algo in ('gs_oma', 'omad'):
            assert outcome.reconverged[algo]
            assert outcome.final_utility[algo] == pytest.approx(fresh.utility, rel=0.01)
            rows = outcome.frame[outcome.frame['algo'] == algo]
            before = rows.loc[rows['iter'] < 3, 'U']
            after = rows.loc[rows['iter'] >= 3, 'U']
            assert after.max() < before.min()
            assert (rows['V1'] >= -1e-9).all()

    def test_no_early_stop_before_switch(self, symmetric_pair, log_oracle_pair):
        outcome = topology_change_experiment(symmetric_pair, symmetric_pair, log_oracle_pair, 5, _fast_config(),
                                             algos=('omad',))
        assert outcome.states['omad'].iteration == 5

    def test_session_mismatch(self, symmetric_pair, small_network, log_oracle_pair):
        with pytest.raises(AllocationError):
            topology_change_experiment(symmetric_pair, small_network, log_oracle_pair, 3)
