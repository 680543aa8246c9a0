import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collusionlab.analysis import (ConvergenceType, OutcomeKind, ProfitBenchmarks,
                                   avg_proportional_loss, classify_outcome, collusion_metrics,
                                   cycle_counts)
from collusionlab.environment import EconomicParams
from collusionlab.errors import InvalidInputError, InvalidParameterizationError

BENCH = ProfitBenchmarks.for_params(EconomicParams.from_costs((1.2, 1.2)))
T = 200


def _const(a, b, n=T):
    return np.tile([a, b], (n, 1))


def test_metrics_at_nash_and_monopoly():
    assert collusion_metrics(np.tile(BENCH.nash, (10, 1)), BENCH) == pytest.approx((0, 0, 0),
                                                                                  abs=1e-12)
    assert collusion_metrics(np.tile(BENCH.coop, (10, 1)), BENCH) == pytest.approx((1, 1, 1),
                                                                                  abs=1e-12)


@given(st.lists(st.tuples(st.floats(0, 0.5), st.floats(0, 0.5)), min_size=1, max_size=50))
def test_index_is_mean_of_gains(series):
    M, g1, g2 = collusion_metrics(np.array(series), BENCH)
    assert M == pytest.approx((g1 + g2) / 2, abs=1e-12)


def test_metric_errors():
    with pytest.raises(InvalidInputError):
        collusion_metrics(np.empty((0, 2)), BENCH)
    with pytest.raises(InvalidParameterizationError):
        collusion_metrics(np.ones((3, 2)), ProfitBenchmarks((0.2, 0.2), (0.2, 0.2)))


def test_classifier_examples():
    assert classify_outcome(_const(12, 12)).kind is OutcomeKind.SYMMETRIC
    assert classify_outcome(_const(12, 14)).kind is OutcomeKind.ASYMMETRIC
    alt = np.stack([np.tile([10, 11], T // 2), np.full(T, 5)], axis=1)
    assert classify_outcome(alt) == ConvergenceType(OutcomeKind.CYCLE, 2)


def test_classifier_precedence_and_threshold():
    # 92% at one symmetric pair beats the cycle that also fits
    s = _const(3, 3)
    s[::12] = (4, 4)
    assert classify_outcome(s).kind is OutcomeKind.SYMMETRIC
    # exactly 90% is not enough
    s = _const(3, 3)
    s[:20] = (1, 2)
    s[::10] = (7, 8)
    assert classify_outcome(s).kind is not OutcomeKind.SYMMETRIC


def test_classifier_other_and_short_series():
    rng = np.random.default_rng(0)
    assert classify_outcome(rng.integers(0, 20, (T, 2))).kind is OutcomeKind.OTHER
    with pytest.raises(InvalidInputError):
        classify_outcome(_const(1, 1, 149))


@settings(max_examples=60)
@given(st.integers(1, 15), st.data())
def test_periodic_series_never_other(L, data):
    block = data.draw(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), min_size=L,
                               max_size=L))
    series = np.tile(np.array(block), (-(-300 // L), 1))[:300]
    kind = classify_outcome(series)
    assert kind.kind is not OutcomeKind.OTHER
    if kind.kind is OutcomeKind.CYCLE:
        assert kind.cycle_length <= L and L % kind.cycle_length == 0


@settings(max_examples=40)
@given(st.integers(2, 15), st.integers(0, 29), st.data())
def test_prefix_drop_invariance(L, drop, data):
    block = data.draw(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), min_size=L,
                               max_size=L))
    series = np.tile(np.array(block), (-(-300 // L), 1))[:300]
    assert classify_outcome(series[drop:]) == classify_outcome(series)


def test_convergence_type_strings():
    for t in (ConvergenceType(OutcomeKind.SYMMETRIC), ConvergenceType(OutcomeKind.CYCLE, 4),
              ConvergenceType(OutcomeKind.OTHER)):
        assert ConvergenceType.parse(str(t)) == t
    assert str(ConvergenceType(OutcomeKind.CYCLE, 4)) == "cycle4"


def test_avg_proportional_loss():
    assert avg_proportional_loss(np.full((3, 3), 0.8)) == pytest.approx(0.0, abs=1e-15)
    assert avg_proportional_loss(np.eye(4) * 0.7) == 1.0
    a = np.array([[0.8, 0.2], [0.4, 0.9]])
    assert avg_proportional_loss(a) == pytest.approx((0.85 - 0.3) / 0.85)
    with pytest.raises(InvalidInputError):
        avg_proportional_loss(np.zeros((2, 2)))
    with pytest.raises(InvalidInputError):
        avg_proportional_loss(np.zeros((2, 3)))


def test_cycle_counts():
    c = cycle_counts([ConvergenceType(OutcomeKind.CYCLE, 2), ConvergenceType(OutcomeKind.CYCLE, 2),
                      ConvergenceType(OutcomeKind.SYMMETRIC)])
    assert c["symmetric"] == 1 and c["cycles"] == {2: 2}
