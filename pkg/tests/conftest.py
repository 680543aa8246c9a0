import pytest

from collusionlab.experiments import ExperimentPlan, train_contexts
from collusionlab.qlearning import Hyperparams

DESK = Hyperparams(beta=4e-5, window=10_000, max_periods=10**8)


def desk_plan(**kw):
    kw.setdefault("cost_levels", (1.2,))
    kw.setdefault("sessions", 8)
    return ExperimentPlan(hyper=DESK, **kw)


@pytest.fixture(scope="session")
def baseline_grid():
    return ExperimentPlan().build_grid()


@pytest.fixture(scope="session")
def small_training():
    """A few desk-scale sessions at cost 1.2, two replica contexts."""
    plan = desk_plan()
    grid = plan.build_grid()
    return plan, grid, train_contexts(plan.training_contexts(), grid, plan.hyper, plan.sessions)
