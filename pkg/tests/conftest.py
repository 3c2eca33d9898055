from __future__ import annotations

import pytest

from schemaforge.editing import EditParams
from schemaforge.induction import InductionParams, induce_library
from schemaforge.retrieval import RetrievalParams
from schemaforge.synthworld import WorldSpec, generate

# criterion label -> outcome, filled by the makereport hook below
_ACCEPTANCE: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    criterion = marker.kwargs.get("criterion", item.name)
    # setup errors and skips must not be mistaken for passes
    if report.when == "call" or report.outcome != "passed":
        previous = _ACCEPTANCE.get(criterion)
        if previous != "failed":
            _ACCEPTANCE[criterion] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        outcome = _ACCEPTANCE[criterion]
        word = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{word}  {criterion}")


BENCH_SPEC = WorldSpec(
    seed=0,
    n_tasks=6,
    steps_per_task=4,
    videos_per_task=3,
    clips_per_video=4,
    distractor_steps=40,
    distractor_videos=4,
    noise_sigma=0.0,
    vocab_size=400,
)


@pytest.fixture(scope="session")
def bench_world():
    """Small noiseless world shared by module tests."""
    return generate(BENCH_SPEC)


@pytest.fixture(scope="session")
def bench_library(bench_world):
    """Schemas induced with the shortlist sized to the planted step count so
    every schema equals its planted truth exactly."""
    params = InductionParams(
        per_clip_top_n=30,
        per_task_top_m=BENCH_SPEC.steps_per_task,
        min_videos=1,
    )
    return induce_library(bench_world.registry, bench_world.videos, bench_world.steps, params)


@pytest.fixture
def retrieval_params():
    return RetrievalParams(lambda_=0.6, r=1)


@pytest.fixture
def edit_params():
    return EditParams()
