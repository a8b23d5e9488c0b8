"""Shared fixtures. The desk_pipeline fixture runs the full small-scale
pipeline (pretrain + unsupervised training) once per session; the
end-to-end acceptance tests all read from it."""

import time

import numpy as np
import pytest

from keymorph import detector as det
from keymorph import synthdata as sd
from keymorph import training as tr


class DeskPipeline:
    def __init__(self):
        t0 = time.perf_counter()
        shape = (64, 64)
        subjects = [sd.generate_subject(s, shape) for s in range(60)]
        self.train_subjects = subjects[:40]
        self.test_subjects = subjects[40:]
        dataset = [
            {"modalities": [im.data for im in s.images], "onehot": None}
            for s in self.train_subjects
        ]

        cfg = det.DetectorConfig(d=2, input_extent=64)
        self.initial_weights = det.init_weights(cfg, seed=3)
        weights = det.init_weights(cfg, seed=3)

        self.pretrain_trace = []
        tr.pretrain(
            weights,
            [im.data for im in self.train_subjects[0].images],
            200,
            np.random.default_rng(3),
            trace=self.pretrain_trace,
        )
        config = tr.TrainConfig(
            variant="unsupervised",
            transform=tr.TransformSpec(kind="tps", lambda_dist=tr.LambdaDistribution()),
            steps=500,
            seed=3,
        )
        weights, self.train_trace = tr.train(weights, dataset, config)
        self.weights = weights
        self.elapsed = time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_pipeline():
    return DeskPipeline()


# one line per acceptance criterion, echoed after the run so the verdicts
# are visible even though pytest captures stdout of passing tests
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
