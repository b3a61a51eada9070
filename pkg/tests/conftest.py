import numpy as np
import pytest

from facemotion.rig import JointSpec, RigDefinition, make_synthetic_rig


@pytest.fixture(scope="session")
def rig():
    return make_synthetic_rig(seed=0)


@pytest.fixture(scope="session")
def small_rig():
    return make_synthetic_rig(seed=3, n_vertices=120, n_shape=4, n_expr=4, n_keypoints=20)


def toy_rig(weights, template=None):
    """Three-vertex rig with hand-written skin weights and one-column bases."""
    template = np.array([[0.0, 0.0, 1.0], [0.0, -0.5, 0.5], [0.2, 0.3, 0.4]]) if template is None else template
    n = len(template)
    joints = (
        JointSpec("head", (0.0, -1.0, 0.0), -1),
        JointSpec("neck", (0.0, -0.6, 0.0), 0),
        JointSpec("jaw", (0.0, 0.0, 0.1), 1),
        JointSpec("eye_l", (-0.3, 0.2, 0.7), 1),
        JointSpec("eye_r", (0.3, 0.2, 0.7), 1),
    )
    return RigDefinition(
        template_vertices=template,
        shape_basis=np.ones((n, 3, 1)) * 0.1,
        expr_basis=np.ones((n, 3, 1)) * 0.05,
        joints=joints,
        skin_weights=np.asarray(weights, dtype=float),
        keypoint_indices=np.arange(n),
    )


@pytest.fixture(scope="session")
def bench(tmp_path_factory):
    """A small benchmark: 2 identities, 3 expression tracks, 8 frames at 64x64."""
    from facemotion.benchmark import BenchmarkSpec, build_benchmark

    out = tmp_path_factory.mktemp("bench")
    spec = BenchmarkSpec(n_identities=2, n_expression_tracks=3, frames_per_video=8,
                         image_size=(64, 64), n_vertices=300)
    manifest = build_benchmark(spec, out)
    return out, manifest


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
