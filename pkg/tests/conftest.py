import numpy as np
import pytest

from desco.synthetic import (
    PhantomSpec,
    generate_phantom,
    make_orthogonal_annotation,
    select_annotation_slices,
)

# the golden drift phantom referenced by fixtures across modules
GOLDEN_SPEC = PhantomSpec(dims=(48, 48, 48), n_blobs=1, drift=0.5, noise_sigma=0.05, seed=7)


@pytest.fixture(scope="session")
def golden_phantom():
    return generate_phantom(GOLDEN_SPEC)


@pytest.fixture(scope="session")
def golden_annotation(golden_phantom):
    _, label = golden_phantom
    m, n = select_annotation_slices(label)
    return make_orthogonal_annotation(label, m, n)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
