import numpy as np
import pytest

from finparse.documents import PageImage


@pytest.fixture
def rng():
    return np.random.default_rng(20250810)


def page_from(arr: np.ndarray, page_no: int = 1) -> PageImage:
    return PageImage.from_array(np.ascontiguousarray(arr), page_no=page_no)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 3-document generated corpus shared by CLI/pipeline tests."""
    from finparse.synth import make_corpus

    root = tmp_path_factory.mktemp("corpus")
    return make_corpus(root / "corpus", n_docs=3, seed=7)
