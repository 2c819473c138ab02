import numpy as np
import pytest

from gspvoice.corpus import make_synthetic_corpus
from gspvoice.latent import PcaBasis, fit_pca


@pytest.fixture(scope="session")
def fitted_basis() -> PcaBasis:
    """10-component basis fit on the synthetic corpus fixture."""
    corpus = make_synthetic_corpus(n=400, d=64, n_clusters=24, seed=1)
    return fit_pca(corpus, 10)


@pytest.fixture(scope="session")
def small_corpus() -> np.ndarray:
    return make_synthetic_corpus(n=400, d=64, n_clusters=24, seed=1)


@pytest.fixture(scope="session")
def toy_basis() -> PcaBasis:
    """Hand-built 4-component basis in 8 dimensions with known sigmas."""
    comps = np.eye(8)[:4]
    sigma = np.array([2.0, 1.5, 1.0, 0.5])
    evr = np.array([0.4, 0.3, 0.2, 0.1])
    mean = np.full(8, 0.05)
    return PcaBasis(mean=mean, components=comps, sigma=sigma, explained_variance_ratio=evr)
