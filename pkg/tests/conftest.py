import pytest

from rpclink.catalog import get_profile
from rpclink.detector import TrainHyperparams, build_training_set, train
from rpclink.experiment import synth_training_corpus


@pytest.fixture(scope="session")
def metamask_profile():
    return get_profile("MetaMask")


@pytest.fixture(scope="session")
def small_corpus(metamask_profile):
    """30 labeled MetaMask sessions, 10 transactions each."""
    return synth_training_corpus(metamask_profile, sessions=30,
                                 txs_per_session=10, seed=5)


@pytest.fixture(scope="session")
def small_dataset(small_corpus, metamask_profile):
    return build_training_set(small_corpus, metamask_profile, r=4,
                              n_per_class=250, seed=7)


@pytest.fixture(scope="session")
def small_classifier(small_dataset):
    return train(small_dataset, TrainHyperparams(n_trees=60, max_depth=12, seed=11))
