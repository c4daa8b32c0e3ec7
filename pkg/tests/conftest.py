import pytest

from cuprank.core import ContextSchema, EndorsementVocabulary, load_schema, load_vocab


@pytest.fixture(scope="session")
def default_schema():
    from cuprank.core import default_schema_path
    return load_schema(default_schema_path())


@pytest.fixture(scope="session")
def default_vocab():
    from cuprank.core import default_vocab_path
    return load_vocab(default_vocab_path())


@pytest.fixture
def toy_schema():
    return ContextSchema((("OS", ("Windows", "Linux")),
                          ("Browser", ("Firefox", "Chrome")),
                          ("Day", ("Saturday", "Sunday"))))


@pytest.fixture
def toy_vocab():
    return EndorsementVocabulary(("Beach", "Shopping", "Family Friendly"))


@pytest.fixture(scope="session")
def small_corpus(default_schema, default_vocab):
    from cuprank.eval.synthetic import SyntheticConfig, generate
    cfg = SyntheticConfig(seed=3, users=1500, destinations=20, personas=3)
    return generate(cfg, default_schema, default_vocab)


@pytest.fixture(scope="session")
def small_training(small_corpus, default_schema, default_vocab):
    from cuprank.pipeline import TrainConfig, train_pipeline
    reviews, _ = small_corpus
    cfg = TrainConfig(k_min=2, k_max=5, seed=3, restarts=2, min_support=20)
    return train_pipeline(reviews, default_schema, default_vocab, cfg)


@pytest.fixture(scope="session")
def artifact_file(small_training, tmp_path_factory):
    from cuprank.profiles import save_artifact
    path = tmp_path_factory.mktemp("model") / "model.cup"
    save_artifact(small_training.artifact, path)
    return path
