import sys
from pathlib import Path

import pytest

from ljpbench.config import ExperimentConfig
from ljpbench.corpus import Case, write_canonical
from ljpbench.prompting import load_template

sys.path.insert(0, str(Path(__file__).parent))

# Hand-made Chinese corpus with three charges whose facts share
# charge-specific characters, so BM25 retrieval behaves like the real task.
TRAIN_CASES = [
    Case("t1", "被告人深夜入室盗窃财物数千元", "盗窃"),
    Case("t2", "被告人在商铺内盗窃现金和手机", "盗窃"),
    Case("t3", "被告人持刀抢劫过路行人财物", "抢劫"),
    Case("t4", "被告人结伙抢劫出租车司机", "抢劫"),
    Case("t5", "被告人虚构项目诈骗被害人钱款", "诈骗"),
    Case("t6", "被告人通过网络诈骗多名被害人", "诈骗"),
]
TEST_CASES = [
    Case("q1", "被告人翻墙入室盗窃大量财物", "盗窃"),
    Case("q2", "被告人持械抢劫夜间行人", "抢劫"),
    Case("q3", "被告人编造谎言诈骗老人积蓄", "诈骗"),
]


@pytest.fixture
def zh_template():
    return load_template("zh")


@pytest.fixture
def toy_train():
    return list(TRAIN_CASES)


@pytest.fixture
def toy_test():
    return list(TEST_CASES)


def write_corpus_files(directory: Path, train, test, validation=None):
    """Write canonical JSONL splits and return their paths."""
    paths = {
        "train": directory / "train.jsonl",
        "test": directory / "test.jsonl",
    }
    write_canonical(train, paths["train"])
    write_canonical(test, paths["test"])
    if validation is not None:
        paths["validation"] = directory / "validation.jsonl"
        write_canonical(validation, paths["validation"])
    return paths


def make_config(tmp_path: Path, train, test, validation=None, **sections) -> ExperimentConfig:
    """Config over freshly written corpus files; sections merge on top of defaults."""
    paths = write_corpus_files(tmp_path, train, test, validation)
    data = {
        "corpus": {"train": str(paths["train"]), "test": str(paths["test"])},
        "run": {"output_dir": str(tmp_path / "out")},
    }
    if validation is not None:
        data["corpus"]["validation"] = str(paths["validation"])
    for name, section in sections.items():
        merged = data.get(name, {})
        merged.update(section)
        data[name] = merged
    return ExperimentConfig.from_dict(data)
