import json
from pathlib import Path

import pytest

from semforge.executor import Engine
from semforge.gateway import ChatMessage, Gateway, MockProvider, MockRule, ModelProfile
from semforge.model import Dataset, Document, load_dataset

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


class ScriptedProvider:
    """Replies computed by a function of the joined prompt text; counts calls."""

    def __init__(self, fn):
        self.fn = fn
        self.call_count = 0
        self.calls = []

    def complete(self, messages, model):
        text = "\n".join(m.content for m in messages)
        self.call_count += 1
        self.calls.append(text)
        return self.fn(text)


def mock_gateway(rules: list[tuple[str, str]]) -> Gateway:
    return Gateway(MockProvider([MockRule(m, r) for m, r in rules]))


@pytest.fixture
def mock_profile():
    return ModelProfile("mock-small", context_limit_tokens=128_000, provider="mock")


@pytest.fixture
def engine_factory(tmp_path):
    def make(gateway: Gateway, profiles=None, max_parallel=1, subdir="cache", **kw) -> Engine:
        return Engine(gateway, cache_dir=tmp_path / subdir, profiles=profiles,
                      max_parallel=max_parallel, **kw)
    return make


@pytest.fixture
def reviews_dataset() -> Dataset:
    return load_dataset(FIXTURES / "course_reviews" / "reviews.json", dataset_id="reviews")


@pytest.fixture
def symptoms_dataset() -> Dataset:
    return load_dataset(FIXTURES / "symptoms" / "docs.json", dataset_id="docs")


@pytest.fixture
def medical_dataset() -> Dataset:
    return load_dataset(FIXTURES / "medical" / "transcripts.json", dataset_id="transcripts")


def docs_of(pairs) -> list[Document]:
    return [Document(f"d{i}", dict(attrs)) for i, attrs in enumerate(pairs)]
