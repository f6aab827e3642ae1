from __future__ import annotations

import json
from pathlib import Path

import pytest

from oversight.gateway import EchoBackend, Gateway, StaticBackend
from oversight.simulator import PlaybookBackend, load_oracle_rules, load_playbooks

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def flat_five_tree_text() -> str:
    return (FIXTURES / "trees" / "flat_five.json").read_text()


@pytest.fixture(scope="session")
def flat_five_playbooks() -> dict:
    return load_playbooks(FIXTURES / "playbooks" / "flat_five.json")


@pytest.fixture()
def flat_five_oracle():
    return load_oracle_rules(FIXTURES / "oracle" / "flat_five.yaml")


@pytest.fixture(scope="session")
def flat_five_rubrics() -> list[str]:
    doc = json.loads((FIXTURES / "rubrics" / "flat_five.json").read_text())
    return doc["rubrics"]


@pytest.fixture(scope="session")
def news_tree_text() -> str:
    return (FIXTURES / "trees" / "news_site_initial.json").read_text()


@pytest.fixture(scope="session")
def news_tree_updated_text() -> str:
    return (FIXTURES / "trees" / "news_site_updated.json").read_text()


@pytest.fixture(scope="session")
def news_playbooks() -> dict:
    return load_playbooks(FIXTURES / "playbooks" / "news_site.json")


def scripted_gateway(
    playbooks: dict,
    init_tree: str,
    *,
    updater: str = "NO_CHANGES_NEEDED",
    extra_backends: dict | None = None,
    clock=None,
) -> Gateway:
    """Offline gateway: playbook policy, fixed updater, echo generator."""
    backends = {
        "interaction_policy": PlaybookBackend(playbooks, init_tree=init_tree),
        "tree_updater": StaticBackend(updater),
        "doc_generator": EchoBackend(),
    }
    if extra_backends:
        backends.update(extra_backends)
    kwargs = {}
    if clock is not None:
        kwargs["clock"] = clock
    return Gateway(backends, **kwargs)
