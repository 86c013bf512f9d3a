"""
Shared fixtures: bundled and test worlds, story loading and synthetic instances.
"""

from fractions import Fraction
from pathlib import Path

import pytest

from norabench import config
from norabench.engine.grounding import story_from_program
from norabench.engine.parser import parse_file
from norabench.generation.story_generator import harvest_instances
from norabench.models.program import GroundAtom
from norabench.models.schemas import MetricBundle, ProblemInstance
from norabench.models.story import Story

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def nora_world():
    return parse_file(config.DATA_DIR / "nora_world.lp")


@pytest.fixture(scope="session")
def mini_world():
    return parse_file(config.MINI_WORLD)


@pytest.fixture(scope="session")
def grandma_world():
    return parse_file(FIXTURES / "grandma_world.lp")


@pytest.fixture(scope="session")
def load_story():
    """Load tests/fixtures/<name> as a Story under the given world; the story id is the file stem."""

    def _load(name: str, world) -> Story:
        path = FIXTURES / name
        return story_from_program(parse_file(path), world, story_id=path.stem)

    return _load


@pytest.fixture(scope="session")
def instance_for():
    """Harvest a story and return the instance for one query pair."""

    def _instance(world, story: Story, source: str, target: str) -> ProblemInstance:
        for instance in harvest_instances(world, story):
            if (instance.source, instance.target) == (source, target):
                return instance
        raise LookupError(f"no instance for ({source}, {target}) in {story.story_id}")

    return _instance


@pytest.fixture
def make_instance():
    """Synthetic instance over a two-person story with the given metric values."""

    def _make(
        n: int,
        depth: int = 1,
        width: int = 1,
        bl="1/2",
        opec: int = 0,
        positive_depth=None,
        labels=("knows",),
        ambiguous: bool = False,
    ) -> ProblemInstance:
        story = Story(
            story_id=f"syn{n}",
            facts=(GroundAtom("knows", ("a", "b")),),
            entities={"a": "person", "b": "person"},
        )
        if ambiguous:
            story = Story(
                story_id=f"syn{n}",
                facts=story.facts,
                ambiguous=(
                    {"choices": (GroundAtom("likes", ("a", "b")), GroundAtom("likes", ("a", "c"))), "lower": 1, "upper": 1},
                ),
                entities={"a": "person", "b": "person", "c": "person"},
            )
        metrics = MetricBundle(
            depth=depth,
            width=width,
            bl=Fraction(bl),
            opec=opec,
            positive_depth=depth if positive_depth is None else positive_depth,
        )
        return ProblemInstance(
            instance_id=f"syn{n}:a:b",
            story=story,
            source="a",
            target="b",
            labels=tuple(labels),
            metrics=metrics,
        )

    return _make
