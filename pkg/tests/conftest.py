import hypothesis
import pytest

from topodef import scenario as scenario_mod

hypothesis.settings.register_profile(
    "topodef", max_examples=25, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("topodef")


@pytest.fixture(scope="session")
def scenario2():
    return scenario_mod.load_bundled("scenario2")


TINY_SCENARIO_DOC = {
    "subnets": [
        {"name": "U", "importance": "User", "hosts": ["T0", "T1"]},
        {"name": "E", "importance": "Enterprise", "hosts": ["E0"]},
        {"name": "O", "importance": "Operational", "hosts": ["OpServer0"]},
    ],
    "hosts": [
        {"name": "T0", "ports": [22], "entry": True},
        {"name": "T1", "ports": [22]},
        {"name": "E0", "ports": [22, 135]},
        {"name": "OpServer0", "ports": [22]},
    ],
    "bridges": [["T1", "E0"], ["E0", "OpServer0"]],
}


@pytest.fixture()
def tiny_scenario():
    import json

    return scenario_mod.load_scenario(json.dumps(TINY_SCENARIO_DOC))
