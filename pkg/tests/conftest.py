import pytest

from hiercls.taxonomy import LevelSpec, Taxonomy

IPC_LEVELS = [
    LevelSpec("Section", frozenset({"A", "C", "F", "G", "H"}), {}),
    LevelSpec(
        "Class",
        frozenset({"A01", "C12", "F02", "G06", "H03"}),
        {"A01": "A", "C12": "C", "F02": "F", "G06": "G", "H03": "H"},
    ),
    LevelSpec(
        "Subclass",
        frozenset({"A01C", "A01H", "C12N", "F02C", "F02M", "G06F", "H03K", "H03L"}),
        {
            "A01C": "A01",
            "A01H": "A01",
            "C12N": "C12",
            "F02C": "F02",
            "F02M": "F02",
            "G06F": "G06",
            "H03K": "H03",
            "H03L": "H03",
        },
    ),
]

CLOCK_GENERATOR_OUTPUT = """\
Step 1 — Section
Brief Justification: The invention concerns electronic signal generation and control using electronic circuits (delay-locked loop, delay lines).
Decision: \\box{H}

Step 2 — Class
Brief Justification: It focuses on fundamental electronic circuitry for generating and manipulating clock signals, which falls under basic electronic circuit arrangements.
Decision: \\box{H03}

Step 3 — Subclass
Brief Justification: The core is a delay-locked loop with delay lines for phase control, i.e., automatic control of signal phase and oscillation frequency.
Decision: \\box{H03L}
"""


@pytest.fixture
def ipc():
    return Taxonomy("ipc-mini", IPC_LEVELS)


@pytest.fixture
def clock_output():
    return CLOCK_GENERATOR_OUTPUT
