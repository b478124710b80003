"""Shared fixtures: a synthetic molecule corpus and real-data discovery.

The synthetic corpus pairs ring scaffolds with acyclic tails so that a
scaffold split produces several groups, and labels molecules by whether
they contain oxygen, a property a graph network can read off the node
features and one that both splits see in both classes.

Real benchmark CSVs are looked up under MOLBAYES_DATA_DIR (default
./data); tests that need them skip with a pointer when absent.
"""

import os

import pytest

# sixteen oxygen-free ring scaffolds (one scaffold key each) plus a
# handful of acyclic molecules that all share the empty key; with the
# oxygen-based label below every scaffold group mixes both classes, so
# any split keeps both classes on every side, and the groups are small
# enough that the greedy quota fill reaches the test set
RING_CORES = (
    "C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1",
    "C1CCCCCC1", "C1CCCCCCC1", "c1ccccc1", "c1ccncc1",
    "c1cncnc1", "c1ccc2ccccc2c1", "C1CCNC1", "C1CCNCC1",
    "C1CNCCN1", "C1CCSC1", "C1CCSCC1", "c1ccsc1",
)
TAILS = ("", "C", "O")
CHAINS = ("CC", "CCC", "CCCC", "CCO", "CCCO", "CCN", "CCCN", "CCCC(C)C")


def synthetic_rows() -> list[tuple[str, int]]:
    rows = []
    for core in RING_CORES:
        for tail in TAILS:
            smi = core + tail
            rows.append((smi, int("O" in smi or "o" in smi)))
    for smi in CHAINS:
        rows.append((smi, int("O" in smi)))
    return rows


@pytest.fixture(scope="session")
def synthetic_csv(tmp_path_factory) -> str:
    path = tmp_path_factory.mktemp("data") / "synthetic.csv"
    lines = ["smiles,activity"]
    lines += [f"{smi},{label}" for smi, label in synthetic_rows()]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def data_dir() -> str:
    return os.environ.get("MOLBAYES_DATA_DIR", "data")


def real_dataset(name: str) -> str:
    """Path of a benchmark CSV, or a skip if it is not on disk."""
    path = os.path.join(data_dir(), f"{name}.csv")
    if not os.path.isfile(path):
        pytest.skip(f"benchmark file {path} not found; place the {name} "
                    f"CSV there or set MOLBAYES_DATA_DIR")
    return path
