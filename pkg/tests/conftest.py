from __future__ import annotations

import numpy as np
import pytest

from hybrid_nids.ingest import KDD_FEATURES, MALMEM_WIDTH


def kdd_row(outcome: str, protocol: str = "tcp", service: str = "http", flag: str = "SF", base: float = 0.0) -> str:
    numeric = [f"{base + j:g}" for j in range(len(KDD_FEATURES) - 4)]
    return ",".join(["0", protocol, service, flag, *numeric, outcome])


def malmem_header() -> list[str]:
    return ["Category", *(f"feat_{j}" for j in range(MALMEM_WIDTH - 2)), "Class"]


def malmem_row(category: str, cls: str, base: float) -> str:
    return ",".join([category, *(f"{base + 0.5 * j:g}" for j in range(MALMEM_WIDTH - 2)), cls])


@pytest.fixture
def kdd_file(tmp_path):
    rows = [
        kdd_row("normal.", base=0),
        kdd_row("smurf.", "icmp", "ecr_i", base=1),
        kdd_row("smurf.", "icmp", "ecr_i", base=1),  # exact duplicate
        kdd_row("neptune.", "tcp", "private", "S0", base=2),
        kdd_row("rootkit.", "udp", "telnet", base=3),
        kdd_row("ipsweep.", "icmp", "eco_i", base=4),
        kdd_row("guess_passwd.", "tcp", "telnet", "RSTO", base=5),
        kdd_row("normal.", "udp", "domain_u", base=6),
    ]
    path = tmp_path / "kdd.csv"
    path.write_text("\n".join(rows) + "\n")
    return path


@pytest.fixture
def malmem_file(tmp_path):
    lines = [",".join(malmem_header())]
    for i in range(6):
        lines.append(malmem_row("Benign", "Benign", i))
        lines.append(malmem_row(f"Ransomware-Family{i}", "Malicious", 100 + i))
    path = tmp_path / "malmem.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def record():
    """Record the verdict line of one acceptance criterion."""

    def _record(number: int, title: str, passed: bool | None, detail: str = "") -> None:
        verdict = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        ACCEPTANCE_LINES[number] = f"criterion {number:>2} [{verdict}] {title}" + (f": {detail}" if detail else "")

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
