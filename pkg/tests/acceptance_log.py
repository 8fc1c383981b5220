"""Collects one verdict line per acceptance criterion."""
RESULTS: dict[int, str] = {}


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number} ({title}): {detail}"
    RESULTS[number] = line
    print(line)
