"""Shared record of acceptance-criterion verdicts, printed by conftest after the run."""

LINES: dict = {}


def record(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    LINES[number] = line
    print(line)
    return line
