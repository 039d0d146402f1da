"""Collects one line per acceptance criterion for the terminal summary."""

from __future__ import annotations

RESULTS: list[str] = []


def check(label: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f" :: {detail}" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line
