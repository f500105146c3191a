"""Runs every acceptance criterion and prints one pass/fail line per criterion."""

import pytest

from bachelier import validation


@pytest.mark.parametrize("number", sorted(validation.CRITERIA))
def test_acceptance_criterion(number, capsys):
    name, fn = validation.CRITERIA[number]
    rows = fn()
    passed = bool(rows) and all(r.passed for r in rows)
    with capsys.disabled():
        print(f"\ncriterion {number:2d} {name:<18s} {'PASS' if passed else 'FAIL'} "
              f"({sum(r.passed for r in rows)}/{len(rows)} checks)")
        for r in rows:
            print("    " + r.line())
    failing = [r.line() for r in rows if not r.passed]
    assert passed, "\n".join(failing)
