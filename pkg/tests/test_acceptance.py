"""Acceptance criteria 1-11; each test prints one pass/fail line at the stated tolerance."""

import pytest

from hillspec import acceptance

NAMES = {
    1: "free_discriminant",
    2: "wronskian",
    3: "newton_vs_galerkin",
    4: "biorthonormality",
    5: "critical_values",
    6: "parseval",
    7: "free_reconstruction",
    8: "domain_equivalence",
    9: "ess_grouping",
    10: "exponent_calibration",
    11: "spectrality_rules",
}


@pytest.mark.parametrize("number", sorted(NAMES), ids=[f"{n:02d}_{NAMES[n]}" for n in sorted(NAMES)])
def test_criterion(number, capsys):
    r = acceptance.run([number], echo=None)[0]
    with capsys.disabled():
        print("\n" + r.line())
        for note in r.notes:
            print("    note:", note)
    assert r.passed, r.line()
