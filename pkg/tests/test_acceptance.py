"""Acceptance battery, one test per criterion, at full stated sizes.

Each criterion prints its own pass/fail line (visible with pytest -s or via
the command-line selftest, which runs the same functions).
"""

import pytest

from saslab import acceptance


def _run(number):
    result = acceptance.CRITERIA[number]()
    print(result.line())
    assert result.passed, result.line()


def test_criterion_01_honest_completeness():
    _run(1)


def test_criterion_02_kex2_collision_demo():
    _run(2)


def test_criterion_03_same_key_attack():
    _run(3)


def test_criterion_04_replica_and_combined():
    _run(4)


def test_criterion_05_defended_protocols_hold():
    _run(5)


def test_criterion_06_commit_to_secret_abort():
    _run(6)


def test_criterion_07_four_six_equivalence():
    _run(7)


def test_criterion_08_commitment_properties():
    _run(8)


def test_criterion_09_sweep_tracks_curve():
    _run(9)


def test_criterion_10_reproducible_reports():
    _run(10)
