"""Published reference tables shipped as CSV.

These rows define the report *shape* (row names and column order) that the
ablation suites regenerate.  The numbers are reference values from the
original full-scale study; they are never used as expected results for
desk-scale runs.
"""

from __future__ import annotations

import csv
from importlib import resources

SUITE_TABLES = {"attention": "table1.csv", "architecture": "table2.csv"}


def reference_rows(suite: str) -> list:
    """Rows of the reference table for a suite, header first."""
    if suite not in SUITE_TABLES:
        raise KeyError(f"unknown suite {suite!r}")
    ref = resources.files("aresnet_vit").joinpath("reference", SUITE_TABLES[suite])
    with ref.open("r") as fh:
        return list(csv.reader(fh))


def suite_variants(suite: str) -> list:
    """Variant names for a suite, in table row order."""
    return [row[0] for row in reference_rows(suite)[1:]]
