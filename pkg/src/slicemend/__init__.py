"""Rare-slice model repair toolkit.

Pipeline stages: ingest attribute-annotated prediction records, mine
rare low-accuracy slices, plan attribute-edit generation jobs, drive
generation/filter backends over a versioned wire protocol, merge kept
samples into an augmentation manifest, and report before/after repair.
"""

__version__ = "0.1.0"

# Versions of the on-disk and on-wire formats this build reads and writes.
FORMAT_VERSION = "1"
WIRE_VERSION = "1"
