"""Merge kept synthetic samples into a training manifest and report repairs.

The manifest is train-side only: augmentation never touches validation
membership, and repair reports recompute every number from raw records
(no cached state), so regenerating a report from the same files is
bit-identical. Retraining itself is external; the manifest ships with a
retrain-config stub carrying the documented defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import FORMAT_VERSION
from .errors import FormatVersionError, ReportError
from .filtering import FilterVerdict
from .mining import mine_bug_slices
from .planning import GenerationJob
from .records import Dataset, overall_accuracy
from .slices import MinerConfig, Slice, slice_stats

RETRAIN_DEFAULTS = {
    "epochs": 20,
    "batch_size": 64,
    "optimizer": "adam",
    "learning_rate": 1e-4,
    "weight_decay": 1e-3,
    "loss": "cross_entropy",
}


@dataclass(frozen=True)
class ManifestEntry:
    generated_ref: str
    label: str
    attributes: dict[str, str]
    source_image_id: str
    slice_key: str
    job_id: str
    weight: float = 1.0

    def to_json(self) -> dict:
        return {
            "generated_ref": self.generated_ref,
            "label": self.label,
            "attributes": dict(self.attributes),
            "weight": self.weight,
            "provenance": {
                "source_image_id": self.source_image_id,
                "slice": self.slice_key,
                "job_id": self.job_id,
            },
        }


@dataclass
class AugmentationManifest:
    base_dataset_ref: str
    target_count: int
    entries: list[ManifestEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def shortfall(self) -> bool:
        return len(self.entries) < self.target_count

    def counts_per_slice(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self.entries:
            counts[entry.slice_key] = counts.get(entry.slice_key, 0) + 1
        return counts

    def header_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "augmentation_manifest",
            "base_dataset_ref": self.base_dataset_ref,
            "target_count": self.target_count,
            "entry_count": len(self.entries),
            "shortfall": self.shortfall,
            "counts_per_slice": self.counts_per_slice(),
            "warnings": list(self.warnings),
        }


def build_manifest(
    base: Dataset,
    verdicts: list[FilterVerdict],
    jobs: list[GenerationJob],
    target_count: int,
    base_dataset_ref: str = "",
) -> AugmentationManifest:
    """First ``target_count`` kept verdicts in plan order become entries.

    Each entry's attribute map is its source record's map with the
    job's substitutions applied, which satisfies the target slice by
    construction; fewer keeps than requested emits a shortfall warning
    but still produces the manifest.
    """
    by_id = {job.job_id: job for job in jobs}
    manifest = AugmentationManifest(
        base_dataset_ref=base_dataset_ref, target_count=target_count
    )
    for verdict in verdicts:
        if len(manifest.entries) >= target_count:
            break
        if not verdict.kept:
            continue
        job = by_id.get(verdict.job_id)
        if job is None:
            raise ReportError(f"verdict for unknown job {verdict.job_id!r}")
        source = base.get(job.spec.source_image_id)
        if source.label != job.spec.preserved_label:
            raise ReportError(
                f"job {job.job_id}: spec label {job.spec.preserved_label!r} does not "
                f"match source label {source.label!r}"
            )
        attrs = job.spec.edited_attributes(source.attributes)
        if not job.spec.target_slice.matches(
            type(source)(
                image_id=source.image_id,
                split=source.split,
                label=source.label,
                prediction=source.prediction,
                attributes=attrs,
                source_ref=source.source_ref,
            )
        ):
            raise ReportError(
                f"job {job.job_id}: edited attributes do not satisfy slice "
                f"{job.spec.target_slice}"
            )
        manifest.entries.append(
            ManifestEntry(
                generated_ref=verdict.generated_ref,
                label=job.spec.preserved_label,
                attributes=attrs,
                source_image_id=job.spec.source_image_id,
                slice_key=job.spec.target_slice.key,
                job_id=job.job_id,
            )
        )
    if manifest.shortfall:
        manifest.warnings.append(
            f"shortfall: {len(manifest.entries)} kept entries for a target of {target_count}"
        )
    return manifest


def write_manifest(manifest: AugmentationManifest, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest.header_json(), sort_keys=True) + "\n")
        for entry in manifest.entries:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> AugmentationManifest:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if (
            header.get("format_version") != FORMAT_VERSION
            or header.get("kind") != "augmentation_manifest"
        ):
            raise FormatVersionError(f"{path}: not a version-{FORMAT_VERSION} manifest")
        manifest = AugmentationManifest(
            base_dataset_ref=header.get("base_dataset_ref", ""),
            target_count=header.get("target_count", 0),
            warnings=list(header.get("warnings", [])),
        )
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            prov = doc["provenance"]
            manifest.entries.append(
                ManifestEntry(
                    generated_ref=doc["generated_ref"],
                    label=doc["label"],
                    attributes=dict(doc["attributes"]),
                    source_image_id=prov["source_image_id"],
                    slice_key=prov["slice"],
                    job_id=prov["job_id"],
                    weight=doc.get("weight", 1.0),
                )
            )
    return manifest


def augmented_train_fraction(
    manifest: AugmentationManifest, base: Dataset, slc: Slice
) -> float:
    """Train-support fraction of a slice after merging the manifest."""
    base_support = slice_stats(base, slc).train_support
    added_matching = sum(
        1
        for entry in manifest.entries
        if all(entry.attributes.get(a) == v for a, v in slc.conditions)
    )
    n_train = base.split_size("train") + len(manifest.entries)
    return (base_support + added_matching) / n_train


def make_retrain_stub(manifest_ref: str, records_ref: str) -> dict:
    stub = {
        "format_version": FORMAT_VERSION,
        "kind": "retrain_config_stub",
        "base_records": records_ref,
        "augmentation_manifest": manifest_ref,
    }
    stub.update(RETRAIN_DEFAULTS)
    return stub


@dataclass
class RepairReport:
    overall_before: float
    overall_after: float
    per_slice: list[dict]
    bug_count_before: int
    bug_count_after: int
    config: MinerConfig
    ledger_summary: dict | None = None

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "repair_report",
            "overall_before": self.overall_before,
            "overall_after": self.overall_after,
            "overall_delta": self.overall_after - self.overall_before,
            "per_slice": self.per_slice,
            "bug_count_before": self.bug_count_before,
            "bug_count_after": self.bug_count_after,
            "config": self.config.to_json(),
            "ledger_summary": self.ledger_summary,
        }


def repair_report(
    before: Dataset,
    after: Dataset,
    slices: list[Slice],
    cfg: MinerConfig,
    ledger_summary: dict | None = None,
) -> RepairReport:
    """Before/after validation accuracies plus bug counts under one config.

    Both datasets must cover the identical validation ids (the
    fixed-validation contract); synthetic entries are train-only and
    never contribute to any accuracy here.
    """
    before_val = {r.image_id for r in before.split_records("val")}
    after_val = {r.image_id for r in after.split_records("val")}
    if before_val != after_val:
        raise ReportError(
            "fixed-validation contract violated: val ids differ "
            f"({len(before_val - after_val)} removed, {len(after_val - before_val)} added)"
        )
    per_slice = []
    for slc in slices:
        stats_before = slice_stats(before, slc)
        stats_after = slice_stats(after, slc)
        acc_before = stats_before.val_accuracy
        acc_after = stats_after.val_accuracy
        per_slice.append(
            {
                "slice": slc.key,
                "acc_before": acc_before,
                "acc_after": acc_after,
                "delta": (acc_after - acc_before)
                if acc_before is not None and acc_after is not None
                else None,
                "val_support": stats_before.val_support,
                "train_support_before": stats_before.train_support,
                "train_support_after": stats_after.train_support,
                "train_fraction_before": stats_before.train_fraction,
                "train_fraction_after": stats_after.train_fraction,
            }
        )
    report_before = mine_bug_slices(before, cfg)
    report_after = mine_bug_slices(after, cfg)
    return RepairReport(
        overall_before=overall_accuracy(before, "val"),
        overall_after=overall_accuracy(after, "val"),
        per_slice=per_slice,
        bug_count_before=len(report_before.bugs),
        bug_count_after=len(report_after.bugs),
        config=cfg,
        ledger_summary=ledger_summary,
    )
