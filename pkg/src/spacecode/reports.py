"""Experiment reports and plot-ready exports."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable digest of a configuration mapping, field order irrelevant."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


@dataclass
class ExperimentReport:
    run_id: str
    mode: str
    seed: int
    config_hash: str = ""
    clean_acc: float | None = None
    asr_mhm: float | None = None
    asr_greedy: float | None = None
    asr_genetic: float | None = None
    transformed_acc: float | None = None
    drop_transform: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        known = {f: d.get(f) for f in cls.__dataclass_fields__}
        known["run_id"] = str(known.get("run_id") or "")
        known["mode"] = str(known.get("mode") or "")
        known["seed"] = int(known.get("seed") or 0)
        known["config_hash"] = str(known.get("config_hash") or "")
        return cls(**known)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


PLOT_COLUMNS = ("mode", "seed", "clean_acc", "asr_mhm", "asr_greedy",
                "asr_genetic", "drop_transform")


def merge_report_files(paths) -> list:
    """Fold experiment and attack report JSON files into one ExperimentReport
    per (mode, seed)."""
    merged: dict = {}

    def slot(mode, seed):
        key = (mode, int(seed))
        if key not in merged:
            merged[key] = ExperimentReport(run_id=f"{mode}-s{seed}", mode=mode, seed=int(seed))
        return merged[key]

    for path in paths:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if "attack" in d:  # AttackReport file
            report = slot(d.get("mode", ""), d.get("seed", 0))
            setattr(report, f"asr_{d['attack']}", d.get("asr"))
        else:
            report = slot(d.get("mode", ""), d.get("seed", 0))
            for fname in ("clean_acc", "transformed_acc", "drop_transform",
                          "asr_mhm", "asr_greedy", "asr_genetic"):
                if d.get(fname) is not None:
                    setattr(report, fname, d[fname])
            if d.get("config_hash"):
                report.config_hash = d["config_hash"]
    ordered = sorted(merged.values(), key=lambda r: (r.mode, r.seed))
    return ordered


def emit_plot_data(reports: list, path):
    """CSV with one row per (mode, seed); absent metrics stay empty."""
    if not reports:
        raise ValueError("emit_plot_data: need at least one report")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLOT_COLUMNS)
        for report in sorted(reports, key=lambda r: (r.mode, r.seed)):
            row = []
            for column in PLOT_COLUMNS:
                value = getattr(report, column)
                row.append("" if value is None else value)
            writer.writerow(row)
