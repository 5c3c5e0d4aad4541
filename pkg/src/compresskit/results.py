"""Result records and their on-disk formats.

Each pipeline run produces one JSON record (human-readable, with the
per-stage boundary snapshots) plus one or more flat summary lines (one
per early-exit threshold).  Summary files carry a versioned header and a
fixed field order.  Wall-clock timing lives in the record's metadata
field, which determinism comparisons ignore; everything else is
byte-stable across re-runs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .costs import CostReport

SUMMARY_HEADER = ("OCRESv1 config_id,pipeline_tag,stage_params,seed,tau,accuracy,"
                  "bitops_cr,cr,storage_bits,expected_bitops")


@dataclass
class BoundarySnapshot:
    stage: str               # "base" or the stage letter
    accuracy: float
    cost: CostReport


@dataclass
class ResultRecord:
    config_id: str
    pipeline_tag: str
    stage_params: str
    seed: int
    tau: Optional[float]
    accuracy: float
    bitops_cr: float
    cr: float
    storage_bits: int
    expected_bitops: float
    baseline_accuracy: float
    finetune_lr: float
    boundaries: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def summary_line(self) -> str:
        tau = "-" if self.tau is None else _fmt(self.tau)
        return ",".join([
            self.config_id, self.pipeline_tag, self.stage_params, str(self.seed), tau,
            _fmt(self.accuracy), _fmt(self.bitops_cr), _fmt(self.cr),
            str(self.storage_bits), _fmt(self.expected_bitops),
        ])


def _fmt(x: float) -> str:
    return repr(float(x))


def parse_summary(path) -> list:
    """Rows of a summary file as dicts with typed fields."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("OCRESv1"):
        raise ValueError(f"{path}: not a results summary (missing OCRESv1 header)")
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split(",")
        if len(parts) != 10:
            raise ValueError(f"{path}: malformed summary row: {ln!r}")
        rows.append({
            "config_id": parts[0], "pipeline_tag": parts[1], "stage_params": parts[2],
            "seed": int(parts[3]), "tau": None if parts[4] == "-" else float(parts[4]),
            "accuracy": float(parts[5]), "bitops_cr": float(parts[6]),
            "cr": float(parts[7]), "storage_bits": int(parts[8]),
            "expected_bitops": float(parts[9]),
        })
    return rows


def write_summary(records: list, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [SUMMARY_HEADER] + [r.summary_line() for r in records]
    path.write_text("\n".join(lines) + "\n")


def record_to_json(records: list) -> dict:
    """One config's records (all thresholds share boundaries) as a JSON doc."""
    first = records[0]
    return {
        "format": "OCRECv1",
        "config_id": first.config_id,
        "pipeline_tag": first.pipeline_tag,
        "stage_params": first.stage_params,
        "seed": first.seed,
        "baseline_accuracy": first.baseline_accuracy,
        "finetune_lr": first.finetune_lr,
        "boundaries": [{"stage": b.stage, "accuracy": b.accuracy,
                        "cost": b.cost.to_record()} for b in first.boundaries],
        "outcomes": [{"tau": r.tau, "accuracy": r.accuracy, "bitops_cr": r.bitops_cr,
                      "cr": r.cr, "storage_bits": r.storage_bits,
                      "expected_bitops": r.expected_bitops} for r in records],
        "metadata": first.metadata,
    }


def write_records(records: list, out_dir) -> None:
    """Persists records grouped by config: JSON per config + one summary."""
    out_dir = Path(out_dir)
    (out_dir / "records").mkdir(parents=True, exist_ok=True)
    by_config: dict = {}
    for r in records:
        by_config.setdefault(r.config_id, []).append(r)
    for config_id, group in by_config.items():
        doc = record_to_json(group)
        path = out_dir / "records" / f"{config_id}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    write_summary(records, out_dir / "summary.csv")


def load_record_docs(out_dir) -> list:
    """All per-config JSON docs under ``out_dir``/records, sorted by id."""
    rec_dir = Path(out_dir) / "records"
    if not rec_dir.is_dir():
        raise ValueError(f"{out_dir}: no records directory")
    docs = []
    for path in sorted(rec_dir.glob("*.json")):
        docs.append(json.loads(path.read_text()))
    if not docs:
        raise ValueError(f"{rec_dir}: empty records directory")
    return docs


# ---------------------------------------------------------------------------
# pairwise decision files


DECISIONS_HEADER = "OCDECv1"


def write_decisions(path, aggregated: list, samples: list) -> None:
    """Decision file: aggregated ``edge``/``open`` rows plus per-seed detail.

    aggregated: (kind_a, kind_b, winner_tag_or_None, margin) tuples.
    samples: (pair_tag, seed, decision_str, hv_first, hv_second) tuples.
    """
    lines = [DECISIONS_HEADER]
    for a, b, winner, margin in aggregated:
        if winner is None:
            lines.append(f"open {a} {b}")
        else:
            lines.append(f"edge {winner[0]} {winner[1]} {_fmt(margin)}")
    for pair_tag, seed, decision, hv1, hv2 in samples:
        lines.append(f"sample {pair_tag} seed={seed} decision={decision} "
                     f"hv_first={_fmt(hv1)} hv_second={_fmt(hv2)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def parse_decisions(path) -> list:
    """Aggregated edges from a decision file; conflicting pairs are rejected."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != DECISIONS_HEADER:
        raise ValueError(f"{path}: not a decisions file (missing {DECISIONS_HEADER})")
    edges = []
    seen: dict = {}
    for ln in lines[1:]:
        parts = ln.split()
        if not parts or parts[0] in ("open", "sample"):
            continue
        if parts[0] != "edge" or len(parts) not in (3, 4):
            raise ValueError(f"{path}: malformed decision row: {ln!r}")
        a, b = parts[1], parts[2]
        margin = float(parts[3]) if len(parts) == 4 else 0.0
        key = frozenset((a, b))
        if key in seen and seen[key] != (a, b):
            raise ValueError(
                f"{path}: inconsistent input: conflicting decisions for pair "
                f"{a}/{b} ({seen[key][0]}->{seen[key][1]} vs {a}->{b})")
        seen[key] = (a, b)
        edges.append((a, b, margin))
    return edges
