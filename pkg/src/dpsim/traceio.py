"""Campaign files: ``traces.csv`` (one row per sample, integer ns) and
``trials.json`` (one object per trial).

Without ``debug`` the metadata hides which SPAD fired and which branch
survived; the trigger source is reduced to ``Photon`` or ``DarkCount``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .apparatus import TrialRecord

TRACES_FILE = "traces.csv"
TRIALS_FILE = "trials.json"
TRACE_HEADER = ("trial_id", "t_ns", "intensity")


def to_ns(seconds: float) -> int | str:
    if math.isinf(seconds):
        return "inf"
    return int(round(seconds * 1e9))


def trial_metadata(rec: TrialRecord, debug: bool = False) -> dict:
    source = rec.trigger_source.value
    meta = {
        "trial_id": rec.trial_id,
        "trigger_time_ns": to_ns(rec.trigger_time),
        "trigger_source": source if debug or source == "Photon" else "DarkCount",
        "collapse_time_ns": to_ns(rec.collapse_time),
        "seed": rec.seed,
    }
    if debug:
        meta["surviving_branch"] = rec.surviving_branch.value
    return meta


def write_traces(path: Path, records: Iterable[TrialRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for rec in records:
            t_ns = np.rint(rec.times * 1e9).astype(np.int64)
            for t, i in zip(t_ns.tolist(), rec.intensity.tolist()):
                w.writerow((rec.trial_id, t, repr(i)))


def write_campaign(out_dir: Path, records: Sequence[TrialRecord], debug: bool = False) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_traces(out_dir / TRACES_FILE, records)
    meta = [trial_metadata(r, debug) for r in records]
    (out_dir / TRIALS_FILE).write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


@dataclass
class PublicTrial:
    """A trial as seen from the public files only."""

    trial_id: int
    trigger_time: float
    trigger_source: str
    times: np.ndarray
    intensity: np.ndarray
    surviving_branch: str | None = None


def read_campaign(campaign_dir: Path, debug: bool = False) -> list[PublicTrial]:
    campaign_dir = Path(campaign_dir)
    traces_path, trials_path = campaign_dir / TRACES_FILE, campaign_dir / TRIALS_FILE
    if not traces_path.is_file() or not trials_path.is_file():
        raise FileNotFoundError(f"{campaign_dir} is not a campaign directory "
                                f"(needs {TRACES_FILE} and {TRIALS_FILE})")
    meta = json.loads(trials_path.read_text(encoding="utf-8"))
    data = np.loadtxt(traces_path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 0].astype(np.int64)
    order = np.argsort(ids, kind="stable")
    ids, data = ids[order], data[order]
    trials = []
    for m in meta:
        lo = np.searchsorted(ids, m["trial_id"], side="left")
        hi = np.searchsorted(ids, m["trial_id"], side="right")
        rows = data[lo:hi]
        source = m["trigger_source"]
        if not debug and source.startswith("DarkCount"):
            source = "DarkCount"
        trials.append(PublicTrial(
            trial_id=int(m["trial_id"]),
            trigger_time=float(m["trigger_time_ns"]) * 1e-9,
            trigger_source=source,
            times=rows[:, 1] * 1e-9,
            intensity=rows[:, 2],
            surviving_branch=m.get("surviving_branch") if debug else None,
        ))
    return trials
