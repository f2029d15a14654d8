"""Per-view room descriptions: persistence, nearest-caption lookup, and
batch captioning of view images through a caption-capable backend.

Captions live in a line-delimited file (one JSON object per line) with
fields scan_id, viewpoint_id, heading_index, elevation_index, text,
source.  Duplicate keys resolve last-wins; the count is kept for
operator visibility.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from panoweave.backends import BackendError, BackendUnavailable, GenerationBackend
from panoweave.geometry import (
    SphericalDirection,
    ViewIndex,
    all_view_indices,
    angular_distance_deg,
)

log = logging.getLogger(__name__)

SOURCE_SERVICE = "service"
SOURCE_IMPORTED = "imported"
N_GRID_VIEWS = 36

CaptionKey = tuple[str, str, ViewIndex]


class CaptionParseError(ValueError):
    """A malformed line in a captions file; carries the 1-based line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class CaptionNotFound(KeyError):
    pass


@dataclass(frozen=True)
class CaptionRecord:
    scan_id: str
    viewpoint_id: str
    view_index: ViewIndex
    text: str
    source: str = SOURCE_IMPORTED

    def __post_init__(self) -> None:
        normalized = " ".join(self.text.split())
        if not normalized:
            raise ValueError("caption text must be non-empty")
        object.__setattr__(self, "text", normalized)
        if self.source not in (SOURCE_SERVICE, SOURCE_IMPORTED):
            raise ValueError(f"unknown caption source {self.source!r}")

    @property
    def key(self) -> CaptionKey:
        return (self.scan_id, self.viewpoint_id, self.view_index)

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "scan_id": self.scan_id,
                "viewpoint_id": self.viewpoint_id,
                "heading_index": self.view_index.heading_index,
                "elevation_index": self.view_index.elevation_index,
                "text": self.text,
                "source": self.source,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str, line_no: int = 0) -> "CaptionRecord":
        try:
            body = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CaptionParseError(line_no, f"invalid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise CaptionParseError(line_no, "record must be a JSON object")
        try:
            return cls(
                scan_id=str(body["scan_id"]),
                viewpoint_id=str(body["viewpoint_id"]),
                view_index=ViewIndex(
                    int(body["heading_index"]), int(body["elevation_index"])
                ),
                text=str(body["text"]),
                source=str(body.get("source", SOURCE_IMPORTED)),
            )
        except CaptionParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CaptionParseError(line_no, str(exc)) from exc


class CaptionStore:
    """In-memory caption index keyed by (scan, viewpoint, view index)."""

    def __init__(self) -> None:
        self._records: dict[CaptionKey, CaptionRecord] = {}
        self.duplicate_count = 0

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: CaptionKey) -> bool:
        return key in self._records

    def add(self, record: CaptionRecord) -> None:
        if record.key in self._records:
            self.duplicate_count += 1
        self._records[record.key] = record

    def get(self, scan_id: str, viewpoint_id: str, index: ViewIndex) -> CaptionRecord:
        try:
            return self._records[(scan_id, viewpoint_id, index)]
        except KeyError:
            raise CaptionNotFound(f"no caption for {(scan_id, viewpoint_id, index)}")

    def viewpoints(self) -> list[tuple[str, str]]:
        seen = dict.fromkeys((s, v) for (s, v, _) in self._records)
        return list(seen)

    def records_for(self, scan_id: str, viewpoint_id: str) -> dict[ViewIndex, CaptionRecord]:
        return {
            idx: rec
            for (s, v, idx), rec in self._records.items()
            if s == scan_id and v == viewpoint_id
        }

    def texts_for(self, scan_id: str, viewpoint_id: str) -> dict[ViewIndex, str]:
        """Prompt mapping in the shape the engine consumes."""
        return {
            idx: rec.text for idx, rec in self.records_for(scan_id, viewpoint_id).items()
        }

    def is_complete(self, scan_id: str, viewpoint_id: str) -> bool:
        return len(self.records_for(scan_id, viewpoint_id)) == N_GRID_VIEWS

    def records(self) -> list[CaptionRecord]:
        return list(self._records.values())


def ingest(path: str | Path) -> CaptionStore:
    """Load a captions file; malformed lines raise with their line number,
    duplicates resolve last-wins (count logged)."""
    store = CaptionStore()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            store.add(CaptionRecord.from_json_line(line, line_no))
    if store.duplicate_count:
        log.info("ingest %s: %d duplicate keys (last wins)", path, store.duplicate_count)
    return store


def write_store(store: CaptionStore, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = sorted(rec.to_json_line() for rec in store.records())
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def nearest_caption(
    store: CaptionStore, scan_id: str, viewpoint_id: str, direction: SphericalDirection
) -> CaptionRecord:
    """The viewpoint's caption whose grid-view center is angularly nearest.

    Ties (to 1e-9 degrees) break toward the smaller heading index, then
    the smaller elevation index.
    """
    records = store.records_for(scan_id, viewpoint_id)
    if not records:
        raise CaptionNotFound(f"viewpoint {(scan_id, viewpoint_id)} has no captions")
    best_key = min(
        records,
        key=lambda idx: (
            round(angular_distance_deg(direction, idx.center), 9),
            idx.heading_index,
            idx.elevation_index,
        ),
    )
    return records[best_key]


# --- batch captioning through the service --------------------------------------


@dataclass
class CaptionBatchResult:
    records: list[CaptionRecord]
    skipped: int  # keys already in the checkpoint
    failures: list[tuple[CaptionKey, str]]  # per-item service failures


def _checkpoint_key(key: CaptionKey) -> str:
    scan, vp, idx = key
    return json.dumps(
        [scan, vp, idx.heading_index, idx.elevation_index], separators=(",", ":")
    )


def _load_checkpoint(path: Path) -> set[str]:
    if not path.exists():
        return set()
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def caption_views(
    images: Sequence[tuple[CaptionKey, np.ndarray]],
    backend: GenerationBackend,
    out_path: str | Path,
    checkpoint_path: str | Path | None = None,
) -> CaptionBatchResult:
    """Caption view images through the backend, appending records to
    ``out_path`` as they complete.

    The checkpoint file lists finished keys; on resume those are skipped.
    Per-item service errors are collected and reported; a transport-level
    outage aborts the batch (already-finished work stays checkpointed).
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(checkpoint_path) if checkpoint_path else out_path.with_suffix(".ckpt")
    done = _load_checkpoint(ckpt_path)

    result = CaptionBatchResult(records=[], skipped=0, failures=[])
    with open(out_path, "a", encoding="utf-8") as out_fh, open(
        ckpt_path, "a", encoding="utf-8"
    ) as ckpt_fh:
        for key, image in images:
            marker = _checkpoint_key(key)
            if marker in done:
                result.skipped += 1
                continue
            scan, vp, idx = key
            try:
                text = backend.caption(image)
            except BackendUnavailable:
                raise
            except BackendError as exc:
                result.failures.append((key, str(exc)))
                continue
            record = CaptionRecord(scan, vp, idx, text, source=SOURCE_SERVICE)
            out_fh.write(record.to_json_line() + "\n")
            out_fh.flush()
            ckpt_fh.write(marker + "\n")
            ckpt_fh.flush()
            result.records.append(record)
    return result


def synthetic_captions(scan_id: str, viewpoint_id: str, tag: str = "synthetic") -> Iterable[CaptionRecord]:
    """A full 36-view caption set for fixtures and demos."""
    for idx in all_view_indices():
        yield CaptionRecord(
            scan_id=scan_id,
            viewpoint_id=viewpoint_id,
            view_index=idx,
            text=(
                f"{tag} room at {scan_id}/{viewpoint_id}, heading "
                f"{idx.heading_index * 30}, elevation {idx.elevation_index * 30}"
            ),
            source=SOURCE_IMPORTED,
        )
