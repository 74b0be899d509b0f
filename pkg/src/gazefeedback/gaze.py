"""Gaze log parsing and dispersion-based (I-DT) fixation detection."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .csvio import RowError, Source, read_records
from .errors import PreconditionError

SCREEN_WIDTH = 1920
SCREEN_HEIGHT = 1200
GAZE_HEADER = ("screen_id", "timestamp_ms", "x_px", "y_px", "valid")
FIXATION_HEADER = ("screen_id", "start_ms", "duration_ms", "centroid_x", "centroid_y")


@dataclass(frozen=True)
class GazeSample:
    screen_id: str
    timestamp: float
    x: float
    y: float
    valid: bool


@dataclass(frozen=True)
class FixationParams:
    dispersion_threshold: float = 80.0
    min_duration: float = 100.0
    max_gap: float = 75.0

    def __post_init__(self):
        for name in ("dispersion_threshold", "min_duration", "max_gap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class Fixation:
    screen_id: str
    start: float
    duration: float
    centroid_x: float
    centroid_y: float

    @property
    def end(self) -> float:
        return self.start + self.duration


def _parse_row(row: list[str]) -> GazeSample:
    screen_id, ts, xs, ys, valid_s = (c.strip() for c in row)
    if not screen_id:
        raise ValueError("empty screen_id")
    if valid_s not in ("0", "1"):
        raise ValueError(f"valid must be 0 or 1, got {valid_s!r}")
    valid = valid_s == "1"
    timestamp = float(ts)
    if not math.isfinite(timestamp):
        raise ValueError(f"non-finite timestamp {ts!r}")
    if valid:
        x, y = float(xs), float(ys)
        if not (0 <= x <= SCREEN_WIDTH and 0 <= y <= SCREEN_HEIGHT):
            raise ValueError(f"valid sample off screen: ({xs}, {ys})")
    else:
        # coordinates of invalid samples are unreliable and may be blank
        x = float(xs) if xs else math.nan
        y = float(ys) if ys else math.nan
    return GazeSample(screen_id, timestamp, x, y, valid)


def parse_gaze_log(source: Source) -> tuple[list[GazeSample], list[RowError]]:
    """Read a gaze log CSV (``screen_id,timestamp_ms,x_px,y_px,valid``).

    Returns the samples in file order together with the malformed rows.
    """
    return read_records(source, GAZE_HEADER, _parse_row)


def write_gaze_log(samples: Iterable[GazeSample], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(GAZE_HEADER)
    for s in samples:
        if s.valid:
            w.writerow([s.screen_id, f"{s.timestamp:.3f}", f"{s.x:.2f}", f"{s.y:.2f}", 1])
        else:
            w.writerow([s.screen_id, f"{s.timestamp:.3f}", "", "", 0])


def split_by_screen(samples: Iterable[GazeSample]) -> dict[str, list[GazeSample]]:
    out: dict[str, list[GazeSample]] = {}
    for s in samples:
        out.setdefault(s.screen_id, []).append(s)
    return out


def _valid_segments(samples: Sequence[GazeSample], max_gap: float) -> list[list[GazeSample]]:
    # A run of invalid samples counts as a gap from its first sample to the
    # next valid one; runs longer than max_gap break the stream.
    segments: list[list[GazeSample]] = []
    current: list[GazeSample] = []
    gap_start: float | None = None
    for s in samples:
        if not s.valid:
            if gap_start is None:
                gap_start = s.timestamp
            continue
        if gap_start is not None and s.timestamp - gap_start > max_gap and current:
            segments.append(current)
            current = []
        gap_start = None
        current.append(s)
    if current:
        segments.append(current)
    return segments


def _idt_segment(seg: list[GazeSample], params: FixationParams) -> list[Fixation]:
    fixations = []
    n = len(seg)
    ts = [s.timestamp for s in seg]
    xs = [s.x for s in seg]
    ys = [s.y for s in seg]
    thr = params.dispersion_threshold
    i = 0
    j = 0
    while i < n:
        # smallest window starting at i that spans min_duration
        j = max(j, i)
        while j < n and ts[j] - ts[i] < params.min_duration:
            j += 1
        if j >= n:
            break
        x0, x1 = min(xs[i : j + 1]), max(xs[i : j + 1])
        y0, y1 = min(ys[i : j + 1]), max(ys[i : j + 1])
        if (x1 - x0) + (y1 - y0) > thr:
            i += 1
            continue
        while j + 1 < n:
            nx, ny = xs[j + 1], ys[j + 1]
            if (max(x1, nx) - min(x0, nx)) + (max(y1, ny) - min(y0, ny)) > thr:
                break
            x0, x1 = min(x0, nx), max(x1, nx)
            y0, y1 = min(y0, ny), max(y1, ny)
            j += 1
        m = j - i + 1
        fixations.append(
            Fixation(
                screen_id=seg[i].screen_id,
                start=ts[i],
                duration=ts[j] - ts[i],
                # clamp so rounding never puts the mean outside the bounding box
                centroid_x=min(max(math.fsum(xs[i : j + 1]) / m, x0), x1),
                centroid_y=min(max(math.fsum(ys[i : j + 1]) / m, y0), y1),
            )
        )
        i = j + 1
    return fixations


def detect_fixations(
    samples: Sequence[GazeSample], params: FixationParams = FixationParams()
) -> list[Fixation]:
    """Cluster one screen's gaze samples into fixations with I-DT.

    A fixation is a maximal run of consecutive valid samples whose bounding
    box satisfies ``width + height <= dispersion_threshold`` and whose span
    (last minus first timestamp) is at least ``min_duration``. Invalid
    samples are ignored for dispersion and centroid; a run of them lasting
    longer than ``max_gap`` ends any window in progress.
    """
    if not samples:
        return []
    screen_ids = {s.screen_id for s in samples}
    if len(screen_ids) != 1:
        raise PreconditionError(f"samples span several screens: {sorted(screen_ids)}")
    for a, b in zip(samples, samples[1:]):
        if b.timestamp < a.timestamp:
            raise PreconditionError(
                f"samples not sorted by timestamp ({a.timestamp} then {b.timestamp})"
            )
    out: list[Fixation] = []
    for seg in _valid_segments(samples, params.max_gap):
        out.extend(_idt_segment(seg, params))
    return out


def detect_all(
    samples: Iterable[GazeSample], params: FixationParams = FixationParams()
) -> dict[str, list[Fixation]]:
    """Run :func:`detect_fixations` for every screen in a mixed log."""
    return {sid: detect_fixations(ss, params) for sid, ss in split_by_screen(samples).items()}


def write_fixations(fixations: Iterable[Fixation], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(FIXATION_HEADER)
    for f in fixations:
        w.writerow(
            [f.screen_id, f"{f.start:.3f}", f"{f.duration:.3f}", f"{f.centroid_x:.3f}", f"{f.centroid_y:.3f}"]
        )


def _parse_fixation(row: list[str]) -> Fixation:
    sid, start, dur, cx, cy = (c.strip() for c in row)
    return Fixation(sid, float(start), float(dur), float(cx), float(cy))


def read_fixations(source: Source) -> dict[str, list[Fixation]]:
    rows, _ = read_records(source, FIXATION_HEADER, _parse_fixation)
    out: dict[str, list[Fixation]] = {}
    for f in rows:
        out.setdefault(f.screen_id, []).append(f)
    return out
