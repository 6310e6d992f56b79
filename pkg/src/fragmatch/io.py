"""CSV formats.

All files are UTF-8 with LF line ends and a header row; decimals use '.'.

``students.csv``  id, age, region, subdivision, lat, lon, score, tiebreak
``schools.csv``   facility, age, region, lat, lon, capacity[, alpha][, cutoff]
                  (an age-school's id is its 0-based data-row position)
``rols.csv``      student, rank, school   (rank is 1-based)
``travel.csv``    student, school, minutes   (school is a facility id)
``matching.csv``  student, school   (school empty when unmatched)
``areas.csv``     school, area
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .behavior import TravelMatrix
from .errors import InputError
from .market import UNMATCHED, AgeSchool, Matching, MarketInstance, Student


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: Path | str, required: Sequence[str], optional: Sequence[str] = ()) -> list[tuple[int, dict[str, str]]]:
    """Rows as (line number, {column: text}); missing required columns or short rows raise InputError."""
    path = str(path)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as err:
        raise InputError(f"cannot open: {err.strerror}", path=path) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("empty file", path=path, line=1) from None
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"missing columns {', '.join(missing)}", path=path, line=1)
        keep = [c for c in (*required, *optional) if c in header]
        pos = {c: header.index(c) for c in keep}
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != len(header):
                raise InputError(f"expected {len(header)} fields, got {len(row)}", path=path, line=line)
            rows.append((line, {c: row[pos[c]].strip() for c in keep}))
    return rows


class _Cell:
    """Typed field access that reports the file and line on failure."""

    def __init__(self, path: Path | str, line: int, row: dict[str, str]):
        self.path, self.line, self.row = str(path), line, row

    def _fail(self, col: str, kind: str):
        return InputError(f"column {col}: {self.row.get(col)!r} is not {kind}", path=self.path, line=self.line)

    def int(self, col: str, default: int | None = None) -> int:
        raw = self.row.get(col, "")
        if raw == "" and default is not None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise self._fail(col, "an integer") from None

    def float(self, col: str, default: float | None = None) -> float:
        raw = self.row.get(col, "")
        if raw == "" and default is not None:
            return default
        try:
            v = float(raw)
        except ValueError:
            raise self._fail(col, "a number") from None
        if math.isnan(v):
            raise self._fail(col, "a number")
        return v

    def optional_float(self, col: str) -> float | None:
        return None if self.row.get(col, "") == "" else self.float(col)


def typed_rows(path: Path, required: Sequence[str], optional: Sequence[str] = ()) -> list[_Cell]:
    return [_Cell(path, line, row) for line, row in read_csv(path, required, optional)]


@dataclass
class MarketFiles:
    market: MarketInstance
    travel: TravelMatrix | None
    cutoffs: np.ndarray | None
    alpha: np.ndarray | None
    matching: Matching | None
    has_tiebreak: bool = True


def load_market(directory: Path | str) -> MarketFiles:
    """Read a market directory: students, schools and rols are required; travel and matching optional."""
    d = Path(directory)
    schools = []
    cutoffs, alphas = [], []
    for k, c in enumerate(typed_rows(d / "schools.csv", ("facility", "age", "region", "lat", "lon", "capacity"),
                                 ("alpha", "cutoff"))):
        cap = c.int("capacity")
        if cap < 0:
            raise InputError("negative capacity", path=c.path, line=c.line)
        cut, alpha = c.optional_float("cutoff"), c.optional_float("alpha")
        cutoffs.append(cut)
        alphas.append(alpha)
        schools.append(AgeSchool(k, c.int("facility"), c.int("age"), c.int("region"), cap,
                                 c.float("lat", math.nan), c.float("lon", math.nan), cut, alpha))

    students_rows = typed_rows(d / "students.csv", ("id", "age", "region"),
                           ("subdivision", "lat", "lon", "score", "tiebreak"))
    ids = sorted(c.int("id") for c in students_rows)
    if ids != list(range(len(ids))):
        raise InputError("student ids must be 0..n-1", path=str(d / "students.csv"))
    n = len(ids)

    prefs: list[dict[int, int]] = [{} for _ in range(n)]
    for c in typed_rows(d / "rols.csv", ("student", "rank", "school")):
        i, r, s = c.int("student"), c.int("rank"), c.int("school")
        if not 0 <= i < n:
            raise InputError(f"unknown student {i}", path=c.path, line=c.line)
        if not 0 <= s < len(schools):
            raise InputError(f"unknown school {s}", path=c.path, line=c.line)
        if r in prefs[i] or s in prefs[i].values():
            raise InputError(f"duplicate rank or school for student {i}", path=c.path, line=c.line)
        prefs[i][r] = s

    students: list[Student | None] = [None] * n
    for c in students_rows:
        i = c.int("id")
        ranks = sorted(prefs[i])
        if ranks != list(range(1, len(ranks) + 1)):
            raise InputError(f"ranks of student {i} are not 1..K", path=str(d / "rols.csv"))
        students[i] = Student(
            i, c.int("age"), c.int("region"), tuple(prefs[i][r] for r in ranks),
            score=c.float("score", 0.0), tiebreak_rank=c.int("tiebreak", i + 1),
            lat=c.float("lat", math.nan), lon=c.float("lon", math.nan), subdivision=c.int("subdivision", -1),
        )
    market = MarketInstance(students, schools)

    travel = None
    if (d / "travel.csv").exists():
        travel = TravelMatrix({(c.int("student"), c.int("school")): c.float("minutes")
                               for c in typed_rows(d / "travel.csv", ("student", "school", "minutes"))})
    matching = None
    if (d / "matching.csv").exists():
        matching = read_matching(d / "matching.csv", n, len(schools))
    return MarketFiles(
        market,
        travel,
        np.array(cutoffs, dtype=float) if all(v is not None for v in cutoffs) and cutoffs else None,
        np.array(alphas, dtype=float) if all(v is not None for v in alphas) and alphas else None,
        matching,
        has_tiebreak=all(c.row.get("tiebreak", "") != "" for c in students_rows),
    )


def write_matching(path: Path | str, assign: Sequence[int] | np.ndarray) -> None:
    write_csv(path, ("student", "school"), ((i, "" if s == UNMATCHED else int(s)) for i, s in enumerate(assign)))


def read_matching(path: Path | str, n_students: int | None = None, n_schools: int | None = None) -> Matching:
    cells = typed_rows(Path(path), ("student", "school"))
    n = n_students if n_students is not None else (max((c.int("student") for c in cells), default=-1) + 1)
    assign = np.full(n, UNMATCHED, dtype=np.int64)
    for c in cells:
        i = c.int("student")
        if not 0 <= i < n:
            raise InputError(f"unknown student {i}", path=c.path, line=c.line)
        assign[i] = c.int("school", UNMATCHED)
    m = n_schools if n_schools is not None else int(assign.max(initial=-1)) + 1
    if (assign >= m).any():
        raise InputError("school id out of range", path=str(path))
    return Matching.from_assignment(assign, m)


def read_areas(path: Path | str) -> dict[int, int]:
    return {c.int("school"): c.int("area") for c in typed_rows(Path(path), ("school", "area"))}


def _num(x: float) -> str:
    return "" if math.isnan(x) else repr(x)


def write_market(directory: Path | str, market: MarketInstance, travel: TravelMatrix | None = None) -> None:
    """Inverse of :func:`load_market` for the required files (and travel, if given)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(d / "students.csv", ("id", "age", "region", "subdivision", "lat", "lon", "score", "tiebreak"),
              ((s.id, s.age, s.home_region, s.subdivision, _num(s.lat), _num(s.lon), repr(s.score), s.tiebreak_rank)
               for s in market.students))
    write_csv(d / "schools.csv", ("facility", "age", "region", "lat", "lon", "capacity"),
              ((s.facility, s.age, s.region, _num(s.lat), _num(s.lon), s.capacity) for s in market.schools))
    write_csv(d / "rols.csv", ("student", "rank", "school"),
              ((s.id, r + 1, sch) for s in market.students for r, sch in enumerate(s.preferences)))
    if travel is not None:
        write_csv(d / "travel.csv", ("student", "school", "minutes"),
                  ((i, f, repr(v)) for (i, f), v in sorted(travel.entries.items())))
