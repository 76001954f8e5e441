"""Visit, GEM and holiday file parsing.

Visits arrive in long format, one row per (visit, diagnosis code). Codes are
normalized to 3-character ICD-10 categories; ICD-9 codes go through the CMS
General Equivalence Mapping table first.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from .errors import DuplicateVisitConflict, InputValidationError, MalformedRow, UnmappableCode

log = logging.getLogger(__name__)

CATEGORY_RE = re.compile(r"^[A-Z][0-9A-Z]{2}$")

VISIT_COLUMNS = [
    "visit_id", "patient_id", "date", "tract_id", "age_years",
    "sex", "race_ethnicity", "region", "code", "code_system",
]


class Sex(str, Enum):
    FEMALE = "Female"
    MALE = "Male"
    OTHER = "Other"
    MISSING = "Missing"


class RaceEthnicity(str, Enum):
    ASIAN = "Asian"
    BLACK = "BlackOrAfricanAmerican"
    WHITE = "White"
    OTHER = "Other"
    MISSING = "Missing"


class Region(str, Enum):
    CENTRAL = "Central"
    NORTH = "North"
    NORTHWEST = "Northwest"
    SOUTH = "South"
    SOUTHWEST = "Southwest"
    FAR_SOUTH = "FarSouth"
    WEST = "West"
    MISSING = "Missing"


class CodeSystem(str, Enum):
    ICD9 = "ICD9"
    ICD10 = "ICD10"


class Weekday(str, Enum):
    MON = "Mon"
    TUE = "Tue"
    WED = "Wed"
    THU = "Thu"
    FRI = "Fri"
    SAT = "Sat"
    SUN = "Sun"


AGE_GROUPS = ("18-24", "25-44", "45-64", "65+")


def age_group(age_years) -> str | None:
    if age_years is None or (isinstance(age_years, float) and np.isnan(age_years)):
        return None
    if age_years < 18:
        return None
    if age_years < 25:
        return "18-24"
    if age_years < 45:
        return "25-44"
    if age_years < 65:
        return "45-64"
    return "65+"


@dataclass(frozen=True)
class VisitRecord:
    visit_id: str
    patient_id: str
    date: dt.date
    tract_id: str | None
    age_years: int | None
    sex: Sex
    race_ethnicity: RaceEthnicity
    region: Region
    codes: frozenset[str]


@dataclass(frozen=True)
class CalendarFeatures:
    year: int
    month: int
    day_of_week: Weekday
    is_holiday: bool


@dataclass
class GemTable:
    """ICD-9 to ICD-10 General Equivalence Mapping rows (keys stored without dots)."""

    rows: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for key, values in self.rows.items():
            if not key or not values:
                raise InputValidationError(f"GEM row {key!r} has an empty side")

    @classmethod
    def from_pairs(cls, pairs) -> "GemTable":
        rows: dict[str, list[str]] = {}
        for icd9, icd10 in pairs:
            key = _normalize(icd9)
            target = _normalize(icd10)
            if not key or not target:
                raise InputValidationError(f"empty GEM field in row ({icd9!r}, {icd10!r})")
            bucket = rows.setdefault(key, [])
            if target not in bucket:
                bucket.append(target)
        return cls({k: tuple(v) for k, v in rows.items()})

    def lookup(self, icd9: str) -> tuple[str, ...]:
        return self.rows.get(_normalize(icd9), ())


@dataclass(frozen=True)
class StudyFilters:
    years: tuple[int, int] = (2011, 2023)
    season_months: frozenset[int] = frozenset(range(5, 10))
    min_age: int = 18
    keep_missing_age: bool = True


@dataclass
class ParsedVisits:
    visits: list[VisitRecord]
    dropped: Counter = field(default_factory=Counter)
    unmapped_codes: Counter = field(default_factory=Counter)

    def summary(self) -> dict:
        return summarize_corpus(self.visits) | {"dropped": dict(sorted(self.dropped.items()))}


def _normalize(code: str) -> str:
    return code.strip().replace(".", "").upper()


def map_diagnosis(raw_code: str, system: CodeSystem | str, gem: GemTable | None = None) -> set[str]:
    """Map one raw diagnosis code to its set of 3-character ICD-10 categories."""
    system = CodeSystem(system)
    code = _normalize(raw_code)
    if not code:
        raise ValueError("raw_code must be nonempty")
    if system is CodeSystem.ICD10:
        targets: tuple[str, ...] = (code,)
    else:
        if gem is None:
            raise ValueError("ICD-9 codes need a GEM table")
        targets = gem.lookup(code)
        if not targets:
            raise UnmappableCode(f"no GEM row for ICD-9 code {raw_code!r}")
    categories = {t[:3] for t in targets}
    bad = [c for c in categories if not CATEGORY_RE.match(c)]
    if bad:
        raise MalformedRow(f"code {raw_code!r} does not yield a valid ICD-10 category: {bad}")
    return categories


def calendar_features(date: dt.date, holidays=frozenset()) -> CalendarFeatures:
    return CalendarFeatures(
        year=date.year,
        month=date.month,
        day_of_week=list(Weekday)[date.weekday()],
        is_holiday=date in holidays,
    )


def _parse_date(token: str) -> dt.date:
    try:
        return dt.date.fromisoformat(token.strip())
    except ValueError as exc:
        raise MalformedRow(f"bad date {token!r}") from exc


def _parse_enum(enum_cls, token: str):
    token = token.strip()
    if token == "" and "Missing" in enum_cls._value2member_map_:
        return enum_cls("Missing")
    try:
        return enum_cls(token)
    except ValueError as exc:
        raise MalformedRow(f"bad {enum_cls.__name__} token {token!r}") from exc


def _parse_age(token: str) -> int | None:
    token = token.strip()
    if token == "":
        return None
    try:
        age = int(token)
    except ValueError as exc:
        raise MalformedRow(f"bad age {token!r}") from exc
    if age < 0:
        raise MalformedRow(f"negative age {age}")
    return age


def parse_visits(path, gem: GemTable | None = None, filters: StudyFilters = StudyFilters()) -> ParsedVisits:
    """Read a long-format visits file into one record per retained visit.

    Rows with unparseable fields are rejected and counted under
    ``malformed_row``. ICD-9 codes without a GEM row are dropped (the visit is
    kept). Two rows of one visit that disagree on date or demographics raise
    DuplicateVisitConflict.
    """
    dropped: Counter = Counter()
    unmapped: Counter = Counter()
    order: list[str] = []
    heads: dict[str, tuple] = {}
    codes: dict[str, set[str]] = {}
    skipped_ids: set[str] = set()
    lo_year, hi_year = filters.years

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in VISIT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise InputValidationError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                visit_id = row["visit_id"].strip()
                if not visit_id:
                    raise MalformedRow("empty visit_id")
                head = (
                    row["patient_id"].strip(),
                    _parse_date(row["date"]),
                    row["tract_id"].strip() or None,
                    _parse_age(row["age_years"]),
                    _parse_enum(Sex, row["sex"]),
                    _parse_enum(RaceEthnicity, row["race_ethnicity"]),
                    _parse_enum(Region, row["region"]),
                )
                system = _parse_enum(CodeSystem, row["code_system"].strip() or "ICD10")
                raw_code = row["code"]
                if not raw_code.strip():
                    raise MalformedRow("empty code")
            except MalformedRow as exc:
                log.debug("line %d rejected: %s", lineno, exc)
                dropped["malformed_row"] += 1
                continue

            previous = heads.get(visit_id)
            if previous is not None and previous != head:
                raise DuplicateVisitConflict(f"line {lineno}: visit {visit_id!r} disagrees with an earlier row")
            if previous is None:
                heads[visit_id] = head
                date, age = head[1], head[3]
                reason = None
                if not lo_year <= date.year <= hi_year:
                    reason = "out_of_range"
                elif date.month not in filters.season_months:
                    reason = "out_of_season"
                elif age is None and not filters.keep_missing_age:
                    reason = "missing_age"
                elif age is not None and age < filters.min_age:
                    reason = "under_age"
                if reason:
                    dropped[reason] += 1
                    skipped_ids.add(visit_id)
                    continue
                order.append(visit_id)
                codes[visit_id] = set()
            if visit_id in skipped_ids:
                continue

            try:
                codes[visit_id] |= map_diagnosis(raw_code, system, gem)
            except UnmappableCode:
                unmapped[raw_code.strip()] += 1
                dropped["unmappable_code"] += 1
            except MalformedRow:
                dropped["malformed_code"] += 1

    visits = []
    for visit_id in order:
        if not codes[visit_id]:
            dropped["no_valid_codes"] += 1
            continue
        visits.append(VisitRecord(visit_id, *heads[visit_id], frozenset(codes[visit_id])))
    if unmapped:
        log.warning("%d ICD-9 codes without a GEM row were dropped", sum(unmapped.values()))
    return ParsedVisits(visits, dropped, unmapped)


def load_gem(path) -> GemTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"icd9", "icd10"} <= set(reader.fieldnames or []):
            raise InputValidationError(f"{path}: expected columns icd9, icd10")
        return GemTable.from_pairs((r["icd9"], r["icd10"]) for r in reader)


def load_holidays(path) -> frozenset[dt.date]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if "date" not in (reader.fieldnames or []):
            raise InputValidationError(f"{path}: expected a date column")
        try:
            return frozenset(dt.date.fromisoformat(r["date"].strip()) for r in reader if r["date"].strip())
        except ValueError as exc:
            raise InputValidationError(f"{path}: {exc}") from exc


def summarize_corpus(visits) -> dict:
    frame = visit_frame(visits)
    return {
        "n_visits": int(frame["visit_id"].nunique()),
        "n_patients": int(frame["patient_id"].nunique()),
        "n_categories": int(frame["code"].nunique()),
    }


FRAME_COLUMNS = [
    "visit_id", "patient_id", "date", "tract_id", "age_years",
    "sex", "race_ethnicity", "region", "code",
]


def visit_frame(visits) -> pd.DataFrame:
    """One row per (visit, category), the tabular form the analysis stages use.

    Accepts a list of VisitRecord, a ParsedVisits, or an existing frame (which
    is checked and returned with normalized dtypes).
    """
    if isinstance(visits, ParsedVisits):
        visits = visits.visits
    if isinstance(visits, pd.DataFrame):
        missing = [c for c in FRAME_COLUMNS if c not in visits.columns]
        if missing:
            raise InputValidationError(f"visit frame lacks columns {missing}")
        frame = visits
    else:
        records = [
            (v.visit_id, v.patient_id, v.date, v.tract_id, v.age_years,
             v.sex.value, v.race_ethnicity.value, v.region.value, code)
            for v in visits
            for code in sorted(v.codes)
        ]
        frame = pd.DataFrame.from_records(records, columns=FRAME_COLUMNS)
    frame = frame.copy()
    frame["date"] = pd.to_datetime(frame["date"])
    frame["age_years"] = pd.to_numeric(frame["age_years"], errors="coerce").astype(float)
    return frame
