"""Event-record ingestion and covariate encoding.

Reads event CSVs in the conflict-event schema (longitude, latitude,
year, month or event_date, event_type, fatalities, free-text notes),
extracts armed-group labels from the notes by longest-alias matching,
buckets months into meteorological seasons, resolves each event to an
administrative region for its population offset, and dummy-codes the
categorical covariates against documented reference levels.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import Point, RegionSet, locate_region

SEASONS = ("Autumn", "Winter", "Spring", "Summer")

# group labels and the note aliases that identify them
DEFAULT_GROUP_LEXICON = {
    "Eritrea army": ("Eritrea army", "Eritrean army"),
    "EDF": ("EDF", "Ethiopian Defense Force"),
    "EUFF": ("EUFF", "Ethiopian Unity and Freedom Force"),
    "Ginbot7": ("Ginbot7", "Ginbot 7"),
    "ONLF": ("ONLF", "Ogaden National Liberation Front"),
    "OLA": ("OLA", "Oromo Liberation Army"),
    "SPLA": ("SPLA", "South Sudan People's Defence Forces"),
    "TPDM": ("TPDM", "Tigray People's Democratic Movement"),
    "TPLF": ("TPLF", "Tigray People's Liberation Front"),
}

REQUIRED_COLUMNS = ("longitude", "latitude", "year", "event_type",
                    "fatalities")


class DataError(ValueError):
    pass


@dataclass
class EncodingConfig:
    group_lexicon: dict = field(
        default_factory=lambda: dict(DEFAULT_GROUP_LEXICON))
    season_reference: str = "Autumn"
    event_type_reference: Optional[str] = None  # alphabetical first if None
    include_season: bool = True
    include_group: bool = True
    drop_unresolved_regions: bool = True


@dataclass
class EventRecord:
    point: Point
    year: int
    month: int
    event_type: str
    group: Optional[str]
    fatalities: int
    region: Optional[str] = None
    population_offset: Optional[float] = None


@dataclass
class ParseReport:
    n_rows: int
    n_parsed: int
    errors: list = field(default_factory=list)  # (line_number, message)

    def reconciles(self) -> bool:
        return self.n_parsed + len(self.errors) == self.n_rows


def encode_season(month: int) -> str:
    """Northern-hemisphere meteorological season of a calendar month."""
    if not 1 <= int(month) <= 12:
        raise DataError(f"month {month} outside 1..12")
    month = int(month)
    if month in (12, 1, 2):
        return "Winter"
    if month in (3, 4, 5):
        return "Spring"
    if month in (6, 7, 8):
        return "Summer"
    return "Autumn"


def extract_group(notes: Optional[str], lexicon=None) -> Optional[str]:
    """Longest case-insensitive alias match; earliest position breaks ties."""
    if not notes:
        return None
    lexicon = lexicon if lexicon is not None else DEFAULT_GROUP_LEXICON
    text = notes.lower()
    candidates = []
    for order, (label, aliases) in enumerate(lexicon.items()):
        for alias in aliases:
            pos = text.find(alias.lower())
            if pos >= 0:
                candidates.append((-len(alias), pos, order, label))
    if not candidates:
        return None
    return min(candidates)[3]


def parse_events(source, config: Optional[EncodingConfig] = None):
    """Parse an event CSV into records plus a row-level error report.

    `source` is a path or an open text stream.  Malformed rows are
    collected with their line numbers, never silently dropped.  A month
    is taken from a `month` column or from an ISO `event_date`.
    """
    config = config or EncodingConfig()
    if hasattr(source, "read"):
        return _parse_stream(source, config)
    with open(source, newline="") as fh:
        return _parse_stream(fh, config)


def _parse_stream(fh, config):
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise DataError(f"missing required column {col!r}")
    if "month" not in header and "event_date" not in header:
        raise DataError("need a 'month' or 'event_date' column")

    records, errors = [], []
    n_rows = 0
    for row in reader:
        n_rows += 1
        line = reader.line_num
        try:
            lon = float(row["longitude"])
            lat = float(row["latitude"])
            point = Point(lon, lat)
        except (TypeError, ValueError) as exc:
            errors.append((line, f"bad coordinates: {exc}"))
            continue
        try:
            year = int(row["year"])
            if row.get("month"):
                month = int(row["month"])
            else:
                month = int(row["event_date"].split("-")[1])
            if not 1 <= month <= 12:
                raise ValueError(f"month {month} outside 1..12")
            fatalities = int(row["fatalities"])
            if fatalities < 0:
                raise ValueError(f"negative fatalities {fatalities}")
            event_type = row["event_type"].strip()
            if not event_type:
                raise ValueError("empty event_type")
        except (TypeError, ValueError, IndexError, KeyError) as exc:
            errors.append((line, str(exc)))
            continue
        group = extract_group(row.get("notes"), config.group_lexicon) \
            if config.include_group else None
        records.append(EventRecord(point=point, year=year, month=month,
                                   event_type=event_type, group=group,
                                   fatalities=fatalities))
    return records, ParseReport(n_rows=n_rows, n_parsed=len(records),
                                errors=errors)


@dataclass
class EncodedDataset:
    X: np.ndarray
    columns: list
    y: np.ndarray
    offset_log: np.ndarray
    points: np.ndarray
    years: np.ndarray
    months: np.ndarray
    regions: list
    levels: dict       # covariate -> ordered category levels (incl. reference)
    references: dict   # covariate -> reference level
    report: ParseReport

    @property
    def n(self) -> int:
        return len(self.y)

    def decode_row(self, i: int) -> dict:
        """Recover the categorical labels of row i from the dummy coding."""
        out = {}
        for cov, levels in self.levels.items():
            label = self.references[cov]
            for level in levels:
                if level == self.references[cov]:
                    continue
                col = f"{cov}={level}"
                if col in self.columns and self.X[i, self.columns.index(col)] == 1.0:
                    label = level
            out[cov] = label
        return out


def _dummy_code(labels, reference, name):
    levels = sorted(set(labels))
    if reference is None:
        reference = levels[0]
    if reference not in levels:
        levels = [reference] + levels
    cols, names = [], []
    for level in levels:
        if level == reference:
            continue
        names.append(f"{name}={level}")
        cols.append(np.array([1.0 if lab == level else 0.0 for lab in labels]))
    return cols, names, levels, reference


def build_dataset(records, regions: RegionSet,
                  config: Optional[EncodingConfig] = None) -> EncodedDataset:
    """Resolve regions, attach offsets, and dummy-code the covariates.

    Records outside every region are dropped with a report entry (or
    raise when configured).  A region lacking population for a record's
    year is always an error, reported with every missing pair at once.
    """
    config = config or EncodingConfig()
    kept, dropped, missing_pairs = [], [], []
    for rec in records:
        hit = None
        try:
            hit = locate_region(regions, rec.point, rec.year)
        except KeyError:
            missing_pairs.append((_region_of(regions, rec.point), rec.year))
            continue
        if hit is None:
            dropped.append(rec)
            continue
        rec.region, pop = hit
        rec.population_offset = math.log(pop)
        kept.append(rec)
    if missing_pairs:
        pairs = sorted(set(missing_pairs))
        raise DataError(f"population missing for (region, year) pairs: {pairs}")
    if dropped and not config.drop_unresolved_regions:
        raise DataError(f"{len(dropped)} records outside every region")

    n = len(kept)
    if n == 0:
        raise DataError("no records remain after region resolution")

    cols = [np.ones(n)]
    names = ["intercept"]
    levels, references = {}, {}

    ev_cols, ev_names, ev_levels, ev_ref = _dummy_code(
        [r.event_type for r in kept], config.event_type_reference,
        "event_type")
    cols += ev_cols
    names += ev_names
    levels["event_type"] = ev_levels
    references["event_type"] = ev_ref

    if config.include_season:
        seasons = [encode_season(r.month) for r in kept]
        se_cols, se_names, se_levels, se_ref = _dummy_code(
            seasons, config.season_reference, "season")
        cols += se_cols
        names += se_names
        levels["season"] = se_levels
        references["season"] = se_ref

    if config.include_group:
        groups = [r.group if r.group is not None else "none" for r in kept]
        gr_cols, gr_names, gr_levels, gr_ref = _dummy_code(
            groups, "none", "group")
        cols += gr_cols
        names += gr_names
        levels["group"] = gr_levels
        references["group"] = gr_ref

    report = ParseReport(
        n_rows=len(records), n_parsed=n,
        errors=[(-1, f"outside all regions: ({r.point.lon}, {r.point.lat})")
                for r in dropped])
    return EncodedDataset(
        X=np.column_stack(cols), columns=names,
        y=np.array([r.fatalities for r in kept], dtype=float),
        offset_log=np.array([r.population_offset for r in kept]),
        points=np.array([[r.point.lon, r.point.lat] for r in kept]),
        years=np.array([r.year for r in kept]),
        months=np.array([r.month for r in kept]),
        regions=[r.region for r in kept],
        levels=levels, references=references, report=report)


def _region_of(regions, point):
    from .geometry import point_in_polygon

    for region in regions:
        if point_in_polygon(point, region.polygon):
            return region.name
    return None


def odds_reduction(beta: float) -> float:
    """Multiplicative odds reduction 1 - exp(beta) of a negative effect."""
    return 1.0 - math.exp(beta)
