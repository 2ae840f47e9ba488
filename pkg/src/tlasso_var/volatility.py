"""Open/high/low price ingestion and the log range-volatility panel.

Daily variance is proxied by the Parkinson high-low range
``v = (log H - log L)^2 / (4 log 2)``; the VAR is fitted to ``log v``. Input
files come in two layouts:

    - long: one row per (date, series) with open/high/low columns
    - wide: one row per date with ``<series>_open``, ``<series>_high`` and
      ``<series>_low`` columns for every series
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, model_validator

from .errors import AlignmentError, DataError, DimensionError, InsufficientDataError, ParseError

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-12
_LOG_FOUR_LN2 = 4.0 * math.log(2.0)
_PRICE_COLUMNS = ("open", "high", "low")
_ROW_COLUMN = "_row"

Layout = Literal["long", "wide"]
"""CSV layouts accepted by :func:`ingest_csv`."""


class OhlcRecord(BaseModel):
    """Opening, highest and lowest price of one series on one date."""

    model_config = ConfigDict(frozen=True)

    date: dt.date
    series: str = Field(..., min_length=1)
    open: PositiveFloat
    high: PositiveFloat
    low: PositiveFloat

    @model_validator(mode="after")
    def _check_range(self) -> OhlcRecord:
        if self.low > self.high:
            raise ValueError(f"low {self.low} exceeds high {self.high}")
        if not self.low <= self.open <= self.high:
            raise ValueError(f"open {self.open} outside [low, high] = [{self.low}, {self.high}]")
        return self


class CsvSchema(BaseModel):
    """Column mapping for OHLC files."""

    model_config = ConfigDict(frozen=True)

    layout: Layout = "long"
    date_column: str = "date"
    series_column: str = "series"
    open_column: str = "open"
    high_column: str = "high"
    low_column: str = "low"
    separator: str = "_"
    date_format: str | None = None


def range_variance(open_: np.ndarray, high: np.ndarray, low: np.ndarray) -> np.ndarray:
    """Vectorised Parkinson variance from log ranges measured against the open."""

    open_, high, low = (np.asarray(x, dtype=float) for x in (open_, high, low))
    if np.any(~(open_ > 0)) or np.any(~(high > 0)) or np.any(~(low > 0)):
        raise DataError("prices must be strictly positive")
    if np.any(high < low):
        raise DataError("high price below low price")
    up = np.log(high) - np.log(open_)
    down = np.log(low) - np.log(open_)
    return (up - down) ** 2 / _LOG_FOUR_LN2


def parkinson_variance(record: OhlcRecord) -> float:
    """Parkinson range variance of a single record."""

    return float(range_variance(record.open, record.high, record.low))


def _read_frame(path: Path) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(f"No file found at {path}")
    try:
        frame = pd.read_csv(path, skipinitialspace=True)
    except pd.errors.EmptyDataError as exc:
        raise ParseError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise ParseError(f"cannot parse {path}: {exc}") from exc
    frame[_ROW_COLUMN] = np.arange(len(frame)) + 2
    return frame


def _require_columns(frame: pd.DataFrame, columns: Sequence[str]) -> None:
    missing = [column for column in columns if column not in frame.columns]
    if missing:
        raise ParseError(f"missing column(s): {', '.join(missing)}")


def _long_from_wide(frame: pd.DataFrame, schema: CsvSchema) -> pd.DataFrame:
    _require_columns(frame, [schema.date_column])
    suffixes = {
        f"{schema.separator}{schema.open_column}": "open",
        f"{schema.separator}{schema.high_column}": "high",
        f"{schema.separator}{schema.low_column}": "low",
    }
    series: dict[str, dict[str, str]] = {}
    for column in frame.columns:
        for suffix, field_name in suffixes.items():
            if isinstance(column, str) and column.endswith(suffix) and len(column) > len(suffix):
                series.setdefault(column[: -len(suffix)], {})[field_name] = column
    if not series:
        raise ParseError("wide layout needs <series>_open/_high/_low columns")
    parts = []
    for label, columns in series.items():
        missing = [name for name in _PRICE_COLUMNS if name not in columns]
        if missing:
            raise ParseError(f"series {label!r} lacks column(s) for {', '.join(missing)}")
        part = frame[[schema.date_column, _ROW_COLUMN, columns["open"], columns["high"], columns["low"]]].copy()
        part.columns = ["date", _ROW_COLUMN, "open", "high", "low"]
        part.insert(1, "series", label)
        parts.append(part)
    return pd.concat(parts, ignore_index=True)


def _long_frame(frame: pd.DataFrame, schema: CsvSchema) -> pd.DataFrame:
    columns = [schema.date_column, schema.series_column, schema.open_column, schema.high_column, schema.low_column]
    _require_columns(frame, columns)
    long = frame[columns + [_ROW_COLUMN]].copy()
    long.columns = ["date", "series", "open", "high", "low", _ROW_COLUMN]
    return long


def _invalid_rows(table: pd.DataFrame) -> pd.Series:
    """Mask of rows that break an :class:`OhlcRecord` invariant."""

    open_, high, low = table["open"], table["high"], table["low"]
    non_positive = ~(open_ > 0) | ~(high > 0) | ~(low > 0)
    return non_positive | (low > high) | (open_ < low) | (open_ > high) | (table["series"].str.len() == 0)


def ingest_csv(path: Path, schema: CsvSchema | None = None) -> pd.DataFrame:
    """Read an OHLC file into a long table sorted ascending by date.

    The result has columns ``date, series, open, high, low``; within a date
    the file order of the series is kept.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ParseError: On an unparsable value, a price invariant violation or a
            duplicate (date, series) pair; the message names the file row.
    """

    schema = schema or CsvSchema()
    frame = _read_frame(Path(path))
    table = _long_from_wide(frame, schema) if schema.layout == "wide" else _long_frame(frame, schema)

    dates = pd.to_datetime(table["date"], format=schema.date_format, errors="coerce")
    bad_dates = dates.isna()
    if bad_dates.any():
        first = bad_dates.idxmax()
        raise ParseError(f"cannot parse date {table.at[first, 'date']!r}", row=int(table.at[first, _ROW_COLUMN]))
    table["date"] = dates.dt.date
    table["series"] = table["series"].astype(str).str.strip()
    for column in _PRICE_COLUMNS:
        values = pd.to_numeric(table[column], errors="coerce")
        bad = values.isna()
        if bad.any():
            first = bad.idxmax()
            raise ParseError(
                f"cannot parse {column} price {table.at[first, column]!r}", row=int(table.at[first, _ROW_COLUMN])
            )
        table[column] = values.astype(float)

    invalid = _invalid_rows(table)
    if invalid.any():
        row = table.loc[invalid.idxmax()]
        try:
            OhlcRecord(date=row["date"], series=row["series"], open=row["open"], high=row["high"], low=row["low"])
        except ValidationError as exc:
            reason = "; ".join(error["msg"] for error in exc.errors())
            raise ParseError(reason, row=int(row[_ROW_COLUMN])) from exc
        raise ParseError("invalid price record", row=int(row[_ROW_COLUMN]))

    duplicated = table.duplicated(subset=["date", "series"], keep="first")
    if duplicated.any():
        first = duplicated.idxmax()
        raise ParseError(
            f"duplicate record for series {table.at[first, 'series']!r} on {table.at[first, 'date']}",
            row=int(table.at[first, _ROW_COLUMN]),
        )

    table = table.sort_values("date", kind="mergesort").reset_index(drop=True)
    logger.info("Ingested %d OHLC records for %d series from %s", len(table), table["series"].nunique(), path)
    return table[["date", "series", "open", "high", "low"]]


def write_ohlc_csv(table: pd.DataFrame, path: Path) -> Path:
    """Write a long OHLC table; re-ingesting it reproduces the prices exactly."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table[["date", "series", "open", "high", "low"]].to_csv(path, index=False)
    return path


@dataclass(frozen=True, slots=True)
class VolatilityPanel:
    """Aligned log range-variance series.

    Attributes:
        labels: Series names, one per column
        dates: Strictly increasing observation dates
        log_vol: ``T x J`` matrix of log variances
        means: Column means of ``log_vol``
    """

    labels: tuple[str, ...]
    dates: tuple[dt.date, ...]
    log_vol: np.ndarray
    means: np.ndarray

    def __post_init__(self) -> None:
        if self.log_vol.shape != (len(self.dates), len(self.labels)):
            raise DimensionError(
                f"log_vol has shape {self.log_vol.shape}; expected ({len(self.dates)}, {len(self.labels)})"
            )
        if any(later <= earlier for earlier, later in zip(self.dates, self.dates[1:])):
            raise DataError("panel dates must be strictly increasing")
        if not np.all(np.isfinite(self.log_vol)):
            raise DataError("log volatilities must be finite")

    @property
    def length(self) -> int:
        return self.log_vol.shape[0]

    @property
    def dimension(self) -> int:
        return self.log_vol.shape[1]

    @classmethod
    def from_array(
        cls,
        values: np.ndarray,
        labels: Sequence[str] | None = None,
        dates: Sequence[dt.date] | None = None,
    ) -> VolatilityPanel:
        """Wrap a ``T x J`` array, defaulting to ``y1..yJ`` labels and consecutive business days."""

        values = np.atleast_2d(np.asarray(values, dtype=float))
        length, dimension = values.shape
        names = tuple(labels) if labels is not None else tuple(f"y{i + 1}" for i in range(dimension))
        if dates is None:
            dates = tuple(day.date() for day in pd.bdate_range("2000-01-03", periods=length))
        return cls(labels=names, dates=tuple(dates), log_vol=values, means=values.mean(axis=0))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.log_vol, columns=list(self.labels))
        frame.insert(0, "date", [d.isoformat() for d in self.dates])
        return frame


def _table_from_records(records: pd.DataFrame | Sequence[OhlcRecord]) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records
    return pd.DataFrame([record.model_dump() for record in records], columns=["date", "series", *_PRICE_COLUMNS])


def build_volatility_panel(
    records: pd.DataFrame | Sequence[OhlcRecord],
    floor: float = DEFAULT_FLOOR,
    strict: bool = True,
) -> VolatilityPanel:
    """Turn an OHLC table into the aligned log-variance panel.

    Variances below ``floor`` are clamped to it before taking logs. A date
    missing for some series raises in strict mode and is dropped for all
    series otherwise.

    Raises:
        AlignmentError: If series do not share the same dates (strict mode).
        InsufficientDataError: If no aligned date remains.
    """

    if not floor > 0:
        raise DataError(f"floor must be positive, got {floor}")
    table = _table_from_records(records)
    if table.empty:
        raise InsufficientDataError("no OHLC records")
    labels = list(dict.fromkeys(table["series"]))
    variance = range_variance(table["open"].to_numpy(), table["high"].to_numpy(), table["low"].to_numpy())
    clamped = np.maximum(variance, floor)
    if np.any(variance < floor):
        logger.debug("Clamped %d variances to the floor %.3g", int(np.sum(variance < floor)), floor)
    values = table.assign(log_vol=np.log(clamped)).pivot(index="date", columns="series", values="log_vol")
    values = values.sort_index()[labels]

    incomplete = values.isna().any(axis=1)
    if incomplete.any():
        missing = [pd.Timestamp(d).date() for d in values.index[incomplete]]
        if strict:
            raise AlignmentError("series are not observed on the same dates", dates=missing)
        logger.warning("Dropping %d dates not observed for every series", len(missing))
        values = values.loc[~incomplete]
    if values.empty:
        raise InsufficientDataError("no date is observed for every series")

    log_vol = values.to_numpy(dtype=float)
    dates = tuple(pd.Timestamp(d).date() for d in values.index)
    return VolatilityPanel(labels=tuple(labels), dates=dates, log_vol=log_vol, means=log_vol.mean(axis=0))


def write_panel_csv(panel: VolatilityPanel, path: Path) -> Path:
    """Write ``date`` plus one log-volatility column per series label."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel.to_frame().to_csv(path, index=False, float_format="%.17g")
    return path


def read_panel_csv(path: Path) -> VolatilityPanel:
    """Load a panel written by :func:`write_panel_csv`."""

    frame = _read_frame(Path(path)).drop(columns=_ROW_COLUMN)
    if frame.shape[1] < 2:
        raise ParseError("panel file needs a date column and at least one series")
    dates = pd.to_datetime(frame.iloc[:, 0], errors="coerce")
    if dates.isna().any():
        raise ParseError("cannot parse panel date", row=int(dates.isna().to_numpy().argmax()) + 2)
    values = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        bad_row = int(np.argmax(~np.isfinite(values).all(axis=1))) + 2
        raise ParseError("non-numeric or non-finite log volatility", row=bad_row)
    return VolatilityPanel(
        labels=tuple(str(c) for c in frame.columns[1:]),
        dates=tuple(d.date() for d in dates),
        log_vol=values,
        means=values.mean(axis=0),
    )
