"""Series ingest from CSV and atomic writers for the CLI outputs"""
import json
import logging
import os
import re
import tempfile
from typing import Iterator, Optional, Tuple

import dask.dataframe as dd
import numpy as np
import pandas as pd

from config import config
from processing.series import TimeSeries, Unit
from utils.exceptions import InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

FORMATS = ("auto", "single", "time_value")
_PANDAS_LINE = re.compile(r"line (\d+)")


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


class SeriesFileReader:
    """Reads measurement CSVs of any size into a TimeSeries.

    Files above the dask threshold go through dask; everything else, and any
    file dask fails on, is streamed in chunks with line-accurate errors.
    """

    def __init__(self, chunk_size: int = None):
        self.chunk_size = chunk_size or config.CHUNK_SIZE
        self.processed_chunks = 0
        self.total_rows = 0

    def inspect(self, path: str) -> dict:
        """Size, header and column layout from the first line"""
        if not os.path.isfile(path):
            raise InvalidArgumentError(f"Input file not found: {path}")
        file_size = os.path.getsize(path) / (1024 * 1024)  # MB
        with open(path, newline="") as handle:
            first = handle.readline()
        if not first.strip():
            raise ParseError("Input file is empty", line=1)
        fields = [f.strip() for f in first.rstrip("\r\n").split(",")]
        return {"file_size_mb": file_size, "columns": len(fields),
                "header": not all(_is_number(f) for f in fields if f)}

    def read(self, path: str, fmt: str = "auto", unit: Unit = Unit.DBM) -> TimeSeries:
        if fmt not in FORMATS:
            raise InvalidArgumentError(f"Unknown input format '{fmt}'; expected one of {FORMATS}")
        info = self.inspect(path)
        columns = {"single": 1, "time_value": 2}.get(fmt, info["columns"])
        if columns not in (1, 2):
            raise ParseError(f"Expected 1 or 2 columns, found {info['columns']}", line=1)
        logger.info(f"Reading {path} ({info['file_size_mb']:.1f} MB, {columns} column(s), "
                    f"header={info['header']})")

        if info["file_size_mb"] > config.DASK_THRESHOLD_MB:
            frame = self._read_with_dask(path, columns, info["header"])
            if frame is None:
                frame = self._read_with_chunks(path, columns, info["header"])
        else:
            frame = self._read_with_chunks(path, columns, info["header"])

        if frame.empty:
            raise ParseError("Input file has no data rows", line=2 if info["header"] else 1)
        interval = 1.0
        if columns == 2 and len(frame) > 1:
            steps = np.diff(frame["time"].to_numpy())
            median = float(np.median(steps))
            interval = median if median > 0 else 1.0
        series = TimeSeries(samples=frame["value"].to_numpy(dtype=float), interval=interval, unit=Unit(unit))
        logger.info(f"Read {len(series)} samples from {path}")
        return series

    def _names(self, columns: int):
        return ["value"] if columns == 1 else ["time", "value"]

    def _read_with_dask(self, path: str, columns: int, header: bool) -> Optional[pd.DataFrame]:
        try:
            frame = dd.read_csv(path, header=None, names=self._names(columns), skiprows=1 if header else 0,
                                dtype=float, blocksize=config.CHUNK_SIZE * 64)
            result = frame.compute()
            if result.isna().any().any():
                raise ValueError("missing cells")
            logger.info(f"Read {len(result)} rows using dask")
            return result.reset_index(drop=True)
        except Exception as e:
            logger.warning(f"Dask read failed ({e}); falling back to chunked reading")
            return None

    def _chunks(self, path: str, columns: int, header: bool) -> Iterator[Tuple[np.ndarray, pd.DataFrame]]:
        offset = 2 if header else 1
        try:
            reader = pd.read_csv(path, header=None, names=self._names(columns), skiprows=1 if header else 0,
                                 dtype=str, chunksize=self.chunk_size, skip_blank_lines=False,
                                 keep_default_na=False)
            for chunk in reader:
                yield offset + chunk.index.to_numpy(), chunk
        except pd.errors.EmptyDataError:
            return
        except pd.errors.ParserError as e:
            match = _PANDAS_LINE.search(str(e))
            line = int(match.group(1)) if match else None
            raise ParseError(f"Inconsistent column count: {e}", line=line) from e

    def _read_with_chunks(self, path: str, columns: int, header: bool) -> pd.DataFrame:
        parts = []
        for lines, chunk in self._chunks(path, columns, header):
            stripped = chunk.apply(lambda col: col.str.strip()).fillna("")
            blank = (stripped == "").all(axis=1).to_numpy()
            parsed = stripped.apply(pd.to_numeric, errors="coerce")
            bad = parsed.isna().to_numpy() & ~blank[:, None]
            if bad.any():
                row, col = np.argwhere(bad)[0]
                cell = stripped.iat[row, col]
                what = "missing or empty cell" if cell == "" else f"non-numeric value '{cell}'"
                raise ParseError(f"{what} in column '{parsed.columns[col]}'", line=int(lines[row]))
            parts.append(parsed[~blank])

            self.processed_chunks += 1
            self.total_rows += int((~blank).sum())
            if self.processed_chunks % 10 == 0:
                logger.info(f"Processed {self.processed_chunks} chunks, {self.total_rows} total rows")

        if not parts:
            return pd.DataFrame(columns=self._names(columns), dtype=float)
        return pd.concat(parts, ignore_index=True)


def ingest(path: str, fmt: str = "auto", unit: Unit = Unit.DBM) -> TimeSeries:
    return SeriesFileReader().read(path, fmt, unit)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def write_csv(frame: pd.DataFrame, path: str) -> str:
    _atomic_write(path, frame.to_csv(index=False))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Not JSON serializable: {type(value).__name__}")


def to_jsonable(value):
    """NaN and infinities become null"""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    return value


def write_json(payload: dict, path: str) -> str:
    _atomic_write(path, json.dumps(to_jsonable(payload), sort_keys=True, indent=2, default=_json_default, allow_nan=False) + "\n")
    logger.info(f"Wrote {path}")
    return path


def write_series(series: TimeSeries, path: str) -> str:
    """Two-column time,value CSV"""
    times = np.arange(len(series)) * series.interval
    return write_csv(pd.DataFrame({"time": times, "value": series.samples}), path)
