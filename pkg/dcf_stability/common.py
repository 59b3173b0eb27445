import csv
import io
import json
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from twisted.logger import Logger

log = Logger()

T = TypeVar("T")
R = TypeVar("R")

SIGNIFICANT_DIGITS = 12


class DcfStabilityError(Exception):
    pass


class ParameterError(DcfStabilityError):
    pass


class DomainError(ParameterError):
    pass


class NonConvergenceError(DcfStabilityError):
    def __init__(self, msg: str, residual: float, iterations: int) -> None:
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class InfeasibleError(DcfStabilityError):
    pass


class ConfigError(DcfStabilityError):
    def __init__(self, errors: list[str]) -> None:
        super().__init__("; ".join(errors))
        self.errors = errors


def write_artifact(file: Path, text: str) -> None:
    """Publish one result file under its final name only once it is complete."""
    file.parent.mkdir(parents=True, exist_ok=True)
    partial = file.with_name(f".{file.name}.partial")
    try:
        partial.write_text(text)
        partial.replace(file)
    except OSError:
        partial.unlink(missing_ok=True)
        raise


def format_value(value: Any) -> str:
    if isinstance(value, bool | np.bool_):
        return "true" if value else "false"
    if isinstance(value, int | np.integer):
        return str(int(value))
    if isinstance(value, float | np.floating):
        return f"{float(value):.{SIGNIFICANT_DIGITS}g}"
    if value is None:
        return ""
    return str(value)


def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and scalars into plain JSON values."""
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        return float(f"{float(value):.{SIGNIFICANT_DIGITS}g}")
    return value


def dump_json(document: Any) -> str:
    return json.dumps(to_jsonable(document), indent=2, sort_keys=True) + "\n"


def write_json(file: Path, document: Any) -> None:
    write_artifact(file, dump_json(document))
    log.info("wrote {file}", file=str(file))


def write_csv(
    file: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    metadata: Mapping[str, Any],
) -> None:
    """Write a CSV with a header row and a `<name>.meta.json` sidecar."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            msg = f"row has {len(row)} columns, header has {len(header)}"
            raise ParameterError(msg)
        writer.writerow([format_value(v) for v in row])
    write_artifact(file, buf.getvalue())
    write_artifact(
        file.with_name(f"{file.stem}.meta.json"), dump_json(dict(metadata))
    )
    log.info("wrote {file}", file=str(file))


def run_parallel(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    """Map `fn` over `items`, keeping input order in the result."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
