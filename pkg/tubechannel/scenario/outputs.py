"""Deterministic CSV and JSON writers for every output file.

Every CSV starts with a header row and ends with a comment line
``# config_digest=<digest> seed=<seed>``. Floats are written as their shortest
round-trip decimal and lines end with ``\\n``, so equal inputs give byte-identical
files.
"""

import csv
import json
import math
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from tubechannel.scenario.runlog import RunLog

# A column of numbers: a plain sequence or a one-dimensional numpy array
Column = Sequence | np.ndarray


def _number(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(
    path: Path | str,
    header: Sequence[str],
    rows: Iterable[Sequence | np.ndarray],
    *,
    digest: str,
    seed: int,
) -> Path:
    """Write a table with the standard header and footer.

    Args:
        path: Destination file; parent directories are created.
        header: Column names.
        rows: Rows of numbers or strings.
        digest: Configuration digest written in the footer.
        seed: Master seed written in the footer.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(
                    f"Expected {len(header)} columns in {path.name}, got {len(row)}."
                )
            writer.writerow([v if isinstance(v, str) else _number(v) for v in row])
        handle.write(f"# config_digest={digest} seed={seed}\n")
    return path


def read_csv(path: Path | str) -> tuple[list[str], list[list[str]], dict[str, str]]:
    """Header, rows and footer fields of a file written by :func:`write_csv`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    footer = {}
    if lines and lines[-1].startswith("#"):
        for item in lines.pop()[1:].split():
            key, _, value = item.partition("=")
            footer[key] = value
    header, *rows = list(csv.reader(lines))
    return header, rows, footer


def correlation_rows(time: float | int, lags: Column, values: Column) -> list[tuple]:
    """Rows ``(t, lag, re, im, abs)`` of a complex correlation curve."""
    values = np.asarray(values, complex)
    return [
        (time, lag, value.real, value.imag, abs(value))
        for lag, value in zip(np.asarray(lags, float), values, strict=True)
    ]


CORRELATION_HEADERS = {
    "acf": ("t_s", "dt_s", "re", "im", "abs"),
    "ccf": ("t_s", "delta_over_lambda", "re", "im", "abs"),
    "fcf": ("t_s", "df_hz", "re", "im", "abs"),
}


def write_correlation(
    path: Path | str,
    kind: str,
    curves: Iterable[tuple[float | int, Column, Column]],
    *,
    digest: str,
    seed: int,
) -> Path:
    """Write ``acf.csv``, ``ccf.csv`` or ``fcf.csv``.

    Args:
        path: Destination file.
        kind: One of ``"acf"``, ``"ccf"`` and ``"fcf"``.
        curves: ``(time, lags, values)`` per anchor time, lags already in the
            unit of the second column.
        digest: Configuration digest.
        seed: Master seed.
    """
    if kind not in CORRELATION_HEADERS:
        raise ValueError(f"Unknown correlation kind {kind!r}.")
    rows = [row for curve in curves for row in correlation_rows(*curve)]
    return write_csv(path, CORRELATION_HEADERS[kind], rows, digest=digest, seed=seed)


def write_pdp(path: Path | str, matrix, *, digest: str, seed: int) -> Path:
    """Write ``pdp.csv`` from a :class:`~tubechannel.statistics.PdpMatrix`."""
    times = np.asarray(matrix.times)
    delays = np.asarray(matrix.delay_bins)
    power = np.asarray(matrix.power)
    rows = [
        (t, tau, power[i, j])
        for i, t in enumerate(times)
        for j, tau in enumerate(delays)
    ]
    return write_csv(path, ("t_s", "tau_s", "power"), rows, digest=digest, seed=seed)


def write_si_ccdf(path: Path | str, series, *, digest: str, seed: int) -> Path:
    """Write ``si_ccdf.csv`` from a :class:`~tubechannel.statistics.CcdfSeries`."""
    rows = zip(np.asarray(series.values), np.asarray(series.ccdf), strict=True)
    return write_csv(path, ("interval_s", "ccdf"), rows, digest=digest, seed=seed)


def write_clusters(path: Path | str, series, *, digest: str, seed: int) -> Path:
    """Write ``clusters.csv``: the ensemble-mean cluster count per step."""
    rows = zip(
        np.asarray(series.times),
        np.asarray(series.distance),
        np.asarray(series.mean),
        strict=True,
    )
    return write_csv(
        path, ("t_s", "distance_m", "count"), rows, digest=digest, seed=seed
    )


def write_runlog(
    path: Path | str, logs: Sequence[RunLog], *, digest: str, seed: int
) -> Path:
    """Write ``runlog.csv``: one row per step of every realization."""
    rows = [
        (log.realization, r.time, r.distance, r.count, r.digest)
        for log in logs
        for r in log
    ]
    header = ("realization", "t_s", "distance_m", "count", "digest")
    return write_csv(path, header, rows, digest=digest, seed=seed)


def _complex(value: complex) -> dict:
    return {"re": float(value.real), "im": float(value.imag)}


def _finite(value: float):
    return value if math.isfinite(value) else str(value)


def snapshot_document(snapshot, *, gain=None, meta: dict | None = None) -> dict:
    """JSON-ready description of every tap of every antenna pair.

    Args:
        snapshot: A :class:`~tubechannel.cir.ChannelSnapshot`.
        gain: The :class:`~tubechannel.cir.LargeScaleGain` of the instant, reported
            whether or not it was applied.
        meta: Extra fields stored under ``"meta"``.
    """
    p_count, q_count = snapshot.shape
    pairs = []
    for p in range(p_count):
        for q in range(q_count):
            components = [
                {
                    "kind": c.kind,
                    "cluster_id": c.cluster_id,
                    "ray_index": c.ray_index,
                    "amplitude": _complex(c.amplitude),
                    "delay_s": c.delay,
                    "doppler_hz": c.doppler,
                    "power": c.power,
                }
                for c in snapshot.components(p, q)
            ]
            pairs.append({"p": p, "q": q, "components": components})
    document = {"time_s": float(snapshot.time), "pairs": pairs}
    if gain is not None:
        document["gain_db"] = {
            "pl": _finite(float(gain.pl_db)),
            "sh": float(gain.sh_db),
            "bl": float(gain.bl_db),
            "ol": float(gain.ol_db),
            "total": _finite(float(gain.total_db)),
        }
    document["meta"] = dict(meta or {})
    return document


def write_json(path: Path | str, document) -> Path:
    """Write ``document`` with sorted keys, so equal documents give equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(document, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_table(
    path: Path | str,
    key_column: str,
    columns: dict[str, Column],
    keys: Column,
    *,
    digest: str,
    seed: int,
) -> Path:
    """Write named columns side by side against a shared key column.

    Used for the joined comparison tables; ``columns`` are written in their
    insertion order.
    """
    for name, values in columns.items():
        if len(values) != len(keys):
            raise ValueError(f"Column {name} does not match the key column length.")
    rows = [
        (key, *(values[i] for values in columns.values()))
        for i, key in enumerate(keys)
    ]
    header = (key_column, *columns)
    return write_csv(path, header, rows, digest=digest, seed=seed)
