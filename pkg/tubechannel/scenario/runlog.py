"""Per-step run logs with stable digests.

A :class:`RunLog` belongs to one realization and only grows by appending records
with strictly increasing times. The digest of a record hashes its exact binary
values, so replaying a run with the same seed reproduces every digest.
"""

import hashlib
from collections.abc import Iterable, Sequence
from typing import NamedTuple

import numpy as np


class StepRecord(NamedTuple):
    """Everything logged about one step of one realization."""

    time: float
    distance: float
    count: int
    cluster_ids: tuple[int, ...]
    cluster_delays: tuple[float, ...]
    cluster_powers: tuple[float, ...]
    digest: str


def snapshot_digest(*arrays) -> str:
    """Short hash of the float64/int64 bytes of ``arrays``."""
    digest = hashlib.sha256()
    for array in arrays:
        array = np.asarray(array)
        if np.iscomplexobj(array):
            array = np.stack([array.real, array.imag], axis=-1)
        dtype = np.int64 if np.issubdtype(array.dtype, np.integer) else np.float64
        digest.update(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return digest.hexdigest()[:16]


class RunLog:
    """Step records of a single realization.

    Args:
        realization: Index of the realization that owns the log.
    """

    def __init__(self, realization: int):
        if realization < 0:
            raise ValueError("realization must be non-negative.")
        self.realization = realization
        self._records: list[StepRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self) -> tuple[StepRecord, ...]:
        return tuple(self._records)

    def append(self, record: StepRecord):
        """Append a record.

        Raises:
            ValueError: ``record.time`` is not after the last logged time.
        """
        if self._records and not record.time > self._records[-1].time:
            raise ValueError(
                f"Log times must be strictly increasing, got {record.time} after "
                f"{self._records[-1].time}."
            )
        self._records.append(record)

    @classmethod
    def from_trace(cls, trace, realization: int = 0) -> "RunLog":
        """Log of one realization of a simulation trace.

        Args:
            trace: A ``RealizationTrace``, with or without a realization axis.
            realization: Which realization to log.
        """
        fields = ("times", "distance", "count", "transfer", "cluster_ids")
        fields = (*fields, "cluster_delay", "cluster_power")
        arrays = {name: np.asarray(getattr(trace, name)) for name in fields}
        if arrays["count"].ndim == 2:
            arrays = {name: x[realization] for name, x in arrays.items()}
        elif realization != 0:
            raise IndexError("The trace holds a single realization.")

        log = cls(realization)
        for step, time in enumerate(arrays["times"]):
            alive = arrays["cluster_ids"][step] >= 0
            ids = arrays["cluster_ids"][step][alive]
            delays = arrays["cluster_delay"][step][alive]
            powers = arrays["cluster_power"][step][alive]
            log.append(
                StepRecord(
                    time=float(time),
                    distance=float(arrays["distance"][step]),
                    count=int(arrays["count"][step]),
                    cluster_ids=tuple(int(i) for i in ids),
                    cluster_delays=tuple(float(d) for d in delays),
                    cluster_powers=tuple(float(p) for p in powers),
                    digest=snapshot_digest(
                        time, arrays["transfer"][step], ids, delays, powers
                    ),
                )
            )
        return log


def merge_logs(logs: Iterable[RunLog]) -> list[RunLog]:
    """Order logs by realization, rejecting duplicates."""
    logs = sorted(logs, key=lambda log: log.realization)
    indices = [log.realization for log in logs]
    if len(set(indices)) != len(indices):
        raise ValueError("Each realization may only be logged once.")
    return logs


def run_digest(logs: Sequence[RunLog]) -> str:
    """Digest of a whole run, combining every record digest in order."""
    digest = hashlib.sha256()
    for log in merge_logs(logs):
        for record in log:
            digest.update(f"{log.realization}:{record.digest};".encode())
    return digest.hexdigest()[:16]
