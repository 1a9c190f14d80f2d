"""CSV loss logs: ``epoch,step,d_loss,g_loss`` with six-decimal floats."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, List

from .training import LossRecord

HEADER = "epoch,step,d_loss,g_loss"


def format_record(r: LossRecord) -> str:
    return f"{r.epoch},{r.step},{r.d_loss:.6f},{r.g_loss:.6f}"


def write_loss_csv(records: Iterable[LossRecord], path) -> None:
    path = Path(path)
    lines = [HEADER] + [format_record(r) for r in records]
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_loss_csv(path) -> List[LossRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError(f"{path}: missing header {HEADER!r}")
    out = []
    for line in lines[1:]:
        e, s, d, g = line.split(",")
        out.append(LossRecord(int(e), int(s), float(d), float(g)))
    return out


class CsvLossSink:
    """Append-only sink that writes one line per record as it arrives."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        mode = "a" if append and self.path.exists() else "w"
        self._fh = open(self.path, mode)
        if mode == "w":
            self._fh.write(HEADER + "\n")

    def __call__(self, record: LossRecord) -> None:
        self._fh.write(format_record(record) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
