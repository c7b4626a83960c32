"""ShotTable: measured bitstrings keyed by (time, U, twirl instance)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np


@dataclass
class ShotTable:
    """Column-oriented table of shots.

    ``bits`` has shape ``(n_shots, n_modes)`` with modes in JW order (mode 0
    is the leftmost character of the CSV bitstring).
    """

    time: np.ndarray
    U: np.ndarray
    twirl_id: np.ndarray
    bits: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2:
            raise ValueError("bits must be a 2-d array")
        n = len(self.bits)
        self.time = np.broadcast_to(np.asarray(self.time, dtype=float), (n,)).copy()
        self.U = np.broadcast_to(np.asarray(self.U, dtype=float), (n,)).copy()
        self.twirl_id = np.broadcast_to(np.asarray(self.twirl_id, dtype=int), (n,)).copy()

    # ------------------------------------------------------------ basics
    def __len__(self) -> int:
        return len(self.bits)

    @property
    def n_modes(self) -> int:
        return self.bits.shape[1]

    @property
    def n_sites(self) -> int:
        return self.n_modes // 2

    @classmethod
    def empty(cls, n_modes: int, meta=None) -> "ShotTable":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0, int), np.zeros((0, n_modes), np.uint8), dict(meta or {}))

    def subset(self, mask) -> "ShotTable":
        mask = np.asarray(mask)
        return ShotTable(self.time[mask], self.U[mask], self.twirl_id[mask], self.bits[mask], dict(self.meta))

    def select(self, time=None, U=None) -> "ShotTable":
        m = np.ones(len(self), bool)
        if time is not None:
            m &= np.isclose(self.time, time)
        if U is not None:
            m &= np.isclose(self.U, U)
        return self.subset(m)

    def keys(self) -> list[tuple[float, float]]:
        """Sorted distinct ``(time, U)`` groups."""
        pairs = {(float(t), float(u)) for t, u in zip(np.round(self.time, 12), np.round(self.U, 12))}
        return sorted(pairs, key=lambda k: (k[1], k[0]))

    def groups(self) -> Iterator[tuple[tuple[float, float], "ShotTable"]]:
        for t, u in self.keys():
            yield (t, u), self.select(t, u)

    def twirl_groups(self) -> list[np.ndarray]:
        """Row index arrays per twirl instance (sorted by id)."""
        return [np.flatnonzero(self.twirl_id == k) for k in np.unique(self.twirl_id)]

    @staticmethod
    def concat(tables: Iterable["ShotTable"]) -> "ShotTable":
        tables = list(tables)
        if not tables:
            raise ValueError("nothing to concatenate")
        return ShotTable(np.concatenate([t.time for t in tables]), np.concatenate([t.U for t in tables]),
                         np.concatenate([t.twirl_id for t in tables]),
                         np.concatenate([t.bits for t in tables]), dict(tables[0].meta))

    def sector_weights(self) -> np.ndarray:
        """Per-shot ``(N_up, N_dn)`` Hamming weights."""
        L = self.n_sites
        return np.stack([self.bits[:, :L].sum(1), self.bits[:, L:].sum(1)], axis=1)

    # --------------------------------------------------------------- csv
    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "U", "twirl_id", "bitstring"])
        chars = np.where(self.bits > 0, "1", "0")
        for t, u, k, row in zip(self.time, self.U, self.twirl_id, chars):
            w.writerow([repr(float(t)), repr(float(u)), int(k), "".join(row)])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path_or_buf, meta=None) -> "ShotTable":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            with open(path_or_buf) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(_strip_comments(text))))
        if not rows or [c.strip() for c in rows[0][:4]] != ["time", "U", "twirl_id", "bitstring"]:
            raise ValueError("shot CSV must start with header time,U,twirl_id,bitstring")
        body = [r for r in rows[1:] if r]
        if not body:
            raise ValueError("shot CSV has no rows")
        n = len(body[0][3])
        bits = np.zeros((len(body), n), np.uint8)
        for i, r in enumerate(body):
            s = r[3].strip()
            if len(s) != n or set(s) - {"0", "1"}:
                raise ValueError(f"malformed bitstring on row {i + 2}")
            bits[i] = np.frombuffer(s.encode(), np.uint8) - 48
        return cls(np.array([float(r[0]) for r in body]), np.array([float(r[1]) for r in body]),
                   np.array([int(r[2]) for r in body]), bits, dict(meta or {}))


def _strip_comments(text: str) -> str:
    """Drop ``#`` lines (used for provenance stamps such as the manifest digest)."""
    return "".join(l for l in text.splitlines(True) if not l.startswith("#"))
