"""Population traces and the CSV schema shared by every engine.

Columns: ``step,time_fs,theta,P1,P2,leak_frac,N00,N01,N10,N11``.  Count
columns are left empty for engines that do not sample (HEOM, oracle).
Floats are written with 12 significant digits, LF line endings, UTF-8.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ("step", "time_fs", "theta", "P1", "P2", "leak_frac", "N00", "N01", "N10", "N11")
COUNT_LABELS = ("00", "01", "10", "11")


def fmt_float(x: float) -> str:
    return format(float(x), ".12g")


@dataclass
class PopulationTrace:
    """Site populations on a uniform time grid.

    ``populations`` has one row per time point and one column per site.
    ``counts`` (optional) holds raw measurement counts in the order
    ``N00, N01, N10, N11``; ``leak_frac`` the fraction of shots outside the
    one-exciton manifold.
    """

    times_fs: np.ndarray
    thetas: np.ndarray
    populations: np.ndarray
    provenance: dict = field(default_factory=dict)
    leak_frac: np.ndarray | None = None
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.times_fs = np.asarray(self.times_fs, dtype=float)
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.populations = np.atleast_2d(np.asarray(self.populations, dtype=float))
        if self.populations.shape[0] != self.times_fs.shape[0]:
            raise ValueError("populations and times_fs lengths differ")
        if self.thetas.shape != self.times_fs.shape:
            raise ValueError("thetas and times_fs lengths differ")
        if self.times_fs.size > 1 and np.any(np.diff(self.times_fs) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def P1(self) -> np.ndarray:
        return self.populations[:, 0]

    @property
    def P2(self) -> np.ndarray:
        return self.populations[:, 1]

    @property
    def engine(self) -> str:
        return self.provenance.get("engine", "unknown")

    @property
    def times_ps(self) -> np.ndarray:
        return self.times_fs * 1e-3

    def __len__(self):
        return self.times_fs.shape[0]

    def dt_fs(self) -> float:
        """Uniform time step; raises if the grid is not uniform."""
        steps = np.diff(self.times_fs)
        if steps.size == 0:
            raise ValueError("trace has a single time point")
        if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, steps[0]):
            raise ValueError("trace time grid is not uniform")
        return float(steps[0])

    # -- CSV ----------------------------------------------------------------

    def to_csv_text(self) -> str:
        buf = io.StringIO(newline="")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        n_sites = self.populations.shape[1]
        for i in range(len(self)):
            p1 = self.populations[i, 0]
            p2 = self.populations[i, 1] if n_sites > 1 else 1.0 - p1
            leak = "" if self.leak_frac is None else fmt_float(self.leak_frac[i])
            if self.counts is None:
                cnt = ["", "", "", ""]
            else:
                cnt = [str(int(c)) for c in self.counts[i]]
            writer.writerow([str(i), fmt_float(self.times_fs[i]), fmt_float(self.thetas[i]),
                             fmt_float(p1), fmt_float(p2), leak, *cnt])
        return buf.getvalue()

    def write_csv(self, path) -> str:
        """Write the trace and return the sha256 of the bytes written."""
        data = self.to_csv_text().encode("utf-8")
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def read_csv(cls, path, provenance=None) -> "PopulationTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace")
        missing = set(CSV_HEADER) - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        times = [float(r["time_fs"]) for r in rows]
        thetas = [float(r["theta"]) for r in rows]
        pops = [[float(r["P1"]), float(r["P2"])] for r in rows]
        leak = None
        if all(r["leak_frac"] != "" for r in rows):
            leak = np.array([float(r["leak_frac"]) for r in rows])
        counts = None
        if all(r["N00"] != "" for r in rows):
            counts = np.array([[int(r["N" + lab]) for lab in COUNT_LABELS] for r in rows], dtype=np.int64)
        return cls(times, thetas, pops, dict(provenance or {}), leak, counts)


def rms_difference(a: PopulationTrace, b: PopulationTrace) -> float:
    """Root-mean-square difference of P1 between two traces on the same grid."""
    if len(a) != len(b) or np.max(np.abs(a.times_fs - b.times_fs)) > 1e-6:
        raise ValueError("traces are not on the same time grid")
    return float(np.sqrt(np.mean((a.P1 - b.P1) ** 2)))
