"""Traffic tensors: CSV ingestion, scaling, windowing and synthetic data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import IngestionError
from .graphs import FLOW, SPEED, RoadTopology, read_lengths_csv, read_topology_csv

SIGNAL_COLUMNS = ("flow", "occupancy", "speed")
MAX_GAP_HOURS = 3
SPLITS = ("train", "val", "test")


@dataclass
class TrafficTensor:
    """Hourly signals ``values[t, road, signal]`` with signals ordered
    (flow, occupancy, speed)."""

    values: np.ndarray
    timestamps: list[str]
    road_ids: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or 0 in self.values.shape:
            raise IngestionError(f"traffic tensor must be non-empty T×n×m, got {self.values.shape}")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


# -------------------------------------------------------------------- load

def _fill_gaps(series: np.ndarray, where: str) -> np.ndarray:
    """Linear interpolation over NaN runs of at most MAX_GAP_HOURS; runs at
    either end take the nearest observed value."""
    isnan = np.isnan(series)
    if not isnan.any():
        return series
    if isnan.all():
        raise IngestionError(f"{where}: no observations")
    idx = np.flatnonzero(isnan)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    for run in runs:
        if run.size > MAX_GAP_HOURS:
            raise IngestionError(f"{where}: gap of {run.size} hours starting at hour {run[0]}")
    good = np.flatnonzero(~isnan)
    out = series.copy()
    out[isnan] = np.interp(idx, good, series[good])
    return out


def load_dataset(signals_csv, topology_csv, lengths_csv) -> tuple[TrafficTensor, RoadTopology]:
    """Read the three PeMS-style CSVs into a dense tensor and topology.

    Roads are indexed by their order in the lengths file.  Missing hours
    are interpolated when the gap is at most three hours.
    """
    signals_csv = Path(signals_csv)
    for p in (signals_csv, topology_csv, lengths_csv):
        if not Path(p).exists():
            raise IngestionError(f"{p}: file not found")
    road_ids, lengths = read_lengths_csv(lengths_csv)
    pos = {rid: i for i, rid in enumerate(road_ids)}
    edges = read_topology_csv(topology_csv, n=len(road_ids))

    df = pd.read_csv(signals_csv, dtype={"sensor_id": str}, float_precision="round_trip")
    need = {"timestamp", "sensor_id", *SIGNAL_COLUMNS}
    if not need <= set(df.columns):
        raise IngestionError(f"{signals_csv}: header must contain {sorted(need)}")
    if df.empty:
        raise IngestionError(f"{signals_csv}: no rows")
    df["sensor_id"] = df["sensor_id"].str.strip()
    unknown = ~df["sensor_id"].isin(pos)
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise IngestionError(
            f"{signals_csv}:{row + 2}: unknown sensor id {df['sensor_id'].iloc[row]!r}")
    try:
        ts = pd.to_datetime(df["timestamp"])
    except (ValueError, TypeError) as exc:
        raise IngestionError(f"{signals_csv}: unparseable timestamp ({exc})") from None
    off_hour = (ts != ts.dt.floor("h"))
    if off_hour.any():
        row = int(np.flatnonzero(off_hour)[0])
        raise IngestionError(f"{signals_csv}:{row + 2}: timestamp not on the hour")
    dup = pd.DataFrame({"t": ts, "s": df["sensor_id"]}).duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup)[0])
        raise IngestionError(f"{signals_csv}:{row + 2}: duplicate (timestamp, sensor) row")
    vals = df[list(SIGNAL_COLUMNS)].to_numpy(dtype=np.float64)
    neg = (vals < 0).any(axis=1)
    if neg.any():
        row = int(np.flatnonzero(neg)[0])
        raise IngestionError(f"{signals_csv}:{row + 2}: negative signal value")

    start, stop = ts.min(), ts.max()
    hours = pd.date_range(start, stop, freq="h")
    t_idx = ((ts - start) / pd.Timedelta(hours=1)).to_numpy().astype(np.int64)
    r_idx = df["sensor_id"].map(pos).to_numpy()
    cube = np.full((len(hours), len(road_ids), 3), np.nan)
    cube[t_idx, r_idx] = vals
    for r in range(len(road_ids)):
        for s in range(3):
            cube[:, r, s] = _fill_gaps(cube[:, r, s],
                                       f"{signals_csv}: sensor {road_ids[r]} {SIGNAL_COLUMNS[s]}")
    stamps = [h.strftime("%Y-%m-%dT%H:%M:%S") for h in hours]
    return TrafficTensor(cube, stamps, road_ids), RoadTopology(len(road_ids), edges, lengths)


def write_dataset(tensor: TrafficTensor, topo: RoadTopology, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"signals": out / "signals.csv", "topology": out / "topology.csv",
             "lengths": out / "lengths.csv"}
    with paths["signals"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "sensor_id", *SIGNAL_COLUMNS])
        for t, stamp in enumerate(tensor.timestamps):
            for r, rid in enumerate(tensor.road_ids):
                w.writerow([stamp, rid, *(repr(float(x)) for x in tensor.values[t, r])])
    with paths["topology"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["road_a", "road_b"])
        w.writerows(topo.edges)
    with paths["lengths"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["road_id", "length_m"])
        for rid, length in zip(tensor.road_ids, topo.lengths):
            w.writerow([rid, repr(float(length))])
    return paths


# ----------------------------------------------------------------- scaling

def split_bounds(T: int, fractions=(0.7, 0.1, 0.2)) -> tuple[int, int]:
    """Hour indices where the validation and test segments start."""
    f = np.asarray(fractions, dtype=np.float64)
    if f.shape != (3,) or (f < 0).any() or abs(f.sum() - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negatives summing to 1, got {fractions}")
    b1 = int(round(T * f[0]))
    b2 = int(round(T * (f[0] + f[1])))
    return b1, b2


def minmax_normalize(values: np.ndarray, train_end: int | None = None):
    """Scale each signal to [0, 1] with min/max taken from ``values[:train_end]``.

    Returns ``(scaled, lo, hi)``; values outside the training range are
    clipped and a constant signal maps to 0.
    """
    values = np.asarray(values, dtype=np.float64)
    ref = values if train_end is None else values[:train_end]
    if ref.shape[0] == 0:
        raise ValueError("empty training span for normalisation")
    lo = ref.min(axis=(0, 1))
    hi = ref.max(axis=(0, 1))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (values - lo) / safe, 0.0)
    return np.clip(scaled, 0.0, 1.0), lo, hi


# --------------------------------------------------------------- windowing

@dataclass
class SampleSet:
    """Windowed samples over a scaled tensor.

    Sample ``i`` ends at hour ``t_end[i]`` (0-based); its input is
    ``values[t_end - w + 1 : t_end + 1]`` and its target the grades at
    ``t_end + h``.  ``split[i]`` is train/val/test, or ``gap`` when the
    sample's span straddles a segment boundary and is left out.
    """

    values: np.ndarray
    grades: np.ndarray
    w: int
    h: int
    t_end: np.ndarray
    split: np.ndarray

    def __len__(self):
        return self.t_end.size

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def window(self, i: int) -> np.ndarray:
        t = self.t_end[i]
        return self.values[t - self.w + 1:t + 1]

    def target(self, i: int) -> np.ndarray:
        return self.grades[:, self.t_end[i] + self.h]

    def span(self, i: int) -> tuple[int, int]:
        """First input hour and target hour, inclusive."""
        t = int(self.t_end[i])
        return t - self.w + 1, t + self.h


def make_samples(values: np.ndarray, grades: np.ndarray, w: int, h: int,
                 fractions=(0.7, 0.1, 0.2)) -> SampleSet:
    values = np.asarray(values, dtype=np.float64)
    grades = np.asarray(grades)
    T = values.shape[0]
    if w < 1 or h < 1:
        raise ValueError("window and horizon must be at least 1")
    if T < w + h:
        raise ValueError(f"series of {T} hours is shorter than window {w} + horizon {h}")
    if grades.shape != (values.shape[1], T):
        raise ValueError(f"grades {grades.shape} do not match n×T = {(values.shape[1], T)}")
    t_end = np.arange(w - 1, T - h)
    first, last = t_end - w + 1, t_end + h
    b1, b2 = split_bounds(T, fractions)
    split = np.full(t_end.size, "gap", dtype=object)
    split[last < b1] = "train"
    split[(first >= b1) & (last < b2)] = "val"
    split[first >= b2] = "test"
    return SampleSet(values, grades, w, h, t_end, split.astype(str))


# --------------------------------------------------------------- synthetic

def _random_topology(n: int, rng: np.random.Generator) -> tuple[list[tuple[int, int]], list[int]]:
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    edges = {(min(i, p), max(i, p)) for i, p in enumerate(parent) if p >= 0}
    for _ in range(n // 3):
        a, b = rng.choice(n, size=2, replace=False)
        edges.add((int(min(a, b)), int(max(a, b))))
    return sorted(edges), parent


def synth_dataset(n: int = 30, days: int = 14, seed: int = 0,
                  start: str = "2019-01-01", road_noise: float = 0.005,
                  city_noise: float = 0.0, speed_noise: float = 0.5) -> tuple[TrafficTensor, RoadTopology]:
    """Daily-periodic traffic on a random connected road network.

    Flow follows a per-road sinusoid (phase drifting smoothly along a
    random spanning tree, plus a weaker half-day harmonic); speed drops
    quadratically with relative flow; occupancy is flow over speed scaled
    by a jam density.  Noise is the sum of a city-wide AR(1) demand swing
    and a weaker per-road AR(1) term.
    """
    if n < 2 or days < 2:
        raise ValueError("synth_dataset needs n >= 2 and days >= 2")
    rng = np.random.default_rng(seed)
    edges, parent = _random_topology(n, rng)
    lengths = rng.uniform(300.0, 3000.0, size=n)

    phase = np.empty(n)
    phase[0] = rng.uniform(6.0, 10.0)
    for i in range(1, n):
        phase[i] = phase[parent[i]] + rng.normal(0.0, 0.8)
    cap = rng.uniform(800.0, 2000.0, size=n)
    amp = rng.uniform(0.25, 0.45, size=n)
    vfree = rng.uniform(80.0, 110.0, size=n)

    T = days * 24
    hour = np.arange(T)[:, None]
    ang = 2 * np.pi * (hour - phase[None, :]) / 24.0
    level = 0.5 + amp * np.sin(ang) + 0.08 * np.sin(2 * ang)

    # city-wide demand swings plus small road-local fluctuations
    eps_city = rng.normal(0.0, city_noise, size=T)
    eps_road = rng.normal(0.0, road_noise, size=(T, n))
    city = np.zeros(T)
    noise = np.zeros((T, n))
    for t in range(1, T):
        city[t] = 0.8 * city[t - 1] + eps_city[t]
        noise[t] = 0.6 * noise[t - 1] + eps_road[t]
    noise += city[:, None]
    rel = np.clip(level + noise, 0.02, 1.1)
    flow = cap * rel
    speed = vfree * (1.0 - 0.65 * np.clip(rel, 0, 1) ** 2) + rng.normal(0.0, speed_noise, size=(T, n))
    speed = np.clip(speed, 5.0, None)
    occupancy = np.clip(flow / (speed * 150.0), 0.0, 1.0)

    values = np.stack([flow, occupancy, speed], axis=2)
    stamps = [s.strftime("%Y-%m-%dT%H:%M:%S")
              for s in pd.date_range(start, periods=T, freq="h")]
    road_ids = [f"R{i:03d}" for i in range(n)]
    return TrafficTensor(values, stamps, road_ids), RoadTopology(n, edges, lengths)


REGIME_CENTRES = np.array([
    # flow, occupancy, speed
    [300.0, 0.03, 105.0],
    [900.0, 0.08, 85.0],
    [1500.0, 0.16, 65.0],
    [1300.0, 0.30, 40.0],
    [600.0, 0.55, 15.0],
])


def synth_regimes(n_samples: int = 2000, seed: int = 0) -> np.ndarray:
    """Raw (flow, occupancy, speed) rows drawn from five traffic regimes,
    free flow through jam, in equal shares."""
    rng = np.random.default_rng(seed)
    k = REGIME_CENTRES.shape[0]
    labels = np.arange(n_samples) % k
    spread = np.array([60.0, 0.01, 3.0])
    out = REGIME_CENTRES[labels] + rng.normal(size=(n_samples, 3)) * spread
    out[:, FLOW] = np.clip(out[:, FLOW], 0, None)
    out[:, 1] = np.clip(out[:, 1], 0, 1)
    out[:, SPEED] = np.clip(out[:, SPEED], 1, None)
    return out
