"""Row-aligned feature extraction and labeled datasets.

Every channel of a recording is cut along the trusted row timeline and
summarized by 14 numbers. Fusing modalities is plain concatenation of the
per-channel blocks in sensor order.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.preprocessing import StandardScaler

from .emission_sim import EmissionRecording, SensorSpec
from .kinematics import ControlTrace, MotionSegment, grid_index

N_BANDS = 8
FEATURE_NAMES = (
    "mean",
    "std",
    "rms",
    "zcr",
    "centroid",
    "peak_freq",
    *(f"band{i}" for i in range(N_BANDS)),
)
AXIS_TASKS = ("axis_x", "axis_y", "axis_z")
TASKS = AXIS_TASKS + ("velocity",)


class FeatureError(ValueError):
    pass


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def dft_magnitude(samples, sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """One-sided amplitude spectrum of a Hann-windowed signal.

    Scaled so that a unit sine centred on a bin peaks at 1.0 and a constant
    ``c`` shows up as ``c`` in bin 0.

    Returns
    -------
    freqs, magnitude : ndarray
        Bin centre frequencies (spacing ``sample_rate / N``) and amplitudes.
    """
    x = np.asarray(samples, dtype=float)
    n = len(x)
    if n < 2:
        raise FeatureError("need at least 2 samples for a spectrum")
    w = hann(n)
    spec = np.abs(np.fft.rfft(x * w)) / w.sum()
    spec[1:] *= 2.0
    if n % 2 == 0:
        spec[-1] /= 2.0
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return freqs, spec


def band_edges(sample_rate: float) -> np.ndarray:
    """Octave band edges from 0 up to Nyquist (``N_BANDS + 1`` values)."""
    nyq = sample_rate / 2.0
    edges = nyq / 2.0 ** np.arange(N_BANDS, -1, -1)
    edges[0] = 0.0
    return edges


def channel_features(x, sample_rate: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    mean = x.mean()
    std = x.std()
    rms = np.sqrt(np.mean(x * x))
    zcr = np.count_nonzero(x[:-1] * x[1:] < 0) * sample_rate / n
    centroid = peak = 0.0
    bands = np.zeros(N_BANDS)
    if n >= 2:
        freqs, mag = dft_magnitude(x - mean, sample_rate)
        total = mag.sum()
        if total > 0:
            centroid = float(np.dot(freqs, mag) / total)
            peak = float(freqs[np.argmax(mag)])
        power = mag * mag
        edges = band_edges(sample_rate)
        which = np.clip(np.searchsorted(edges, freqs, side="right") - 1, 0, N_BANDS - 1)
        bands = np.bincount(which, weights=power, minlength=N_BANDS)
    return np.concatenate([[mean, std, rms, zcr, centroid, peak], bands])


def feature_layout(sensors: Sequence[SensorSpec]) -> tuple[tuple[str, str], ...]:
    return tuple((s.sensor_id, name) for s in sensors for name in FEATURE_NAMES)


def layout_digest(layout) -> str:
    return hashlib.sha256(json.dumps([list(p) for p in layout]).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[tuple[str, str], ...]

    @property
    def digest(self) -> str:
        return layout_digest(self.layout)


@dataclass(frozen=True)
class RowLabel:
    axis_active: tuple[bool, bool, bool]
    velocity_class: int
    row_id: int


def extract_row_features(
    slices: Mapping[str, np.ndarray], rates: Mapping[str, float], row_id=None
) -> FeatureVector:
    """Concatenate per-channel features in the order of ``slices``."""
    blocks = []
    layout = []
    for sid, x in slices.items():
        if len(x) == 0:
            raise FeatureError(f"row {row_id}: empty slice on channel {sid}")
        blocks.append(channel_features(x, rates[sid]))
        layout.extend((sid, name) for name in FEATURE_NAMES)
    return FeatureVector(np.concatenate(blocks), tuple(layout))


def row_slices(trace: ControlTrace, sample_rate: float) -> np.ndarray:
    """``(start, stop)`` channel indices of every row, on the control grid."""
    factor = int(round(sample_rate / trace.sample_rate))
    edges = trace.first_index * factor
    if len(edges) > 1:
        # the last row ends where the channel does, not on the coarser control grid
        edges[-1] = max(grid_index(trace.total_duration, sample_rate), edges[-2])
    return np.column_stack([edges[:-1], edges[1:]])


def recording_features(
    recording: EmissionRecording, trace: ControlTrace, min_samples: int = 2
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix of ``recording`` cut along ``trace``'s row timeline.

    Returns the matrix and a boolean mask of rows that were fully observed.
    Rows running past the end of the data get a NaN row and ``False``.
    """
    sensors = recording.config.sensors
    spans = {s.sensor_id: row_slices(trace, s.sample_rate) for s in sensors}
    n_rows = len(trace.segments)
    n_feat = len(sensors) * len(FEATURE_NAMES)
    X = np.full((n_rows, n_feat), np.nan)
    observed = np.ones(n_rows, dtype=bool)
    for k in range(n_rows):
        slices = {}
        for s in sensors:
            a, b = spans[s.sensor_id][k]
            data = recording.channels[s.sensor_id]
            if b > len(data):
                observed[k] = False
                break
            if b - a < min_samples:
                raise FeatureError(
                    f"row {trace.row_ids[k]}: only {b - a} samples on channel "
                    f"{s.sensor_id} (need {min_samples})"
                )
            slices[s.sensor_id] = data[a:b]
        if observed[k]:
            rates = {s.sensor_id: s.sample_rate for s in sensors}
            X[k] = extract_row_features(slices, rates, trace.row_ids[k]).values
    return X, observed


def speed_table_for(segments: Sequence[MotionSegment]) -> tuple[float, ...]:
    return (0.0,) + tuple(sorted({s.speed for s in segments} - {0.0}))


def velocity_class(speed: float, table: Sequence[float]) -> int:
    """Class index of ``speed``; unknown speeds map to the nearest entry."""
    table = np.asarray(table)
    hit = np.flatnonzero(table == speed)
    if hit.size:
        return int(hit[0])
    return int(np.argmin(np.abs(table - speed)))


def segment_labels(segments: Sequence[MotionSegment], table: Sequence[float]):
    axes = np.array([s.axis_active for s in segments], dtype=bool).reshape(-1, 3)
    vclass = np.array([velocity_class(s.speed, table) for s in segments], dtype=np.int64)
    return axes, vclass


class LabeledDataset:
    """Per-row feature matrix with labels and a fitted z-score normalization.

    ``X`` holds raw feature values; :meth:`normalized` applies the stored
    scaler. Constant columns are centred but left unscaled and flagged in
    ``degenerate``.
    """

    def __init__(self, X, axis_active, velocity_class, row_id, layout, speed_table,
                 modalities: Mapping[str, str], recording_index=None):
        self.X = np.asarray(X, dtype=float)
        self.axis_active = np.asarray(axis_active, dtype=bool).reshape(-1, 3)
        self.velocity_class = np.asarray(velocity_class, dtype=np.int64)
        self.row_id = np.asarray(row_id, dtype=np.int64)
        self.layout = tuple(tuple(p) for p in layout)
        self.speed_table = tuple(float(s) for s in speed_table)
        self.modalities = dict(modalities)
        if recording_index is None:
            recording_index = np.zeros(len(self.X), dtype=np.int64)
        self.recording_index = np.asarray(recording_index, dtype=np.int64)
        if len(self.X) == 0:
            raise FeatureError("dataset has no rows")
        if self.X.shape[1] != len(self.layout):
            raise FeatureError("feature matrix does not match layout")
        if not np.all(np.isfinite(self.X)):
            raise FeatureError("non-finite feature values")
        self.scaler = StandardScaler().fit(self.X)
        self.degenerate = (self.scaler.scale_ == 1.0) & ~np.isclose(self.scaler.var_, 1.0)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def layout_digest(self) -> str:
        return layout_digest(self.layout)

    def normalized(self, X=None) -> np.ndarray:
        return self.scaler.transform(self.X if X is None else X)

    def labels(self, task: str) -> np.ndarray:
        if task in AXIS_TASKS:
            return self.axis_active[:, AXIS_TASKS.index(task)].astype(np.int64)
        if task == "velocity":
            return self.velocity_class
        raise ValueError(f"unknown task {task!r}")

    @property
    def rows(self) -> list[tuple[FeatureVector, RowLabel]]:
        return [
            (
                FeatureVector(self.X[i].copy(), self.layout),
                RowLabel(tuple(bool(b) for b in self.axis_active[i]),
                         int(self.velocity_class[i]), int(self.row_id[i])),
            )
            for i in range(len(self))
        ]

    def subset(self, indices) -> "LabeledDataset":
        """Rows at ``indices``; normalization is refitted on them."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.X[idx], self.axis_active[idx], self.velocity_class[idx], self.row_id[idx],
            self.layout, self.speed_table, self.modalities, self.recording_index[idx],
        )

    def select_modalities(self, modalities) -> "LabeledDataset":
        if isinstance(modalities, str):
            modalities = [modalities]
        keep = [i for i, (sid, _) in enumerate(self.layout) if self.modalities[sid] in modalities]
        if not keep:
            raise FeatureError(f"no columns for modalities {list(modalities)}")
        sensors = {self.layout[i][0] for i in keep}
        return LabeledDataset(
            self.X[:, keep], self.axis_active, self.velocity_class, self.row_id,
            [self.layout[i] for i in keep], self.speed_table,
            {sid: m for sid, m in self.modalities.items() if sid in sensors},
            self.recording_index,
        )

    @property
    def modality_names(self) -> list[str]:
        seen = []
        for sid, _ in self.layout:
            m = self.modalities[sid]
            if m not in seen:
                seen.append(m)
        return seen

    def strata(self) -> np.ndarray:
        return self.axis_active @ np.array([1, 2, 4]) + 8 * self.velocity_class

    def split(self, test_size: float = 0.3, seed: int = 0):
        """Stratified train/test split over the joint (axes, speed) label.

        The test part is None when every stratum is a singleton.
        """
        rng = np.random.default_rng(seed)
        strata = self.strata()
        test = []
        for s in np.unique(strata):
            members = np.flatnonzero(strata == s)
            rng.shuffle(members)
            n_test = int(round(test_size * len(members))) if len(members) > 1 else 0
            test.extend(members[:n_test].tolist())
        test_mask = np.zeros(len(self), dtype=bool)
        test_mask[test] = True
        test_ds = self.subset(np.flatnonzero(test_mask)) if test else None
        return self.subset(np.flatnonzero(~test_mask)), test_ds

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = [f"{sid}:{name}" for sid, name in self.layout]
        buf.write(",".join(["row_id", "label_axes", "label_vclass", *cols]) + "\n")
        for i in range(len(self)):
            axes = "".join("1" if b else "0" for b in self.axis_active[i])
            vals = ",".join(repr(v) for v in self.X[i].tolist())
            buf.write(f"{self.row_id[i]},{axes},{self.velocity_class[i]},{vals}\n")
        return buf.getvalue()

    def normalization_dict(self) -> dict:
        return {
            "layout_digest": self.layout_digest,
            "columns": [f"{sid}:{name}" for sid, name in self.layout],
            "mean": self.scaler.mean_.tolist(),
            "std": np.sqrt(self.scaler.var_).tolist(),
            "degenerate": self.degenerate.tolist(),
            "speed_table": list(self.speed_table),
        }


def build_dataset(recordings) -> LabeledDataset:
    """Label and featurize one recording or a sequence of recordings.

    The recordings must share a sensor list. The speed table is the union
    of their commanded speeds.
    """
    if isinstance(recordings, EmissionRecording):
        recordings = [recordings]
    recordings = list(recordings)
    if not recordings:
        raise FeatureError("no recordings given")
    layout = feature_layout(recordings[0].config.sensors)
    table = (0.0,) + tuple(sorted(
        {s.speed for rec in recordings for s in rec.trace.segments} - {0.0}
    ))
    blocks, axes, vclass, rows, origin = [], [], [], [], []
    for i, rec in enumerate(recordings):
        if feature_layout(rec.config.sensors) != layout:
            raise FeatureError("recordings use different sensor layouts")
        if not rec.trace.segments:
            raise FeatureError("recording has no rows")
        X, observed = recording_features(rec, rec.trace)
        if not observed.all():
            raise FeatureError("recording is shorter than its own trace")
        a, v = segment_labels(rec.trace.segments, table)
        blocks.append(X)
        axes.append(a)
        vclass.append(v)
        rows.append(rec.trace.row_ids)
        origin.append(np.full(len(X), i))
    modalities = {s.sensor_id: s.modality for s in recordings[0].config.sensors}
    return LabeledDataset(
        np.vstack(blocks), np.vstack(axes), np.concatenate(vclass), np.concatenate(rows),
        layout, table, modalities, np.concatenate(origin),
    )
