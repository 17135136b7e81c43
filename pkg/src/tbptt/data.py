"""Time-series ingestion, normalization, segmentation, and synthetic data.

Segmentation follows the overlapping-window scheme: S windows of length N
with 1-based start samples s_i, pairwise overlaps o_i = N - (s_i - s_{i-1}),
and minimum overlap o_min. Windows always cover the whole sequence.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import SplitMix64


@dataclass(frozen=True)
class ColumnTransform:
    """Affine per-column map x' = (x - offset) * scale.

    A zero scale marks a constant column: it normalizes to 0 and inverts back
    to the stored offset.
    """

    offset: float
    scale: float

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset) * self.scale

    def invert(self, x: np.ndarray) -> np.ndarray:
        if self.scale == 0.0:
            return np.full_like(x, self.offset)
        return x / self.scale + self.offset


def minmax_transform(column: np.ndarray) -> ColumnTransform:
    """Fit the affine map sending [min, max] to [-1, 1]."""
    lo, hi = float(np.min(column)), float(np.max(column))
    if hi == lo:
        return ColumnTransform(offset=lo, scale=0.0)
    return ColumnTransform(offset=0.5 * (lo + hi), scale=2.0 / (hi - lo))


def maxabs_transform(column: np.ndarray) -> ColumnTransform:
    """Fit the pure scaling sending [-max|x|, max|x|] to [-1, 1] (no offset)."""
    peak = float(np.max(np.abs(column)))
    if peak == 0.0:
        return ColumnTransform(offset=0.0, scale=0.0)
    return ColumnTransform(offset=0.0, scale=1.0 / peak)


@dataclass
class TimeSeriesDataset:
    """Aligned input/target sequences plus the normalization that produced them."""

    inputs: np.ndarray  # (T, d_x)
    targets: np.ndarray  # (T, d_y)
    name: str = "dataset"
    input_transforms: list[ColumnTransform] = field(default_factory=list)
    target_transforms: list[ColumnTransform] = field(default_factory=list)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"inputs ({self.inputs.shape[0]}) and targets ({self.targets.shape[0]}) "
                "must have the same length"
            )
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one time step")

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_x(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_y(self) -> int:
        return self.targets.shape[1]

    def slice(self, start: int, stop: int, name: str | None = None) -> "TimeSeriesDataset":
        """Contiguous sub-series sharing this dataset's transforms."""
        return TimeSeriesDataset(
            self.inputs[start:stop].copy(),
            self.targets[start:stop].copy(),
            name=name or f"{self.name}[{start}:{stop}]",
            input_transforms=list(self.input_transforms),
            target_transforms=list(self.target_transforms),
        )

    def denormalized_targets(self) -> np.ndarray:
        if not self.target_transforms:
            return self.targets.copy()
        cols = [tr.invert(self.targets[:, j]) for j, tr in enumerate(self.target_transforms)]
        return np.stack(cols, axis=1)

    def to_json(self) -> str:
        def tr_list(trs):
            return [{"offset": t.offset, "scale": t.scale} for t in trs]

        return json.dumps(
            {
                "name": self.name,
                "inputs": self.inputs.tolist(),
                "targets": self.targets.tolist(),
                "input_transforms": tr_list(self.input_transforms),
                "target_transforms": tr_list(self.target_transforms),
            }
        )

    @staticmethod
    def from_json(text: str) -> "TimeSeriesDataset":
        d = json.loads(text)

        def trs(rows):
            return [ColumnTransform(r["offset"], r["scale"]) for r in rows]

        return TimeSeriesDataset(
            np.array(d["inputs"], dtype=np.float64),
            np.array(d["targets"], dtype=np.float64),
            name=d["name"],
            input_transforms=trs(d["input_transforms"]),
            target_transforms=trs(d["target_transforms"]),
        )


@dataclass(frozen=True)
class SegmentationPlan:
    """Window length N, count S, 1-based starts, overlaps o_2..o_S, and o_min."""

    N: int
    starts: tuple[int, ...]

    @property
    def S(self) -> int:
        return len(self.starts)

    @property
    def overlaps(self) -> tuple[int, ...]:
        return tuple(
            self.N - (self.starts[i] - self.starts[i - 1]) for i in range(1, self.S)
        )

    @property
    def o_min(self) -> int:
        # single-segment convention: the natural burn-in cap N-1 remains valid
        if self.S == 1:
            return self.N - 1
        return min(self.overlaps)


def make_plan(T: int, N: int, stride: int) -> SegmentationPlan:
    """Starts 1, 1+stride, ... clipped so the last window ends exactly at T."""
    if not 1 <= N <= T:
        raise ValueError(f"window length N={N} must satisfy 1 <= N <= T={T}")
    if not 1 <= stride <= N:
        raise ValueError(f"stride={stride} must satisfy 1 <= stride <= N={N}")
    last = T - N + 1
    starts = list(range(1, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return SegmentationPlan(N=N, starts=tuple(starts))


@dataclass
class Segment:
    """One window of the dataset; index is 1-based to match start-sample labels."""

    index: int
    inputs: np.ndarray  # (N, d_x)
    targets: np.ndarray  # (N, d_y)


def extract(dataset: TimeSeriesDataset, plan: SegmentationPlan, i: int) -> Segment:
    """Window i (1-based): samples s_i .. s_i + N - 1."""
    if not 1 <= i <= plan.S:
        raise IndexError(f"segment index {i} out of range [1, {plan.S}]")
    s = plan.starts[i - 1]
    lo = s - 1
    return Segment(
        index=i,
        inputs=dataset.inputs[lo : lo + plan.N].copy(),
        targets=dataset.targets[lo : lo + plan.N].copy(),
    )


def segment_arrays(dataset: TimeSeriesDataset, plan: SegmentationPlan) -> tuple[np.ndarray, np.ndarray]:
    """All windows stacked: inputs (S, N, d_x) and targets (S, N, d_y)."""
    idx = np.array(plan.starts) - 1
    gather = idx[:, None] + np.arange(plan.N)[None, :]
    return dataset.inputs[gather], dataset.targets[gather]


# ---------------------------------------------------------------------------
# Synthetic single-input single-output data
# ---------------------------------------------------------------------------

# Fixed second-order system, diagonal (modal) form: poles 0.7 and 0.3, both
# modes driven by the input, output mixing the modes with weights 0.35/0.5.
# The noise-free output has close to unit variance under unit white input.
_GEN_A = np.array([[0.7, 0.0], [0.0, 0.3]])
_GEN_B = np.array([1.0, 1.0])
_GEN_C = np.array([0.35, 0.5])


@dataclass
class LinearSISOGenerator:
    """Ground-truth linear system behind the synthetic datasets.

    Keeps everything an oracle needs: the state-space matrices, the state at
    the first recorded sample, the noise level, and the normalization scales
    applied to the recorded series.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    noise_std: float
    seed: int
    warmup: int
    state_at_start: np.ndarray
    input_scale: float
    output_scale: float

    def signal_variance(self, terms: int = 2000) -> float:
        """Stationary variance of the noise-free output under unit white input.

        Computed from the truncated impulse-response series sum_k (c a^k b)^2.
        """
        var = 0.0
        ab = self.b.copy()
        for _ in range(terms):
            var += float(self.c @ ab) ** 2
            ab = self.a @ ab
        return var

    def realizing_params(self):
        """Exact linear-cell parameters reproducing the normalized noise-free map."""
        from .rnn_core import CellSpec, pack

        spec = CellSpec(kind="linear", d_x=1, d_h=2, d_y=1,
                        activation="identity", use_biases=False)
        w_xh = self.b[:, None] / self.input_scale if self.input_scale else self.b[:, None]
        w_hy = (self.c * self.output_scale)[None, :]
        return pack(spec, {"W_hh": self.a, "W_xh": w_xh, "W_hy": w_hy})

    def normalized_state_at_start(self) -> np.ndarray:
        """Initial state for realizing_params that matches the recorded data."""
        return self.state_at_start.copy()

    def to_json(self) -> str:
        return json.dumps(
            {
                "a": self.a.tolist(),
                "b": self.b.tolist(),
                "c": self.c.tolist(),
                "noise_std": self.noise_std,
                "seed": self.seed,
                "warmup": self.warmup,
                "state_at_start": self.state_at_start.tolist(),
                "input_scale": self.input_scale,
                "output_scale": self.output_scale,
            }
        )

    @staticmethod
    def from_json(text: str) -> "LinearSISOGenerator":
        d = json.loads(text)
        return LinearSISOGenerator(
            a=np.array(d["a"]),
            b=np.array(d["b"]),
            c=np.array(d["c"]),
            noise_std=float(d["noise_std"]),
            seed=int(d["seed"]),
            warmup=int(d["warmup"]),
            state_at_start=np.array(d["state_at_start"]),
            input_scale=float(d["input_scale"]),
            output_scale=float(d["output_scale"]),
        )


def _simulate_raw(seed: int, total: int, warmup: int, noise_std: float):
    rng = SplitMix64(seed)
    u = rng.normals(warmup + total)
    h = np.zeros(2)
    ys = np.empty(total)
    state_at_start = h
    for t in range(warmup + total):
        if t == warmup:
            # state before the first recorded input is applied
            state_at_start = h.copy()
        h = _GEN_A @ h + _GEN_B * u[t]
        if t >= warmup:
            ys[t - warmup] = _GEN_C @ h
    noise = rng.normals(total, sigma=noise_std) if noise_std > 0 else np.zeros(total)
    return u[warmup:], ys + noise, state_at_start


def gen_synthetic_splits(
    seed: int,
    lengths: tuple[int, ...],
    noise_std: float = 0.05,
    warmup: int = 50,
    name: str = "synthetic",
):
    """One continuous simulation cut into consecutive splits.

    Normalization (pure scaling to [-1, 1]) is fitted on the first split and
    shared by all of them, so one model applies across splits. Returns
    (datasets, generator).
    """
    if min(lengths) < 1:
        raise ValueError("all split lengths must be >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    total = int(sum(lengths))
    u, y, state0 = _simulate_raw(seed, total, warmup, noise_std)

    t0 = lengths[0]
    tr_u = maxabs_transform(u[:t0])
    tr_y = maxabs_transform(y[:t0])
    datasets = []
    pos = 0
    for k, length in enumerate(lengths):
        part_u = tr_u.apply(u[pos : pos + length])
        part_y = tr_y.apply(y[pos : pos + length])
        datasets.append(
            TimeSeriesDataset(
                part_u[:, None],
                part_y[:, None],
                name=f"{name}-{k}" if len(lengths) > 1 else name,
                input_transforms=[tr_u],
                target_transforms=[tr_y],
            )
        )
        pos += length

    generator = LinearSISOGenerator(
        a=_GEN_A.copy(),
        b=_GEN_B.copy(),
        c=_GEN_C.copy(),
        noise_std=noise_std,
        seed=seed,
        warmup=warmup,
        state_at_start=state0,
        input_scale=tr_u.scale if tr_u.scale else 1.0,
        output_scale=tr_y.scale if tr_y.scale else 1.0,
    )
    return datasets, generator


def gen_synthetic(seed: int, T: int, noise_std: float = 0.05, warmup: int = 50):
    """Seeded noisy recording of the fixed second-order system, normalized.

    Returns (train_dataset, generator); the generator carries everything an
    oracle needs to reconstruct or realize the data.
    """
    datasets, generator = gen_synthetic_splits(seed, (T,), noise_std, warmup)
    return datasets[0], generator


def build_forecast_targets(series, horizon: int) -> TimeSeriesDataset:
    """Scalar series -> forecasting dataset: x_t = series[t], y_t = next `horizon` values."""
    s = np.asarray(series, dtype=np.float64).reshape(-1)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if s.size <= horizon:
        raise ValueError(f"series length {s.size} must exceed horizon {horizon}")
    usable = s.size - horizon
    inputs = s[:usable, None]
    targets = np.stack([s[k + 1 : k + 1 + horizon] for k in range(usable)], axis=0)
    return TimeSeriesDataset(inputs, targets, name="forecast")


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_csv(
    path,
    input_cols: list[str],
    target_cols: list[str],
    transforms: tuple[list[ColumnTransform], list[ColumnTransform]] | None = None,
    name: str | None = None,
) -> TimeSeriesDataset:
    """Read a headed CSV of decimal doubles into a normalized dataset.

    Each requested column is min-max normalized to [-1, 1] (constant columns
    map to 0) unless explicit transforms are given, e.g. to apply a training
    split's normalization to a test split.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in input_cols + target_cols if c not in header]
    if missing:
        raise ValueError(f"{path}: missing columns {missing} (header: {header})")
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")

    col_idx = {c: header.index(c) for c in header}
    data = np.empty((len(rows) - 1, len(header)), dtype=np.float64)
    for r, row in enumerate(rows[1:], start=2):
        for c, name_c in enumerate(header):
            cell = row[c].strip() if c < len(row) else ""
            try:
                data[r - 2, c] = float(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: non-numeric cell {cell!r} at row {r}, column {name_c!r}"
                ) from None

    def take(cols, fitted):
        raw = np.stack([data[:, col_idx[c]] for c in cols], axis=1)
        trs = fitted if fitted is not None else [minmax_transform(raw[:, j]) for j in range(raw.shape[1])]
        normed = np.stack([trs[j].apply(raw[:, j]) for j in range(raw.shape[1])], axis=1)
        return normed, trs

    in_fit, tg_fit = transforms if transforms is not None else (None, None)
    inputs, in_trs = take(input_cols, in_fit)
    targets, tg_trs = take(target_cols, tg_fit)
    return TimeSeriesDataset(
        inputs,
        targets,
        name=name or path.stem,
        input_transforms=in_trs,
        target_transforms=tg_trs,
    )


def write_csv(path, columns: dict[str, np.ndarray]) -> None:
    """Write aligned 1-D columns as a headed CSV with repr-exact doubles."""
    names = list(columns)
    arrays = [np.asarray(columns[n]).reshape(-1) for n in names]
    length = len(arrays[0])
    if any(len(a) != length for a in arrays):
        raise ValueError("all columns must have equal length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for r in range(length):
            writer.writerow([repr(float(a[r])) for a in arrays])
