"""Binary and CSV dataset formats for location/channel record files.

Binary layout (little-endian):
    magic "WFLC" | version u32 | n_records u32 | n_a u32 | n_s u32
    then per record: x f64, y f64, n_a*n_s complex coefficients stored as
    interleaved (re f64, im f64) in row-major antenna-then-frequency order.

A surrogate-model file appends a weights section after the records:
    magic "WGTS" | bandwidth f64 | lambda0 f64 |
    n_records*n_a*n_s interleaved (re, im) f64 kernel weights.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"WFLC"
WEIGHTS_MAGIC = b"WGTS"
FORMAT_VERSION = 1


@dataclass
class Dataset:
    """Paired locations (N, 2) [m] and channel matrices (N, n_a, n_s)."""

    locations: np.ndarray
    channels: np.ndarray

    def __post_init__(self):
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 2)
        self.channels = np.asarray(self.channels, dtype=complex)
        if self.channels.ndim != 3 or len(self.channels) != len(self.locations):
            raise ValueError("channels must be (N, n_a, n_s) matching locations")

    def __len__(self):
        return len(self.locations)

    @property
    def n_a(self) -> int:
        return self.channels.shape[1]

    @property
    def n_s(self) -> int:
        return self.channels.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.locations[idx], self.channels[idx])


def _interleave(channels: np.ndarray) -> np.ndarray:
    flat = channels.reshape(len(channels), -1)
    out = np.empty((len(channels), 2 * flat.shape[1]), dtype="<f8")
    out[:, 0::2] = flat.real
    out[:, 1::2] = flat.imag
    return out


def write_dataset(ds: Dataset, path) -> None:
    header = MAGIC + struct.pack("<IIII", FORMAT_VERSION, len(ds), ds.n_a, ds.n_s)
    body = np.hstack([ds.locations.astype("<f8"), _interleave(ds.channels)])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def _read_header(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError(f"not a dataset file (magic {magic!r})")
    version, n_rec, n_a, n_s = struct.unpack("<IIII", fh.read(16))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    return n_rec, n_a, n_s


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        n_rec, n_a, n_s = _read_header(fh)
        row_len = 2 + 2 * n_a * n_s
        raw = np.frombuffer(fh.read(8 * n_rec * row_len), dtype="<f8")
    raw = raw.reshape(n_rec, row_len)
    locations = raw[:, :2].copy()
    flat = raw[:, 2::2] + 1j * raw[:, 3::2]
    return Dataset(locations, flat.reshape(n_rec, n_a, n_s))


def write_dataset_csv(ds: Dataset, path) -> None:
    """Inspection-friendly mirror of the binary format."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["x", "y"]
        for j in range(ds.n_a):
            for k in range(ds.n_s):
                header += [f"h_{j}_{k}_re", f"h_{j}_{k}_im"]
        writer.writerow(header)
        for loc, ch in zip(ds.locations, ds.channels):
            row = [repr(float(loc[0])), repr(float(loc[1]))]
            flat = ch.reshape(-1)
            for c in flat:
                row += [repr(float(c.real)), repr(float(c.imag))]
            writer.writerow(row)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_coeff = (len(header) - 2) // 2
        locs, chans = [], []
        for row in reader:
            vals = list(map(float, row))
            locs.append(vals[:2])
            flat = np.array(vals[2::2]) + 1j * np.array(vals[3::2])
            chans.append(flat)
    chans = np.array(chans)
    # infer a square-ish antenna/frequency split is impossible from CSV alone;
    # store as (N, 1, n_coeff) unless the caller reshapes.
    return Dataset(np.array(locs), chans.reshape(len(locs), 1, n_coeff))


def write_surrogate(ds: Dataset, weights: np.ndarray, bandwidth: float, lambda0: float, path):
    """Dataset records followed by the solved kernel weights section."""
    weights = np.asarray(weights, dtype=complex).reshape(len(ds), ds.n_a * ds.n_s)
    write_dataset(ds, path)
    flat = np.empty(2 * weights.size, dtype="<f8")
    flat[0::2] = weights.real.reshape(-1)
    flat[1::2] = weights.imag.reshape(-1)
    with open(path, "ab") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<dd", float(bandwidth), float(lambda0)))
        fh.write(flat.tobytes())


def read_surrogate(path):
    """Returns (dataset, weights (N, n_a*n_s), bandwidth, lambda0)."""
    with open(path, "rb") as fh:
        n_rec, n_a, n_s = _read_header(fh)
        row_len = 2 + 2 * n_a * n_s
        raw = np.frombuffer(fh.read(8 * n_rec * row_len), dtype="<f8").reshape(n_rec, row_len)
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError("dataset file has no surrogate weights section")
        bandwidth, lambda0 = struct.unpack("<dd", fh.read(16))
        w_raw = np.frombuffer(fh.read(16 * n_rec * n_a * n_s), dtype="<f8")
    locations = raw[:, :2].copy()
    flat = raw[:, 2::2] + 1j * raw[:, 3::2]
    ds = Dataset(locations, flat.reshape(n_rec, n_a, n_s))
    weights = (w_raw[0::2] + 1j * w_raw[1::2]).reshape(n_rec, n_a * n_s)
    return ds, weights, bandwidth, lambda0
