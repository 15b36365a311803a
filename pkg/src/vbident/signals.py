"""Regulation signals: CSV ingestion, scaling to an ensemble, synthetic generation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class RegulationSignal:
    """Uniformly sampled power-deviation series.

    ``normalized`` signals live in [-1, 1]; scaled signals are in kW and carry
    the factor that produced them so the scaling can be undone.
    """

    dt: float
    samples: np.ndarray = field(repr=False)
    source: str = "file"
    normalized: bool = True
    scale: float = 1.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("signal contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt


def load_signal(path, dt: float = 1.0) -> RegulationSignal:
    """Read a one-column CSV.

    A leading ``# normalized=true|false`` comment declares the units; without
    it samples are taken as kW. A single non-numeric header row is allowed.
    """
    path = Path(path)
    normalized = False
    values = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            cell = row[0].strip()
            if cell.startswith("#"):
                key, _, val = cell.lstrip("#").strip().partition("=")
                if key.strip().lower() == "normalized":
                    normalized = val.strip().lower() == "true"
                continue
            try:
                # the minus sign may come through as U+2212 from spreadsheets
                values.append(float(cell.replace("−", "-")))
            except ValueError:
                if not values and lineno <= 2:
                    continue  # header row
                raise DataError(f"{path}: row {lineno}: cannot parse {cell!r} as a number") from None
    if not values:
        raise DataError(f"{path}: no samples")
    samples = np.array(values)
    if normalized and np.max(np.abs(samples)) > 1.0:
        raise DataError(f"{path}: declared normalized but samples leave [-1, 1]")
    return RegulationSignal(dt, samples, source=f"file:{path.name}", normalized=normalized)


def save_signal(signal: RegulationSignal, path) -> None:
    with Path(path).open("w") as fh:
        fh.write(f"# normalized={'true' if signal.normalized else 'false'}\n")
        for v in signal.samples:
            fh.write(f"{float(v)!r}\n")


def scale_signal(signal: RegulationSignal, ensemble_rated_power: float, fraction: float = 0.2) -> RegulationSignal:
    """Map a normalized signal to kW: u <- u * fraction * ensemble_rated_power."""
    if not signal.normalized:
        raise ValueError("scale_signal expects a normalized signal")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if ensemble_rated_power <= 0:
        raise ValueError("ensemble rated power must be positive")
    factor = fraction * ensemble_rated_power
    return replace(signal, samples=signal.samples * factor, normalized=False, scale=factor)


def unscale_signal(signal: RegulationSignal) -> RegulationSignal:
    if signal.normalized:
        return signal
    return replace(signal, samples=signal.samples / signal.scale, normalized=True, scale=1.0)


def synth_signal(seed: int, duration: float = 7200.0, dt: float = 1.0, bandwidth: float = 1 / 120.0,
                 n_tones: int = 6) -> RegulationSignal:
    """Seeded band-limited surrogate for a market regulation signal.

    Sum of ``n_tones`` sinusoids with frequencies up to ``bandwidth`` (Hz) and
    random phases, plus moving-average-smoothed noise. The result is
    demeaned and divided by its peak, so it has zero mean and max |u| = 1.
    """
    if duration < dt:
        raise ValueError("duration must cover at least one step")
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    lowest = 1.0 / max(duration, dt)
    freqs = rng.uniform(lowest, bandwidth, size=n_tones)
    phases = rng.uniform(0, 2 * math.pi, size=n_tones)
    amps = rng.uniform(0.3, 1.0, size=n_tones)
    u = (amps[:, None] * np.sin(2 * math.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)
    width = max(1, int(round(1.0 / (bandwidth * dt))))
    noise = np.convolve(rng.standard_normal(n + width - 1), np.ones(width) / width, mode="valid")
    u = u + 0.5 * noise * np.sqrt(width)
    u -= u.mean()
    peak = np.max(np.abs(u))
    if peak > 0:
        u /= peak
    return RegulationSignal(dt, np.clip(u, -1.0, 1.0), source=f"synthetic({seed})", normalized=True)
