"""Waveform I/O, framing utilities, and the synthetic two-speaker mixture generator.

WAV support is PCM 16-bit mono only; the parser walks RIFF chunks directly so
format errors can report the byte offset where parsing failed.
"""

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, UsageError, WavFormatError

EXPECTED_RATE = 8000


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DimensionError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise UsageError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise UsageError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)


@dataclass
class MixtureSample:
    mix: Waveform
    sources: list
    snr_db: float
    seed: int
    ident: str = field(default="")


# ---------------------------------------------------------------------------
# WAV PCM16 mono


def read_wav(path):
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise WavFormatError("file too short for RIFF header", len(raw))
    if raw[0:4] != b"RIFF":
        raise WavFormatError("missing RIFF magic", 0)
    if raw[8:12] != b"WAVE":
        raise WavFormatError("missing WAVE form type", 8)

    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = pos + 8
        if body + size > len(raw):
            raise WavFormatError(f"chunk {cid!r} overruns file", pos + 4)
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too short", body)
            audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", raw, body)
            if audio_format != 1:
                raise WavFormatError(f"unsupported encoding {audio_format} (want PCM=1)", body)
            if channels != 1:
                raise WavFormatError(f"unsupported channel count {channels} (want mono)", body + 2)
            if bits != 16:
                raise WavFormatError(f"unsupported bit depth {bits} (want 16)", body + 14)
            fmt = rate
        elif cid == b"data":
            data = raw[body : body + size]
        pos = body + size + (size & 1)

    if fmt is None:
        raise WavFormatError("no fmt chunk", len(raw))
    if data is None:
        raise WavFormatError("no data chunk", len(raw))
    if fmt != EXPECTED_RATE:
        warnings.warn(f"sample rate {fmt} Hz differs from expected {EXPECTED_RATE} Hz")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, fmt)


def write_wav(path, w):
    x = np.rint(w.samples * 32768.0)
    pcm = np.clip(x, -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16)
    hdr += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(hdr + data)


# ---------------------------------------------------------------------------
# framing


def frame_count(t, length, stride):
    """Number of overlapping windows after right-padding: ceil((T-L)/stride)+1."""
    if t <= length:
        return 1
    return int(-(-(t - length) // stride)) + 1


def segment(x, length, stride):
    """Split a waveform into overlapping frames (K x L), zero-padded on the right."""
    if not (length > stride >= 1):
        raise UsageError(f"require L > stride >= 1, got L={length} stride={stride}")
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    t = len(samples)
    k = frame_count(t, length, stride)
    needed = (k - 1) * stride + length
    if needed > t:
        samples = np.pad(samples, (0, needed - t))
    s = samples.strides[0]
    frames = np.lib.stride_tricks.as_strided(samples, (k, length), (s * stride, s))
    return frames.copy()


def overlap_add(frames, stride, t):
    """Sum overlapping frames back at the framing stride and trim to t samples."""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise DimensionError(f"frames must be rectangular (K x L), got {frames.shape}")
    k, length = frames.shape
    natural = (k - 1) * stride + length
    if not (0 < t <= natural):
        raise DimensionError(
            f"target length {t} inconsistent with K={k}, L={length}, stride={stride} "
            f"(natural length {natural})"
        )
    y = np.zeros(natural, dtype=frames.dtype)
    for j in range(length):
        y[j : j + stride * (k - 1) + 1 : stride] += frames[:, j]
    return y[:t]


def coverage(t, length, stride, k):
    """How many of the K frames contain sample index t."""
    first = max(0, -(-(t - length + 1) // stride))
    last = min(k - 1, t // stride)
    return max(0, last - first + 1)


# ---------------------------------------------------------------------------
# synthetic mixtures

_HARMONIC_CEIL_HZ = 1400.0
_NOISE_BAND_HZ = (1700.0, 3400.0)


def _note_envelope(rng, t_axis, duration):
    """Sparse attack/decay note events; guarantees at least half the span active."""
    env = np.zeros_like(t_axis)
    n_notes = int(rng.integers(2, 6))
    for _ in range(n_notes):
        start = rng.uniform(0.0, duration * 0.7)
        dur = rng.uniform(duration * 0.2, duration * 0.6)
        attack = rng.uniform(0.01, 0.05)
        rise = np.clip((t_axis - start) / attack, 0.0, 1.0)
        fall = np.clip((start + dur - t_axis) / attack, 0.0, 1.0)
        env = np.maximum(env, np.minimum(rise, fall))
    if env.mean() < 0.5:
        env = np.maximum(env, 0.5)
    return env


def _harmonic_source(rng, t_axis, sr):
    f0 = rng.uniform(80.0, 300.0)
    drift_rate = rng.uniform(0.2, 1.5)
    drift_depth = rng.uniform(0.01, 0.04)
    drift_phase = rng.uniform(0.0, 2 * np.pi)
    inst_f0 = f0 * (1.0 + drift_depth * np.sin(2 * np.pi * drift_rate * t_axis + drift_phase))
    phase = 2 * np.pi * np.cumsum(inst_f0) / sr
    n_harm = max(1, int(_HARMONIC_CEIL_HZ / (f0 * (1.0 + drift_depth))))
    decay = rng.uniform(0.6, 1.4)
    sig = np.zeros_like(t_axis)
    for h in range(1, n_harm + 1):
        sig += (1.0 / h**decay) * np.sin(h * phase + rng.uniform(0.0, 2 * np.pi))
    return sig * _note_envelope(rng, t_axis, t_axis[-1])


def _band_noise_source(rng, t_axis, sr):
    n = len(t_axis)
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, d=1.0 / sr)
    lo = rng.uniform(_NOISE_BAND_HZ[0], _NOISE_BAND_HZ[0] + 300.0)
    hi = rng.uniform(_NOISE_BAND_HZ[1] - 300.0, _NOISE_BAND_HZ[1])
    roll = 100.0  # raised-cosine edges, Hz
    gain = np.clip((freqs - (lo - roll)) / roll, 0.0, 1.0) * np.clip(
        ((hi + roll) - freqs) / roll, 0.0, 1.0
    )
    band = np.fft.irfft(spec * gain, n=n)
    fm = rng.uniform(2.0, 8.0)
    depth = rng.uniform(0.4, 0.9)
    am = 1.0 - depth + depth * (0.5 + 0.5 * np.sin(2 * np.pi * fm * t_axis + rng.uniform(0, 2 * np.pi)))
    return band * am


def synth_mixture(seed, duration_s=3.0, sample_rate=EXPECTED_RATE, snr_range=(-5.0, 5.0)):
    """Deterministic two-source mixture: harmonic stack vs band-passed AM noise."""
    if duration_s < 0.5:
        raise UsageError(f"duration must be >= 0.5 s, got {duration_s}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t_axis = np.arange(n) / sample_rate

    a = _harmonic_source(rng, t_axis, sample_rate)
    b = _band_noise_source(rng, t_axis, sample_rate)
    a = a / np.sqrt(np.mean(a**2))
    b = b / np.sqrt(np.mean(b**2))

    snr_db = float(rng.uniform(*snr_range))
    b = b * 10.0 ** (-snr_db / 20.0)

    gain = 0.9 / np.abs(a + b).max()
    a, b = a * gain, b * gain
    mix = a + b  # summed after scaling so mix == sum(sources) bit-exactly

    return MixtureSample(
        mix=Waveform(mix, sample_rate),
        sources=[Waveform(a, sample_rate), Waveform(b, sample_rate)],
        snr_db=snr_db,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# dataset directory layout: <root>/<id>/{mix,s1,s2}.wav plus manifest.csv


def write_dataset(root, count, base_seed, duration_s=3.0, sample_rate=EXPECTED_RATE, snr_range=(-5.0, 5.0)):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        seed = base_seed + i
        item = synth_mixture(seed, duration_s, sample_rate, snr_range)
        ident = f"{i:05d}"
        d = root / ident
        d.mkdir(exist_ok=True)
        write_wav(d / "mix.wav", item.mix)
        write_wav(d / "s1.wav", item.sources[0])
        write_wav(d / "s2.wav", item.sources[1])
        rows.append((ident, seed, f"{item.snr_db:.6f}"))
    with open(root / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "seed", "snr_db"])
        writer.writerows(rows)
    return [r[0] for r in rows]


def load_dataset(root):
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise UsageError(f"no manifest.csv under {root}")
    items = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            d = root / row["id"]
            mix = read_wav(d / "mix.wav")
            s1 = read_wav(d / "s1.wav")
            s2 = read_wav(d / "s2.wav")
            items.append(
                MixtureSample(
                    mix=mix,
                    sources=[s1, s2],
                    snr_db=float(row["snr_db"]),
                    seed=int(row["seed"]),
                    ident=row["id"],
                )
            )
    if not items:
        raise UsageError(f"dataset at {root} is empty")
    return items
