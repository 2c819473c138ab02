"""Stimulus rendering: deterministic parametric synthesizer + remote client.

The stub renderer maps latent coordinates onto acoustic controls so that
every downstream pipeline property stays testable without a neural TTS:
the second principal component drives fundamental frequency (85-255 Hz),
the remaining coordinates modulate three formants, spectral tilt, and
syllable rate. A remote-renderer client is provided so a real model can be
plugged in behind the same Waveform contract.
"""

from __future__ import annotations

import hashlib
import io
import struct
import threading
import wave
from dataclasses import dataclass, field

import httpx
import numpy as np

from .errors import MalformedAudioError, TransportError
from .latent import (
    LatentPoint,
    PcaBasis,
    SpeakerEmbedding,
    StyleEmbedding,
    slider_axis,
)

DEFAULT_SAMPLE_RATE = 22050
STIMULUS_DURATION_S = 2.0

F0_LO_HZ = 85.0
F0_HI_HZ = 255.0


@dataclass(frozen=True)
class RenderRequest:
    embedding: SpeakerEmbedding
    style: StyleEmbedding = field(default_factory=StyleEmbedding.zero)
    sentence_id: str = ""
    text: str = ""


@dataclass(frozen=True)
class Waveform:
    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(s)) > 1.0 + 1e-9:
            raise ValueError("waveform samples exceed [-1, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def to_wav_bytes(self) -> bytes:
        pcm = np.clip(np.round(self.samples * 32767.0), -32768, 32767).astype("<i2")
        buf = io.BytesIO()
        with wave.open(buf, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(self.sample_rate)
            wf.writeframes(pcm.tobytes())
        return buf.getvalue()

    @classmethod
    def from_wav_bytes(cls, data: bytes) -> "Waveform":
        try:
            with wave.open(io.BytesIO(data), "rb") as wf:
                if wf.getsampwidth() != 2 or wf.getnchannels() != 1:
                    raise MalformedAudioError("expected 16-bit mono PCM WAV")
                rate = wf.getframerate()
                raw = wf.readframes(wf.getnframes())
        except MalformedAudioError:
            raise
        except Exception as exc:
            raise MalformedAudioError(f"payload does not decode as WAV: {exc}") from exc
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
        samples = np.clip(samples, -1.0, 1.0)
        if samples.size == 0:
            raise MalformedAudioError("WAV payload carries no frames")
        return cls(sample_rate=rate, samples=samples)


def _unit_interval(coord: float, lo: float, hi: float) -> float:
    """Clamp a latent coordinate into its axis bounds, mapped to [0, 1]."""
    u = (coord - lo) / (hi - lo)
    return min(1.0, max(0.0, u))


def _sentence_seed(sentence_id: str) -> int:
    digest = hashlib.sha256(str(sentence_id).encode()).digest()
    return struct.unpack("<Q", digest[:8])[0]


def _formant_gain(freqs: np.ndarray, formants, bandwidths) -> np.ndarray:
    gain = np.zeros_like(freqs)
    for fc, bw in zip(formants, bandwidths):
        gain += 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return gain


def _syllable_envelope(
    n_samples: int, sample_rate: int, rate_hz: float, seed: int
) -> np.ndarray:
    """Deterministic syllable gating: raised-cosine bumps with short gaps."""
    rng = np.random.default_rng(seed)
    duration = n_samples / sample_rate
    n_syll = max(1, int(round(rate_hz * duration)))
    env = np.zeros(n_samples)
    slot = duration / n_syll
    for i in range(n_syll):
        # Voiced fraction of each slot varies per sentence but never closes.
        voiced_frac = 0.65 + 0.25 * rng.random()
        start = i * slot + 0.05 * slot * rng.random()
        length = voiced_frac * slot
        a = int(start * sample_rate)
        b = min(n_samples, a + int(length * sample_rate))
        if b <= a + 8:
            continue
        t = np.linspace(0.0, np.pi, b - a)
        env[a:b] = np.maximum(env[a:b], np.sin(t) ** 0.7)
    return env


def render_stub(
    point: LatentPoint,
    basis: PcaBasis,
    sentence_id: str,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    duration: float = STIMULUS_DURATION_S,
    span_sigma: float = 3.0,
    resolution: int = 31,
) -> Waveform:
    """Pure latent-to-audio map standing in for a neural TTS.

    Identical inputs produce bit-identical samples; F0 is strictly
    increasing in the coordinate of component index 1.
    """
    k = basis.k
    axes = [slider_axis(basis, d, span_sigma, resolution) for d in range(k)]
    u = np.full(10, 0.5)
    for d in range(min(k, 10)):
        u[d] = _unit_interval(float(point.coords[d]), axes[d].lo, axes[d].hi)

    f0 = F0_LO_HZ + u[1] * (F0_HI_HZ - F0_LO_HZ)
    f1 = 350.0 + u[0] * 500.0
    f2 = 900.0 + u[2] * 1400.0
    f3 = 2200.0 + u[3] * 1000.0
    tilt = 1.0 + u[4] * 0.8
    syll_rate = 2.5 + u[5] * 3.0

    n_samples = int(round(duration * sample_rate))
    t = np.arange(n_samples) / sample_rate

    n_harm = max(1, int(min(8000.0, 0.45 * sample_rate) / f0))
    n = np.arange(1, n_harm + 1)
    freqs = n * f0
    amps = _formant_gain(freqs, (f1, f2, f3), (90.0, 140.0, 220.0)) / (n**tilt)

    # Constant-F0 harmonic stack: tabulate one period, then sample by phase.
    table_n = 8192
    phi = np.arange(table_n + 1) / table_n
    period = (amps[:, None] * np.sin(2.0 * np.pi * n[:, None] * phi[None, :])).sum(axis=0)
    phase = (f0 * t) % 1.0
    source = np.interp(phase, phi, period)

    # Syllable gating keeps a voicing floor so pitch stays extractable.
    bumps = _syllable_envelope(n_samples, sample_rate, syll_rate, _sentence_seed(sentence_id))
    samples = source * (0.3 + 0.7 * bumps)
    peak = np.max(np.abs(samples))
    if peak > 0:
        samples = samples * (0.89 / peak)
    return Waveform(sample_rate=sample_rate, samples=samples)


def render_remote(
    request: RenderRequest,
    endpoint: str,
    timeout: float = 30.0,
    client: httpx.Client | None = None,
) -> Waveform:
    """POST the render request to an external TTS and decode its WAV reply."""
    payload = {
        "embedding": request.embedding.values.tolist(),
        "style": request.style.values.tolist(),
        "text": request.text,
    }
    try:
        if client is None:
            resp = httpx.post(endpoint, json=payload, timeout=timeout)
        else:
            resp = client.post(endpoint, json=payload, timeout=timeout)
        resp.raise_for_status()
    except (httpx.TransportError, httpx.HTTPStatusError) as exc:
        raise TransportError(f"remote renderer failed: {exc}") from exc
    return Waveform.from_wav_bytes(resp.content)


def stimulus_cache_key(
    point: LatentPoint, sentence_id: str, style: StyleEmbedding | None = None
) -> str:
    """Content hash of (coords quantized to 1e-9, sentence, style)."""
    h = hashlib.sha256()
    for c in np.asarray(point.coords, dtype=np.float64):
        h.update(struct.pack("<q", int(round(c * 1e9))))
    h.update(str(sentence_id).encode())
    h.update(b"|")
    if style is not None:
        for c in np.asarray(style.values, dtype=np.float64):
            h.update(struct.pack("<q", int(round(c * 1e9))))
    return h.hexdigest()


class StimulusCache:
    """Concurrent render-through cache; identical keys carry identical audio."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict[str, Waveform] = {}

    def __len__(self) -> int:
        return len(self._store)

    def get(self, key: str) -> Waveform | None:
        with self._lock:
            return self._store.get(key)

    def get_or_render(self, key: str, render_fn) -> Waveform:
        with self._lock:
            cached = self._store.get(key)
        if cached is not None:
            return cached
        wav = render_fn()
        with self._lock:
            return self._store.setdefault(key, wav)
