"""Quantitative analyses over exported chains.

Covers convergence distances (consecutive-iteration and to-reference),
autocorrelation pitch extraction, per-sex pitch trajectories, classical
MDS maps, bootstrap contrasts, rank-sum tests, and MOS curves. All
operations are pure over immutable inputs.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionMismatchError, GspError, ValidationError
from .latent import LatentPoint, PcaBasis, SpeakerEmbedding, reconstruct
from .render import Waveform, render_stub


# ---------------------------------------------------------------------------
# Chain histories

@dataclass
class ChainHistory:
    """Parsed chain export: the per-iteration trajectory plus metadata."""

    chain_id: str
    config: dict
    target_ref: str
    sentence_id: str
    status: str
    points: list  # LatentPoint per iteration, index 0 = initial point
    embeddings: list  # reconstructed unit-norm embedding per point
    meta: dict = field(default_factory=dict)

    @property
    def n_iterations(self) -> int:
        return len(self.points) - 1

    @classmethod
    def from_export(cls, doc: dict, basis: PcaBasis) -> "ChainHistory":
        records = doc["history"]
        points = []
        if records:
            points.append(LatentPoint(np.array(records[0]["point_before"], dtype=np.float64)))
            for rec in records:
                points.append(LatentPoint(np.array(rec["point_after"], dtype=np.float64)))
        else:
            points.append(LatentPoint(np.array(doc["point"], dtype=np.float64)))
        embeddings = [reconstruct(basis, p).values for p in points]
        return cls(
            chain_id=doc["chain_id"],
            config=doc["config"],
            target_ref=doc["target_ref"],
            sentence_id=doc["sentence_id"],
            status=doc["status"],
            points=points,
            embeddings=embeddings,
            meta=doc.get("meta", {}),
        )


def load_histories(paths, basis: PcaBasis) -> list[ChainHistory]:
    histories = []
    for path in paths:
        with open(path) as fh:
            histories.append(ChainHistory.from_export(json.load(fh), basis))
    return histories


# ---------------------------------------------------------------------------
# Convergence distances

def consecutive_distances(history: ChainHistory, space: str = "embedding") -> np.ndarray:
    """Euclidean distance between consecutive iterations of one chain."""
    seq = _trajectory(history, space)
    if len(seq) < 2:
        raise GspError("need at least two iterations to difference")
    return np.linalg.norm(np.diff(seq, axis=0), axis=1)


def reference_distance(
    history: ChainHistory, reference: SpeakerEmbedding, space: str = "embedding"
) -> np.ndarray:
    """Euclidean distance from each iteration to a fixed reference embedding."""
    if space == "embedding":
        ref = reference.values
    else:
        raise ValueError("reference_distance is defined in embedding space")
    seq = _trajectory(history, "embedding")
    if seq.shape[1] != ref.shape[0]:
        raise DimensionMismatchError("reference dimension does not match embeddings")
    return np.linalg.norm(seq - ref[None, :], axis=1)


def _trajectory(history: ChainHistory, space: str) -> np.ndarray:
    if space == "embedding":
        return np.asarray(history.embeddings)
    if space == "latent":
        return np.asarray([p.coords for p in history.points])
    raise ValueError(f"unknown space {space!r}")


# ---------------------------------------------------------------------------
# Pitch extraction

@dataclass(frozen=True)
class PitchContour:
    times: np.ndarray  # frame centers, seconds
    f0: np.ndarray  # Hz per frame, NaN where unvoiced
    mean_f0: float | None  # mean over voiced frames, None if none are voiced

    @property
    def voiced(self) -> np.ndarray:
        return ~np.isnan(self.f0)


def extract_f0(
    w: Waveform,
    frame_s: float = 0.040,
    hop_s: float = 0.010,
    fmin: float = 60.0,
    fmax: float = 400.0,
    voicing_threshold: float = 0.3,
) -> PitchContour:
    """Frame-wise F0 via normalized autocorrelation.

    A frame is voiced when its best normalized autocorrelation in the
    [fmin, fmax] lag band exceeds the voicing threshold; among near-best
    peaks the shortest lag wins, which suppresses octave-down errors on
    strongly periodic signals. Peak lags are refined parabolically.
    """
    sr = w.sample_rate
    if sr < 2 * fmax:
        raise ValueError("sample rate must be at least twice fmax")
    x = w.samples
    if x.size == 0:
        raise GspError("empty waveform")
    frame = int(round(frame_s * sr))
    hop = int(round(hop_s * sr))
    lag_min = max(2, int(np.floor(sr / fmax)))
    lag_max = int(np.ceil(sr / fmin))
    if lag_max >= frame - 1:
        raise ValueError("frame too short for fmin")

    n_frames = max(0, 1 + (x.size - frame) // hop)
    if n_frames == 0:
        return PitchContour(np.array([]), np.array([]), None)
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx]
    frames = frames - frames.mean(axis=1, keepdims=True)

    # Full autocorrelation of every frame in one FFT batch.
    nfft = 1 << int(np.ceil(np.log2(2 * frame)))
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    acf = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=1)[:, : lag_max + 1]

    # Normalization: r[t] = acf[t] / sqrt(E[0:W-t] * E[t:W]).
    sq = frames**2
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    total = csum[:, -1:]
    lags = np.arange(lag_max + 1)
    e_head = csum[:, frame - lags]  # energy of x[0 : W-t]
    e_tail = total - csum[:, lags]  # energy of x[t : W]
    denom = np.sqrt(np.maximum(e_head * e_tail, 1e-30))
    r = acf / denom

    band = r[:, lag_min : lag_max + 1]
    silent = total[:, 0] < frame * 1e-8

    r_best = band.max(axis=1)
    interior = r[:, lag_min - 1 : lag_max + 1]
    is_peak = (interior[:, 1:-1] >= interior[:, :-2]) & (interior[:, 1:-1] >= interior[:, 2:])
    qualifies = is_peak & (band[:, : is_peak.shape[1]] >= np.maximum(
        voicing_threshold, 0.85 * r_best[:, None]
    ))
    has_peak = qualifies.any(axis=1)
    first = np.where(has_peak, qualifies.argmax(axis=1), 0)
    tau = lag_min + first

    # Parabolic refinement around the chosen lag.
    rm = r[np.arange(n_frames), tau - 1]
    r0 = r[np.arange(n_frames), tau]
    rp = r[np.arange(n_frames), np.minimum(tau + 1, lag_max)]
    curv = rm - 2 * r0 + rp
    safe_curv = np.where(np.abs(curv) > 1e-12, curv, 1.0)
    shift = np.where(np.abs(curv) > 1e-12, 0.5 * (rm - rp) / safe_curv, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    tau_refined = tau + shift

    voiced = has_peak & (r_best >= voicing_threshold) & ~silent
    f0 = np.where(voiced, sr / tau_refined, np.nan)
    times = (np.arange(n_frames) * hop + frame / 2) / sr
    mean_f0 = float(np.nanmean(f0)) if voiced.any() else None
    return PitchContour(times=times, f0=f0, mean_f0=mean_f0)


# ---------------------------------------------------------------------------
# Pitch trajectories per sex group

@dataclass
class PitchTrajectories:
    per_chain: dict  # chain_id -> list of mean F0 per iteration (may hold NaN)
    group_means: dict  # sex label -> array of group-mean F0 per iteration
    sexes: dict  # chain_id -> sex label


def pitch_trajectories(
    histories, basis: PcaBasis, render=render_stub, cache: dict | None = None
) -> PitchTrajectories:
    """Render every iteration's stimulus and average mean F0 within sexes."""
    per_chain: dict = {}
    sexes: dict = {}
    for h in histories:
        sex = h.meta.get("sex")
        if sex is None:
            raise ValidationError(f"chain {h.chain_id} is missing a sex label")
        sexes[h.chain_id] = sex
        traj = []
        for p in h.points:
            key = None
            if cache is not None:
                key = (tuple(np.round(p.coords, 9)), h.sentence_id)
                if key in cache:
                    traj.append(cache[key])
                    continue
            wav = render(p, basis, h.sentence_id)
            contour = extract_f0(wav)
            val = contour.mean_f0 if contour.mean_f0 is not None else np.nan
            if cache is not None:
                cache[key] = val
            traj.append(val)
        per_chain[h.chain_id] = traj

    n_iter = max(len(t) for t in per_chain.values())
    group_means: dict = {}
    for sex in sorted(set(sexes.values())):
        rows = [
            np.pad(np.asarray(t, dtype=np.float64), (0, n_iter - len(t)), constant_values=np.nan)
            for cid, t in per_chain.items()
            if sexes[cid] == sex
        ]
        group_means[sex] = np.nanmean(np.vstack(rows), axis=0)
    return PitchTrajectories(per_chain=per_chain, group_means=group_means, sexes=sexes)


# ---------------------------------------------------------------------------
# Classical MDS

def classical_mds(m: np.ndarray, out_dims: int = 2) -> np.ndarray:
    """Embed a distance matrix via double-centering and eigendecomposition."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError("distance matrix must be square")
    if not np.allclose(m, m.T, atol=1e-9):
        raise ValidationError("distance matrix must be symmetric")
    if np.any(np.diag(m) > 1e-9) or np.any(m < -1e-12):
        raise ValidationError("distance matrix needs a zero diagonal and no negatives")
    n = m.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (m**2) @ j
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1][:out_dims]
    evals = np.maximum(evals[order], 0.0)
    coords = evecs[:, order] * np.sqrt(evals)[None, :]
    if coords.shape[1] < out_dims:
        coords = np.pad(coords, ((0, 0), (0, out_dims - coords.shape[1])))
    return coords


# ---------------------------------------------------------------------------
# Bootstrap contrast

@dataclass(frozen=True)
class GroupStat:
    name: str
    mean: float
    ci_lo: float
    ci_hi: float
    n: int


def bootstrap_contrast(
    groups: dict, n_boot: int = 1000, seed: int = 0, ci: float = 0.95
) -> dict:
    """Percentile bootstrap of each group's mean.

    groups maps a label (e.g. "within", "same_sex", "diff_sex") to a
    1-D sample of pairwise distances.
    """
    rng = np.random.default_rng(seed)
    alpha = (1.0 - ci) / 2.0
    out = {}
    for name in groups:
        vals = np.asarray(groups[name], dtype=np.float64)
        if vals.size == 0:
            raise ValidationError(f"group {name!r} is empty")
        draws = rng.integers(0, vals.size, size=(n_boot, vals.size))
        means = vals[draws].mean(axis=1)
        out[name] = GroupStat(
            name=name,
            mean=float(vals.mean()),
            ci_lo=float(np.percentile(means, 100 * alpha)),
            ci_hi=float(np.percentile(means, 100 * (1 - alpha))),
            n=int(vals.size),
        )
    return out


# ---------------------------------------------------------------------------
# Rank-sum test

EXACT_RANK_SUM_MAX_N = 8


def wilcoxon_rank_sum(a, b) -> tuple[float, float]:
    """Two-sided rank-sum test.

    Z always comes from the normal approximation with midranks, the
    tie-corrected variance, and a 0.5 continuity correction. The p value
    uses the exact permutation null when both samples have at most
    EXACT_RANK_SUM_MAX_N observations (the approximation can miss the
    exact tail by far more than 0.05 there, especially under ties) and
    the approximation otherwise. Degenerate data with zero rank variance
    yields (0, 1).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 1 or b.size < 1:
        raise ValidationError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    n = n1 + n2
    combined = np.concatenate([a, b])
    ranks = rankdata(combined)
    w = ranks[:n1].sum()
    mean_w = n1 * (n + 1) / 2.0

    _, counts = np.unique(combined, return_counts=True)
    tie_term = ((counts**3 - counts).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var_w = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var_w <= 0:
        return 0.0, 1.0
    diff = w - mean_w
    cc = 0.5 * np.sign(diff)
    z = float((diff - cc) / np.sqrt(var_w))

    if n1 <= EXACT_RANK_SUM_MAX_N and n2 <= EXACT_RANK_SUM_MAX_N:
        p = _exact_rank_sum_two_sided(ranks, n1, w)
    else:
        p = min(1.0, 2.0 * _norm_sf(abs(z)))
    return z, float(p)


def _exact_rank_sum_two_sided(ranks: np.ndarray, n1: int, w: float) -> float:
    """Doubled-smaller-tail p over every assignment of ranks to group a."""
    ws = np.array(
        [sum(ranks[list(c)]) for c in itertools.combinations(range(ranks.size), n1)]
    )
    lo = np.mean(ws <= w + 1e-12)
    hi = np.mean(ws >= w - 1e-12)
    return min(1.0, 2.0 * min(lo, hi))


def _norm_sf(z: float) -> float:
    from math import erfc, sqrt

    return 0.5 * erfc(z / sqrt(2.0))


def bonferroni_adjust(p: float, m: int) -> float:
    return min(1.0, p * m)


def rank_biserial(a, b) -> float:
    """Rank-biserial effect size, r = 1 - 2U/(n1*n2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(1.0 - 2.0 * u / (a.size * b.size))


# ---------------------------------------------------------------------------
# MOS curves

@dataclass(frozen=True)
class RatingRecord:
    chain_id: str
    iteration: int
    rater_id: str
    score: int

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValidationError(f"score {self.score} outside 1..5")


def mos_curves(ratings, histories) -> dict:
    """Mean opinion score per (style, iteration), with rating counts.

    Style comes from each chain's metadata; a rating that references a
    chain or iteration absent from the histories is an error.
    """
    by_chain = {h.chain_id: h for h in histories}
    sums: dict = {}
    counts: dict = {}
    for r in ratings:
        h = by_chain.get(r.chain_id)
        if h is None or r.iteration < 0 or r.iteration >= len(h.points):
            raise ValidationError(f"rating references unknown stimulus ({r.chain_id}, {r.iteration})")
        style = h.meta.get("style", "default")
        key = (style, r.iteration)
        sums[key] = sums.get(key, 0.0) + r.score
        counts[key] = counts.get(key, 0) + 1
    return {key: (sums[key] / counts[key], counts[key]) for key in sums}


def mos_trend_increasing(curve: dict, style: str) -> bool:
    """True when the style's MOS means trend upward over iterations."""
    pts = sorted((it, mean) for (s, it), (mean, _) in curve.items() if s == style)
    if len(pts) < 2:
        return False
    iters = np.array([p[0] for p in pts], dtype=np.float64)
    means = np.array([p[1] for p in pts], dtype=np.float64)
    rho = spearman(iters, means)
    return rho > 0


def spearman(x, y) -> float:
    """Spearman rank correlation (midranks for ties)."""
    rx = rankdata(np.asarray(x, dtype=np.float64))
    ry = rankdata(np.asarray(y, dtype=np.float64))
    if np.std(rx) == 0 or np.std(ry) == 0:
        return 0.0
    return float(np.corrcoef(rx, ry)[0, 1])


# ---------------------------------------------------------------------------
# Tabular output

def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
