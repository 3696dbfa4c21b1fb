"""Baseband OFDM synthesis and correlation-based implicit LTE sensing.

Everything here operates on raw complex samples; nothing is ever
demodulated. LTE airtime is fingerprinted through the periodic
self-similarity of the cyclic prefix, individual transmitters through
repeated identity fields whose samples are a deterministic function of a
per-transmitter seed, and retransmissions through whole-frame sample
correlation. All correlation statistics are normalized by the larger of
the two window energies so they stay within [0, 1] for any input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_SAMPLE_PERIOD = 5e-7  # seconds per sample (2 MS/s complex baseband)

GAMMA_LTE_DEFAULT = 0.4  # cyclic-prefix spike threshold
GAMMA_ID_DEFAULT = 0.35  # identity-field match threshold
GAMMA_RT_DEFAULT = 0.2   # retransmission match threshold


class SignalError(ValueError):
    """Base class for contract violations in the signal layer."""


class EmptyFrameError(SignalError):
    """Requested a frame of zero symbols."""


class LengthMismatchError(SignalError):
    """Two buffers that must be sample-aligned have different lengths."""


class CorruptedIdError(SignalError):
    """The identity-field windows fall outside the detected frame span."""


class SingleFrameError(SignalError):
    """A collision split was requested but all peaks share one period."""


@dataclass
class IqBuffer:
    """A complex baseband sample sequence with a fixed sample period.

    Samples are stored as complex128; ``sample_period`` is in seconds.
    """

    samples: np.ndarray
    sample_period: float = DEFAULT_SAMPLE_PERIOD

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise SignalError("samples must be one-dimensional")
        if not self.sample_period > 0:
            raise SignalError("sample_period must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        """Buffer span in seconds."""
        return len(self.samples) * self.sample_period

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    def to_bytes(self) -> bytes:
        """Flat binary layout: little-endian interleaved re/im float32."""
        flat = np.empty(2 * len(self.samples), dtype="<f4")
        flat[0::2] = self.samples.real
        flat[1::2] = self.samples.imag
        return flat.tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, sample_period: float = DEFAULT_SAMPLE_PERIOD) -> "IqBuffer":
        flat = np.frombuffer(raw, dtype="<f4")
        if len(flat) % 2:
            raise SignalError("byte payload does not hold an even float32 count")
        return cls(flat[0::2].astype(np.float64) + 1j * flat[1::2].astype(np.float64),
                   sample_period)


@dataclass(frozen=True)
class OfdmConfig:
    """Sample-domain OFDM frame geometry.

    ``symbol_len`` is the full per-symbol sample count including the
    cyclic prefix; the first ``cp_len`` samples of every symbol duplicate
    its last ``cp_len`` samples. The two identity fields each occupy
    ``id_field_len / 2`` samples starting at ``id_field_offsets``.
    """

    symbol_len: int = 256
    cp_len: int = 64
    id_field_len: int = 640
    id_field_offsets: tuple[int, int] = (64, 576)
    frame_len: int = 3072

    def __post_init__(self):
        if not 0 < self.cp_len < self.symbol_len:
            raise SignalError("need 0 < cp_len < symbol_len")
        if self.id_field_len <= 0 or self.id_field_len % 2:
            raise SignalError("id_field_len must be a positive even count")
        if len(self.id_field_offsets) != 2:
            raise SignalError("exactly two identity-field offsets required")
        half = self.id_field_len // 2
        for off in self.id_field_offsets:
            if off < 0 or off + half > self.frame_len:
                raise SignalError("identity field outside nominal frame")

    @property
    def body_len(self) -> int:
        return self.symbol_len - self.cp_len

    @property
    def window_gap(self) -> int:
        """Shift between the prefix and its copy, in samples."""
        return self.symbol_len - self.cp_len

    @classmethod
    def lte_default(cls) -> "OfdmConfig":
        return cls()

    @classmethod
    def wifi_default(cls) -> "OfdmConfig":
        # 4 us symbols with 0.8 us prefix at the default sample period.
        return cls(symbol_len=80, cp_len=16, id_field_len=32,
                   id_field_offsets=(16, 96), frame_len=800)


@dataclass(frozen=True)
class ChannelModel:
    """Flat-fading channel: one gain and phase per frame plus AWGN.

    ``phase`` is held constant for the buffer this model is applied to
    and is meant to be redrawn independently for every frame. The noise
    is circularly-symmetric complex Gaussian with total power
    ``noise_power`` (variance ``noise_power / 2`` per component).
    """

    gain: float = 1.0
    phase: float = 0.0
    noise_power: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.gain < 0:
            raise SignalError("gain must be non-negative")
        if self.noise_power < 0:
            raise SignalError("noise_power must be non-negative")
        object.__setattr__(self, "phase", float(self.phase) % (2 * np.pi))


def sample_channel(rng: np.random.Generator, gain: float = 1.0,
                   noise_power: float = 0.0) -> ChannelModel:
    """Draw a per-frame channel realization (uniform phase, fresh seed)."""
    phase = float(rng.uniform(0.0, 2 * np.pi))
    seed = int(rng.integers(0, 2**63 - 1))
    return ChannelModel(gain=gain, phase=phase, noise_power=noise_power, rng_seed=seed)


@dataclass
class FrameSignature:
    """Stored identity-field samples for one locally-known transmitter."""

    id_samples: IqBuffer
    enb_local_id: int


@dataclass
class DetectionResult:
    """Span of one detected LTE frame plus the correlation spike offsets."""

    t_s: float
    t_e: float
    peak_indices: np.ndarray
    sample_period: float = DEFAULT_SAMPLE_PERIOD

    def __post_init__(self):
        self.peak_indices = np.asarray(self.peak_indices, dtype=np.int64)
        if self.t_s > self.t_e:
            raise SignalError("t_s must not exceed t_e")

    @property
    def start_index(self) -> int:
        return int(round(self.t_s / self.sample_period))

    @property
    def end_index(self) -> int:
        return int(round(self.t_e / self.sample_period))


def _gaussian_block(rng: np.random.Generator, shape) -> np.ndarray:
    # Unit average power per complex sample.
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _assemble_frame(bodies: np.ndarray, cp_len: int) -> np.ndarray:
    # Prepend each body's tail so the first cp_len samples of every
    # symbol equal its last cp_len samples.
    return np.concatenate([bodies[:, -cp_len:], bodies], axis=1).ravel()


def _id_symbol_layout(cfg: OfdmConfig, duration: int):
    """Symbols whose bodies must carry identity content, per window.

    Returns (first_window_symbols, shift) where the second window's
    symbols are the first window's shifted by ``shift`` whole symbols.
    """
    half = cfg.id_field_len // 2
    off1, off2 = cfg.id_field_offsets
    if (off2 - off1) % cfg.symbol_len:
        raise SignalError("identity windows must share their in-symbol alignment")
    shift = (off2 - off1) // cfg.symbol_len
    first = list(range(off1 // cfg.symbol_len, (off1 + half - 1) // cfg.symbol_len + 1))
    second = [k + shift for k in first]
    if set(first) & set(second):
        raise SignalError("identity windows overlap in symbol coverage")
    if max(second) >= duration:
        raise SignalError(
            f"frame of {duration} symbols too short for identity fields")
    return first, shift


def synthesize_lte_frame(cfg: OfdmConfig, payload_seed: int, id_seed: int,
                         duration: int, *,
                         sample_period: float = DEFAULT_SAMPLE_PERIOD,
                         repeat_id: bool = True) -> IqBuffer:
    """Build one downlink LTE frame of ``duration`` OFDM symbols.

    The payload is a deterministic function of ``payload_seed`` (equal
    seeds give bit-identical buffers, which is what makes retransmission
    tests possible) and the two identity windows depend on ``id_seed``
    only. With ``repeat_id`` the second window duplicates the first, the
    property that marks a frame as downlink; disabling it models frames
    without the repeated identity structure.
    """
    if duration < 1:
        raise EmptyFrameError("frame must contain at least one symbol")
    first, shift = _id_symbol_layout(cfg, duration)

    payload_rng = np.random.default_rng([int(payload_seed) & 0x7FFFFFFFFFFF, 0xDA7A])
    bodies = _gaussian_block(payload_rng, (duration, cfg.body_len))

    id_rng = np.random.default_rng([int(id_seed) & 0x7FFFFFFFFFFF, 0x1D])
    for k in first:
        bodies[k] = _gaussian_block(id_rng, cfg.body_len)
    for k in first:
        if repeat_id:
            bodies[k + shift] = bodies[k]
        else:
            bodies[k + shift] = _gaussian_block(id_rng, cfg.body_len)

    return IqBuffer(_assemble_frame(bodies, cfg.cp_len), sample_period)


def synthesize_wifi_burst(symbol_len: int, cp_len: int, duration: int, *,
                          seed: int = 0,
                          sample_period: float = DEFAULT_SAMPLE_PERIOD) -> IqBuffer:
    """Build a Wi-Fi OFDM burst with its own symbol and prefix timing.

    The construction mirrors the LTE one but with Wi-Fi geometry, so a
    correlator parameterized for LTE finds no periodic peaks in it.
    """
    if not 0 < cp_len < symbol_len:
        raise SignalError("need 0 < cp_len < symbol_len")
    if duration == 0:
        return IqBuffer(np.zeros(0, dtype=np.complex128), sample_period)
    rng = np.random.default_rng([int(seed) & 0x7FFFFFFFFFFF, 0x11F1])
    bodies = _gaussian_block(rng, (duration, symbol_len - cp_len))
    return IqBuffer(_assemble_frame(bodies, cp_len), sample_period)


def apply_channel(sig: IqBuffer, ch: ChannelModel) -> IqBuffer:
    """out[k] = gain * exp(j*phase) * sig[k] + n[k], AWGN of power sigma^2."""
    rng = np.random.default_rng(ch.rng_seed)
    out = ch.gain * np.exp(1j * ch.phase) * sig.samples
    if ch.noise_power > 0:
        out = out + np.sqrt(ch.noise_power) * _gaussian_block(rng, len(sig.samples))
    return IqBuffer(out, sig.sample_period)


def overlay(a: IqBuffer, b: IqBuffer, offset: int) -> IqBuffer:
    """Complex sum of ``a`` and ``b`` with ``b`` delayed by ``offset`` samples."""
    if offset < 0:
        raise SignalError("offset must be non-negative")
    if len(b) and len(a) and a.sample_period != b.sample_period:
        raise SignalError("sample periods differ")
    n = max(len(a), offset + len(b))
    out = np.zeros(n, dtype=np.complex128)
    out[:len(a)] = a.samples
    out[offset:offset + len(b)] += b.samples
    return IqBuffer(out, a.sample_period if len(a) else b.sample_period)


def _sliding_sum(v: np.ndarray, width: int) -> np.ndarray:
    c = np.concatenate(([0.0], np.cumsum(v)))
    return c[width:] - c[:-width]


def cp_correlation(sig: IqBuffer, cfg: OfdmConfig) -> np.ndarray:
    """Normalized prefix correlation rho(n) for every window shift n.

    Two windows of ``cp_len`` samples, the second trailing the first by
    ``symbol_len - cp_len``, are slid together over the buffer. For each
    shift the squared magnitude of their inner product is divided by the
    squared maximum of the window energies, so rho(n) is 1 when the
    windows hold identical samples and near 0 for unrelated content.
    Shifts where both windows are silent yield 0 by convention.
    """
    x = sig.samples
    n_samp = len(x)
    if n_samp < cfg.symbol_len + cfg.cp_len:
        raise SignalError("buffer shorter than one symbol plus prefix")
    gap = cfg.window_gap
    count = n_samp - cfg.symbol_len + 1

    prod = x[:n_samp - gap] * np.conj(x[gap:])
    corr = _sliding_sum(prod.real, cfg.cp_len)[:count] + \
        1j * _sliding_sum(prod.imag, cfg.cp_len)[:count]

    power = np.abs(x) ** 2
    win_energy = _sliding_sum(power, cfg.cp_len)
    e1 = win_energy[:count]
    e2 = win_energy[gap:gap + count]

    den = np.maximum(e1, e2) ** 2
    rho = np.zeros(count)
    nz = den > 0
    rho[nz] = np.abs(corr[nz]) ** 2 / den[nz]
    return np.clip(rho, 0.0, 1.0)


def _window_max(v: np.ndarray, radius: int) -> np.ndarray:
    """Max of v over [i-radius, i+radius] per index, edges padded with -inf."""
    padded = np.concatenate([np.full(radius, -np.inf), v, np.full(radius, -np.inf)])
    width = 2 * radius + 1
    # Doubling trick: running forward max over windows of power-of-two length.
    run = padded.copy()
    span = 1
    while span * 2 <= width:
        run = np.maximum(run[:len(run) - span], run[span:])
        span *= 2
    rem = width - span
    if rem:
        run = np.maximum(run[:len(run) - rem], run[rem:])
    return run


def find_correlation_peaks(rho: np.ndarray, gamma: float, radius: int) -> np.ndarray:
    """Indices that exceed gamma and are strict maxima within +/- radius."""
    if len(rho) == 0:
        return np.zeros(0, dtype=np.int64)
    wmax = _window_max(rho, radius)
    cand = np.flatnonzero((rho >= gamma) & (rho >= wmax))
    peaks = []
    for i in cand:
        lo = max(0, i - radius)
        hi = min(len(rho), i + radius + 1)
        window = rho[lo:hi]
        # strict: no other sample in the window ties the candidate
        if np.count_nonzero(window >= rho[i]) == 1:
            peaks.append(i)
    return np.asarray(peaks, dtype=np.int64)


def detect_lte_frame(sig: IqBuffer, cfg: OfdmConfig,
                     gamma_lte: float = GAMMA_LTE_DEFAULT) -> Optional[DetectionResult]:
    """Locate LTE airtime in a buffer through prefix-correlation spikes.

    The frame start is the time of the first qualifying local maximum;
    the end is the last such maximum plus one symbol duration, so the
    reported span covers the full airtime. Returns None when no spike
    reaches ``gamma_lte``.
    """
    if not 0 < gamma_lte < 1:
        raise SignalError("gamma_lte must lie in (0, 1)")
    rho = cp_correlation(sig, cfg)
    peaks = find_correlation_peaks(rho, gamma_lte, cfg.cp_len)
    if len(peaks) == 0:
        return None
    t_s = peaks[0] * sig.sample_period
    t_e = (peaks[-1] + cfg.symbol_len) * sig.sample_period
    return DetectionResult(t_s, t_e, peaks, sig.sample_period)


def _residue_clusters(peaks: np.ndarray, period: int, tol: int) -> list[np.ndarray]:
    """Group peak indices by their residue modulo ``period``.

    Residues within circular distance ``tol`` of each other land in the
    same cluster; interference can jitter individual peaks by a few
    samples, so clustering beats exact congruence tests.
    """
    residues = peaks % period
    order = np.argsort(residues, kind="stable")
    sorted_res = residues[order]
    # circular gap split: cut wherever consecutive residues differ by > tol
    gaps = np.diff(sorted_res)
    cuts = np.flatnonzero(gaps > tol) + 1
    parts = np.split(order, cuts)
    # merge the wrap-around pair when first and last clusters touch mod period
    if len(parts) > 1 and (sorted_res[0] + period - sorted_res[-1]) <= tol:
        parts[0] = np.concatenate([parts[-1], parts[0]])
        parts = parts[:-1]
    return [np.sort(peaks[p]) for p in parts]


def _snap_to_lattice(group: np.ndarray, period: int) -> tuple[np.ndarray, int]:
    """Snap jittered peaks onto the group's dominant symbol lattice."""
    residues = group % period
    values, counts = np.unique(residues, return_counts=True)
    anchor = int(values[np.argmax(counts)])
    delta = ((group - anchor + period // 2) % period) - period // 2
    return group - delta, anchor


def snap_detection(det: DetectionResult, cfg: OfdmConfig) -> DetectionResult:
    """Refine a detection by snapping its peaks onto the symbol lattice.

    Noise can shift individual correlation maxima by a sample; the
    dominant residue of the peak set recovers the rigid symbol grid, so
    the refined start and end are exact whenever most peaks are.
    """
    snapped, _ = _snap_to_lattice(np.sort(det.peak_indices), cfg.symbol_len)
    period = det.sample_period
    return DetectionResult(snapped[0] * period,
                           (snapped[-1] + cfg.symbol_len) * period,
                           snapped, period)


def split_colliding_lte(det: DetectionResult, cfg: OfdmConfig, tol: int = 8,
                        min_group: int = 2) -> tuple[DetectionResult, DetectionResult]:
    """Separate the two peak groups of a two-frame collision.

    The first frame claims every peak at an integer number of symbol
    periods from the first peak; the second frame starts at the first
    peak outside that lattice. Each group is snapped onto its own symbol
    lattice before the spans are reported. Raises SingleFrameError when
    every peak shares one lattice (including the ambiguous case of two
    frames offset by an exact multiple of the symbol length).
    """
    peaks = np.sort(det.peak_indices)
    if len(peaks) < 2:
        raise SingleFrameError("need at least two peaks to split")

    clusters = _residue_clusters(peaks, cfg.symbol_len, tol)
    clusters = [c for c in clusters if len(c) >= min_group]
    if not clusters:
        raise SingleFrameError("no peak group large enough to form a frame")
    clusters.sort(key=lambda c: int(c[0]))
    first = clusters[0]
    rest = [c for c in clusters[1:]]
    if not rest:
        raise SingleFrameError("all peaks periodic with the first group")
    second = rest[0]

    period = det.sample_period

    def result(group: np.ndarray) -> DetectionResult:
        snapped, _ = _snap_to_lattice(group, cfg.symbol_len)
        return DetectionResult(snapped[0] * period,
                               (snapped[-1] + cfg.symbol_len) * period,
                               snapped, period)

    return result(first), result(second)


def phase_compensate(candidate: IqBuffer, reference: IqBuffer) -> IqBuffer:
    """Cancel the constant channel rotation between two sample vectors.

    The per-sample wrapped phase differences are averaged in magnitude
    and the candidate is rotated by that amount toward the reference;
    magnitudes are untouched. For a candidate that is a rotated copy of
    the reference this removes the rotation exactly.
    """
    if len(candidate) != len(reference):
        raise LengthMismatchError("phase compensation needs equal lengths")
    diff = np.angle(candidate.samples * np.conj(reference.samples))
    theta_bar = float(np.mean(np.abs(diff))) % np.pi
    direction = -1.0 if float(np.mean(diff)) > 0 else 1.0
    rotated = candidate.samples * np.exp(1j * direction * theta_bar)
    return IqBuffer(rotated, candidate.sample_period)


def normalized_correlation(a: IqBuffer, b: IqBuffer) -> float:
    """|<a, b>|^2 / max(Ea, Eb)^2, zero when both buffers are silent."""
    if len(a) != len(b):
        raise LengthMismatchError("correlation needs equal lengths")
    if len(a) == 0:
        raise SignalError("correlation of empty buffers is undefined")
    inner = np.vdot(a.samples, b.samples)
    ea = a.energy()
    eb = b.energy()
    den = max(ea, eb) ** 2
    if den == 0:
        return 0.0
    return float(min(abs(inner) ** 2 / den, 1.0))


class SignatureDb:
    """Per-monitor store of identity-field signatures, one per local id."""

    def __init__(self):
        self._store: dict[int, FrameSignature] = {}
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._store)

    def items(self):
        return self._store.items()

    def get(self, local_id: int) -> FrameSignature:
        return self._store[local_id]

    def register(self, id_samples: IqBuffer) -> int:
        local_id = self._next_id
        self._next_id += 1
        self._store[local_id] = FrameSignature(id_samples, local_id)
        return local_id

    def replace(self, local_id: int, id_samples: IqBuffer) -> None:
        self._store[local_id] = FrameSignature(id_samples, local_id)


def extract_id_fields(frame: IqBuffer, det: DetectionResult,
                      cfg: OfdmConfig) -> tuple[IqBuffer, IqBuffer]:
    """Cut the two identity windows out of a detected frame.

    Offsets are taken relative to the detected start. Raises
    CorruptedIdError when either window falls outside the detected span
    or the captured buffer.
    """
    half = cfg.id_field_len // 2
    start = det.start_index
    end = det.end_index
    windows = []
    for off in cfg.id_field_offsets:
        lo = start + off
        hi = lo + half
        if lo < 0 or hi > end or hi > len(frame):
            raise CorruptedIdError("identity window outside detected span")
        windows.append(IqBuffer(frame.samples[lo:hi].copy(), frame.sample_period))
    return windows[0], windows[1]


def attribute_frame(frame: IqBuffer, det: DetectionResult, cfg: OfdmConfig,
                    db: SignatureDb, gamma_id: float = GAMMA_ID_DEFAULT,
                    dl_threshold: Optional[float] = None) -> tuple[Optional[int], bool]:
    """Assign a detected frame to a locally-known transmitter.

    The two identity windows are extracted at their fixed offsets; the
    frame counts as downlink only when their mutual correlation clears
    ``dl_threshold`` (defaults to ``gamma_id``). A downlink frame is
    phase-compensated against every stored signature and attributed to
    the best match at or above ``gamma_id``, refreshing that signature
    with the new samples; with no qualifying match a new local id is
    registered. Returns (local_id, is_downlink); local_id is None for
    non-downlink frames.
    """
    if dl_threshold is None:
        dl_threshold = gamma_id
    w1, w2 = extract_id_fields(frame, det, cfg)
    if normalized_correlation(w1, w2) < dl_threshold:
        return None, False

    candidate = IqBuffer(np.concatenate([w1.samples, w2.samples]), frame.sample_period)
    best_id = None
    best_rho = -1.0
    for local_id, signature in db.items():
        if len(signature.id_samples) != len(candidate):
            continue
        comp = phase_compensate(candidate, signature.id_samples)
        rho = normalized_correlation(comp, signature.id_samples)
        if rho >= gamma_id and rho > best_rho:
            best_rho = rho
            best_id = local_id
    if best_id is None:
        return db.register(candidate), True
    db.replace(best_id, candidate)
    return best_id, True


def match_retransmission(a: IqBuffer, b: IqBuffer,
                         gamma_rt: float = GAMMA_RT_DEFAULT) -> bool:
    """True when two equal-length frames carry the same transmission.

    ``a`` is phase-compensated against ``b`` and the normalized
    correlation between them is compared with ``gamma_rt``; the statistic
    stays high even when a sizable share of one frame was corrupted by an
    overlapping transmission.
    """
    return normalized_correlation(phase_compensate(a, b), b) >= gamma_rt
