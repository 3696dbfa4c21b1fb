"""Per-AP implicit sensing: turning what an AP can hear into observations.

A monitor never decodes anything. For every sensed LTE frame it reports
the six-tuple (start, end, local transmitter id, priority class,
retransmission round, hidden flag) plus a log of its own transmissions.
Two stimulus paths produce identical record shapes: the signal path runs
synthesized IQ through the correlation detectors, while the trace path
projects simulator ground truth with configurable error injection and is
exact when every knob is zero, which makes it the oracle for everything
downstream.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import signals as sg
from .macsim import (COMPLIANT_CCA_DBM, EventTrace, TxEvent,
                     free_space_path_loss_db, received_power_dbm)


class MalformedFrameError(ValueError):
    """Frame duration outside every known priority class."""


@dataclass(frozen=True)
class ObservationVector:
    """One sensed LTE transmission as reported to the hub."""

    t_s_us: float
    t_e_us: float
    local_id: int
    class_id: str
    retx_round: int
    hidden_flag: int

    @property
    def duration_us(self) -> float:
        return self.t_e_us - self.t_s_us


@dataclass
class PowerLog:
    """Ring of the last ``depth`` received-power readings for one eNB."""

    depth: int = 16
    readings_dbm: list[float] = field(default_factory=list)

    def push(self, value_dbm: float) -> None:
        self.readings_dbm.append(float(value_dbm))
        if len(self.readings_dbm) > self.depth:
            del self.readings_dbm[0]

    @property
    def warmed_up(self) -> bool:
        return len(self.readings_dbm) >= self.depth

    def __len__(self) -> int:
        return len(self.readings_dbm)


@dataclass(frozen=True)
class MonitorConfig:
    """Thresholds and radio constants one monitoring AP works with."""

    gamma_lte: float = sg.GAMMA_LTE_DEFAULT
    gamma_id: float = sg.GAMMA_ID_DEFAULT
    gamma_rt: float = sg.GAMMA_RT_DEFAULT
    power_log_depth: int = 16
    own_tx_power_dbm: float = 20.0
    assumed_enb_power_dbm: float = 30.0
    noise_power_dbm: float = -math.inf     # -inf models a noiseless estimate
    assumed_cca_dbm: float = COMPLIANT_CCA_DBM

    def __post_init__(self):
        for g in (self.gamma_lte, self.gamma_id, self.gamma_rt):
            if not 0 < g < 1:
                raise ValueError("correlation thresholds must lie in (0, 1)")


@dataclass(frozen=True)
class MonitorErrors:
    """Trace-path error injection; everything defaults to lossless."""

    detect_miss_p: float = 0.0
    id_confusion_p: float = 0.0
    jitter_us: float = 0.0
    id_corrupt_p: float = 0.0
    seed: int = 0


_CLASS_DURATIONS = [(2_000.0, "C1"), (3_000.0, "C2"), (8_000.0, "C3"), (10_000.0, "C3")]


def classify_priority(duration_us: float) -> str:
    """Priority class from frame airtime, nearest occupancy limit.

    Both 8 ms and 10 ms frames map to C3: the class with the shorter
    defer is the profitable label for a misbehaving sender, so the
    classification errs that way.
    """
    if duration_us <= 0:
        raise MalformedFrameError("frame duration must be positive")
    if duration_us > 10_000.0 * 1.05:
        raise MalformedFrameError(f"{duration_us} us exceeds every occupancy limit")
    return min(_CLASS_DURATIONS, key=lambda c: abs(c[0] - duration_us))[1]


def _dbm_to_mw(dbm: float) -> float:
    return 0.0 if dbm == -math.inf else 10.0 ** (dbm / 10.0)


def infer_neighbor_flag(log: PowerLog, cfg: MonitorConfig) -> int:
    """Decide whether the eNB being watched can hear this monitor.

    Channel reciprocity: each reading of the eNB's power at the monitor
    is projected to the power the eNB would receive if the monitor
    transmitted over the same channel. The monitor counts itself heard
    (flag 0) only when a strict majority of projected readings clear the
    eNB's assumed sensing threshold; ties resolve to hidden.
    """
    if not len(log):
        raise ValueError("power log is empty")
    noise_mw = _dbm_to_mw(cfg.noise_power_dbm)
    p_w = _dbm_to_mw(cfg.own_tx_power_dbm)
    p_l = _dbm_to_mw(cfg.assumed_enb_power_dbm)
    cca_mw = _dbm_to_mw(cfg.assumed_cca_dbm)
    above = 0
    for reading in log.readings_dbm:
        channel = max(_dbm_to_mw(reading) - noise_mw, 0.0)
        projected = p_w * channel / p_l + noise_mw
        if projected > cca_mw:
            above += 1
    return 0 if 2 * above > len(log) else 1


@dataclass
class SensedFrame:
    """Internal record of one sensed frame before the round is resolved."""

    t_s_us: float
    t_e_us: float
    id_clean: bool
    local_id: Optional[int]
    payload: object               # trace: ground-truth tag; signal: IqBuffer
    class_id: str
    hidden_flag: int

    @property
    def duration_us(self) -> float:
        return self.t_e_us - self.t_s_us


class RetxEstimator:
    """Retransmission-round bookkeeping with corrupted-id recovery.

    Clean frames chain against the previous frame of the same local id:
    a match increments the round, anything else resets it to zero.
    Frames whose id field was corrupted wait in a pending list; a later
    clean frame of equal length that matches one back-fills its id and
    continues the chain. Pending frames that never match are dropped,
    leaving a gap rather than a fabricated record.
    """

    def __init__(self, matcher: Callable[[SensedFrame, SensedFrame], bool],
                 duration_tol_us: float = 0.5, pending_horizon: int = 16):
        self.matcher = matcher
        self.duration_tol_us = duration_tol_us
        self.pending_horizon = pending_horizon
        self._history: dict[int, list[tuple[float, SensedFrame, int]]] = {}
        self._pending: list[list] = []      # [frame, age]
        self.resolved: list[tuple[SensedFrame, int, int]] = []
        self.dropped: int = 0

    def _same_length(self, a: SensedFrame, b: SensedFrame) -> bool:
        return abs(a.duration_us - b.duration_us) <= self.duration_tol_us

    def _chain_round(self, local_id: int, frame: SensedFrame) -> int:
        hist = self._history.get(local_id, [])
        # latest earlier frame of this transmitter
        prev = None
        for t_s, f, r in reversed(hist):
            if t_s < frame.t_s_us:
                prev = (f, r)
                break
        if prev and self._same_length(prev[0], frame) \
                and self.matcher(prev[0], frame):
            return prev[1] + 1
        return 0

    def _remember(self, local_id: int, frame: SensedFrame, rnd: int) -> None:
        hist = self._history.setdefault(local_id, [])
        hist.append((frame.t_s_us, frame, rnd))
        # feeds arrive in time order; only a back-fill lands out of place
        if len(hist) > 1 and hist[-1][0] < hist[-2][0]:
            hist.sort(key=lambda ent: ent[0])

    def _age_pending(self) -> None:
        keep = []
        for item in self._pending:
            item[1] += 1
            if item[1] <= self.pending_horizon:
                keep.append(item)
            else:
                self.dropped += 1
        self._pending = keep

    def feed(self, frame: SensedFrame) -> None:
        if not frame.id_clean or frame.local_id is None:
            self._pending.append([frame, 0])
            return
        local_id = frame.local_id
        for item in list(self._pending):
            pending = item[0]
            if pending.t_s_us < frame.t_s_us and self._same_length(pending, frame) \
                    and self.matcher(pending, frame):
                r_pending = self._chain_round(local_id, pending)
                self.resolved.append((pending, local_id, r_pending))
                self._remember(local_id, pending, r_pending)
                self.resolved.append((frame, local_id, r_pending + 1))
                self._remember(local_id, frame, r_pending + 1)
                self._pending.remove(item)
                self._age_pending()
                return
        rnd = self._chain_round(local_id, frame)
        self.resolved.append((frame, local_id, rnd))
        self._remember(local_id, frame, rnd)
        self._age_pending()

    def finalize(self) -> list[tuple[SensedFrame, int, int]]:
        self.dropped += len(self._pending)
        self._pending = []
        return sorted(self.resolved, key=lambda item: item[0].t_s_us)


@dataclass
class MonitorReport:
    """What one AP uploads: observations plus its own activity."""

    monitor_id: str
    observations: list[ObservationVector]
    activity: list[tuple[float, float]]


def _stable_int(name: str) -> int:
    return zlib.crc32(name.encode())


def _overlaps_any(t_s: int, t_e: int, intervals: list[tuple[int, int]]) -> bool:
    return any(t_s < hi and lo < t_e for lo, hi in intervals)


def observe_trace(trace: EventTrace, observer: str,
                  cfg: MonitorConfig = MonitorConfig(),
                  errors: MonitorErrors = MonitorErrors()) -> MonitorReport:
    """Trace-path sensing: ground truth restricted to what the AP hears.

    With zero injected error the output reproduces ground truth field by
    field for every frame the AP could physically sense; the AP records
    nothing while itself transmitting.
    """
    ob_cfg = trace.nodes[observer]
    cfg = replace(cfg, own_tx_power_dbm=ob_cfg.tx_power_dbm)
    own = [(e.t_s_us, e.t_e_us) for e in trace.events if e.node_id == observer]
    audible = trace.graph.audible_to(observer)
    rng = np.random.default_rng(
        np.random.SeedSequence([trace.seed, _stable_int(observer), errors.seed]))

    def matcher(a: SensedFrame, b: SensedFrame) -> bool:
        return a.payload == b.payload

    estimator = RetxEstimator(matcher)
    local_ids: dict[str, int] = {}
    logs: dict[int, PowerLog] = {}

    lte_events = [e for e in trace.events if trace.nodes[e.node_id].kind == "enb"]
    for e in lte_events:
        src = e.node_id
        if src == observer or src not in audible:
            continue
        if _overlaps_any(e.t_s_us, e.t_e_us, own):
            continue
        if errors.detect_miss_p > 0 and rng.random() < errors.detect_miss_p:
            continue
        t_s = float(e.t_s_us)
        t_e = float(e.t_e_us)
        if errors.jitter_us > 0:
            t_s += rng.uniform(-errors.jitter_us, errors.jitter_us)
            t_e += rng.uniform(-errors.jitter_us, errors.jitter_us)
        if src not in local_ids:
            local_ids[src] = len(local_ids)
        local_id = local_ids[src]
        if errors.id_confusion_p > 0 and len(local_ids) > 1 \
                and rng.random() < errors.id_confusion_p:
            others = [v for v in local_ids.values() if v != local_id]
            local_id = int(others[rng.integers(0, len(others))])
        corrupted = errors.id_corrupt_p > 0 and rng.random() < errors.id_corrupt_p

        log = logs.setdefault(local_id, PowerLog(cfg.power_log_depth))
        log.push(received_power_dbm(trace.nodes[src], ob_cfg))
        hidden = infer_neighbor_flag(log, cfg)
        estimator.feed(SensedFrame(
            t_s_us=t_s, t_e_us=t_e, id_clean=not corrupted,
            local_id=None if corrupted else local_id,
            payload=e.frame_id, class_id=classify_priority(t_e - t_s),
            hidden_flag=hidden))

    observations = [ObservationVector(f.t_s_us, f.t_e_us, lid, f.class_id, rnd,
                                      f.hidden_flag)
                    for f, lid, rnd in estimator.finalize()]
    return MonitorReport(observer, observations,
                         [(float(lo), float(hi)) for lo, hi in own])


@dataclass(frozen=True)
class SignalPathConfig:
    """Radio model for the IQ sensing path."""

    ofdm: sg.OfdmConfig = sg.OfdmConfig.lte_default()
    wifi_symbol_len: int = 80
    wifi_cp_len: int = 16
    sample_period_s: float = sg.DEFAULT_SAMPLE_PERIOD
    noise_power_dbm: float = -95.0
    pad_us: float = 100.0

    @property
    def sample_period_us(self) -> float:
        return self.sample_period_s * 1e6

    @property
    def symbol_us(self) -> float:
        return self.ofdm.symbol_len * self.sample_period_us


def _amplitude_mw(tx_dbm: float, loss_db: float) -> float:
    return math.sqrt(10.0 ** ((tx_dbm - loss_db) / 10.0))


def synthesize_received_window(trace: EventTrace, observer: str,
                               lo_us: float, hi_us: float,
                               sig_cfg: SignalPathConfig) -> sg.IqBuffer:
    """All audible airtime in [lo_us, hi_us) as one received IQ buffer.

    Every overlapping transmission is synthesized, scaled by its path
    loss, rotated by a per-frame channel phase and summed; thermal noise
    fills the rest. Per-frame phases are keyed on (run seed, frame,
    link), so the window is deterministic for a given trace.
    """
    period_us = sig_cfg.sample_period_us
    n = int(round((hi_us - lo_us) / period_us))
    ob_cfg = trace.nodes[observer]
    audible = trace.graph.audible_to(observer)
    noise_mw = _dbm_to_mw(sig_cfg.noise_power_dbm)
    rng = np.random.default_rng(
        np.random.SeedSequence([trace.seed, _stable_int(observer),
                                int(abs(lo_us)), 0x40153]))
    base = np.sqrt(noise_mw / 2.0) * (rng.standard_normal(n)
                                      + 1j * rng.standard_normal(n))
    window = sg.IqBuffer(base, sig_cfg.sample_period_s)

    for e in trace.events:
        if e.node_id == observer or e.node_id not in audible:
            continue
        if not (e.t_s_us < hi_us and e.t_e_us > lo_us):
            continue
        src = trace.nodes[e.node_id]
        if src.kind == "enb":
            symbols = max(4, int(e.duration_us // sig_cfg.symbol_us))
            frame = sg.synthesize_lte_frame(
                sig_cfg.ofdm, payload_seed=e.frame_id,
                id_seed=_stable_int(e.node_id), duration=symbols,
                sample_period=sig_cfg.sample_period_s)
        else:
            wifi_symbol_us = sig_cfg.wifi_symbol_len * period_us
            symbols = max(1, int(e.duration_us // wifi_symbol_us))
            frame = sg.synthesize_wifi_burst(
                sig_cfg.wifi_symbol_len, sig_cfg.wifi_cp_len, symbols,
                seed=e.frame_id, sample_period=sig_cfg.sample_period_s)
        loss = free_space_path_loss_db(
            math.dist(src.position, ob_cfg.position))
        phase_seed = np.random.SeedSequence(
            [trace.seed, e.frame_id, _stable_int(e.node_id), _stable_int(observer)])
        phase_rng = np.random.default_rng(phase_seed)
        faded = sg.apply_channel(frame, sg.ChannelModel(
            gain=_amplitude_mw(src.tx_power_dbm, loss),
            phase=float(phase_rng.uniform(0, 2 * math.pi)),
            noise_power=0.0))
        offset = int(round((e.t_s_us - lo_us) / period_us))
        if offset < 0:
            faded = sg.IqBuffer(faded.samples[-offset:], faded.sample_period)
            offset = 0
        if offset >= n:
            continue
        samples = faded.samples[:n - offset]
        window.samples[offset:offset + len(samples)] += samples
    return window


def observe_signal(trace: EventTrace, observer: str,
                   cfg: MonitorConfig = MonitorConfig(),
                   sig_cfg: SignalPathConfig = SignalPathConfig()
                   ) -> MonitorReport:
    """Signal-path sensing: synthesize the received IQ and detect in it.

    One window is cut around every audible eNB transmission; detection,
    attribution, classification and round estimation all run purely on
    the samples. Frames whose identity fields fail the downlink check are
    treated as corrupted and recovered, if possible, through the
    same-length retransmission path.
    """
    ob_cfg = trace.nodes[observer]
    cfg = replace(cfg, own_tx_power_dbm=ob_cfg.tx_power_dbm)
    own = [(e.t_s_us, e.t_e_us) for e in trace.events if e.node_id == observer]
    audible = trace.graph.audible_to(observer)
    period_us = sig_cfg.sample_period_us

    def matcher(a: SensedFrame, b: SensedFrame) -> bool:
        na, nb = len(a.payload), len(b.payload)
        m = min(na, nb)
        if m == 0:
            return False
        fa = sg.IqBuffer(a.payload.samples[:m], sig_cfg.sample_period_s)
        fb = sg.IqBuffer(b.payload.samples[:m], sig_cfg.sample_period_s)
        return sg.match_retransmission(fa, fb, cfg.gamma_rt)

    estimator = RetxEstimator(matcher, duration_tol_us=sig_cfg.symbol_us)
    db = sg.SignatureDb()
    logs: dict[int, PowerLog] = {}
    seen_spans: list[tuple[float, float]] = []

    for e in trace.events:
        src = e.node_id
        if src == observer or src not in audible:
            continue
        if trace.nodes[src].kind != "enb":
            continue
        if _overlaps_any(e.t_s_us, e.t_e_us, own):
            continue
        lo = e.t_s_us - sig_cfg.pad_us
        hi = e.t_e_us + sig_cfg.pad_us
        window = synthesize_received_window(trace, observer, lo, hi, sig_cfg)
        det = sg.detect_lte_frame(window, sig_cfg.ofdm, cfg.gamma_lte)
        if det is None:
            continue
        diffs = np.diff(det.peak_indices) % sig_cfg.ofdm.symbol_len
        if len(det.peak_indices) > 1 and np.any((diffs > 8) &
                                                (diffs < sig_cfg.ofdm.symbol_len - 8)):
            try:
                spans = list(sg.split_colliding_lte(det, sig_cfg.ofdm))
            except sg.SingleFrameError:
                spans = [sg.snap_detection(det, sig_cfg.ofdm)]
        else:
            spans = [sg.snap_detection(det, sig_cfg.ofdm)]
        for span in spans:
            t_s = lo + span.start_index * period_us
            t_e = lo + span.end_index * period_us
            if any(abs(t_s - s) <= period_us and abs(t_e - e2) <= 2 * sig_cfg.symbol_us
                   for s, e2 in seen_spans):
                continue
            seen_spans.append((t_s, t_e))
            frame_samples = sg.IqBuffer(
                window.samples[span.start_index:span.end_index].copy(),
                sig_cfg.sample_period_s)
            try:
                local_id, is_dl = sg.attribute_frame(
                    window, span, sig_cfg.ofdm, db, cfg.gamma_id)
                clean = is_dl
            except sg.CorruptedIdError:
                local_id, clean = None, False
            power_dbm = 10.0 * math.log10(
                float(np.mean(np.abs(frame_samples.samples) ** 2)) + 1e-30)
            hidden = 1
            if clean and local_id is not None:
                log = logs.setdefault(local_id, PowerLog(cfg.power_log_depth))
                log.push(power_dbm)
                hidden = infer_neighbor_flag(log, cfg)
            try:
                class_id = classify_priority(t_e - t_s)
            except MalformedFrameError:
                continue
            estimator.feed(SensedFrame(
                t_s_us=t_s, t_e_us=t_e, id_clean=clean,
                local_id=local_id if clean else None,
                payload=frame_samples, class_id=class_id, hidden_flag=hidden))

    observations = [ObservationVector(f.t_s_us, f.t_e_us, lid, f.class_id, rnd,
                                      f.hidden_flag)
                    for f, lid, rnd in estimator.finalize()]
    return MonitorReport(observer, observations,
                         [(float(lo), float(hi)) for lo, hi in own])


# -- report wire format --------------------------------------------------

def write_report(report: MonitorReport, obs_path, act_path) -> None:
    """Tab-separated observation and activity files, byte-stable."""
    lines = ["# laacoex-observations v1",
             "# local_id\tt_s_us\tt_e_us\tclass\tretx\thidden\tmonitor_id"]
    for o in report.observations:
        lines.append(f"{o.local_id}\t{o.t_s_us:.3f}\t{o.t_e_us:.3f}\t"
                     f"{o.class_id}\t{o.retx_round}\t{o.hidden_flag}\t"
                     f"{report.monitor_id}")
    with open(obs_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    lines = ["# laacoex-activity v1", "# monitor_id\tt_s_us\tt_e_us"]
    for lo, hi in report.activity:
        lines.append(f"{report.monitor_id}\t{lo:.3f}\t{hi:.3f}")
    with open(act_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(obs_path, act_path) -> MonitorReport:
    observations = []
    monitor_id = None
    with open(obs_path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            lid, t_s, t_e, cls, retx, hidden, mon = line.split("\t")
            monitor_id = mon
            observations.append(ObservationVector(
                float(t_s), float(t_e), int(lid), cls, int(retx), int(hidden)))
    activity = []
    with open(act_path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            mon, lo, hi = line.split("\t")
            monitor_id = monitor_id or mon
            activity.append((float(lo), float(hi)))
    if monitor_id is None:
        raise ValueError(f"{obs_path}: no records found")
    return MonitorReport(monitor_id, observations, activity)
