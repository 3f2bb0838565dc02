"""Event-driven duty-cycling sampler and its energy accountant.

A deterministic automaton over three camera modes:

    ShortTerm  active sampling; falls asleep after a run of faceless frames,
               escalates to LongTerm on high HRV or an abrupt rate change
    Sleeping   camera off for a fixed interval, then back to ShortTerm
    LongTerm   continuous recording; leaves on sustained-low HRV (only after
               a minimum recording time) or on a run of faceless frames

`step` is a pure function state -> state; replaying a trace always yields an
identical state/action sequence.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ParseError, ProtocolError, ValidationError
from .validation import require

# Tolerance for wake-time comparisons so fps-grid float rounding cannot make
# a sleep last one frame longer on some platforms.
WAKE_EPS = 1e-9


class Mode(enum.Enum):
    SHORT_TERM = "ShortTerm"
    SLEEPING = "Sleeping"
    LONG_TERM = "LongTerm"


class Action(enum.Enum):
    SAMPLE_FRAME = "SampleFrame"
    SLEEP = "Sleep"
    START_LONG_TERM = "StartLongTerm"
    STOP_LONG_TERM = "StopLongTerm"
    NO_OP = "NoOp"


@dataclass(frozen=True)
class SamplerConfig:
    fps: float = 30.0
    no_face_limit_frames: int = 10
    sleep_duration_s: float = 1.0
    pnn50_enter_threshold_pct: float = 20.0
    pnn50_exit_threshold_pct: float = 20.0
    min_hrv_window_s: float = 240.0
    hr_change_trigger_bpm: float = 5.0
    exit_no_face_frames: int = 10

    def __post_init__(self):
        require(self.fps > 0 and self.no_face_limit_frames > 0
                and self.sleep_duration_s > 0 and self.min_hrv_window_s > 0
                and self.hr_change_trigger_bpm > 0 and self.exit_no_face_frames > 0,
                "all sampler thresholds must be positive")
        for t in (self.pnn50_enter_threshold_pct, self.pnn50_exit_threshold_pct):
            require(0 < t < 100, "pnn50 thresholds must lie in (0, 100)")


@dataclass(frozen=True)
class SamplerState:
    mode: Mode = Mode.SHORT_TERM
    no_face_run: int = 0
    sleep_until: float = 0.0
    recording_elapsed_s: float = 0.0
    last_avg_bpm: float | None = None
    last_ts: float | None = None


@dataclass(frozen=True)
class FrameEvent:
    timestamp: float
    face_present: bool
    pnn50_pct: float | None = None
    avg_bpm: float | None = None


@dataclass(frozen=True)
class EnergyModel:
    p_sample_w: float = 2.2
    p_sleep_w: float = 0.2
    p_infer_w: float = 1.1

    def __post_init__(self):
        require(self.p_sleep_w < self.p_sample_w, "sleep power must be below sampling power")
        require(self.p_sleep_w >= 0 and self.p_infer_w >= 0, "powers must be >= 0")


def step(state: SamplerState, cfg: SamplerConfig, ev: FrameEvent
         ) -> tuple[SamplerState, Action]:
    """Advance the automaton by one frame event."""
    if state.last_ts is not None and ev.timestamp < state.last_ts:
        raise ProtocolError(
            f"non-monotone event time {ev.timestamp} after {state.last_ts}")

    if state.mode is Mode.SLEEPING:
        if ev.timestamp + WAKE_EPS < state.sleep_until:
            return replace(state, last_ts=ev.timestamp), Action.NO_OP
        # Wake: clear the faceless run and handle this event as ShortTerm.
        state = replace(state, mode=Mode.SHORT_TERM, no_face_run=0)

    new_avg = ev.avg_bpm if ev.avg_bpm is not None else state.last_avg_bpm

    if state.mode is Mode.SHORT_TERM:
        if not ev.face_present:
            run = state.no_face_run + 1
            if run >= cfg.no_face_limit_frames:
                return (replace(state, mode=Mode.SLEEPING, no_face_run=0,
                                sleep_until=ev.timestamp + cfg.sleep_duration_s,
                                recording_elapsed_s=0.0,
                                last_ts=ev.timestamp),
                        Action.SLEEP)
            return (replace(state, no_face_run=run, last_ts=ev.timestamp),
                    Action.SAMPLE_FRAME)
        hrv_trigger = (ev.pnn50_pct is not None
                       and ev.pnn50_pct > cfg.pnn50_enter_threshold_pct)
        hr_jump = (ev.avg_bpm is not None and state.last_avg_bpm is not None
                   and abs(ev.avg_bpm - state.last_avg_bpm) > cfg.hr_change_trigger_bpm)
        if hrv_trigger or hr_jump:
            return (replace(state, mode=Mode.LONG_TERM, no_face_run=0,
                            recording_elapsed_s=0.0, last_avg_bpm=new_avg,
                            last_ts=ev.timestamp),
                    Action.START_LONG_TERM)
        return (replace(state, no_face_run=0, last_avg_bpm=new_avg,
                        last_ts=ev.timestamp),
                Action.SAMPLE_FRAME)

    # LongTerm
    prev_ts = state.last_ts if state.last_ts is not None else ev.timestamp
    elapsed = state.recording_elapsed_s + (ev.timestamp - prev_ts)
    if not ev.face_present:
        run = state.no_face_run + 1
        if run >= cfg.exit_no_face_frames:
            return (replace(state, mode=Mode.SHORT_TERM, no_face_run=0,
                            recording_elapsed_s=0.0, last_ts=ev.timestamp),
                    Action.STOP_LONG_TERM)
        return (replace(state, no_face_run=run, recording_elapsed_s=elapsed,
                        last_ts=ev.timestamp),
                Action.SAMPLE_FRAME)
    low_hrv = (ev.pnn50_pct is not None
               and ev.pnn50_pct <= cfg.pnn50_exit_threshold_pct)
    if low_hrv and elapsed >= cfg.min_hrv_window_s:
        return (replace(state, mode=Mode.SHORT_TERM, no_face_run=0,
                        recording_elapsed_s=0.0, last_avg_bpm=new_avg,
                        last_ts=ev.timestamp),
                Action.STOP_LONG_TERM)
    return (replace(state, no_face_run=0, recording_elapsed_s=elapsed,
                    last_avg_bpm=new_avg, last_ts=ev.timestamp),
            Action.SAMPLE_FRAME)


def run_trace(events: list[FrameEvent], cfg: SamplerConfig,
              initial: SamplerState | None = None
              ) -> list[tuple[SamplerState, Action]]:
    """Replay a whole trace; returns the (state, action) sequence."""
    state = initial if initial is not None else SamplerState()
    out = []
    for ev in events:
        state, action = step(state, cfg, ev)
        out.append((state, action))
    return out


def simulate_energy(trace: list[FrameEvent], cfg: SamplerConfig,
                    model: EnergyModel) -> dict:
    """Energy spent replaying a trace, vs an always-on camera.

    Each inter-event interval is billed at the power of the mode the
    automaton is in after processing the earlier event; active modes draw
    sampling plus inference power, sleep draws sleep power.
    """
    require(len(trace) > 0, "trace must be non-empty")
    if len(trace) == 1:
        return {"duty_ratio": 1.0, "energy_j": 0.0, "energy_always_on_j": 0.0,
                "saving_fraction": 0.0}
    p_active = model.p_sample_w + model.p_infer_w
    state = SamplerState()
    energy = 0.0
    active_time = 0.0
    for i, ev in enumerate(trace):
        state, _ = step(state, cfg, ev)
        if i + 1 < len(trace):
            dt = trace[i + 1].timestamp - ev.timestamp
            if state.mode is Mode.SLEEPING:
                energy += model.p_sleep_w * dt
            else:
                energy += p_active * dt
                active_time += dt
    total = trace[-1].timestamp - trace[0].timestamp
    always_on = p_active * total
    saving = 0.0 if always_on <= 0 else 1.0 - energy / always_on
    return {
        # interval sums can land an ulp past the exact total
        "duty_ratio": min(1.0, active_time / total) if total > 0 else 1.0,
        "energy_j": energy,
        "energy_always_on_j": always_on,
        "saving_fraction": saving,
    }


TRACE_HEADER = "timestamp,face_present,pnn50_pct,avg_bpm"


def save_trace_csv(events: list[FrameEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER.split(","))
        for ev in events:
            writer.writerow([
                repr(ev.timestamp),
                "1" if ev.face_present else "0",
                "" if ev.pnn50_pct is None else repr(ev.pnn50_pct),
                "" if ev.avg_bpm is None else repr(ev.avg_bpm),
            ])


def _parse_bool(s: str, where: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true"):
        return True
    if v in ("0", "false"):
        return False
    raise ParseError(f"{where}: bad face_present value '{s}'")


def load_trace_csv(path: str | Path) -> list[FrameEvent]:
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}: empty trace file") from None
    if [h.strip() for h in header] != TRACE_HEADER.split(","):
        raise ParseError(f"{path}: expected header '{TRACE_HEADER}'")
    events = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            ts = float(row[0])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad timestamp '{row[0]}'") from None
        face = _parse_bool(row[1], f"{path}:{lineno}")
        pnn = float(row[2]) if row[2].strip() else None
        avg = float(row[3]) if row[3].strip() else None
        events.append(FrameEvent(ts, face, pnn, avg))
    if not events:
        raise ValidationError(f"{path}: trace has no events")
    return events
