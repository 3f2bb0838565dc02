"""Sampling automaton: scripted transitions, energy accounting, trace I/O."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulseforge.dutycycle import (Action, EnergyModel, FrameEvent, Mode,
                                  SamplerConfig, SamplerState, load_trace_csv,
                                  run_trace, save_trace_csv, simulate_energy,
                                  step)
from pulseforge.errors import ParseError, ProtocolError, ValidationError

CFG = SamplerConfig(fps=30.0, no_face_limit_frames=3, sleep_duration_s=1.0,
                    pnn50_enter_threshold_pct=20.0,
                    pnn50_exit_threshold_pct=20.0, min_hrv_window_s=2.0,
                    hr_change_trigger_bpm=5.0, exit_no_face_frames=2)


def ev(t, face=True, pnn=None, bpm=None):
    return FrameEvent(timestamp=t, face_present=face, pnn50_pct=pnn, avg_bpm=bpm)


def actions(events, cfg=CFG):
    return [a for _, a in run_trace(events, cfg)]


class TestShortTermSleep:
    def test_faceless_run_triggers_sleep_then_noop(self):
        events = [ev(i / 30.0, face=False) for i in range(6)]
        got = actions(events)
        assert got == [Action.SAMPLE_FRAME, Action.SAMPLE_FRAME, Action.SLEEP,
                       Action.NO_OP, Action.NO_OP, Action.NO_OP]

    def test_wake_after_sleep_duration(self):
        events = [ev(0.00, face=False), ev(0.03, face=False),
                  ev(0.06, face=False),              # third miss: sleep to 1.06
                  ev(0.50, face=True),               # still asleep
                  ev(1.10, face=True)]               # past wake time
        got = actions(events)
        assert got[-2:] == [Action.NO_OP, Action.SAMPLE_FRAME]

    def test_wake_at_exact_boundary(self):
        # Wake comparisons tolerate fps-grid rounding at the boundary.
        trace = run_trace([ev(0.0, face=False), ev(0.1, face=False),
                           ev(0.2, face=False)], CFG)
        sleep_until = trace[-1][0].sleep_until
        state, action = step(trace[-1][0], CFG, ev(sleep_until, face=True))
        assert action is Action.SAMPLE_FRAME
        assert state.mode is Mode.SHORT_TERM

    def test_face_reappearance_resets_the_run(self):
        events = [ev(0.00, face=False), ev(0.03, face=False),
                  ev(0.06, face=True), ev(0.09, face=False),
                  ev(0.12, face=False), ev(0.15, face=False)]
        got = actions(events)
        assert got == [Action.SAMPLE_FRAME] * 5 + [Action.SLEEP]


class TestLongTermEscalation:
    def test_high_hrv_enters_long_term(self):
        events = [ev(0.0, pnn=10.0, bpm=70.0), ev(0.1, pnn=30.0)]
        assert actions(events) == [Action.SAMPLE_FRAME, Action.START_LONG_TERM]

    def test_hr_jump_enters_long_term(self):
        events = [ev(0.0, bpm=70.0), ev(0.1, bpm=80.0)]
        assert actions(events) == [Action.SAMPLE_FRAME, Action.START_LONG_TERM]

    def test_small_hr_change_does_not_trigger(self):
        events = [ev(0.0, bpm=70.0), ev(0.1, bpm=74.0)]
        assert actions(events) == [Action.SAMPLE_FRAME, Action.SAMPLE_FRAME]

    def test_low_hrv_exit_needs_minimum_recording_time(self):
        events = [ev(0.0, bpm=70.0), ev(0.1, pnn=30.0),   # escalate
                  ev(0.2, pnn=5.0),                        # too early to leave
                  ev(2.5, pnn=5.0)]                        # past the minimum
        got = actions(events)
        assert got == [Action.SAMPLE_FRAME, Action.START_LONG_TERM,
                       Action.SAMPLE_FRAME, Action.STOP_LONG_TERM]
        final = run_trace(events, CFG)[-1][0]
        assert final.mode is Mode.SHORT_TERM

    def test_faceless_run_exits_long_term(self):
        events = [ev(0.0, bpm=70.0), ev(0.1, pnn=30.0),
                  ev(0.2, face=False), ev(0.3, face=False)]
        got = actions(events)
        assert got[-2:] == [Action.SAMPLE_FRAME, Action.STOP_LONG_TERM]

    def test_high_hrv_keeps_long_term_alive(self):
        events = [ev(0.0, bpm=70.0), ev(0.1, pnn=30.0),
                  ev(3.0, pnn=40.0), ev(6.0, pnn=35.0)]
        got = actions(events)
        assert got[2:] == [Action.SAMPLE_FRAME, Action.SAMPLE_FRAME]


class TestStepContract:
    def test_rejects_time_reversal(self):
        state = SamplerState(last_ts=5.0)
        with pytest.raises(ProtocolError):
            step(state, CFG, ev(4.0))

    def test_replay_is_pure(self):
        events = [ev(0.0, bpm=70.0), ev(0.1, pnn=30.0), ev(0.2, face=False),
                  ev(0.3, face=False), ev(0.4), ev(0.5, pnn=3.0)]
        a = run_trace(events, CFG)
        b = run_trace(events, CFG)
        assert a == b

    @given(st.lists(st.tuples(st.floats(min_value=0.001, max_value=0.5),
                              st.booleans(),
                              st.one_of(st.none(),
                                        st.floats(min_value=0.0, max_value=99.0)),
                              st.one_of(st.none(),
                                        st.floats(min_value=42.0, max_value=240.0))),
                    min_size=2, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_random_traces_replay_identically(self, rows):
        t = 0.0
        events = []
        for dt, face, pnn, bpm in rows:
            t += dt
            events.append(ev(t, face=face, pnn=pnn, bpm=bpm))
        a = run_trace(events, CFG)
        assert a == run_trace(events, CFG)
        energy = simulate_energy(events, CFG, EnergyModel())
        assert 0.0 <= energy["duty_ratio"] <= 1.0
        assert energy["energy_j"] >= 0.0
        assert energy["saving_fraction"] <= 1.0


class TestEnergy:
    def test_hand_computed_small_trace(self):
        events = [ev(0.0), ev(0.5, face=False), ev(1.0, face=False),
                  ev(1.5, face=False), ev(2.0)]
        out = simulate_energy(events, CFG, EnergyModel(p_sample_w=2.2,
                                                       p_sleep_w=0.2,
                                                       p_infer_w=1.1))
        # Active for the first three intervals, asleep for the last:
        # 3.3 W * 1.5 s + 0.2 W * 0.5 s against 3.3 W * 2 s always on.
        assert out["energy_j"] == pytest.approx(3.3 * 1.5 + 0.2 * 0.5)
        assert out["energy_always_on_j"] == pytest.approx(6.6)
        assert out["duty_ratio"] == pytest.approx(0.75)
        assert out["saving_fraction"] == pytest.approx(1.0 - 5.05 / 6.6)

    def test_always_present_trace_saves_nothing(self):
        events = [ev(i / 30.0) for i in range(90)]
        out = simulate_energy(events, CFG, EnergyModel())
        assert out["saving_fraction"] == pytest.approx(0.0)
        assert out["duty_ratio"] == pytest.approx(1.0)

    def test_single_event_trace(self):
        out = simulate_energy([ev(0.0)], CFG, EnergyModel())
        assert out["energy_j"] == 0.0

    def test_sleep_power_must_undercut_sampling(self):
        with pytest.raises(ValidationError):
            EnergyModel(p_sample_w=0.1, p_sleep_w=0.2)


class TestTraceCsv:
    def test_round_trip(self, tmp_path):
        events = [ev(0.0, bpm=70.25), ev(1 / 3, face=False),
                  ev(2 / 3, pnn=33.5, bpm=71.0)]
        p = tmp_path / "trace.csv"
        save_trace_csv(events, p)
        assert load_trace_csv(p) == events

    def test_rejects_wrong_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,face\n0.0,1\n")
        with pytest.raises(ParseError, match="header"):
            load_trace_csv(p)

    def test_rejects_bad_bool(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("timestamp,face_present,pnn50_pct,avg_bpm\n0.0,maybe,,\n")
        with pytest.raises(ParseError, match="face_present"):
            load_trace_csv(p)

    def test_rejects_wrong_field_count(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("timestamp,face_present,pnn50_pct,avg_bpm\n0.0,1\n")
        with pytest.raises(ParseError, match="4 fields"):
            load_trace_csv(p)

    def test_rejects_empty_file(self, tmp_path):
        p = tmp_path / "empty.csv"
        p.write_text("")
        with pytest.raises(ParseError, match="empty"):
            load_trace_csv(p)
