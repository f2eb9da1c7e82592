import numpy as np
import pytest

from stppwatch.events import (Domain, EventStream, events_csv_from_text,
                              neighborhood, read_events_csv, transform_event,
                              write_events_csv)


class TestDomain:
    def test_rejects_bad_bounds(self):
        with pytest.raises(ValueError):
            Domain(t_end=0.0)
        with pytest.raises(ValueError):
            Domain(t_end=1.0, s_bounds=(0, 0, 0, 1))

    def test_area(self):
        assert Domain(t_end=1.0, s_bounds=(0, 0, 2, 3)).area == 6.0


class TestEventStream:
    def test_rejects_ties(self):
        with pytest.raises(ValueError):
            EventStream(t=[0.1, 0.1], s=[[0.1, 0.1], [0.2, 0.2]])

    def test_rejects_out_of_order(self):
        with pytest.raises(ValueError):
            EventStream(t=[0.2, 0.1], s=[[0.1, 0.1], [0.2, 0.2]])

    def test_iteration(self):
        st = EventStream(t=[0.1, 0.2], s=[[0.3, 0.4], [0.5, 0.6]])
        events = list(st)
        assert events[1].t == 0.2 and events[1].s2 == 0.6


class TestTransform:
    def test_plain_subtraction(self):
        st = EventStream.from_events([(0.2, (0.5, 0.5)), (0.5, (0.6, 0.5))])
        xt = transform_event(st, 1)
        assert xt.dt == pytest.approx(0.3)
        assert (xt.s1, xt.s2) == (0.6, 0.5)

    def test_first_event_measures_from_zero(self):
        st = EventStream.from_events([(0.7, (0.5, 0.5))])
        assert transform_event(st, 0).dt == pytest.approx(0.7)
        assert transform_event(st, 0, delta=0.1).dt == pytest.approx(0.7)

    def test_localized_history_skips_far_events(self):
        # prior event 0.2 away exceeds the 0.05 ball: measure from zero
        st = EventStream.from_events([(0.2, (0.3, 0.5)), (0.5, (0.5, 0.5))])
        assert transform_event(st, 1, delta=0.05).dt == pytest.approx(0.5)
        # with a prior event inside the ball, measure from it
        st2 = EventStream.from_events(
            [(0.1, (0.52, 0.5)), (0.2, (0.3, 0.5)), (0.5, (0.5, 0.5))])
        assert transform_event(st2, 2, delta=0.05).dt == pytest.approx(0.4)

    def test_index_out_of_range(self):
        st = EventStream.from_events([(0.2, (0.5, 0.5))])
        with pytest.raises(IndexError):
            transform_event(st, 1)


class TestNeighborhood:
    def test_interior(self, unit_domain):
        assert neighborhood(0.5, 0.5, 0.1, unit_domain) == (0.4, 0.4, 0.6, 0.6)

    def test_clipped(self, unit_domain):
        got = neighborhood(0.05, 0.5, 0.1, unit_domain)
        assert got == pytest.approx((0.0, 0.4, 0.15, 0.6))

    def test_area_of_unclipped_ball(self, unit_domain):
        x0, y0, x1, y1 = neighborhood(0.5, 0.5, 0.5, unit_domain)
        assert (x1 - x0) * (y1 - y0) == pytest.approx(1.0)

    def test_requires_positive_delta(self, unit_domain):
        with pytest.raises(ValueError):
            neighborhood(0.5, 0.5, 0.0, unit_domain)


class TestCsv:
    def test_round_trip(self, tmp_path):
        st = EventStream(t=[0.125, 0.25], s=[[0.1, 0.9], [0.3, 0.7]])
        path = tmp_path / "events.csv"
        write_events_csv(st, path)
        st2 = read_events_csv(path)
        np.testing.assert_array_equal(st.t, st2.t)
        np.testing.assert_array_equal(st.s, st2.s)

    def test_header_enforced(self):
        with pytest.raises(ValueError):
            events_csv_from_text("a,b,c\n0.1,0.2,0.3\n")

    def test_duplicate_timestamps_rejected(self):
        text = "t,s1,s2\n0.1,0.2,0.3\n0.1,0.4,0.5\n"
        with pytest.raises(ValueError):
            events_csv_from_text(text)

    def test_empty_file(self):
        assert len(events_csv_from_text("t,s1,s2\n")) == 0
