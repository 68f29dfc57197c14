import numpy as np
import pytest

from commsim.compressors import apply_perm_k_collection, apply_rand_k, natural_spec
from commsim.telemetry import (
    S2W,
    CommEvent,
    CostModel,
    FullPayload,
    TelemetryError,
    TraceRecord,
    average_traces,
    charge,
    coords_to_target,
    read_trace_csv,
    trace_to_csv,
    write_trace,
)


def record(t, f=1.0, gsq=1.0, s2w=0.0, w2s=0.0):
    return TraceRecord(t=t, f=f, grad_norm_sq=gsq, s2w_cum=s2w, w2s_cum=w2s,
                       best_f=f)


class TestCharge:
    def test_full_broadcast_coordinates(self):
        event = CommEvent(direction=S2W, payload=FullPayload(cost=300.0), workers=7)
        assert charge(event, CostModel()) == 300.0

    def test_perm_message_coordinates(self):
        x = np.arange(300, dtype=float) + 1.0
        msg = apply_perm_k_collection(x, 100, np.random.default_rng(0))[0]
        event = CommEvent(direction=S2W, payload=msg, workers=100)
        assert charge(event, CostModel()) == 3.0

    def test_natural_composite_bits(self):
        # 3 coordinates, 9/32 weight, 32 bits per float: 27 bits.
        x = np.arange(300, dtype=float) + 1.0
        msg = apply_perm_k_collection(x, 100, np.random.default_rng(0))[0]
        msg.natural_encoded = True
        model = CostModel(unit="bits")
        event = CommEvent(direction=S2W, payload=msg, workers=100)
        assert charge(event, model) == pytest.approx(27.0)

    def test_plain_bits(self):
        msg = apply_rand_k(np.ones(8), 2, np.random.default_rng(1))
        assert charge(CommEvent(direction=S2W, payload=msg), CostModel(unit="bits")) == 64.0

    def test_unknown_unit_rejected(self):
        with pytest.raises(TelemetryError):
            CostModel(unit="nibbles")


class TestCoordsToTarget:
    def test_already_at_target(self):
        trace = [record(0, gsq=1e-9)]
        out = coords_to_target(trace, 1e-4)
        assert out == {"t": 0, "s2w": 0.0, "w2s": 0.0, "total": 0.0}

    def test_crossing_point(self):
        trace = [record(t, gsq=1.0 / (t + 1), s2w=10.0 * t, w2s=5.0 * t)
                 for t in range(10)]
        out = coords_to_target(trace, 1.0 / 6.0)
        assert out["t"] == 5
        assert out["s2w"] == 50.0 and out["w2s"] == 25.0 and out["total"] == 75.0

    def test_not_reached(self):
        trace = [record(t, gsq=1.0) for t in range(4)]
        assert coords_to_target(trace, 1e-6) is None

    def test_gd_cost_schedule(self):
        # Full-vector accounting: cost at the crossing index is d * index
        # per direction per worker.
        d = 300
        trace = [record(t, gsq=2.0 ** (-t), s2w=float(d * t), w2s=float(d * t))
                 for t in range(30)]
        eps = 1e-4
        out = coords_to_target(trace, eps)
        first = next(t for t in range(30) if 2.0 ** (-t) <= eps)
        assert out["s2w"] == d * first and out["w2s"] == d * first

    def test_eps_must_be_positive(self):
        with pytest.raises(TelemetryError):
            coords_to_target([record(0)], 0.0)


class TestCsv:
    def test_header_and_roundtrip(self, tmp_path):
        trace = [record(0, f=1.25, gsq=0.5),
                 record(1, f=np.pi, gsq=1e-17, s2w=3.5, w2s=600.0)]
        path = tmp_path / "trace.csv"
        write_trace(trace, path)
        text = path.read_text()
        assert text.splitlines()[0] == "t,f,grad_norm_sq,s2w_cum,w2s_cum"
        back = read_trace_csv(path)
        assert back[1].f == np.pi  # 17 significant digits round-trip doubles
        assert back[1].grad_norm_sq == 1e-17
        assert back[1].s2w_cum == 3.5

    def test_seventeen_digit_rendering(self):
        trace = [record(0, f=0.1, gsq=1.0)]
        line = trace_to_csv(trace).splitlines()[1]
        assert line.split(",")[1] == "0.10000000000000001"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(TelemetryError):
            read_trace_csv(path)


class TestAveraging:
    def test_constant_traces(self):
        traces = [[record(t, f=2.0, gsq=3.0) for t in range(5)] for _ in range(4)]
        mean = average_traces(traces)
        assert len(mean) == 5
        assert all(r.f == 2.0 and r.grad_norm_sq == 3.0 for r in mean)

    def test_truncates_to_shortest(self):
        t1 = [record(t, f=1.0) for t in range(3)]
        t2 = [record(t, f=3.0) for t in range(6)]
        mean = average_traces([t1, t2])
        assert len(mean) == 3
        assert mean[0].f == 2.0

    def test_empty_rejected(self):
        with pytest.raises(TelemetryError):
            average_traces([])


class TestCostModelDefaults:
    def test_natural_weight_default(self):
        model = CostModel()
        assert model.natural_weight == pytest.approx(9.0 / 32.0)
        assert model.full_float_bits == 32.0

    def test_natural_spec_flag_used_only_in_bits(self):
        assert natural_spec(4).omega == 0.125
        msg = apply_rand_k(np.ones(4), 2, np.random.default_rng(0))
        msg.natural_encoded = True
        assert charge(CommEvent(direction=S2W, payload=msg), CostModel()) == 2.0
