import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lorapack.workload import (
    AdapterSpec,
    LengthSource,
    RequestTrace,
    UnpredictableRegime,
    WorkloadSpec,
    gen_poisson_arrivals,
    gen_unpredictable_arrivals,
    load_trace,
    mean_lengths,
    save_trace,
    synthesize_trace,
)


def simple_workload(rate=0.5, n=1, duration=100.0):
    return WorkloadSpec(
        adapters=tuple(AdapterSpec(f"a{i}", 8, rate) for i in range(n)),
        duration=duration,
        input_len_mean=250.0,
        output_len_mean=231.0,
    )


class TestPoissonArrivals:
    def test_zero_rate_empty(self):
        assert len(gen_poisson_arrivals(0.0, 3600.0, seed=3)) == 0

    def test_count_within_three_sigma(self):
        # rate*duration = 10000, sigma = 100
        times = gen_poisson_arrivals(1.0, 10000.0, seed=11)
        assert 9700 <= len(times) <= 10300

    def test_deterministic(self):
        a = gen_poisson_arrivals(0.7, 500.0, seed=42)
        b = gen_poisson_arrivals(0.7, 500.0, seed=42)
        assert np.array_equal(a, b)

    def test_sorted_and_in_range(self):
        times = gen_poisson_arrivals(2.0, 300.0, seed=5)
        assert np.all(np.diff(times) > 0)
        assert times[0] >= 0 and times[-1] < 300.0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            gen_poisson_arrivals(-1.0, 10.0, seed=0)
        with pytest.raises(ValueError):
            gen_poisson_arrivals(1.0, 0.0, seed=0)

    def test_gaps_are_exponential_ks(self):
        times = gen_poisson_arrivals(1.0, 20000.0, seed=9)
        gaps = np.diff(times)
        assert len(gaps) >= 10**4
        result = stats.kstest(gaps, "expon", args=(0, 1.0))
        assert result.pvalue > 0.01


class TestUnpredictableArrivals:
    def test_epoch_count(self):
        regime = UnpredictableRegime()
        _, log = gen_unpredictable_arrivals(0.4, 900.0, regime, seed=1)
        assert len(log) == 3

    def test_forced_doubling(self):
        regime = UnpredictableRegime(rate_bounds=(0.05, 3.2))
        _, log = gen_unpredictable_arrivals(
            0.4, 900.0, regime, seed=1, forced_updates=[True, True]
        )
        assert [r for _, r in log] == pytest.approx([0.4, 0.8, 1.6])

    def test_point_bounds_clip(self):
        regime = UnpredictableRegime(rate_bounds=(0.4, 0.4))
        for seed in range(5):
            _, log = gen_unpredictable_arrivals(0.4, 1500.0, regime, seed=seed)
            assert all(r == 0.4 for _, r in log)

    def test_initial_rate_outside_bounds(self):
        regime = UnpredictableRegime(rate_bounds=(0.05, 0.2))
        with pytest.raises(ValueError):
            gen_unpredictable_arrivals(0.4, 900.0, regime, seed=0)

    def test_rates_never_exit_bounds(self):
        regime = UnpredictableRegime(rate_bounds=(0.1, 1.0))
        for seed in range(20):
            _, log = gen_unpredictable_arrivals(0.4, 3000.0, regime, seed=seed)
            assert all(0.1 <= r <= 1.0 for _, r in log)

    def test_distribution_names(self):
        regime = UnpredictableRegime()
        _, log = gen_unpredictable_arrivals(0.4, 3000.0, regime, seed=7)
        assert set(d for d, _ in log) <= {"poisson", "lognormal"}

    def test_epoch_rate_matches_mean_gap(self):
        # one long epoch: mean inter-arrival should be close to 1/rate
        regime = UnpredictableRegime(epoch_length=50000.0, rate_bounds=(1.0, 1.0))
        times, log = gen_unpredictable_arrivals(1.0, 50000.0, regime, seed=3)
        gaps = np.diff(times)
        assert np.mean(gaps) == pytest.approx(1.0, rel=0.1)


class TestSynthesizeTrace:
    def test_zero_rate_empty_trace(self):
        trace = synthesize_trace(simple_workload(rate=0.0), seed=0)
        assert len(trace.arrival) == 0

    def test_mean_only_lengths(self):
        trace = synthesize_trace(simple_workload(rate=1.0), seed=0)
        assert np.all(trace.input_len == 250)
        assert np.all(trace.output_len == 231)

    def test_per_adapter_counts_clt(self):
        wl = WorkloadSpec(
            adapters=(AdapterSpec("a", 8, 0.1), AdapterSpec("b", 8, 0.3)),
            duration=1e5,
            input_len_mean=250.0,
            output_len_mean=231.0,
        )
        trace = synthesize_trace(wl, seed=2)
        for idx, rate in [(0, 0.1), (1, 0.3)]:
            count = int(np.sum(trace.adapter == idx))
            expect = rate * 1e5
            sigma = np.sqrt(expect)
            assert abs(count - expect) <= 3 * sigma

    def test_sorted(self):
        trace = synthesize_trace(simple_workload(rate=1.0, n=4), seed=1)
        assert np.all(np.diff(trace.arrival) >= 0)

    def test_deterministic(self):
        a = synthesize_trace(simple_workload(rate=1.0, n=3), seed=5)
        b = synthesize_trace(simple_workload(rate=1.0, n=3), seed=5)
        assert np.array_equal(a.arrival, b.arrival)
        assert np.array_equal(a.adapter, b.adapter)

    def test_sampled_without_corpus_rejected(self):
        wl = WorkloadSpec(
            adapters=(AdapterSpec("a", 8, 1.0),),
            duration=10.0,
            input_len_mean=250.0,
            output_len_mean=231.0,
            length_source=LengthSource.PER_REQUEST_SAMPLED,
        )
        with pytest.raises(ValueError):
            synthesize_trace(wl, seed=0)


class TestMeanLengths:
    def _trace(self, lengths):
        wl = simple_workload(rate=1.0)
        n = len(lengths)
        return RequestTrace(
            workload=wl,
            seed=0,
            arrival=np.arange(n, dtype=np.float64),
            adapter=np.zeros(n, dtype=np.int32),
            input_len=np.array([i for i, _ in lengths], dtype=np.int32),
            output_len=np.array([o for _, o in lengths], dtype=np.int32),
        )

    def test_arithmetic_mean(self):
        out = mean_lengths(self._trace([(100, 50), (300, 150)]))
        assert np.all(out.input_len == 200)
        assert np.all(out.output_len == 100)

    def test_uniform_unchanged(self):
        trace = self._trace([(250, 231), (250, 231)])
        out = mean_lengths(trace)
        assert np.array_equal(out.input_len, trace.input_len)
        assert np.array_equal(out.output_len, trace.output_len)

    def test_idempotent(self):
        once = mean_lengths(self._trace([(10, 5), (21, 8), (33, 100)]))
        twice = mean_lengths(once)
        assert np.array_equal(once.input_len, twice.input_len)
        assert np.array_equal(once.output_len, twice.output_len)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_lengths(self._trace([]))


class TestTraceFile:
    def test_round_trip(self, tmp_path):
        trace = synthesize_trace(simple_workload(rate=1.0, n=3), seed=4)
        path = tmp_path / "trace.txt"
        save_trace(trace, path)
        back = load_trace(path)
        assert back.seed == trace.seed
        assert np.allclose(back.arrival, trace.arrival)
        assert np.array_equal(back.adapter, trace.adapter)
        assert np.array_equal(back.input_len, trace.input_len)
        assert back.workload.to_dict() == trace.workload.to_dict()


class TestSpecValidation:
    def test_adapter_validation(self):
        with pytest.raises(ValueError):
            AdapterSpec("a", 0, 0.1)
        with pytest.raises(ValueError):
            AdapterSpec("a", 8, -0.1)

    def test_workload_validation(self):
        with pytest.raises(ValueError):
            simple_workload(rate=1.0, duration=0.0)
        with pytest.raises(ValueError):
            WorkloadSpec(
                adapters=(AdapterSpec("a", 8, 1.0), AdapterSpec("a", 8, 1.0)),
                duration=10.0,
                input_len_mean=250.0,
                output_len_mean=231.0,
            )

    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 5.0))
    @settings(max_examples=25, deadline=None)
    def test_generator_purity(self, seed, rate):
        a = gen_poisson_arrivals(rate, 50.0, seed)
        b = gen_poisson_arrivals(rate, 50.0, seed)
        assert np.array_equal(a, b)
