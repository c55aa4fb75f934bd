import itertools
import json
import re
import socket
import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from icdetraj.errors import ProtocolError, ProviderError
from icdetraj.estimators import Constant, KdeConfig, de_trajectory
from icdetraj.kernels import TOPHAT
from icdetraj.prob import Grid, hellinger_distance, make_gaussian_target, sample, uniform_ignorance
from icdetraj.probe import (
    CountingProvider,
    DeltaMock,
    DigitDistribution,
    HttpProvider,
    JsonlRecorder,
    KernelMock,
    ProviderSpec,
    ReplayProvider,
    SeededRandomMock,
    SerializationConfig,
    UniformMock,
    hierarchy_pdf,
    icl_trajectory,
    parse,
    prefix_context,
    serialize,
    split_prefix_context,
)

CFG = SerializationConfig()
SAMPLES = sample(make_gaussian_target(50, 3), 200, 0)


def enumerate_pdf(provider, context, config):
    """Oracle: walk every digit string and multiply its conditionals."""
    n = config.num_digits
    out = np.zeros(10**n)
    for digits in itertools.product(range(10), repeat=n):
        m = 1.0
        for k in range(n):
            m *= DigitDistribution(provider._answer(prefix_context(context, digits[:k], config))).probs[digits[k]]
        out[int("".join(map(str, digits)))] = m
    return out


class TestSerialize:
    def test_examples(self):
        assert serialize([61, 42, 59]) == "6 1 , 4 2 , 5 9 , "
        assert serialize([5]) == "0 5 , "
        assert serialize([]) == ""
        assert serialize([7], SerializationConfig(num_digits=3)) == "0 0 7 , "

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            serialize([100])

    @given(st.lists(st.integers(0, 99)), st.booleans())
    def test_round_trip(self, values, trailing):
        cfg = SerializationConfig(trailing_separator=trailing)
        assert parse(serialize(values, cfg), cfg) == values

    @given(st.lists(st.integers(0, 999), max_size=5), st.lists(st.integers(0, 9), max_size=2))
    def test_prefix_split(self, values, prefix):
        cfg = SerializationConfig(num_digits=3)
        ctx = serialize(values, cfg)
        assert split_prefix_context(prefix_context(ctx, prefix, cfg), cfg) == (ctx, prefix)

    def test_malformed(self):
        with pytest.raises(ProtocolError):
            parse("6 1 , 4")
        with pytest.raises(ProtocolError):
            parse("6 1 , x 2 , ")

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SerializationConfig(num_digits=0)
        with pytest.raises(ValueError):
            SerializationConfig(number_separator="")


class TestDigitDistribution:
    def test_renormalizes(self):
        d = DigitDistribution([2.0] * 10)
        np.testing.assert_allclose(d.probs, 0.1)

    @pytest.mark.parametrize("bad", [[0.1] * 9, [-0.1] + [0.11] * 9, [0.0] * 10, [np.nan] + [0.1] * 9])
    def test_invalid(self, bad):
        with pytest.raises(ProtocolError):
            DigitDistribution(bad)

    def test_does_not_freeze_caller_array(self):
        a = np.full(10, 0.1)
        DigitDistribution(a)
        a[0] = 0.5


class TestHierarchy:
    def test_uniform(self):
        p = hierarchy_pdf(UniformMock(), [1, 2, 3])
        np.testing.assert_allclose(p.mass, 0.01, atol=1e-15)

    def test_delta(self):
        prov = DeltaMock(4, 2)
        p = hierarchy_pdf(prov, [10, 20])
        assert p.mass[42] == 1.0
        # dead branches are not refined
        assert prov.calls == 2

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("in_flight", [1, 4])
    def test_enumeration_oracle(self, seed, in_flight):
        prov = SeededRandomMock(seed)
        ctx = serialize(SAMPLES.bin_indices[:7])
        p = hierarchy_pdf(prov, ctx, max_in_flight=in_flight)
        assert np.max(np.abs(p.mass - enumerate_pdf(prov, ctx, CFG))) < 1e-12
        assert prov.calls == 11

    def test_three_digits(self):
        cfg = SerializationConfig(num_digits=3)
        prov = SeededRandomMock(9)
        p = hierarchy_pdf(prov, [123, 4], cfg)
        assert prov.calls == 111 and p.grid == Grid(3)
        assert np.max(np.abs(p.mass - enumerate_pdf(prov, serialize([123, 4], cfg), cfg))) < 1e-12

    def test_response_order_deterministic(self):
        seen_a, seen_b = [], []
        hierarchy_pdf(SeededRandomMock(1), [3], on_response=lambda c, d: seen_a.append(c), max_in_flight=4)
        hierarchy_pdf(SeededRandomMock(1), [3], on_response=lambda c, d: seen_b.append(c), max_in_flight=1)
        assert seen_a == seen_b
        assert seen_a[0] == "0 3 , " and seen_a[1:] == [f"0 3 , {d} " for d in range(10)]

    def test_in_flight_bound(self):
        class Slow(CountingProvider):
            def __init__(self):
                super().__init__()
                self.active = 0
                self.peak = 0
                self.lock = threading.Lock()

            def _answer(self, context):
                import time

                with self.lock:
                    self.active += 1
                    self.peak = max(self.peak, self.active)
                time.sleep(0.005)
                with self.lock:
                    self.active -= 1
                return np.full(10, 0.1)

        prov = Slow()
        hierarchy_pdf(prov, [1], max_in_flight=3)
        assert 1 < prov.peak <= 3

    def test_noisy_provider_still_valid(self):
        class Noisy(CountingProvider):
            def _answer(self, context):
                return np.full(10, 3.3)

        p = hierarchy_pdf(Noisy(), [])
        assert p.mass.sum() == pytest.approx(1.0, abs=1e-12)


class TestTrajectory:
    def test_constant(self):
        t = icl_trajectory(UniformMock(), SAMPLES, [0, 1, 5])
        assert all(p == t.pdfs[0] for p in t.pdfs)
        np.testing.assert_allclose(t.pdfs[0].mass, uniform_ignorance().mass, atol=1e-15)

    def test_kernel_mock_matches_kde(self):
        ns = [0, 1, 2, 10, 50]
        for h, s in [(4.0, 2.0), (2.5, 0.7), (6.0, TOPHAT)]:
            icl = icl_trajectory(KernelMock(h, s), SAMPLES, ns)
            kde = de_trajectory(KdeConfig(s, Constant(h)), SAMPLES, ns)
            for a, b in zip(icl.pdfs, kde.pdfs):
                assert hellinger_distance(a, b) < 1e-9

    def test_cap_and_length(self):
        with pytest.raises(ValueError):
            icl_trajectory(UniformMock(), SAMPLES.prefix(5), [6])
        with pytest.raises(ValueError):
            icl_trajectory(UniformMock(), SAMPLES, [100], cap=50)

    def test_partial_on_failure(self):
        class Dies(CountingProvider):
            def _answer(self, context):
                if context.count(",") >= 3:
                    raise ProviderError("gone")
                return np.full(10, 0.1)

        with pytest.raises(ProviderError) as info:
            icl_trajectory(Dies(), SAMPLES, [0, 1, 2, 3, 4], max_in_flight=1)
        partial = info.value.partial
        assert partial.context_lengths == (0, 1, 2) and "partial" in partial.label


class TestReplay:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "s.jsonl"
        with JsonlRecorder(path) as rec:
            a = icl_trajectory(SeededRandomMock(3), SAMPLES, [0, 1, 4], on_response=rec)
        assert rec.lines == 33
        b = icl_trajectory(ReplayProvider.from_file(path), SAMPLES, [0, 1, 4])
        assert all(np.array_equal(x.mass, y.mass) for x, y in zip(a.pdfs, b.pdfs))

    def test_missing_context(self, tmp_path):
        path = tmp_path / "s.jsonl"
        with JsonlRecorder(path) as rec:
            icl_trajectory(UniformMock(), SAMPLES, [1], on_response=rec)
        with pytest.raises(ProtocolError, match=re.escape(repr(serialize(SAMPLES.bin_indices[:2])))):
            icl_trajectory(ReplayProvider.from_file(path), SAMPLES, [2])

    def test_conflicting_lines(self, tmp_path):
        path = tmp_path / "s.jsonl"
        line = {"context": "", "digit_probs": [0.1] * 10}
        other = {"context": "", "digit_probs": [0.2] + [0.8 / 9] * 9}
        path.write_text(json.dumps(line) + "\n" + json.dumps(other) + "\n")
        with pytest.raises(ProtocolError, match="conflicting"):
            ReplayProvider.from_file(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(ProtocolError, match=":1:"):
            ReplayProvider.from_file(path)


class TestHttp:
    def test_matches_local_mock(self, digit_server):
        prov = HttpProvider(digit_server + "/digits")
        a = hierarchy_pdf(prov, [12, 34])
        b = hierarchy_pdf(SeededRandomMock(5), [12, 34])
        assert np.array_equal(a.mass, b.mass) and prov.calls == 11

    def test_http_error_is_protocol(self, digit_server):
        with pytest.raises(ProtocolError, match="HTTP 500"):
            HttpProvider(digit_server + "/error").digit_probs("")

    def test_wrong_arity(self, digit_server):
        with pytest.raises(ProtocolError):
            HttpProvider(digit_server + "/arity").digit_probs("")

    def test_unreachable_retries(self):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
        sock.close()
        with pytest.raises(ProviderError, match="3 attempts"):
            HttpProvider(f"http://127.0.0.1:{port}/", timeout=1, retries=2, backoff=0.01).digit_probs("")


class TestProviderSpec:
    @pytest.mark.parametrize("spec", [
        ProviderSpec("http", endpoint="http://x/"),
        ProviderSpec("replay", path="a.jsonl"),
        ProviderSpec("mock", preset="delta", params=(4, 2)),
        ProviderSpec("mock", preset="kernel-mock", params=(3.0, 2.0)),
    ])
    def test_round_trip(self, spec):
        assert ProviderSpec.from_dict(spec.to_dict()) == spec

    def test_presets(self):
        assert isinstance(ProviderSpec("mock", preset="uniform").build(), UniformMock)
        assert isinstance(ProviderSpec("mock", preset="seeded-random", params=(3,)).build(), SeededRandomMock)
        p = hierarchy_pdf(ProviderSpec("mock", preset="delta", params=(1, 7)).build(), [])
        assert p.mass[17] == 1.0

    @pytest.mark.parametrize("kwargs", [{"kind": "http"}, {"kind": "replay"}, {"kind": "mock", "preset": "nope"},
                                        {"kind": "carrier-pigeon"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ProviderSpec(**kwargs)
