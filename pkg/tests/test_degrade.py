import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxkit.assets import SyntheticAssets
from voxkit.audio import AudioBuffer, stft_powerlaw
from voxkit.degrade import (ChainPolicy, ChainStep, DegradationSpec,
                            DistortionKind, ENHANCEMENT_ORDER,
                            EXTRACTION_ORDER, Task, apply_chain, apply_eq,
                            bandwidth_limit, clip, convolve_rir, mix_at_snr,
                            sample_chain, synth_rir, vocal_effect)
from voxkit.errors import (BadBellParams, BadThreshold, DegenerateNoise,
                           RateMismatch)

RATE = 16000


def tone(freq=440.0, dur=1.0, amp=0.5, rate=RATE):
    t = np.arange(int(dur * rate)) / rate
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t), rate)


def measured_snr(clean: AudioBuffer, mixed: AudioBuffer) -> float:
    resid = mixed.samples - clean.samples
    return 10 * np.log10(np.sum(clean.samples ** 2) / np.sum(resid ** 2))


class TestMixAtSnr:
    def test_equal_power_at_zero_db(self):
        clean = tone(amp=1.0)
        rng = np.random.default_rng(0)
        noise = rng.standard_normal(len(clean))
        clean_rms = np.sqrt(np.mean(clean.samples ** 2))
        noise = noise / np.sqrt(np.mean(noise ** 2)) * clean_rms
        out = mix_at_snr(clean, AudioBuffer(noise, RATE), 0.0)
        # alpha = 1: the mix is exactly clean + noise
        assert np.allclose(out.samples, clean.samples + noise)

    def test_twenty_db_alpha_via_independent_rms(self):
        clean = tone(amp=1.0)
        rng = np.random.default_rng(1)
        noise = rng.standard_normal(len(clean))
        noise = noise / np.sqrt(np.mean(noise ** 2)) * np.sqrt(
            np.mean(clean.samples ** 2))
        out = mix_at_snr(clean, AudioBuffer(noise, RATE), 20.0)
        alpha = (out.samples - clean.samples) / noise
        assert np.allclose(alpha, 0.1)
        assert measured_snr(clean, out) == pytest.approx(20.0, abs=0.1)

    def test_zero_noise_degenerate(self):
        with pytest.raises(DegenerateNoise):
            mix_at_snr(tone(), AudioBuffer(np.zeros(100), RATE), 10.0)

    def test_rate_mismatch(self):
        with pytest.raises(RateMismatch):
            mix_at_snr(tone(), AudioBuffer(np.ones(10) * 0.1, 8000), 10.0)

    def test_snr_fidelity_hundred_trials(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            clean = AudioBuffer(rng.uniform(-0.5, 0.5, 4000), RATE)
            noise = AudioBuffer(rng.standard_normal(
                int(rng.integers(1000, 8000))) * 0.3, RATE)
            snr = float(rng.uniform(-5, 20))
            out = mix_at_snr(clean, noise, snr)
            assert measured_snr(clean, out) == pytest.approx(snr, abs=0.1)

    def test_noise_shorter_than_clean_is_looped(self):
        clean = tone(dur=1.0)
        noise = AudioBuffer(np.ones(777) * 0.2, RATE)
        out = mix_at_snr(clean, noise, 0.0)
        assert len(out) == len(clean)


class TestConvolveRir:
    def test_unit_impulse_identity(self):
        buf = tone()
        delta = AudioBuffer(np.array([1.0]), RATE)
        out = convolve_rir(buf, delta)
        assert np.allclose(out.samples, buf.samples, atol=1e-12)

    def test_delayed_impulse_shifts(self):
        buf = tone(dur=0.1)
        k = 50
        rir = AudioBuffer(np.eye(1, k + 1, k)[0], RATE)
        out = convolve_rir(buf, rir)
        assert np.allclose(out.samples[:k], 0.0, atol=1e-12)
        # shifted content, renormalized to the original peak
        ref = buf.samples[:len(buf) - k]
        scale = np.max(np.abs(buf.samples)) / np.max(np.abs(ref))
        assert np.allclose(out.samples[k:], ref * scale, atol=1e-9)

    def test_matches_direct_convolution_oracle(self):
        rng = np.random.default_rng(3)
        x = AudioBuffer(rng.uniform(-0.5, 0.5, 6000), RATE)
        h = AudioBuffer(rng.standard_normal(4000) * np.exp(
            -np.arange(4000) / 800), RATE)
        out = convolve_rir(x, h)
        direct = np.convolve(x.samples, h.samples)[:len(x)]
        peak_in, peak_out = np.max(np.abs(x.samples)), np.max(np.abs(direct))
        direct = direct * (peak_in / peak_out)
        assert np.max(np.abs(out.samples - direct)) <= 1e-6

    def test_rate_mismatch(self):
        with pytest.raises(RateMismatch):
            convolve_rir(tone(), AudioBuffer(np.array([1.0]), 8000))


class TestClip:
    def test_formula(self):
        buf = AudioBuffer(np.array([0.5, -1.0, 0.03]), RATE)
        out = clip(buf, 0.06)
        assert np.array_equal(out.samples, [0.06, -0.06, 0.03])

    def test_threshold_above_peak_is_identity(self):
        buf = tone(amp=0.3)
        out = clip(buf, 0.9)
        assert np.array_equal(out.samples, buf.samples)

    def test_strict_range(self):
        with pytest.raises(BadThreshold):
            clip(tone(), 0.05)
        clip(tone(), 0.05, strict=False)  # allowed when strict mode is off

    @settings(max_examples=30, deadline=None)
    @given(thr=st.floats(min_value=0.06, max_value=0.9),
           seed=st.integers(min_value=0, max_value=2 ** 16))
    def test_bound_and_pointwise_formula(self, thr, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.5, 1.5, 256)
        out = clip(AudioBuffer(np.clip(x, -1, 1), RATE), thr)
        assert np.max(np.abs(out.samples)) <= thr
        expected = np.maximum(np.minimum(np.clip(x, -1, 1), thr), -thr)
        assert np.array_equal(out.samples, expected)


class TestBandwidthLimit:
    def test_equal_rate_identity(self):
        buf = tone()
        out = bandwidth_limit(buf, 16)
        assert np.allclose(out.samples, buf.samples, atol=1e-12)

    def test_two_khz_removes_high_band(self):
        rng = np.random.default_rng(7)
        buf = AudioBuffer(rng.uniform(-0.5, 0.5, RATE), RATE)
        out = bandwidth_limit(buf, 2)
        spec = stft_powerlaw(out, 1024, 256, 1.0)
        freqs = np.fft.rfftfreq(1024, 1 / RATE)
        high = np.sum(spec.frames[:, freqs > 1000] ** 2)
        total = np.sum(spec.frames ** 2)
        assert 10 * np.log10(high / total) <= -40

    def test_above_rate_skipped(self):
        buf = tone()
        out = bandwidth_limit(buf, 32)
        assert np.array_equal(out.samples, buf.samples)

    def test_length_preserved(self):
        buf = tone(dur=0.513)
        assert len(bandwidth_limit(buf, 4)) == len(buf)


class TestApplyEq:
    def test_zero_gain_identity(self):
        buf = tone(dur=2.0)
        out = apply_eq(buf, [(1000.0, 0.0, 1.0), (200.0, 0.0, 2.0)],
                       window_start_s=0.5)
        assert np.max(np.abs(out.samples - buf.samples)) <= 1e-6

    def test_bell_gain_measured_by_tone(self):
        buf = tone(1000.0, dur=2.5, amp=0.2)
        out = apply_eq(buf, [(1000.0, 5.0, 1.0)], window_start_s=0.5)
        sl = slice(int(0.7 * RATE), int(1.3 * RATE))  # window interior
        gain_db = 20 * np.log10(np.sqrt(np.mean(out.samples[sl] ** 2))
                                / np.sqrt(np.mean(buf.samples[sl] ** 2)))
        assert gain_db == pytest.approx(5.0, abs=0.5)
        outside = slice(int(1.8 * RATE), int(2.4 * RATE))
        assert np.array_equal(out.samples[outside], buf.samples[outside])

    def test_four_bells_rejected(self):
        with pytest.raises(BadBellParams):
            apply_eq(tone(), [(100.0, 1.0, 1.0)] * 4)

    def test_gain_out_of_range_rejected(self):
        with pytest.raises(BadBellParams):
            apply_eq(tone(), [(100.0, 6.0, 1.0)])

    def test_center_above_nyquist_rejected(self):
        with pytest.raises(BadBellParams):
            apply_eq(tone(), [(9000.0, 1.0, 1.0)])


class TestVocalEffect:
    def test_identity_components(self):
        buf = tone(dur=1.5)
        delta = AudioBuffer(np.array([1.0]), RATE)
        out = vocal_effect(buf, delta, [(500.0, 0.0, 1.0)])
        assert np.allclose(out.samples, buf.samples, atol=1e-6)

    def test_composition_equality(self):
        buf = tone(dur=1.5)
        rir = synth_rir(0.2, 0.2, RATE, seed=5)
        bells = [(800.0, 3.0, 1.5)]
        a = vocal_effect(buf, rir, bells, window_start_s=0.2)
        b = convolve_rir(apply_eq(buf, bells, window_start_s=0.2), rir)
        assert np.array_equal(a.samples, b.samples)

    def test_order_swap_differs(self):
        rng = np.random.default_rng(11)
        buf = AudioBuffer(rng.uniform(-0.5, 0.5, RATE), RATE)
        rir = synth_rir(0.3, 0.3, RATE, seed=6)
        bells = [(1200.0, 4.0, 1.0)]
        eq_then_reverb = convolve_rir(apply_eq(buf, bells), rir)
        reverb_then_eq = apply_eq(convolve_rir(buf, rir), bells)
        assert not np.allclose(eq_then_reverb.samples, reverb_then_eq.samples)


class TestSynthRir:
    def test_rt60_envelope_definition(self):
        rt60 = 0.3
        t = rt60
        assert np.exp(-t * np.log(1000.0) / rt60) == pytest.approx(1e-3)
        rir = synth_rir(rt60, 0.5, RATE, seed=0)
        # the empirical tail beyond rt60 is tiny relative to the head
        head = np.sqrt(np.mean(rir.samples[:100] ** 2))
        tail = np.sqrt(np.mean(rir.samples[int(rt60 * RATE):][:100] ** 2))
        assert tail / head < 5e-3

    def test_determinism(self):
        a = synth_rir(0.3, 0.4, RATE, seed=9)
        b = synth_rir(0.3, 0.4, RATE, seed=9)
        assert np.array_equal(a.samples, b.samples)

    def test_longer_rt60_has_more_tail_energy(self):
        short = synth_rir(0.1, 1.0, RATE, seed=2)
        long = synth_rir(1.0, 1.0, RATE, seed=2)
        cut = int(0.2 * RATE)
        assert np.sum(long.samples[cut:] ** 2) > np.sum(short.samples[cut:] ** 2)


class TestSampleChain:
    def test_all_probabilities_one_enhancement(self):
        policy = ChainPolicy(p_noise=1, p_reverb=1, p_clip=1, p_bandwidth=1,
                             p_other_voice=1, p_vocal_effect=1)
        spec = sample_chain(policy, Task.ENHANCEMENT, seed=0)
        assert spec.kinds() == list(ENHANCEMENT_ORDER)

    def test_all_probabilities_zero(self):
        policy = ChainPolicy(p_noise=0, p_reverb=0, p_clip=0, p_bandwidth=0,
                             p_other_voice=0, p_vocal_effect=0)
        spec = sample_chain(policy, Task.ENHANCEMENT, seed=0)
        assert spec.steps == []

    def test_extraction_always_has_interferer(self):
        policy = ChainPolicy(p_noise=0, p_reverb=0, p_clip=0, p_bandwidth=0,
                             p_other_voice=0, p_vocal_effect=0)
        spec = sample_chain(policy, Task.EXTRACTION, seed=1)
        assert spec.kinds() == [DistortionKind.OTHER_VOICE]

    def test_clip_inclusion_frequency(self):
        policy = ChainPolicy()
        hits = sum(DistortionKind.CLIP in sample_chain(
            policy, Task.ENHANCEMENT, seed=s).kinds() for s in range(10_000))
        assert abs(hits / 10_000 - 0.25) <= 0.02

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
           extraction=st.booleans())
    def test_order_is_subsequence_of_canonical(self, seed, extraction):
        task = Task.EXTRACTION if extraction else Task.ENHANCEMENT
        order = EXTRACTION_ORDER if extraction else ENHANCEMENT_ORDER
        kinds = sample_chain(ChainPolicy(), task, seed).kinds()
        positions = [order.index(k) for k in kinds]
        assert positions == sorted(positions)
        if extraction:
            assert DistortionKind.OTHER_VOICE in kinds

    def test_parameters_within_ranges(self):
        policy = ChainPolicy(p_noise=1, p_reverb=1, p_clip=1, p_bandwidth=1,
                             p_other_voice=1, p_vocal_effect=1)
        for s in range(50):
            for step in sample_chain(policy, Task.EXTRACTION, seed=s).steps:
                p = step.params
                if step.kind == DistortionKind.NOISE:
                    assert -5 <= p["snr_db"] <= 20
                elif step.kind == DistortionKind.CLIP:
                    assert 0.06 <= p["threshold"] <= 0.9
                elif step.kind == DistortionKind.BANDWIDTH:
                    assert p["freq_khz"] in (2, 4, 8, 16, 24, 32)
                elif step.kind == DistortionKind.OTHER_VOICE:
                    assert 0 <= p["snr_db"] <= 10
                elif step.kind == DistortionKind.VOCAL_EFFECT:
                    assert 1 <= len(p["bells"]) <= 3
                    for c, g, q in p["bells"]:
                        assert 10 <= c <= 12000 and -5 <= g <= 5 and q > 0

    def test_policy_validation(self):
        with pytest.raises(ValueError):
            ChainPolicy(p_clip=1.5).validate()
        with pytest.raises(ValueError):
            ChainPolicy(snr_db=(-10, 20)).validate()
        with pytest.raises(ValueError):
            ChainPolicy(bandwidths_khz=(3,)).validate()


class TestApplyChain:
    def test_empty_spec_identity(self):
        buf = tone()
        spec = DegradationSpec(steps=[], task=Task.ENHANCEMENT, seed=0)
        out = apply_chain(buf, spec, SyntheticAssets())
        assert np.array_equal(out.samples, buf.samples)

    def test_clip_only_square_wave(self):
        square = AudioBuffer(np.tile([1.0, -1.0], 256), RATE)
        spec = DegradationSpec(
            steps=[ChainStep(DistortionKind.CLIP, {"threshold": 0.06})],
            task=Task.ENHANCEMENT, seed=0)
        out = apply_chain(square, spec, SyntheticAssets())
        assert np.array_equal(out.samples, np.tile([0.06, -0.06], 256))

    def test_full_chain_deterministic(self):
        buf = tone(dur=1.2)
        policy = ChainPolicy(p_noise=1, p_reverb=1, p_clip=1, p_bandwidth=1,
                             p_other_voice=1, p_vocal_effect=1,
                             bandwidths_khz=(2, 4, 8)).for_sample_rate(RATE)
        spec = sample_chain(policy, Task.EXTRACTION, seed=33)
        a = apply_chain(buf, spec, SyntheticAssets())
        b = apply_chain(buf, spec, SyntheticAssets())
        assert np.array_equal(a.samples, b.samples)

    def test_spec_json_roundtrip(self):
        spec = sample_chain(ChainPolicy(), Task.EXTRACTION, seed=2)
        back = DegradationSpec.from_json(spec.to_json())
        assert back.to_json() == spec.to_json()
        assert back.kinds() == spec.kinds()

    def test_clip_bound_exact_after_chain(self):
        buf = tone(amp=0.9)
        policy = ChainPolicy(p_noise=1, p_reverb=1, p_clip=1, p_bandwidth=0,
                             p_vocal_effect=1).for_sample_rate(RATE)
        for s in range(5):
            spec = sample_chain(policy, Task.ENHANCEMENT, seed=s)
            thr = [st.params["threshold"] for st in spec.steps
                   if st.kind == DistortionKind.CLIP][0]
            out = apply_chain(buf, spec, SyntheticAssets())
            assert np.max(np.abs(out.samples)) <= thr
