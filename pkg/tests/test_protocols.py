"""Session-level tests: worked examples, sifting statistics, decoy-state
bounds, key rates, and attack observables measured through the full
source-channel-detector pipeline."""

import math

import numpy as np
import pytest
from scipy import stats

from qkdsim.attacks import (
    FakedState,
    InterceptResend,
    PhaseRemap,
    PhotonNumberSplitting,
    TimeShift,
)
from qkdsim.optics import (
    ChannelConfig,
    DetectorConfig,
    SourceConfig,
    mismatched_curves,
)
from qkdsim.postprocess import KeyMaterial
from qkdsim.protocols import (
    ClassYield,
    DecoyConfig,
    DecoyEstimateError,
    ProtocolConfig,
    ProtocolError,
    SessionTranscript,
    YieldTable,
    binary_entropy,
    decoy_estimate,
    decoy_yields,
    estimate_qber,
    eve_mutual_information,
    key_rate_estimate,
    replay_session,
    run_session,
    select_test_bits,
    sift,
    suggested_signal_mean,
)


def ideal_detectors():
    cfg = DetectorConfig(base_efficiency=1.0, dark_count_prob=0.0)
    return (cfg, cfg)


def lossy_detectors(efficiency=0.1, dark=1e-5):
    cfg = DetectorConfig(base_efficiency=efficiency, dark_count_prob=dark)
    return (cfg, cfg)


def mismatched_detectors(efficiency=1.0, dark=0.0):
    early, late = mismatched_curves()
    return (
        DetectorConfig(base_efficiency=efficiency, dark_count_prob=dark,
                       efficiency_curve=early),
        DetectorConfig(base_efficiency=efficiency, dark_count_prob=dark,
                       efficiency_curve=late),
    )


def single_photon_source():
    return SourceConfig(kind="single-photon", mean_photon_number=1.0)


def coherent_source(mean=0.5):
    return SourceConfig(kind="weak-coherent", mean_photon_number=mean)


def lossless_channel():
    return ChannelConfig(length_km=0.0)


def run_ideal(pulse_count, seed, attack=None, variant="bb84", bias=0.5,
              encoding="polarization", detectors=None):
    protocol = ProtocolConfig(variant=variant, encoding=encoding,
                              basis_bias=bias, pulse_count=pulse_count)
    return run_session(
        protocol, None, single_photon_source(), lossless_channel(),
        detectors if detectors is not None else ideal_detectors(),
        attack, np.random.default_rng(seed),
    )


# The ten-pulse textbook run: bits, bases (0 rectilinear, 1 diagonal),
# everything detected, giving the five-bit sifted key 0,1,0,0,1 at
# one-indexed positions 1, 4, 7, 9, 10.
EXAMPLE_ALICE_BITS = [0, 1, 1, 1, 0, 1, 0, 0, 0, 1]
EXAMPLE_ALICE_BASES = [0, 1, 0, 0, 1, 0, 1, 1, 0, 1]
EXAMPLE_BOB_BASES = [0, 0, 1, 0, 0, 1, 1, 0, 0, 1]
EXAMPLE_BOB_BITS = [0, 1, 1, 1, 0, 0, 0, 1, 0, 1]


def example_transcript():
    return replay_session(
        ProtocolConfig(pulse_count=10),
        alice_bits=EXAMPLE_ALICE_BITS,
        alice_bases=EXAMPLE_ALICE_BASES,
        bob_bases=EXAMPLE_BOB_BASES,
        clicked=[1] * 10,
        bob_bits=EXAMPLE_BOB_BITS,
    )


class TestWorkedExample:
    def test_sifted_positions_and_bits(self):
        transcript = example_transcript()
        assert transcript.sifted_indices.tolist() == [0, 3, 6, 8, 9]
        assert transcript.bob_bits[transcript.sifted_indices].tolist() == [0, 1, 0, 0, 1]

    def test_sift_agrees_on_both_sides(self):
        key = sift(example_transcript())
        assert key.stage == "raw"
        assert key.alice_bits.tolist() == [0, 1, 0, 0, 1]
        assert key.bob_bits.tolist() == [0, 1, 0, 0, 1]
        assert key.error_rate == 0.0
        assert key.eve_known_fraction == 0.0

    def test_replay_is_deterministic(self):
        a = example_transcript()
        b = example_transcript()
        assert np.array_equal(a.bob_bits, b.bob_bits)
        assert np.array_equal(a.sifted_indices, b.sifted_indices)

    def test_export_lines_format(self):
        lines = list(example_transcript().export_lines())
        assert len(lines) == 10
        assert lines[0] == "0, R, 0, signal, R, 1, 0"
        assert lines[1] == "1, D, 1, signal, R, 1, 1"

    def test_export_marks_missing_outcomes(self):
        transcript = replay_session(
            ProtocolConfig(pulse_count=2),
            alice_bits=[0, 1], alice_bases=[0, 1],
            bob_bases=[0, 0], clicked=[0, 1], bob_bits=[-1, 0],
        )
        lines = list(transcript.export_lines())
        assert lines[0].endswith("R, 0, -")

    def test_detection_event_fields(self):
        transcript = example_transcript()
        event = transcript.detection(3)
        assert event.pulse_index == 3
        assert event.clicked
        assert event.detector_id == 1
        assert not event.double_click
        assert event.cause == "photon"

    def test_replay_rejects_contradictory_matched_outcome(self):
        with pytest.raises(ProtocolError, match="matched-basis"):
            replay_session(
                ProtocolConfig(pulse_count=2),
                alice_bits=[0, 1], alice_bases=[0, 0],
                bob_bases=[0, 0], clicked=[1, 1], bob_bits=[1, 1],
            )

    def test_replay_rejects_bit_without_click(self):
        with pytest.raises(ProtocolError, match="clicked"):
            replay_session(
                ProtocolConfig(pulse_count=2),
                alice_bits=[0, 1], alice_bases=[0, 0],
                bob_bases=[0, 0], clicked=[0, 1], bob_bits=[0, 1],
            )

    def test_replay_rejects_length_mismatch_with_protocol(self):
        with pytest.raises(ProtocolError, match="pulse"):
            replay_session(
                ProtocolConfig(pulse_count=3),
                alice_bits=[0, 1], alice_bases=[0, 0],
                bob_bases=[0, 0], clicked=[1, 1], bob_bits=[0, 1],
            )


class TestProtocolConfigValidation:
    def test_defaults_are_plain_bb84(self):
        cfg = ProtocolConfig()
        assert cfg.variant == "bb84"
        assert cfg.abort_qber == pytest.approx(0.11)

    @pytest.mark.parametrize("kwargs", [
        {"variant": "b92"},
        {"encoding": "frequency"},
        {"basis_bias": 0.0},
        {"basis_bias": 1.0},
        {"test_fraction": 0.0},
        {"test_fraction": 1.0},
        {"abort_qber": 0.0},
        {"abort_qber": 0.6},
        {"pulse_count": 0},
        {"variant": "bb84", "basis_bias": 0.9},
        {"variant": "six-state", "encoding": "phase"},
        {"variant": "entanglement-bb84", "encoding": "phase"},
        {"entanglement_source": "bob"},
    ])
    def test_rejects_bad_configuration(self, kwargs):
        with pytest.raises(ProtocolError):
            ProtocolConfig(**kwargs)

    def test_efficient_variant_takes_any_bias(self):
        cfg = ProtocolConfig(variant="efficient-bb84", basis_bias=0.9)
        assert cfg.basis_bias == pytest.approx(0.9)


class TestDecoyConfigValidation:
    def test_vacuum_weak_layout(self):
        decoy = DecoyConfig.vacuum_weak()
        assert decoy.labels == ("signal", "weak", "vacuum")
        assert decoy.means == (0.5, 0.1, 0.0)
        assert decoy.signal.label == "signal"
        assert sum(c.probability for c in decoy.intensity_classes) == pytest.approx(1.0)

    def test_cumulative_probabilities_end_at_one(self):
        decoy = DecoyConfig.vacuum_weak()
        assert decoy.cumulative_probabilities()[-1] == pytest.approx(1.0)

    @pytest.mark.parametrize("classes,signal", [
        ((), "signal"),
        ((("signal", 0.5, 0.5), ("signal", 0.1, 0.5)), "signal"),
        ((("signal", 0.5, 0.5), ("weak", 0.1, 0.4)), "signal"),
        ((("signal", 0.5, 0.5), ("weak", 0.5, 0.5)), "signal"),
        ((("signal", 0.5, 1.5), ("weak", 0.1, -0.5)), "signal"),
        ((("signal", 0.0, 1.0),), "signal"),
        ((("signal", 0.5, 1.0),), "missing"),
    ])
    def test_rejects_bad_layout(self, classes, signal):
        with pytest.raises(ProtocolError):
            DecoyConfig(classes, signal)

    def test_by_label_unknown(self):
        with pytest.raises(ProtocolError):
            DecoyConfig.vacuum_weak().by_label("bright")


class TestSiftingStatistics:
    def test_ideal_session_has_zero_error(self):
        transcript = run_ideal(100_000, seed=11)
        key = sift(transcript)
        assert key.error_rate == 0.0
        assert key.length == transcript.sifted_count

    def test_unbiased_sifted_fraction_near_half(self):
        transcript = run_ideal(200_000, seed=12)
        fraction = transcript.sifted_count / transcript.detected_count
        assert 0.48 <= fraction <= 0.52

    def test_efficient_bias_sifted_fraction(self):
        # Matched-basis probability at bias b is b^2 + (1-b)^2.
        transcript = run_ideal(200_000, seed=13, variant="efficient-bb84", bias=0.9)
        fraction = transcript.sifted_count / transcript.detected_count
        assert 0.81 <= fraction <= 0.83

    def test_six_state_sifted_fraction_near_third(self):
        transcript = run_ideal(200_000, seed=14, variant="six-state")
        fraction = transcript.sifted_count / transcript.detected_count
        sigma = math.sqrt((1 / 3) * (2 / 3) / transcript.detected_count)
        assert abs(fraction - 1 / 3) < 4 * sigma

    def test_six_state_ideal_error_free(self):
        key = sift(run_ideal(50_000, seed=15, variant="six-state"))
        assert key.error_rate == 0.0

    def test_basis_codes_cover_six_state(self):
        transcript = run_ideal(30_000, seed=16, variant="six-state")
        assert set(np.unique(transcript.alice_bases)) == {0, 1, 2}

    def test_phase_encoding_matches_polarization_statistics(self):
        transcript = run_ideal(100_000, seed=17, encoding="phase")
        key = sift(transcript)
        assert key.error_rate == 0.0
        fraction = transcript.sifted_count / transcript.detected_count
        assert 0.48 <= fraction <= 0.52

    def test_mismatched_bases_are_coin_flips(self):
        transcript = run_ideal(200_000, seed=18)
        mismatched = transcript.clicked & (transcript.alice_bases != transcript.bob_bases)
        agree = np.mean(
            transcript.bob_bits[mismatched] == transcript.alice_bits[mismatched]
        )
        sigma = math.sqrt(0.25 / np.count_nonzero(mismatched))
        assert abs(agree - 0.5) < 4 * sigma


class TestInterceptResend:
    def test_qber_near_one_quarter(self):
        transcript = run_ideal(500_000, seed=21, attack=InterceptResend())
        key = sift(transcript)
        assert key.length >= 100_000
        assert 0.24 <= key.error_rate <= 0.26

    def test_partial_fraction_scales_qber(self):
        transcript = run_ideal(400_000, seed=22, attack=InterceptResend(fraction=0.4))
        key = sift(transcript)
        sigma = math.sqrt(0.1 * 0.9 / key.length)
        assert abs(key.error_rate - 0.1) < 4 * sigma

    def test_mutual_information_matches_binary_channel(self):
        # Eve guesses the sifted bit correctly with probability 3/4, so
        # her per-bit information is 1 - H2(1/4).
        transcript = run_ideal(400_000, seed=23, attack=InterceptResend())
        expected = 1.0 - binary_entropy(0.25)
        assert eve_mutual_information(transcript) == pytest.approx(expected, abs=0.01)

    def test_no_attack_no_information(self):
        transcript = run_ideal(50_000, seed=24)
        assert eve_mutual_information(transcript) == 0.0

    def test_fraction_zero_matches_no_attack_exactly(self):
        baseline = run_ideal(100_000, seed=25)
        silent = run_ideal(100_000, seed=25, attack=InterceptResend(fraction=0.0))
        for name in ("alice_bits", "alice_bases", "bob_bases", "clicked", "bob_bits"):
            assert np.array_equal(getattr(baseline, name), getattr(silent, name))
        assert silent.eve_side_information is not None
        assert not silent.eve_side_information.attacked.any()


class TestTestBitSelection:
    def test_positions_uniform_chi_squared(self):
        key = KeyMaterial(np.zeros(50, dtype=np.uint8), np.zeros(50, dtype=np.uint8))
        rng = np.random.default_rng(31)
        counts = np.zeros(50)
        rounds = 10_000
        for _ in range(rounds):
            test, _ = select_test_bits(key, 0.2, rng)
            counts[test] += 1
        expected = rounds * 10 / 50
        statistic = float(np.sum((counts - expected) ** 2 / expected))
        p_value = stats.chi2.sf(statistic, df=49)
        assert p_value > 0.001

    def test_disclosed_rows_match_key(self):
        rng = np.random.default_rng(32)
        alice = rng.integers(0, 2, 1000, dtype=np.uint8)
        bob = alice ^ (rng.random(1000) < 0.1)
        key = KeyMaterial(alice, bob.astype(np.uint8))
        test, disclosed = select_test_bits(key, 0.25, rng)
        assert disclosed.shape == (2, 250)
        assert np.array_equal(disclosed[0], alice[test])
        assert np.array_equal(disclosed[1], bob[test])

    def test_estimate_agrees_with_remainder(self):
        transcript = run_ideal(400_000, seed=33, attack=InterceptResend())
        key = sift(transcript)
        test, disclosed = select_test_bits(key, 0.3, np.random.default_rng(34))
        q_test = estimate_qber(disclosed[0], disclosed[1])
        remaining = key.drop(test)
        q_rest = remaining.error_rate
        pooled = key.error_rate
        sigma = math.sqrt(pooled * (1 - pooled) * (1 / test.size + 1 / remaining.length))
        assert abs(q_test - q_rest) < 4 * sigma

    @pytest.mark.parametrize("n,fraction", [(0, 0.5), (10, 0.01), (3, 0.9)])
    def test_degenerate_samples_rejected(self, n, fraction):
        key = KeyMaterial(np.zeros(n, dtype=np.uint8), np.zeros(n, dtype=np.uint8))
        with pytest.raises(ProtocolError, match="degenerate|fraction"):
            select_test_bits(key, fraction, np.random.default_rng(35))

    def test_estimate_qber_validation(self):
        with pytest.raises(ProtocolError):
            estimate_qber([0, 1], [0])
        with pytest.raises(ProtocolError):
            estimate_qber([], [])
        assert estimate_qber([0, 1, 1, 0], [0, 0, 1, 1]) == pytest.approx(0.5)


class TestSessionEngine:
    def test_gain_matches_poisson_channel_model(self):
        # Click probability for a gated pair with per-gate dark rate d:
        # 1 - exp(-mu*eta*eff) * (1-d)^2.
        mu, eta, eff, dark = 0.5, 0.3, 0.2, 1e-4
        protocol = ProtocolConfig(pulse_count=400_000)
        channel = ChannelConfig(excess_transmittance_override=eta)
        detectors = lossy_detectors(efficiency=eff, dark=dark)
        transcript = run_session(
            protocol, None, coherent_source(mu), channel, detectors,
            None, np.random.default_rng(41),
        )
        observed = np.mean(transcript.clicked)
        expected = 1.0 - math.exp(-mu * eta * eff) * (1.0 - dark) ** 2
        sigma = math.sqrt(expected * (1 - expected) / transcript.pulse_count)
        assert abs(observed - expected) < 4 * sigma

    def test_multi_photon_fraction_of_weak_source(self):
        transcript = run_session(
            ProtocolConfig(pulse_count=500_000), None, coherent_source(0.1),
            lossless_channel(), ideal_detectors(), None,
            np.random.default_rng(42),
        )
        fraction = np.mean(transcript.photon_numbers >= 2)
        assert 0.0042 <= fraction <= 0.0052

    def test_seed_reproducibility(self):
        a = run_ideal(50_000, seed=43)
        b = run_ideal(50_000, seed=43)
        assert np.array_equal(a.bob_bits, b.bob_bits)
        assert np.array_equal(a.photon_numbers, b.photon_numbers)

    def test_multi_chunk_sessions_stay_consistent(self, monkeypatch):
        # Force several small chunks and check the stitched transcript:
        # deterministic per seed, error-free on an ideal line, and with
        # the same sifting statistics as the single-chunk path.
        import qkdsim.protocols as mod
        monkeypatch.setattr(mod, "CHUNK_PULSES", 7_000)
        first = run_ideal(30_000, seed=44)
        second = run_ideal(30_000, seed=44)
        for name in ("alice_bits", "alice_bases", "bob_bases", "clicked", "bob_bits"):
            assert np.array_equal(getattr(first, name), getattr(second, name))
        assert first.pulse_count == 30_000
        assert sift(first).error_rate == 0.0
        fraction = first.sifted_count / first.detected_count
        assert 0.47 <= fraction <= 0.53

    def test_transcript_arrays_read_only(self):
        transcript = run_ideal(1_000, seed=45)
        with pytest.raises(ValueError):
            transcript.bob_bits[0] = 1

    def test_with_test_selection_leaves_original(self):
        transcript = run_ideal(10_000, seed=46)
        key = sift(transcript)
        test, disclosed = select_test_bits(key, 0.2, np.random.default_rng(47))
        updated = transcript.with_test_selection(test, disclosed)
        assert transcript.test_indices.size == 0
        assert updated.test_indices.size == test.size
        assert np.array_equal(updated.disclosed_test_bits, disclosed)

    def test_rejects_plain_randomstate(self):
        with pytest.raises(ProtocolError, match="Generator"):
            run_session(
                ProtocolConfig(pulse_count=10), None, single_photon_source(),
                lossless_channel(), ideal_detectors(), None,
                np.random.RandomState(1),
            )

    def test_decoy_requires_weak_coherent_source(self):
        with pytest.raises(ProtocolError, match="weak-coherent"):
            run_session(
                ProtocolConfig(pulse_count=10), DecoyConfig.vacuum_weak(),
                single_photon_source(), lossless_channel(), ideal_detectors(),
                None, np.random.default_rng(48),
            )

    def test_decoy_signal_mean_must_match_source(self):
        with pytest.raises(ProtocolError, match="mean"):
            run_session(
                ProtocolConfig(pulse_count=10), DecoyConfig.vacuum_weak(),
                coherent_source(0.4), lossless_channel(), ideal_detectors(),
                None, np.random.default_rng(49),
            )

    def test_six_state_rejects_attack(self):
        with pytest.raises(ProtocolError, match="bb84"):
            run_session(
                ProtocolConfig(variant="six-state", pulse_count=10), None,
                single_photon_source(), lossless_channel(), ideal_detectors(),
                InterceptResend(), np.random.default_rng(50),
            )


class TestEntanglementVariant:
    def run(self, seed, placement, eta=0.25, pulses=200_000):
        protocol = ProtocolConfig(
            variant="entanglement-bb84", pulse_count=pulses,
            entanglement_source=placement,
        )
        return run_session(
            protocol, None,
            SourceConfig(kind="entangled-pair", mean_photon_number=1.0),
            ChannelConfig(excess_transmittance_override=eta),
            ideal_detectors(), None, np.random.default_rng(seed),
        )

    def test_midpoint_splits_loss_between_arms(self):
        transcript = self.run(seed=51, placement="midpoint")
        alice_rate = np.mean(transcript.alice_detected)
        bob_rate = np.mean(transcript.clicked)
        assert alice_rate == pytest.approx(0.5, abs=0.01)
        assert bob_rate == pytest.approx(0.5, abs=0.01)

    def test_source_in_alice_lab_keeps_her_arm_lossless(self):
        transcript = self.run(seed=52, placement="alice")
        assert np.all(transcript.alice_detected)
        assert np.mean(transcript.clicked) == pytest.approx(0.25, abs=0.01)

    def test_coincidences_are_perfectly_correlated(self):
        transcript = self.run(seed=53, placement="midpoint")
        key = sift(transcript)
        assert key.length > 10_000
        assert key.error_rate == 0.0

    def test_undetected_alice_pulses_never_sift(self):
        transcript = self.run(seed=54, placement="midpoint")
        assert np.all(transcript.alice_detected[transcript.sifted_indices])
        lost = ~transcript.alice_detected
        assert np.all(transcript.alice_bits[lost] == -1)

    def test_requires_pair_source(self):
        with pytest.raises(ProtocolError, match="entangled-pair"):
            run_session(
                ProtocolConfig(variant="entanglement-bb84", pulse_count=10),
                None, coherent_source(), lossless_channel(), ideal_detectors(),
                None, np.random.default_rng(55),
            )

    def test_rejects_decoy_and_attack(self):
        protocol = ProtocolConfig(variant="entanglement-bb84", pulse_count=10)
        source = SourceConfig(kind="entangled-pair", mean_photon_number=1.0)
        with pytest.raises(ProtocolError, match="decoy"):
            run_session(protocol, DecoyConfig.vacuum_weak(), source,
                        lossless_channel(), ideal_detectors(), None,
                        np.random.default_rng(56))
        with pytest.raises(ProtocolError, match="attack"):
            run_session(protocol, None, source, lossless_channel(),
                        ideal_detectors(), InterceptResend(),
                        np.random.default_rng(57))


def run_decoy_session(seed, mu=0.5, pulses=2_000_000, length_km=20.0, eta=None,
                      detectors=None):
    protocol = ProtocolConfig(pulse_count=pulses)
    decoy = DecoyConfig.vacuum_weak(signal_mean=mu)
    channel = (ChannelConfig(excess_transmittance_override=eta)
               if eta is not None else ChannelConfig(length_km=length_km))
    transcript = run_session(
        protocol, decoy, coherent_source(mu), channel,
        detectors if detectors is not None else lossy_detectors(),
        None, np.random.default_rng(seed),
    )
    return transcript, decoy


class TestDecoyYields:
    def test_class_shares_match_probabilities(self):
        transcript, decoy = run_decoy_session(seed=61, pulses=500_000)
        table = decoy_yields(transcript)
        for row, cls in zip(table.classes, decoy.intensity_classes):
            share = row.pulses_sent / transcript.pulse_count
            sigma = math.sqrt(cls.probability * (1 - cls.probability)
                              / transcript.pulse_count)
            assert abs(share - cls.probability) < 4 * sigma

    def test_gains_ordered_by_intensity(self):
        transcript, _ = run_decoy_session(seed=62, pulses=500_000)
        table = decoy_yields(transcript)
        assert table.by_label("signal").gain > table.by_label("weak").gain
        assert table.by_label("weak").gain > table.by_label("vacuum").gain

    def test_dark_clicks_err_at_one_quarter_per_click(self):
        transcript, _ = run_decoy_session(
            seed=63, pulses=600_000,
            detectors=lossy_detectors(efficiency=0.1, dark=5e-3),
        )
        vacuum = decoy_yields(transcript).by_label("vacuum")
        assert vacuum.clicks > 500
        sigma = math.sqrt(0.25 * 0.75 / vacuum.clicks)
        assert abs(vacuum.error_rate_per_click - 0.25) < 4 * sigma
        sifted_sigma = math.sqrt(0.25 / vacuum.sifted)
        assert abs(vacuum.error_rate_sifted - 0.5) < 4 * sifted_sigma

    def test_hidden_tallies_sum_to_totals(self):
        transcript, _ = run_decoy_session(seed=64, pulses=300_000)
        for row in decoy_yields(transcript).classes:
            assert row.photon_pulses.sum() == row.pulses_sent
            assert row.photon_clicks.sum() == row.clicks
            assert row.photon_sifted.sum() == row.sifted
            assert row.photon_errors.sum() == row.errors

    def test_true_single_photon_yield_tracks_channel(self):
        eta_total = 0.1 * 10 ** (-0.21 * 20 / 10)
        transcript, _ = run_decoy_session(seed=65, pulses=2_000_000)
        table = decoy_yields(transcript)
        truth = table.true_single_photon_yield()
        assert truth == pytest.approx(eta_total, rel=0.1)

    def test_counts_invariant_enforced(self):
        with pytest.raises(ProtocolError, match="counts"):
            ClassYield("x", 0.5, 100, 50, 60, 10,
                       np.array([100]), np.array([50]),
                       np.array([50]), np.array([10]))

    def test_unused_class_rejected(self):
        transcript = run_ideal(1_000, seed=66)
        broken = SessionTranscript(
            variant=transcript.variant,
            encoding=transcript.encoding,
            alice_bits=transcript.alice_bits,
            alice_bases=transcript.alice_bases,
            intensity_index=transcript.intensity_index,
            class_labels=("signal", "ghost"),
            class_means=(1.0, 0.2),
            signal_label="signal",
            photon_numbers=transcript.photon_numbers,
            bob_bases=transcript.bob_bases,
            clicked=transcript.clicked,
            double=transcript.double,
            cause=transcript.cause,
            bob_bits=transcript.bob_bits,
            alice_detected=transcript.alice_detected,
        )
        with pytest.raises(ProtocolError, match="no pulses"):
            decoy_yields(broken)


def ideal_yield_table(mu, nu, eta, pulses=10 ** 15):
    """Synthetic loss-only yields with negligible sampling error."""
    def row(label, mean):
        gain = 1.0 - math.exp(-eta * mean)
        clicks = round(gain * pulses)
        return ClassYield(
            label, mean, pulses, clicks, clicks // 2, 0,
            np.array([pulses]), np.array([clicks]),
            np.array([clicks // 2]), np.array([0]),
        )
    table = YieldTable(
        (row("signal", mu), row("weak", nu), row("vacuum", 0.0)), "signal")
    decoy = DecoyConfig(
        (("signal", mu, 0.7), ("weak", nu, 0.15), ("vacuum", 0.0, 0.15)),
        "signal")
    return table, decoy


class TestDecoyEstimate:
    def test_lossless_channel_bound_is_tight(self):
        # With every photon detected the vacuum-only bound reaches the
        # true single-photon yield of one exactly.
        table, decoy = ideal_yield_table(mu=0.5, nu=0.1, eta=1.0)
        y1, e1 = decoy_estimate(table, decoy, confidence_sigmas=0.0)
        assert y1 == pytest.approx(1.0, abs=1e-9)
        assert e1 == pytest.approx(0.0, abs=1e-12)

    def test_half_transparent_channel_frozen_value(self):
        # Closed form of the vacuum-plus-weak bound at eta = 1/2:
        # (mu/(mu*nu - nu^2)) * ((e^nu - e^(nu/2)) - (e^mu - e^(mu/2)) nu^2/mu^2)
        # evaluates to 0.4913998 and stays below the true yield 1/2.
        table, decoy = ideal_yield_table(mu=0.5, nu=0.1, eta=0.5)
        y1, _ = decoy_estimate(table, decoy, confidence_sigmas=0.0)
        expected = (0.5 / (0.05 - 0.01)) * (
            (math.exp(0.1) - math.exp(0.05))
            - (math.exp(0.5) - math.exp(0.25)) * 0.04
        )
        assert expected == pytest.approx(0.4913998, abs=5e-7)
        assert y1 == pytest.approx(expected, abs=1e-6)
        assert y1 < 0.5

    def test_collapsed_bound_returns_vacuous_pair(self):
        rows = []
        for label, mean, clicks in (("signal", 0.5, 1), ("weak", 0.1, 0),
                                    ("vacuum", 0.0, 0)):
            rows.append(ClassYield(
                label, mean, 1000, clicks, 0, 0,
                np.array([1000]), np.array([clicks]),
                np.array([0]), np.array([0])))
        decoy = DecoyConfig(
            (("signal", 0.5, 0.7), ("weak", 0.1, 0.15), ("vacuum", 0.0, 0.15)),
            "signal")
        assert decoy_estimate(YieldTable(tuple(rows), "signal"), decoy) == (0.0, 1.0)

    def test_crossing_error_bounds_raise(self):
        def row(label, mean, gain, errors=0):
            clicks = round(gain * 1_000_000)
            return ClassYield(
                label, mean, 1_000_000, clicks, clicks // 2, errors,
                np.array([1_000_000]), np.array([clicks]),
                np.array([clicks // 2]), np.array([errors]))
        table = YieldTable(
            (row("signal", 0.5, 0.9), row("weak", 0.1, 0.5),
             row("vacuum", 0.0, 0.4)), "signal")
        decoy = DecoyConfig(
            (("signal", 0.5, 0.7), ("weak", 0.1, 0.15), ("vacuum", 0.0, 0.15)),
            "signal")
        with pytest.raises(DecoyEstimateError, match="cross"):
            decoy_estimate(table, decoy, confidence_sigmas=0.0)

    def test_missing_vacuum_class(self):
        table, _ = ideal_yield_table(0.5, 0.1, 0.5)
        two = YieldTable(table.classes[:2], "signal")
        decoy = DecoyConfig((("signal", 0.5, 0.8), ("weak", 0.1, 0.2)), "signal")
        with pytest.raises(DecoyEstimateError, match="vacuum"):
            decoy_estimate(two, decoy)

    def test_missing_weak_class(self):
        table, _ = ideal_yield_table(0.5, 0.1, 0.5)
        two = YieldTable((table.classes[0], table.classes[2]), "signal")
        decoy = DecoyConfig((("signal", 0.5, 0.8), ("vacuum", 0.0, 0.2)), "signal")
        with pytest.raises(DecoyEstimateError, match="weaker"):
            decoy_estimate(two, decoy)

    def test_mismatched_decoy_config_rejected(self):
        table, _ = ideal_yield_table(0.5, 0.1, 0.5)
        other = DecoyConfig(
            (("signal", 0.5, 0.7), ("weak", 0.2, 0.15), ("vacuum", 0.0, 0.15)),
            "signal")
        with pytest.raises(ProtocolError, match="disagree"):
            decoy_estimate(table, other)

    def test_brackets_hidden_truth_on_random_scenarios(self):
        rng = np.random.default_rng(71)
        for trial in range(20):
            eta = float(rng.uniform(0.05, 1.0))
            mu = float(rng.uniform(0.2, 1.0))
            transcript, decoy = run_decoy_session(
                seed=1000 + trial, mu=mu, pulses=400_000, eta=eta,
                detectors=lossy_detectors(efficiency=1.0, dark=1e-5),
            )
            table = decoy_yields(transcript)
            y1_lower, e1_upper = decoy_estimate(table, decoy)
            y1_true = table.true_single_photon_yield()
            e1_true = table.true_single_photon_error_rate()
            assert y1_lower <= y1_true + 1e-12, (trial, eta, mu)
            assert e1_upper >= e1_true - 1e-12, (trial, eta, mu)


class TestKeyRate:
    def test_error_free_non_decoy_rate_equals_single_gain(self):
        table, _ = ideal_yield_table(mu=0.05, nu=0.01, eta=1.0)
        signal = table.signal
        multi = 1.0 - math.exp(-0.05) * 1.05
        expected = signal.gain - multi
        rate = key_rate_estimate(table, mode="non-decoy")
        assert rate == pytest.approx(expected, rel=1e-9)

    def test_decoy_mode_uses_bounds(self):
        table, decoy = ideal_yield_table(mu=0.5, nu=0.1, eta=0.5)
        bounds = decoy_estimate(table, decoy, confidence_sigmas=0.0)
        rate = key_rate_estimate(table, bounds, mode="decoy")
        expected = bounds[0] * 0.5 * math.exp(-0.5)
        assert rate == pytest.approx(expected, rel=1e-9)

    def test_decoy_mode_requires_bounds(self):
        table, _ = ideal_yield_table(0.5, 0.1, 0.5)
        with pytest.raises(ProtocolError, match="bounds"):
            key_rate_estimate(table, mode="decoy")

    def test_high_error_rate_gives_zero(self):
        def row(label, mean, clicks, errors):
            return ClassYield(
                label, mean, 10_000, clicks, clicks, errors,
                np.array([10_000]), np.array([clicks]),
                np.array([clicks]), np.array([errors]))
        table = YieldTable(
            (row("signal", 0.5, 4000, 1000), row("weak", 0.1, 900, 200),
             row("vacuum", 0.0, 10, 5)), "signal")
        assert key_rate_estimate(table, (0.5, 0.25), mode="decoy") == 0.0

    def test_rate_decreases_with_channel_loss(self):
        rates = []
        for eta in (0.8, 0.4, 0.2):
            table, decoy = ideal_yield_table(mu=0.5, nu=0.1, eta=eta)
            bounds = decoy_estimate(table, decoy, confidence_sigmas=0.0)
            rates.append(key_rate_estimate(table, bounds, mode="decoy"))
        assert rates[0] > rates[1] > rates[2] > 0.0

    def test_efficiency_below_shannon_rejected(self):
        table, _ = ideal_yield_table(0.5, 0.1, 0.5)
        with pytest.raises(ProtocolError, match="Shannon"):
            key_rate_estimate(table, mode="non-decoy",
                              error_correction_efficiency=0.9)

    def test_mode_validation(self):
        table, _ = ideal_yield_table(0.5, 0.1, 0.5)
        with pytest.raises(ProtocolError, match="mode"):
            key_rate_estimate(table, mode="asymptotic")


class TestHelperFunctions:
    def test_binary_entropy_endpoints_and_symmetry(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0
        assert binary_entropy(0.5) == pytest.approx(1.0)
        assert binary_entropy(0.11) == pytest.approx(binary_entropy(0.89))
        p = 0.11
        by_hand = -p * math.log2(p) - (1 - p) * math.log2(1 - p)
        assert binary_entropy(p) == pytest.approx(by_hand, abs=1e-12)

    def test_binary_entropy_array_input(self):
        values = binary_entropy(np.array([0.0, 0.25, 0.5]))
        assert values.shape == (3,)
        assert values[2] == pytest.approx(1.0)

    def test_binary_entropy_domain(self):
        with pytest.raises(ProtocolError):
            binary_entropy(1.5)

    def test_suggested_means(self):
        assert suggested_signal_mean("decoy", 0.1) == pytest.approx(0.5)
        assert suggested_signal_mean("non-decoy", 0.037) == pytest.approx(0.037)
        assert suggested_signal_mean("non-decoy", 1.0) == pytest.approx(0.9)
        with pytest.raises(ProtocolError):
            suggested_signal_mean("magic", 0.5)
        with pytest.raises(ProtocolError):
            suggested_signal_mean("decoy", 0.0)


class TestAttackIntegration:
    def test_pns_marks_certain_knowledge(self):
        attack = PhotonNumberSplitting(suppression=0.0)
        transcript = run_session(
            ProtocolConfig(pulse_count=400_000), None, coherent_source(0.5),
            lossless_channel(), ideal_detectors(), attack,
            np.random.default_rng(81),
        )
        key = sift(transcript)
        assert key.eve_known_fraction > 0.1
        assert key.error_rate == 0.0
        log = transcript.eve_side_information
        known_sifted = log.known[transcript.sifted_indices]
        guesses = log.guess[transcript.sifted_indices]
        alice = transcript.alice_bits[transcript.sifted_indices]
        assert np.all(guesses[known_sifted] == alice[known_sifted])

    def test_faked_state_error_rate_with_mismatch(self):
        attack = FakedState()
        transcript = run_session(
            ProtocolConfig(pulse_count=600_000), None, single_photon_source(),
            lossless_channel(), mismatched_detectors(), attack,
            np.random.default_rng(82),
        )
        key = sift(transcript)
        expected = 2.0 / 13.0
        sigma = math.sqrt(expected * (1 - expected) / key.length)
        assert abs(key.error_rate - expected) < 4 * sigma

    def test_time_shift_compensation_restores_gain(self):
        detectors = mismatched_detectors(efficiency=1.0)
        channel = ChannelConfig(excess_transmittance_override=0.2)
        attack = TimeShift()
        compensated = TimeShift(
            compensation_factor=attack.suggested_compensation(detectors))
        protocol = ProtocolConfig(pulse_count=400_000)

        def gain(strategy, seed):
            transcript = run_session(
                protocol, None, single_photon_source(), channel, detectors,
                strategy, np.random.default_rng(seed))
            return np.mean(transcript.clicked), transcript.pulse_count

        base_gain, n = gain(None, 83)
        shifted_gain, _ = gain(attack, 84)
        fixed_gain, _ = gain(compensated, 85)
        assert shifted_gain < 0.8 * base_gain
        sigma = math.sqrt(2 * base_gain * (1 - base_gain) / n)
        assert abs(fixed_gain - base_gain) < 4 * sigma

    def test_phase_remap_needs_phase_encoding(self):
        with pytest.raises(Exception, match="phase"):
            run_ideal(1_000, seed=86, attack=PhaseRemap(angle_a=math.pi / 4))

    def test_phase_remap_error_rate_oracle(self):
        # Sifted error rate under a remap to angle a is (2 - sin a)/4.
        angle = math.pi / 4
        transcript = run_ideal(
            400_000, seed=87, encoding="phase",
            attack=PhaseRemap(angle_a=angle))
        key = sift(transcript)
        expected = (2.0 - math.sin(angle)) / 4.0
        sigma = math.sqrt(expected * (1 - expected) / key.length)
        assert abs(key.error_rate - expected) < 4 * sigma

    def test_information_tracks_disturbance_per_strategy(self):
        # More aggressive eavesdropping must buy more information: over a
        # fraction grid, Eve's mutual information and the sifted error
        # rate move together (rank correlation above 0.9).
        fractions = np.linspace(0.1, 1.0, 10)
        pooled = {}
        for name, make, encoding in (
            ("intercept-resend", lambda f: InterceptResend(fraction=f),
             "polarization"),
            ("phase-remap",
             lambda f: PhaseRemap(fraction=f, angle_a=math.pi / 3), "phase"),
        ):
            qbers, infos = [], []
            for k, fraction in enumerate(fractions):
                transcript = run_ideal(
                    120_000, seed=900 + 17 * k, encoding=encoding,
                    attack=make(float(fraction)))
                qbers.append(sift(transcript).error_rate)
                infos.append(eve_mutual_information(transcript))
            rho = stats.spearmanr(qbers, infos).statistic
            assert rho > 0.9, name
            pooled[name] = (qbers, infos)
        all_q = pooled["intercept-resend"][0] + pooled["phase-remap"][0]
        all_i = pooled["intercept-resend"][1] + pooled["phase-remap"][1]
        assert stats.spearmanr(all_q, all_i).statistic > 0.9
