import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gilbench.dynamics import (
    DivergenceError, DomainError, Kind, PointAttractorConfig, SeededSampler, Trajectory,
    TrajectoryParseError, VanDerPolConfig, attractor, gen_figure_eight, gen_point_attractor,
    gen_van_der_pol, load_trajectory, sample_initials, save_trajectory,
)

coord = st.floats(-3.0, 3.0, allow_nan=False)


# -- point attractor ---------------------------------------------------------

def test_point_origin_is_fixed():
    traj = gen_point_attractor(PointAttractorConfig(), (0.0, 0.0))
    assert len(traj) == 101
    assert np.all(traj.points == 0.0)


def test_point_first_step_matches_high_precision_value():
    # mpmath, 40 digits: 3 * exp(-0.05)
    traj = gen_point_attractor(PointAttractorConfig(alpha=-1.0, dt=0.05), (3.0, 0.0))
    assert traj[1][0] == pytest.approx(2.853688273502142, rel=0, abs=1e-15)
    assert traj[1][1] == 0.0


@pytest.mark.parametrize("x,alpha,k", [(3.0, -1.0, 1), (-2.5, -0.3, 77), (1.0, -2.0, 100)])
def test_point_matches_high_precision_closed_form(x, alpha, k):
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 40
    want = float(mpmath.mpf(x) * mpmath.exp(mpmath.mpf(alpha) * k * mpmath.mpf(0.05)))
    got = gen_point_attractor(PointAttractorConfig(alpha=alpha), (x, 0.0))[k][0]
    assert got == pytest.approx(want, rel=4e-15)


def test_point_total_contraction_is_e_minus_5():
    traj = gen_point_attractor(PointAttractorConfig(), (3.0, 3.0))
    ratio = np.linalg.norm(traj[100]) / np.linalg.norm(traj[0])
    assert ratio == pytest.approx(0.006737946999085467, rel=1e-14)


@given(coord, coord)
def test_point_norm_strictly_decreases(x, y):
    # below ~1e-300 the decayed values fall into the subnormal range and stall
    assume(max(abs(x), abs(y)) > 1e-300)
    pts = gen_point_attractor(PointAttractorConfig(), (x, y)).points
    norms = np.hypot(pts[:, 0], pts[:, 1])
    assert np.all(np.diff(norms) < 0)


@given(coord, coord, st.floats(-2.0, -0.1))
def test_point_matches_closed_form_within_2ulp(x, y, alpha):
    cfg = PointAttractorConfig(alpha=alpha)
    pts = gen_point_attractor(cfg, (x, y)).points
    k = np.arange(cfg.steps + 1)
    for got, want in ((pts[:, 0], x * np.exp(alpha * k * cfg.dt)), (pts[:, 1], y * np.exp(-k * cfg.dt))):
        ulp = np.spacing(np.abs(want))
        assert np.all(np.abs(got - want) <= 2 * ulp)


@pytest.mark.parametrize("bad", [(math.nan, 0.0), (0.0, math.inf)])
def test_point_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        gen_point_attractor(PointAttractorConfig(), bad)


def test_point_config_validation():
    with pytest.raises(DomainError):
        PointAttractorConfig(alpha=0.5)
    with pytest.raises(DomainError):
        PointAttractorConfig(steps=0)


# -- van der Pol -------------------------------------------------------------

def test_vdp_origin_is_equilibrium():
    assert np.all(gen_van_der_pol(VanDerPolConfig(), (0.0, 0.0)).points == 0.0)


def test_vdp_mu_zero_matches_harmonic_solution():
    cfg = VanDerPolConfig(mu=0.0, steps=200, dt=0.1)
    pts = gen_van_der_pol(cfg, (1.0, 0.0)).points
    t = np.arange(201) * 0.1
    assert np.max(np.abs(pts[:, 0] - np.cos(t))) < 1e-6
    assert np.max(np.abs(pts[:, 1] + np.sin(t))) < 1e-6


def test_vdp_single_substep_misses_harmonic_bound():
    # plain RK4 at h=0.1 accumulates ~200 * h^5 / 120 phase error
    pts = gen_van_der_pol(VanDerPolConfig(mu=0.0, substeps=1), (1.0, 0.0)).points
    t = np.arange(201) * 0.1
    err = np.max(np.abs(pts[:, 0] - np.cos(t)))
    assert 1e-5 < err < 2e-5


def test_vdp_mu_zero_energy_drift_plain_rk4():
    pts = gen_van_der_pol(VanDerPolConfig(mu=0.0, substeps=1), (1.3, -0.4)).points
    energy = (pts ** 2).sum(axis=1)
    assert np.max(np.abs(energy / energy[0] - 1.0)) < 1e-5


def test_vdp_mu_zero_energy_drift():
    pts = gen_van_der_pol(VanDerPolConfig(mu=0.0), (1.3, -0.4)).points
    energy = (pts ** 2).sum(axis=1)
    assert np.max(np.abs(energy / energy[0] - 1.0)) < 1e-5


def test_vdp_converges_to_limit_cycle():
    pts = gen_van_der_pol(VanDerPolConfig(), (3.0, 3.0)).points
    r = np.hypot(pts[-50:, 0], pts[-50:, 1])
    assert np.all((r >= 1.5) & (r <= 2.5))


def test_vdp_reference_cycle_radius_is_about_two():
    # fine-step reference: the mu=0.1 cycle is close to the radius-2 circle
    pts = gen_van_der_pol(VanDerPolConfig(steps=20000, dt=0.01, substeps=1), (3.0, 3.0)).points
    r = np.hypot(pts[-1000:, 0], pts[-1000:, 1])
    assert 1.9 < r.min() and r.max() < 2.1


def test_vdp_rk4_convergence_order():
    init = (1.5, 0.5)
    horizon = 2.0
    ref = gen_van_der_pol(VanDerPolConfig(steps=int(horizon / 1e-4), dt=1e-4, substeps=1), init).points[-1]
    errs = []
    for dt in (0.2, 0.1, 0.05):
        end = gen_van_der_pol(VanDerPolConfig(steps=round(horizon / dt), dt=dt, substeps=1), init).points[-1]
        errs.append(np.linalg.norm(end - ref))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.5 <= p <= 4.5 for p in orders), orders


def test_vdp_divergence_is_reported():
    with pytest.raises(DivergenceError):
        gen_van_der_pol(VanDerPolConfig(mu=5.0, dt=5.0, steps=50), (3.0, 3.0))


# -- sampling ----------------------------------------------------------------

def test_sample_initials_empty():
    assert sample_initials(0, -3, 3, SeededSampler(1)).shape == (0, 2)


def test_sample_initials_range():
    pts = sample_initials(1000, -3.0, 3.0, SeededSampler(7))
    assert pts.shape == (1000, 2)
    assert pts.min() >= -3.0 and pts.max() <= 3.0


def test_sample_initials_deterministic():
    a = sample_initials(20, -3, 3, SeededSampler(42))
    b = sample_initials(20, -3, 3, SeededSampler(42))
    assert np.array_equal(a, b)


def test_sample_initials_rejects_empty_range():
    with pytest.raises(DomainError):
        sample_initials(3, 1.0, 1.0, SeededSampler(0))


def test_keyed_streams_differ_and_repeat():
    assert SeededSampler.from_key(1, 2, 3).seed == SeededSampler.from_key(1, 2, 3).seed
    assert SeededSampler.from_key(1, 2, 3).seed != SeededSampler.from_key(1, 2, 4).seed


# -- figure eight ------------------------------------------------------------

def test_figure_eight_starts_at_origin():
    traj = gen_figure_eight(noise_std=0.0)
    assert np.array_equal(traj[0], [0.0, 0.0])


def test_figure_eight_default_length():
    assert len(gen_figure_eight(noise_std=0.05, sampler=SeededSampler(0))) == 560


def test_figure_eight_lissajous_identity():
    amp, loops, steps = 2.0, 3.0, 560
    pts = gen_figure_eight(amp, loops, steps, 0.0).points
    # one y-period spans steps/loops samples; quarter-period samples avoid asin's branch cut
    period = steps / loops
    for q in (0, 1, 2, 3):
        t = int(round(q * period / 4 + 7))
        phase = 2 * math.pi * t * loops / steps
        x, y = pts[t]
        assert x == pytest.approx(amp * math.sin(2 * phase), abs=1e-12)
        assert y == pytest.approx(amp * math.sin(phase), abs=1e-12)
        theta = math.asin(y / amp)
        if math.cos(phase) < 0:
            theta = math.pi - theta
        assert x == pytest.approx(amp * math.sin(2 * theta), abs=1e-9)


def test_figure_eight_noise_needs_sampler():
    with pytest.raises(DomainError):
        gen_figure_eight(noise_std=0.1)


# -- attractor bundle --------------------------------------------------------

def test_training_sets_are_nested_in_n():
    att = attractor("point")
    small = att.training_set(3, SeededSampler(5))
    large = att.training_set(8, SeededSampler(5))
    for a, b in zip(small, large):
        assert np.array_equal(a.points, b.points)


def test_attractor_steps():
    assert attractor("point").steps == 100
    assert attractor("cyclic").steps == 200
    assert attractor("figure-eight").steps == 559


# -- trajectory files --------------------------------------------------------

def test_load_simple_file(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("0,0\n1,2")
    traj = load_trajectory(p)
    assert traj.kind is Kind.IMPORTED
    assert np.array_equal(traj.points, [[0, 0], [1, 2]])


def test_load_reports_line_of_bad_row(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("a,b\n")
    with pytest.raises(TrajectoryParseError) as err:
        load_trajectory(p)
    assert err.value.line == 1


def test_load_distinguishes_errors(tmp_path):
    with pytest.raises(TrajectoryParseError, match="not found"):
        load_trajectory(tmp_path / "missing.txt")
    p = tmp_path / "t.txt"
    p.write_text("# dt=0.1 kind=point\n1,2\n3,nan\n")
    with pytest.raises(TrajectoryParseError, match="non-finite") as err:
        load_trajectory(p)
    assert err.value.line == 3
    p.write_text("1,2,3\n")
    with pytest.raises(TrajectoryParseError, match="expected"):
        load_trajectory(p)


@settings(max_examples=25)
@given(coord, coord, st.sampled_from(["point", "cyclic"]))
def test_save_load_round_trip_is_bitwise(tmp_path_factory, x, y, kind):
    traj = attractor(kind).ground_truth((x, y))
    path = tmp_path_factory.mktemp("rt") / "traj.txt"
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert np.array_equal(back.points, traj.points)
    assert back.dt == traj.dt


def test_trajectory_needs_a_point():
    with pytest.raises(DomainError):
        Trajectory(np.empty((0, 2)))
