use std::f64::consts::TAU;

use proptest::prelude::*;

use bohmclock::bohm::{arrival_time_closed, trajectory_closed, turning_point_exists, velocity_closed, FlowParams};
use bohmclock::config::beta_spread;
use bohmclock::numerics::gauss_legendre5;
use bohmclock::scatter::{re_im_closed, solve_branch, transmitted_spin_state, ScatteringInputs};
use bohmclock::spinclock::{
    ensemble_p_plus, narrow_angle_dist, observable_curve, projection_probs, pushforward_phi, spin_evolve,
    SpinDistribution,
};
use bohmclock::timedist::{dist_distance, empirical_on_edges, TimeDistribution};
use bohmclock::wavepacket::{PacketField, WaveField};
use bohmclock::{PacketSpec, RunConfig, TailPolicy, UnitSystem};

fn gaussian_field(sigma0: f64, u: f64) -> PacketField {
    let units = UnitSystem::natural();
    PacketField::new(units, &PacketSpec::gaussian(&units, sigma0, u).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arrival_inverts_trajectory(u in 0.5f64..5.0, sigma0 in 0.5f64..3.0, frac in -0.95f64..0.95, gap in 0.01f64..40.0) {
        let beta = beta_spread(&UnitSystem::natural(), sigma0);
        let p = FlowParams::new(u, beta);
        // starts inside the no-turning band |x0| sqrt(beta) < u
        let x0 = frac * u / beta.sqrt();
        prop_assume!(turning_point_exists(x0, &p).is_none());
        let x = x0 + gap;
        let t = arrival_time_closed(x0, x, &p).unwrap();
        prop_assert!(t > 0.0);
        let back = trajectory_closed(x0, t, &p);
        prop_assert!((back - x).abs() <= 1e-10 * x.abs().max(1.0));
        prop_assert!(velocity_closed(x0, t, &p) > 0.0);
    }

    #[test]
    fn trajectories_never_cross(u in 0.5f64..3.0, a in -1.5f64..1.5, da in 1e-3f64..1.0, t in 0.0f64..50.0) {
        let p = FlowParams::new(u, 0.25);
        prop_assert!(trajectory_closed(a, t, &p) < trajectory_closed(a + da, t, &p));
    }

    #[test]
    fn gaussian_density_normalized(sigma0 in 0.3f64..3.0, u in -3.0f64..3.0, t in 0.0f64..20.0) {
        let f = gaussian_field(sigma0, u);
        let (c, w) = (f.mean_position(t), f.width(t));
        let cells = 400;
        let h = 24.0 * w / cells as f64;
        let total: f64 = (0..cells)
            .map(|i| {
                let a = c - 12.0 * w + i as f64 * h;
                gauss_legendre5(|x| f.density(x, t), a, a + h)
            })
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bohm_density_equals_current(u in 0.8f64..4.0, x in 1.0f64..10.0, scale in 0.3f64..3.0) {
        let c = RunConfig::gaussian(1.0, u, x).unwrap();
        let p = FlowParams::from_config(&c).unwrap();
        let field = PacketField::from_config(&c);
        let t = scale * x / u;
        let lo = -0.999 * u / p.beta.sqrt();
        let Some(x0) = bohmclock::timedist::invert_arrival(t, x, &p, lo, 0.0).unwrap() else {
            return Ok(());
        };
        let s = (1.0 + p.beta * t * t).sqrt();
        let bohm = field.density(x0, 0.0) * velocity_closed(x0, t, &p) / s;
        let (_, j) = field.density_current(x, t);
        prop_assert!((bohm - j).abs() <= 1e-9 * j.abs().max(1e-300) || (bohm - j).abs() < 1e-200);
    }

    #[test]
    fn spin_evolution_is_unitary(tau in -100.0f64..100.0, omega in -10.0f64..10.0) {
        let s = spin_evolve(tau, omega);
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-14);
        let f = s.fidelity(&spin_evolve(0.0, omega));
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&f));
    }

    #[test]
    fn projections_sum_to_one(phi in -50.0f64..50.0, theta in 0.0f64..TAU) {
        let (a, b) = projection_probs(phi, theta);
        prop_assert!((a + b - 1.0).abs() < 1e-15);
        prop_assert!(a >= 0.0 && b >= 0.0);
    }

    #[test]
    fn narrow_angle_matches_ensemble(phi in 0.0f64..40.0, theta in 0.0f64..TAU) {
        let spin = SpinDistribution::from_angles(narrow_angle_dist(phi, 1e-7).unwrap(), 0.0, 1.0).unwrap();
        let curve = observable_curve(&spin, &[theta], 1e-6).unwrap();
        let direct = ensemble_p_plus(&[phi], &[1.0], theta);
        prop_assert!((curve.p_plus[0] - direct).abs() < 1e-10);
        prop_assert!((curve.p_plus[0] + curve.p_minus[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_curve_matches_ensemble(
        raw in proptest::collection::vec(0.0f64..30.0, 50..200),
        theta in 0.0f64..TAU,
    ) {
        // many equal-weight points vs. their binned distribution
        let mut pts = raw.clone();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let edges = bohmclock::numerics::linspace(-0.5, 30.5, 31 * 64 + 1);
        let events: Vec<Option<f64>> = pts.iter().copied().map(Some).collect();
        let w = vec![1.0 / pts.len() as f64; pts.len()];
        let hist = empirical_on_edges(&events, &w, edges).unwrap();
        let spin = SpinDistribution::from_angles(hist, 0.0, 1.0).unwrap();
        let curve = observable_curve(&spin, &[theta], 1e-6).unwrap();
        let direct = ensemble_p_plus(&pts, &w, theta);
        // binning moves each point by at most half a bin width
        prop_assert!((curve.p_plus[0] - direct).abs() < 0.5 * (31.0 / (31.0 * 64.0)));
    }

    #[test]
    fn flux_conserved(k in 0.05f64..20.0, k_in_frac in 0.01f64..3.0, d in 0.01f64..50.0) {
        let k_in = k * k_in_frac;
        let (t, r) = solve_branch(k, k_in, d).unwrap();
        prop_assert!((t.norm_sqr() + r.norm_sqr() - 1.0).abs() < 1e-12);
        let (re, im) = re_im_closed(k, k_in, d);
        prop_assert!((re - t.re).abs() < 1e-11 && (im - t.im).abs() < 1e-11);
    }

    #[test]
    fn transmitted_spin_normalized(ratio in 1.01f64..1e6, d in 0.1f64..100.0, sign in prop::bool::ANY) {
        let mu_b = if sign { 1.0 } else { -1.0 };
        let inp = ScatteringInputs::new(UnitSystem::natural(), ratio, mu_b, d).unwrap();
        let s = transmitted_spin_state(&inp).unwrap();
        prop_assert!((s.chi_out.norm_sqr() - 1.0).abs() < 1e-12);
        prop_assert!(s.minus.modulus_deficit() >= 0.0 && s.plus.modulus_deficit() >= 0.0);
        prop_assert!(s.minus.transmittance() <= 1.0 + 1e-15 && s.plus.transmittance() <= 1.0 + 1e-15);
    }

    #[test]
    fn distance_is_a_metric(a in 1.0f64..5.0, b in 1.0f64..5.0, wa in 0.2f64..2.0, wb in 0.2f64..2.0) {
        let p = TimeDistribution::histogram(
            bohmclock::timedist::DistKind::Empirical, vec![a, a + wa], vec![1.0 / wa], (0.0, 0.0, 0.0),
        ).unwrap();
        let q = TimeDistribution::histogram(
            bohmclock::timedist::DistKind::Empirical, vec![b, b + wb], vec![1.0 / wb], (0.0, 0.0, 0.0),
        ).unwrap();
        let pq = dist_distance(&p, &q).unwrap();
        let qp = dist_distance(&q, &p).unwrap();
        prop_assert!((pq.l1 - qp.l1).abs() < 1e-9);
        prop_assert!(pq.l1 <= 2.0 + 1e-9 && pq.kolmogorov_smirnov <= 1.0 + 1e-9);
        prop_assert!(dist_distance(&p, &p).unwrap().l1 < 1e-12);
    }

    #[test]
    fn pushforward_preserves_mass(u in 1.0f64..4.0, d in 2.0f64..8.0, omega in 0.05f64..2.0, atom in prop::bool::ANY) {
        let c = RunConfig::gaussian(1.0, u, d).unwrap();
        let arrival = bohmclock::timedist::arrival_dist_pcd(d, &c).unwrap();
        let policy = if atom { TailPolicy::Atom } else { TailPolicy::Drop };
        let spin = pushforward_phi(&arrival, omega, policy).unwrap();
        prop_assert!((spin.total_mass() - 1.0).abs() < 1e-9);
        let mean_t = arrival.mean();
        let expect = 2.0 * omega * mean_t * spin.continuous_mass;
        prop_assert!((spin.mean_phi() - expect).abs() <= 1e-9 * expect.abs().max(1.0));
    }
}

#[test]
fn negative_frequency_mirrors_angles() {
    let c = RunConfig::gaussian(1.0, 2.0, 4.0).unwrap();
    let arrival = bohmclock::timedist::arrival_dist_pcd(4.0, &c).unwrap();
    let pos = pushforward_phi(&arrival, 0.3, TailPolicy::Drop).unwrap();
    let neg = pushforward_phi(&arrival, -0.3, TailPolicy::Drop).unwrap();
    assert!((pos.mean_phi() + neg.mean_phi()).abs() < 1e-9);
    let (zp, zn) = (pos.fourier_moment(), neg.fourier_moment());
    assert!((zp - zn.conj()).norm() < 1e-12);
}
