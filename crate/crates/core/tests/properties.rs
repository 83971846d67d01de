use std::sync::Arc;

use jko_core::energy::{crowd_feasible, InternalDensityKind, PotentialField};
use jko_core::jko::{jko_step, jko_step_crowd, run_trajectory};
use jko_core::transport::{solve_ot, solve_ot_quantized, TransportOptions};
use jko_core::{DiscreteMeasure, EnergySpec, JkoConfig, LatticeSpec, SolverKind};
use proptest::prelude::*;

fn line(n: usize) -> Arc<LatticeSpec> {
    Arc::new(LatticeSpec::unit_origin(1.0 / n as f64, &[n]).unwrap())
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, n).prop_filter("nonzero mass", |w| w.iter().sum::<f64>() > 1e-3)
}

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn w2_is_a_metric(a in weights(8), b in weights(8), c in weights(8)) {
        let l = line(8);
        let m = |w: Vec<f64>| DiscreteMeasure::normalized(l.clone(), w).unwrap();
        let (a, b, c) = (m(a), m(b), m(c));
        let w = |x: &DiscreteMeasure, y: &DiscreteMeasure| solve_ot(x, y, &TransportOptions::default()).unwrap().w2_squared;
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-12);
        prop_assert!(w(&a, &a).abs() <= 1e-15);
        prop_assert!(w(&a, &c).sqrt() <= w(&a, &b).sqrt() + w(&b, &c).sqrt() + 1e-12);
    }

    #[test]
    fn float_and_integer_transport_agree(mu in prop::collection::vec(0u64..5, 6), nu in prop::collection::vec(0u64..5, 6)) {
        let (sm, sn) = (mu.iter().sum::<u64>(), nu.iter().sum::<u64>());
        prop_assume!(sm > 0 && sm == sn);
        let l = Arc::new(LatticeSpec::unit_origin(1.0, &[6]).unwrap());
        let (units, _) = solve_ot_quantized(&l, &mu, &nu).unwrap();
        let m = |u: &[u64]| DiscreteMeasure::new(l.clone(), u.iter().map(|&x| x as f64 / sm as f64).collect()).unwrap();
        let w = solve_ot(&m(&mu), &m(&nu), &TransportOptions::default()).unwrap().w2_squared;
        prop_assert!((w - units as f64 / sm as f64).abs() <= 1e-12);
    }

    #[test]
    fn step_dissipates_and_conserves_mass(w in positive(8), tau in 0.02..0.5f64, m2 in any::<bool>(), slope in -2.0..2.0f64) {
        let l = line(8);
        let kind = if m2 { InternalDensityKind::power_law(2.0).unwrap() } else { InternalDensityKind::Entropy };
        let spec = EnergySpec::builder(l.clone())
            .internal(kind)
            .potential_field(&PotentialField::Linear { slope: vec![slope], offset: 0.0 })
            .build()
            .unwrap();
        let rho = DiscreteMeasure::normalized(l, w).unwrap();
        let step = jko_step(&rho, &spec, tau, &JkoConfig::for_spec(&spec, tau, 1)).unwrap();
        prop_assert!((step.rho.total_mass() - 1.0).abs() <= 1e-12);
        prop_assert!(step.rho.weights().iter().all(|&x| x >= 0.0));
        let f0 = spec.eval(&rho).unwrap();
        prop_assert!(step.energy + step.w2_squared / (2.0 * tau) <= f0 + step.gap + 1e-12);
    }

    #[test]
    fn pure_potential_is_frozen_below_threshold(w in weights(10), slope in 0.2..3.0f64, shrink in 0.1..0.99f64) {
        let l = line(10);
        let field = PotentialField::Linear { slope: vec![slope], offset: 0.0 };
        let spec = EnergySpec::builder(l.clone()).potential_field(&field).build().unwrap();
        let tau = shrink * l.spacing() / (2.0 * field.lipschitz_on(&l));
        let rho = DiscreteMeasure::normalized(l, w).unwrap();
        let traj = run_trajectory(&rho, &spec, &JkoConfig::new(tau, 3, SolverKind::PurePotential)).unwrap();
        prop_assert!(traj.iterates.iter().all(|r| r.weights() == rho.weights()));
    }

    #[test]
    fn crowd_step_is_feasible_and_complementary(w in weights(16), tau in 0.02..0.5f64, slope in -2.0..2.0f64) {
        let l = Arc::new(LatticeSpec::unit_origin(0.125, &[16]).unwrap());
        let field = PotentialField::Linear { slope: vec![slope], offset: 0.0 };
        let spec = EnergySpec::builder(l.clone()).potential_field(&field).crowd(true).build().unwrap();
        let rho = DiscreteMeasure::normalized(l, w).unwrap();
        let step = jko_step_crowd(&rho, &spec, tau).unwrap();
        prop_assert!(crowd_feasible(&step.rho));
        prop_assert!((step.rho.total_mass() - 1.0).abs() <= 1e-12);
        let p = step.pressure.unwrap();
        let u = step.rho.density();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!(p.iter().zip(&u).all(|(pi, ui)| (pi * (1.0 - ui)).abs() <= 1e-8));
    }
}
