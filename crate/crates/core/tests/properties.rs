//! Cross-module properties on random inputs.

use proptest::prelude::*;

use mindriven::cli::parse_initial;
use mindriven::hydro::{discretize_initial, l1_distance};
use mindriven::ode::{integrate_piecewise, PiecewiseStop, SolverControls};
use mindriven::rng::{stream, StreamRole};
use mindriven::ssa::{run_min_form, sample_lifetime, simulate, StopRule};
use mindriven::{Kernel, ParticleState, Phi};

fn state() -> impl Strategy<Value = ParticleState> {
    prop::collection::btree_map(1u64..12, 1u64..20, 1..6).prop_map(|m| ParticleState::from_counts(m).unwrap())
}

fn density() -> impl Strategy<Value = Vec<f64>> {
    (0.05f64..1.0, prop::collection::vec(0.0f64..1.0, 0..8)).prop_map(|(x1, rest)| {
        let mut x = vec![x1];
        x.extend(rest);
        x
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inline_spec_round_trips(x in density()) {
        let spec: Vec<String> = x.iter().enumerate().map(|(k, v)| format!("{}:{v}", k + 1)).collect();
        let parsed = parse_initial(&spec.join(",")).unwrap();
        let d = parsed.density().unwrap();
        let m: f64 = d.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v).sum();
        prop_assert!((m - 1.0).abs() < 1e-12);
        let scale: f64 = x.iter().enumerate().map(|(k, v)| (k + 1) as f64 * v).sum();
        for (a, b) in d.iter().zip(&x) {
            prop_assert!((a * scale - b).abs() < 1e-12);
        }
    }

    #[test]
    fn discretisation_respects_its_bound(x in density(), n in 50u64..20_000) {
        let d = parse_initial(&x.iter().enumerate().map(|(k, v)| format!("{}:{v}", k + 1)).collect::<Vec<_>>().join(","))
            .unwrap()
            .density()
            .unwrap();
        let disc = discretize_initial(&d, n).unwrap();
        prop_assert_eq!(disc.state.total_mass(), n);
        let err = l1_distance(&disc.state, n as f64, &d);
        prop_assert!((err - disc.error).abs() < 1e-12);
        prop_assert!(err <= disc.bound + 1e-12);
    }

    #[test]
    fn stochastic_mass_is_conserved(x0 in state(), seed in 0u64..1000) {
        let k = Kernel::min_logpow(1.0, 0.5);
        let tr = simulate(&x0, &k, StopRule::UntilSingleton, &mut stream(seed, 0, StreamRole::Simulation)).unwrap();
        prop_assert_eq!(tr.replay().unwrap(), tr.final_state.clone());
        prop_assert_eq!(tr.final_state.total_mass(), x0.total_mass());
        prop_assert_eq!(tr.events.len() as u64, x0.total_count() - 1);
        prop_assert!(tr.events.windows(2).all(|w| w[0].t <= w[1].t && w[0].min_size <= w[1].min_size));
    }

    #[test]
    fn lean_and_recorded_lifetimes_agree(x0 in state(), seed in 0u64..1000) {
        let phi = Phi::Power(1.5);
        let a = run_min_form(&x0, &phi, &mut stream(seed, 1, StreamRole::Sampling)).unwrap();
        let b = sample_lifetime(&x0, &phi, &mut stream(seed, 1, StreamRole::Sampling)).unwrap();
        prop_assert_eq!(a.t_last.unwrap_or(0.0), b);
    }

    #[test]
    fn hydrodynamic_solution_stays_admissible(x in density(), a in 0.0f64..2.0) {
        let x = parse_initial(&x.iter().enumerate().map(|(k, v)| format!("{}:{v}", k + 1)).collect::<Vec<_>>().join(","))
            .unwrap()
            .density()
            .unwrap();
        let c = SolverControls { cap: 256, ..Default::default() };
        let sol = integrate_piecewise(&x, &Kernel::min_pow(a), PiecewiseStop::min_size(3), &c).unwrap();
        prop_assert!(sol.positivity_holds(1e-12));
        prop_assert!(sol.switch_times.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(sol.max_mass_drift <= c.tol_mass);
        for &t in &sol.switch_times {
            let s = sol.state_at(t).unwrap();
            prop_assert!((s.first_moment() + s.overflow_mass - 1.0).abs() <= 1e-7);
        }
    }
}
