use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trafficgrad_core::ddpg::actor_layers;
use trafficgrad_core::harness::reward::reward;
use trafficgrad_core::{
    durations_from_raw, generate_network_a, generate_network_b, DetectorObservation, EpisodeStepObservation, Mlp,
    Mode, PhaseLayout, SimState,
};

fn observation(rows: &[(u32, f64)]) -> EpisodeStepObservation {
    EpisodeStepObservation {
        clock: 0.0,
        detectors: rows
            .iter()
            .map(|&(count, speed_score)| DetectorObservation {
                count,
                speed_score,
                occupancy: 0.0,
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulator_conserves_vehicles_under_any_plan(
        seed in any::<u64>(),
        raw in prop::collection::vec(-3.0f64..3.0, 30),
        network_b in any::<bool>(),
    ) {
        let scenario = if network_b { generate_network_b() } else { generate_network_a() };
        let layout = PhaseLayout::from_scenario(&scenario);
        let plan = durations_from_raw(&raw[..layout.n_phases()], &layout).unwrap();
        let mut sim = SimState::new(&scenario, seed);
        let mut clock = 0.0;
        for _ in 0..4 {
            sim.apply_phase_durations(&plan).unwrap();
            let obs = sim.run_episode_step();
            prop_assert!(obs.clock > clock);
            clock = obs.clock;
            prop_assert_eq!(obs.detectors.len(), scenario.n_detectors());
            for d in &obs.detectors {
                prop_assert!((0.0..=1.0).contains(&d.speed_score));
                prop_assert!((0.0..=1.0).contains(&d.occupancy));
                if d.count == 0 {
                    prop_assert_eq!(d.speed_score, 1.0);
                }
            }
            prop_assert_eq!(sim.entered(), sim.exited() + sim.vehicles_on_network() as u64);
        }
    }

    #[test]
    fn reward_is_zero_against_itself_and_signed_by_score(
        rows in prop::collection::vec((0u32..60, 0.0f64..=1.0, 0.0f64..=1.0), 1..20),
    ) {
        let obs = observation(&rows.iter().map(|&(c, s, _)| (c, s)).collect::<Vec<_>>());
        let base = observation(&rows.iter().map(|&(c, _, b)| (c, b)).collect::<Vec<_>>());
        prop_assert!(reward(&obs, &obs).unwrap().iter().all(|&r| r == 0.0));
        for ((r, o), b) in reward(&obs, &base).unwrap().iter().zip(&obs.detectors).zip(&base.detectors) {
            prop_assert!(r * (o.speed_score - b.speed_score) >= 0.0);
            if o.count > 0 && o.speed_score > b.speed_score {
                prop_assert!(*r > 0.0);
            }
        }
    }

    #[test]
    fn eval_rows_are_independent_of_batch(seed in any::<u64>(), rows in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(5, &actor_layers(5, 3, None), &mut rng);
        let x = Array2::from_shape_fn((rows, 5), |(i, j)| ((i * 5 + j) as f64 * 0.37).sin());
        // Move the running statistics away from their initial values.
        net.forward(&x, Mode::Train).unwrap();
        let batched = net.predict(&x).unwrap();
        let (via_forward, cache) = net.forward(&x, Mode::Eval).unwrap();
        prop_assert!(cache.is_none());
        prop_assert_eq!(&batched, &via_forward);
        for i in 0..rows {
            let single = net.predict(&x.slice(ndarray::s![i..i + 1, ..]).to_owned()).unwrap();
            for j in 0..3 {
                prop_assert!((single[[0, j]] - batched[[i, j]]).abs() < 1e-12);
            }
        }
    }
}
