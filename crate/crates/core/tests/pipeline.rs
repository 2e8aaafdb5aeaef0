use isac_d2d::channel::{build_radar_environment, sample_channels, ChannelSet, RadarEnvironment};
use isac_d2d::optimizer::{audit_solution, run_scheme, sensing_only_solution, SchemeId};
use isac_d2d::scenario::{default_config, sample_geometry, RngStream, SystemConfig};
use proptest::prelude::*;

fn instance(seed: u64, cfg: &SystemConfig) -> (ChannelSet, RadarEnvironment) {
    let geo = sample_geometry(cfg, &RngStream::new(seed, "geometry"));
    let ch = sample_channels(cfg, &geo, &RngStream::new(seed, "fading")).unwrap();
    (ch, build_radar_environment(cfg))
}

fn config(seed: u64, eta_db: f64) -> SystemConfig {
    let mut cfg = default_config().with_scnr_threshold(eta_db);
    cfg.rng_seed = seed;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scheme_relations_hold(seed in 1u64..10_000, eta in 28.0f64..38.0) {
        let cfg = config(seed, eta);
        let (ch, env) = instance(seed, &cfg);
        let comm = run_scheme(&ch, &env, &cfg, SchemeId::CommunicationOnly).unwrap();
        let proposed = run_scheme(&ch, &env, &cfg, SchemeId::Proposed).unwrap();
        let sensing = sensing_only_solution(&ch, &env, &cfg).unwrap();

        let mut prev = proposed.initial_objective;
        for &v in &proposed.iteration_trace {
            prop_assert!(v >= prev - 1e-6, "trace drops from {prev} to {v}");
            prev = v;
        }
        prop_assert!(comm.relaxed_sum_rate >= proposed.relaxed_sum_rate * (1.0 - 1e-6));
        prop_assert!(sensing.achieved_scnr >= proposed.achieved_scnr - 1e-6);
        prop_assert!(proposed.achieved_scnr >= eta - 1e-6);
        for sol in [&comm, &proposed, &sensing] {
            prop_assert!(sol.extracted_sum_rate <= sol.relaxed_sum_rate * (1.0 + 1e-6), "{} extracted {} relaxed {} flags {:?}", sol.scheme, sol.extracted_sum_rate, sol.relaxed_sum_rate, sol.rank_flags);
            prop_assert!(audit_solution(&ch, &cfg, sol).is_empty());
        }
    }
}

#[test]
fn zero_forcing_removes_bs_interference_at_d2d_receivers() {
    let cfg = config(3, 30.0);
    let (ch, env) = instance(3, &cfg);
    let sol = run_scheme(&ch, &env, &cfg, SchemeId::ZeroForcing).unwrap();
    let total = sol.cov.per_cue.iter().fold(sol.cov.radar.clone(), |acc, w| acc + w);
    for f in &ch.bs_to_d2drx {
        let leak = (f.adjoint() * &total * f)[(0, 0)].re / (f.norm_squared() * total.norm());
        assert!(leak.abs() < 1e-10, "leak {leak:e}");
    }
}

#[test]
fn fixed_d2d_keeps_full_power() {
    let cfg = config(4, 30.0);
    let (ch, env) = instance(4, &cfg);
    let sol = run_scheme(&ch, &env, &cfg, SchemeId::FixedD2d).unwrap();
    for &p in &sol.powers.d2d_powers {
        assert!((p - cfg.d2d_power_budget).abs() <= 1e-12 * cfg.d2d_power_budget);
    }
}

#[test]
fn config_json_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let mut cfg = default_config().with_scnr_threshold(33.0);
    cfg.n_cue = 2;
    cfg.rng_seed = 77;
    std::fs::write(&path, cfg.to_json_string()).unwrap();
    let back = SystemConfig::from_path(&path).unwrap();
    assert_eq!(back.n_cue, 2);
    assert_eq!(back.rng_seed, 77);
    assert!((back.scnr_threshold_linear() / cfg.scnr_threshold_linear() - 1.0).abs() < 1e-12);
    assert!((back.bs_power_budget / cfg.bs_power_budget - 1.0).abs() < 1e-12);
    assert_eq!(back.to_json_string(), cfg.to_json_string());
}
