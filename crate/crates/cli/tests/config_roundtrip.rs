use mpl::experiment::{ExperimentConfig, ModelChoice};
use mpl::model::BenchmarkParams;
use mpl_cli::config::{parse_config, to_config_text};
use proptest::prelude::*;

fn config() -> impl Strategy<Value = ExperimentConfig<f64>> {
    (
        (0.01..5.0_f64, -3.0..3.0_f64, -3.0..3.0_f64, 0.01..3.0_f64),
        (0.05..2.0_f64, 1usize..1000),
        prop::collection::btree_set(1usize..500, 1..8),
        (1usize..50, any::<u64>(), 1e-3..10.0_f64, 0.0..50.0_f64, any::<bool>()),
        ("[a-z][a-z0-9_/]{0,12}", 0usize..16),
    )
        .prop_map(|((b0, c0, d0, x0), (horizon, steps), ns, (trials, master_seed, alpha, beta, renormalize), (out_prefix, workers))| {
            ExperimentConfig {
                model: ModelChoice::Benchmark(BenchmarkParams { b0, c0, d0, x0 }),
                horizon,
                delta: horizon / (steps as f64 + 1.0),
                n_list: ns.into_iter().collect(),
                trials,
                master_seed,
                alpha,
                beta,
                renormalize,
                out_prefix,
                workers,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn config_text_round_trips(cfg in config()) {
        prop_assert_eq!(parse_config(&to_config_text(&cfg)).unwrap(), cfg);
    }
}
