use mpd_core::estimators::SolverOptions;
use mpd_core::rng::{StreamKey, WaveStreams};
use mpd_core::sampling::{aggregate_weights, compute_wave_weights, unit_wave_weights, StudyDesign, WaveColumn};
use mpd_core::simulation::{
    phase_one_sample, run_replication, run_waves, synthetic_table, Arm, EstimationSettings, OutcomeForm, Schema,
    Superpopulation,
};
use mpd_core::{estimate, LossModel, StrategyConfig, TuningMode, WeightedDesign};
use proptest::prelude::*;

fn superpop() -> Superpopulation {
    let table = synthetic_table(20_000, 3, OutcomeForm::Literal);
    let loss = LossModel::linear(0, vec![1, 2], true, 3).unwrap();
    Superpopulation::new(&table, Schema::synthetic(), loss).unwrap()
}

fn wave_inputs(max_waves: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1..=max_waves)
        .prop_flat_map(|k| (prop::collection::vec(0.001f64..0.999, k), prop::collection::vec(any::<bool>(), k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn only_the_first_selecting_wave_carries_weight((pi, hits) in wave_inputs(6)) {
        let mut out = vec![0.0; pi.len()];
        unit_wave_weights(&pi, &hits, &mut out);
        let first = hits.iter().position(|h| *h);
        for k in 0..pi.len() {
            if Some(k) == first {
                let survival: f64 = pi[..k].iter().map(|p| 1.0 - p).product();
                let expected = 1.0 / (survival * pi[k]);
                prop_assert!((out[k] - expected).abs() <= 1e-12 * expected);
            } else {
                prop_assert_eq!(out[k], 0.0);
            }
        }
    }

    #[test]
    fn aggregated_weight_is_bounded(
        (pi, hits) in wave_inputs(5),
        b in 0.001f64..0.2,
        raw_mix in prop::collection::vec(0.01f64..1.0, 5),
    ) {
        let k = pi.len();
        let pi: Vec<f64> = pi.iter().map(|p| p.clamp(b, 1.0 - b)).collect();
        let columns: Vec<WaveColumn> = (0..k)
            .map(|w| WaveColumn { pi: vec![pi[w]], u: vec![f64::NAN], indicator: vec![hits[w]] })
            .collect();
        let total: f64 = raw_mix[..k].iter().sum();
        let c: Vec<f64> = raw_mix[..k].iter().map(|v| v / total).collect();
        let w = aggregate_weights(&compute_wave_weights(&columns, k).unwrap(), &c).unwrap();
        prop_assert!(w[0] <= b.powi(-(k as i32)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimate_is_invariant_to_unit_order(seed in 0u64..1000, shift in 1usize..1999) {
        let sp = superpop();
        let design = StudyDesign::explore_exploit(2000, 300.0, 75.0, 2, seed).unwrap();
        let key = StreamKey::new(seed, 0);
        let units = phase_one_sample(&sp, design.n, key).unwrap();
        let (study, _) = run_waves(
            &sp,
            &design,
            &StrategyConfig::knn(20, 2),
            units,
            &WaveStreams::new(key, 0),
            &SolverOptions::default(),
        )
        .unwrap();
        let n = study.n();
        let perm: Vec<usize> = (0..n).map(|p| (p * 7 + shift) % n).collect();
        let mut permuted = study.permuted(&perm);
        permuted.finalize_weights().unwrap();
        let fit = |s: &mpd_core::ObservedStudy| {
            let design = WeightedDesign::from_study(s).unwrap();
            estimate(&sp.loss, &design, &TuningMode::Optimal, None, 0.1, &SolverOptions::default()).unwrap()
        };
        let (a, b) = (fit(&study), fit(&permuted));
        for j in 0..3 {
            let scale = a.theta_mpd[j].abs().max(1.0);
            prop_assert!((a.theta_mpd[j] - b.theta_mpd[j]).abs() <= 1e-9 * scale);
            prop_assert!((a.intervals[j].variance - b.intervals[j].variance).abs() <= 1e-9 * a.intervals[j].variance.max(1.0));
        }
    }
}

#[test]
fn replications_are_reproducible_and_distinct() {
    let sp = superpop();
    let design = StudyDesign::explore_exploit(2000, 300.0, 75.0, 2, 9).unwrap();
    let strategy = StrategyConfig::knn(20, 2);
    let settings = EstimationSettings::default();
    let first = run_replication(&sp, &design, &strategy, &settings, 4, Arm::Adaptive);
    let again = run_replication(&sp, &design, &strategy, &settings, 4, Arm::Adaptive);
    let other = run_replication(&sp, &design, &strategy, &settings, 5, Arm::Adaptive);
    assert!(first.is_ok());
    assert_eq!(first, again);
    assert_ne!(first.theta, other.theta);
}

#[test]
fn arms_share_phase_one_but_not_wave_draws() {
    let sp = superpop();
    let key = StreamKey::new(21, 0);
    let a = phase_one_sample(&sp, 500, key).unwrap();
    let b = phase_one_sample(&sp, 500, key).unwrap();
    assert_eq!(a, b);
    let design = StudyDesign::new(500, vec![100.0], 21).unwrap();
    let uniform = StrategyConfig::uniform(2);
    let opts = SolverOptions::default();
    let (s0, _) = run_waves(&sp, &design, &uniform, a, &WaveStreams::new(key, 0), &opts).unwrap();
    let (s1, _) = run_waves(&sp, &design, &uniform, b, &WaveStreams::new(key, 1), &opts).unwrap();
    assert_ne!(s0.waves()[0].u, s1.waves()[0].u);
}
