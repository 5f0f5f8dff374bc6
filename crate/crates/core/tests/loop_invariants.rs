use proptest::prelude::*;
use scpl_core::curation::CurationStrategy;
use scpl_core::evaluator::MetricsRecord;
use scpl_core::sampler::RatioSchedule;
use scpl_core::simulation::{run_loop, run_loop_with, Cycle, DataSource, LoopConfig, RegimeKind, WorldSpec};
use scpl_core::world::{GroupLabel, PreferenceParams, Provenance};

fn preference(generations: u32, seed: u64) -> LoopConfig {
    let mut c = LoopConfig::new(WorldSpec::Preference(PreferenceParams::new(16, 0.0)), generations);
    c.dataset_size = 120;
    c.heldout_per_group = 30;
    c.evaluation.reference_per_group = 150;
    c.world_seed = 77;
    c.seed = seed;
    c
}

fn skill(generations: u32, seed: u64) -> LoopConfig {
    let world = WorldSpec::Skill {
        n_easy: 20,
        n_hard: 40,
        easy_answer_space: 4,
        hard_answer_space: 20,
    };
    let mut c = LoopConfig::new(world, generations);
    c.schedule = RatioSchedule::linear(0.4, 0.2, generations);
    c.dataset_size = 300;
    c.heldout_per_group = 20;
    c.evaluation.reference_per_group = 50;
    c.world_seed = 5;
    c.seed = seed;
    c
}

fn in_range(r: &MetricsRecord) -> bool {
    let unit = |v: Option<f64>| v.is_none_or(|x| (0.0..=1.0).contains(&x));
    unit(r.preference_bias)
        && unit(r.pass1_a)
        && unit(r.pass1_d)
        && r.generation_quality.is_none_or(|q| (0.0..=3.0).contains(&q))
        && r.similarity.is_none_or(|s| (0.0..=2.0).contains(&s))
        && r.disparate_bias.is_none_or(|d| (-1.0..=1.0).contains(&d))
        && (0.0..=1.0).contains(&r.dataset_ratio)
}

#[test]
fn scheduled_ratios_reach_the_data() {
    let mut c = preference(3, 0);
    c.dataset_size = 200;
    let h = run_loop(c).unwrap();
    let ratios: Vec<f64> = h.iter().map(|r| r.dataset_ratio).collect();
    assert_eq!(ratios, [0.4, 0.34, 0.28, 0.22]);
}

#[test]
fn preference_worlds_record_preference_metrics_only() {
    let h = run_loop(preference(1, 0)).unwrap();
    assert!(h.iter().all(|r| r.preference_bias.is_some() && r.generation_quality.is_some() && r.pass1_a.is_none()));
}

#[test]
fn skill_worlds_record_accuracy_and_gap() {
    let h = run_loop(skill(2, 0)).unwrap();
    for r in &h {
        let (a, d) = (r.pass1_a.unwrap(), r.pass1_d.unwrap());
        assert_eq!(r.disparate_bias, Some(a - d));
        assert!(r.preference_bias.is_none());
    }
}

#[test]
fn real_data_stays_real_and_synthetic_stays_synthetic() {
    for (source, expected) in [(DataSource::Real, Provenance::Real), (DataSource::Synthetic, Provenance::Synthetic)] {
        let mut c = preference(2, 1);
        c.data_source = source;
        run_loop_with(c, |sim, report| {
            if report.is_some() {
                assert_eq!(sim.state().current().provenance, expected);
            }
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn curated_generations_have_the_target_size_and_log_every_pick() {
    for strategy in [CurationStrategy::Vrs, CurationStrategy::Tpp, CurationStrategy::Top, CurationStrategy::Reweight] {
        let mut c = preference(1, 2);
        c.curation.strategy = strategy;
        run_loop_with(c, |sim, report| {
            if let Some(report) = report {
                assert_eq!(sim.state().current().len(), 120, "{strategy:?}");
                assert_eq!(report.curation.len(), 120, "{strategy:?}");
                assert!(report.curation.iter().all(|r| r.strategy == strategy));
            }
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn accumulation_keeps_every_generation() {
    let mut c = preference(3, 3);
    c.cycle = Cycle::Accumulation;
    let mut seen = Vec::new();
    run_loop_with(c, |sim, _| {
        let s = sim.state();
        seen.push((s.datasets.len(), s.training_size));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, [(1, 120), (2, 240), (3, 360), (4, 480)]);
}

#[test]
fn retrain_and_incremental_share_generation_zero() {
    let mut r = preference(1, 4);
    r.regime = RegimeKind::Retrain;
    let a = run_loop(r).unwrap();
    let b = run_loop(preference(1, 4)).unwrap();
    assert_eq!(a[0], b[0]);
}

#[test]
fn sampled_groups_match_the_reported_counts() {
    run_loop_with(preference(2, 5), |sim, report| {
        if let Some(report) = report {
            let d = sim.state().current();
            assert_eq!(report.sampling.n_a, d.count(GroupLabel::Advantaged));
            assert_eq!(report.sampling.n_d, d.count(GroupLabel::Disadvantaged));
            assert_eq!(report.sampling.n_a + report.sampling.n_d, d.len());
        }
        Ok(())
    })
    .unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn histories_are_complete_bounded_and_deterministic(
        generations in 0u32..4,
        seed in 0u64..1000,
        accumulate in any::<bool>(),
        real in any::<bool>(),
        eta in 0.1f64..=1.0,
    ) {
        let mut c = preference(generations, seed);
        c.training.eta = eta;
        if accumulate { c.cycle = Cycle::Accumulation; }
        if real { c.data_source = DataSource::Real; }
        let h = run_loop(c).unwrap();
        prop_assert_eq!(h.len(), generations as usize + 1);
        prop_assert!(h.iter().enumerate().all(|(t, r)| r.generation == t as u32));
        prop_assert!(h.iter().all(in_range));
        prop_assert_eq!(run_loop(c).unwrap(), h);
    }

    #[test]
    fn skill_histories_are_bounded(seed in 0u64..1000, generations in 1u32..4) {
        let h = run_loop(skill(generations, seed)).unwrap();
        prop_assert!(h.iter().all(in_range));
    }

    #[test]
    fn fixed_schedules_hold_their_ratio(r in 0.0f64..=1.0, seed in 0u64..100) {
        let mut c = preference(2, seed);
        c.schedule = RatioSchedule::fixed(r, 2);
        let h = run_loop(c).unwrap();
        let expected = (r * 120.0).round_ties_even() / 120.0;
        prop_assert!(h.iter().all(|m| (m.dataset_ratio - expected).abs() < 1e-12));
    }
}
