use proptest::prelude::*;
use scpl::config::parse_config;
use scpl::formats::{metrics_to_csv, model_to_string, parse_model, read_dataset, read_metrics, write_dataset};
use scpl_core::evaluator::MetricsRecord;
use scpl_core::generator::{fit_counts, Context, CountSpec, ModelParams, Smoothing, SoftmaxModel};
use scpl_core::world::{GroupLabel, GroupedDataset, Origin, Provenance, Sample};

fn settings() -> impl Strategy<Value = String> {
    (
        (
        prop::sample::select(vec!["retrain", "incremental"]),
        prop::sample::select(vec!["full_synthetic", "accumulation"]),
        prop::sample::select(vec!["linear", "fixed", "non_dynamic", "feedback"]),
        0.0f64..=1.0,
        0.0f64..=1.0,
        prop::sample::select(vec!["none", "vrs", "tpp", "top", "reweight"]),
        1usize..8,
        ),
        (
        -3.0f64..3.0,
        0.0f64..=1.0,
        0.0f64..=1.0,
        1e-3f64..2.0,
        prop::sample::select(vec!["additive", "backoff"]),
        prop::sample::select(vec!["sampled", "greedy"]),
        ),
    )
        .prop_map(
            |((regime, cycle, schedule, r_start, r_end, curation, k), (alpha2, eta, mix, lambda, smoothing, decoding))| {
                format!(
                    "regime = \"{regime}\"\ncycle = \"{cycle}\"\nschedule = \"{schedule}\"\nr_start = {r_start:?}\n\
                     r_end = {r_end:?}\ncuration = \"{curation}\"\nk = {k}\nalpha2 = {alpha2:?}\neta = {eta:?}\n\
                     external_mix_ratio = {mix:?}\nlambda = {lambda:?}\nsmoothing = \"{smoothing}\"\n\
                     eval_decoding = \"{decoding}\"\n"
                )
            },
        )
}

fn metrics() -> impl Strategy<Value = MetricsRecord> {
    let value = prop::option::of(-10.0f64..10.0);
    (0u32..50, value.clone(), value.clone(), value.clone(), value.clone(), value.clone(), value, 0.0f64..=1.0).prop_map(
        |(generation, preference_bias, generation_quality, pass1_a, pass1_d, disparate_bias, similarity, dataset_ratio)| {
            MetricsRecord {
                generation,
                preference_bias,
                generation_quality,
                pass1_a,
                pass1_d,
                disparate_bias,
                similarity,
                dataset_ratio,
            }
        },
    )
}

/// `min_len` bounds prompt and response length from below.
fn dataset(v: u32, min_len: usize) -> impl Strategy<Value = GroupedDataset> {
    let tokens = prop::collection::vec(0..v, 0..6);
    let text = prop::collection::vec(0..v, min_len..6);
    prop::collection::vec((text.clone(), text, any::<bool>(), prop::option::of(tokens)), 1..12).prop_map(
        |rows| {
            let samples = rows
                .into_iter()
                .map(|(prompt, response, adv, gt)| Sample {
                    prompt,
                    response,
                    group: if adv { GroupLabel::Advantaged } else { GroupLabel::Disadvantaged },
                    origin: if gt.is_some() { Origin::Real } else { Origin::Synthetic },
                    ground_truth: gt,
                })
                .collect::<Vec<_>>();
            let provenance = GroupedDataset::infer_provenance(&samples);
            GroupedDataset::new(samples, provenance, 3)
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(a in settings(), b in settings(), seed in 0u64..1000, repeats in 1u32..5) {
        let text = format!(
            "name = \"p\"\nseed = {seed}\nrepeats = {repeats}\ngenerations = 4\n[world]\nkind = \"preference\"\nvocab_size = 16\n\
             [[experiments]]\nname = \"a\"\n{a}[[experiments]]\nname = \"b\"\n{b}"
        );
        let spec = parse_config(&text).unwrap();
        let again = parse_config(&spec.to_toml()).unwrap();
        prop_assert_eq!(&again, &spec);
        prop_assert_eq!(again.to_toml(), spec.to_toml());
    }

    #[test]
    fn count_snapshots_are_bit_exact(data in dataset(7, 1), ctx in 0usize..3, lambda in 1e-3f64..3.0, backoff in any::<bool>()) {
        let context = [Context::Unigram, Context::Bigram, Context::Prompt][ctx];
        let smoothing = if backoff { Smoothing::UnigramBackoff } else { Smoothing::Additive };
        let m = fit_counts(CountSpec::new(context, smoothing, lambda, 7), &data).unwrap();
        prop_assert_eq!(parse_model(&model_to_string(&m)).unwrap(), m);
    }

    #[test]
    fn softmax_snapshots_are_bit_exact(w in prop::collection::vec(-1e6f64..1e6, 20)) {
        let m = ModelParams::SoftmaxUnigram(SoftmaxModel::from_weights(4, w).unwrap());
        prop_assert_eq!(parse_model(&model_to_string(&m)).unwrap(), m);
    }

    #[test]
    fn metrics_round_trip(rows in prop::collection::vec(metrics(), 0..6)) {
        let csv = metrics_to_csv(&rows).unwrap();
        prop_assert_eq!(read_metrics(csv.as_bytes()).unwrap(), rows);
    }

    #[test]
    fn datasets_round_trip(data in dataset(50, 0)) {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        prop_assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), data.len());
        prop_assert_eq!(read_dataset(&buf[..]).unwrap(), data);
    }
}

#[test]
fn empty_dataset_file_is_an_empty_real_dataset() {
    let d = read_dataset(&b""[..]).unwrap();
    assert!(d.is_empty());
    assert_eq!(d.provenance, Provenance::Real);
}
