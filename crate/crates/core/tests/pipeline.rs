use discorel::corpus::{read_instances, write_instances, LoadOptions};
use discorel::eval::{eval_binary, eval_multiclass, fingerprint};
use discorel::synth::{synth_generate, SynthSpec};
use discorel::training::{train, train_dev_split};
use discorel::{Dataset, FeatureMap, Model, ModelMode, TrainConfig};
use proptest::prelude::*;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        pairs: 12,
        k: 6,
        seed,
        ..SynthSpec::default()
    }
}

fn config(mode: ModelMode) -> TrainConfig {
    TrainConfig {
        k: 6,
        epochs: 2,
        mode,
        ..TrainConfig::default()
    }
}

#[test]
fn saved_model_predicts_identically() {
    let corpus = synth_generate(&small_spec(5));
    let ds = &corpus.dataset;
    let map = FeatureMap::select(ds, Default::default()).unwrap();
    let (model, log) = train(ds, &corpus.embeddings, Some(&map), &config(ModelMode::Full)).unwrap();
    assert_eq!(log.len(), 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    assert_eq!(fingerprint(&loaded), fingerprint(&model));
    for inst in &ds.instances {
        assert_eq!(
            loaded.scores(inst, &corpus.embeddings).unwrap(),
            model.scores(inst, &corpus.embeddings).unwrap()
        );
    }
    let a = eval_multiclass(&model, ds, &corpus.embeddings).unwrap();
    let b = eval_multiclass(&loaded, ds, &corpus.embeddings).unwrap();
    assert_eq!(a.to_string(), b.to_string());
}

#[test]
fn full_rank_additive_trains_and_round_trips() {
    let corpus = synth_generate(&small_spec(4));
    let (model, log) = train(&corpus.dataset, &corpus.embeddings, None, &config(ModelMode::AdditiveFullRank)).unwrap();
    let c = &model.params.classifier;
    assert_eq!(c.root_full.len(), corpus.dataset.labels().len());
    assert!(c.root_full.iter().any(|w| w.iter().any(|&v| v != 0.0)));
    assert!(c.root.iter().all(|f| f.a3.iter().all(|&v| v == 0.0)));
    assert!(log[1].mean_objective.is_finite());
    let back = Model::from_json(&model.to_json()).unwrap();
    assert_eq!(back.params, model.params);
}

#[test]
fn instances_survive_write_and_read() {
    let corpus = synth_generate(&small_spec(9));
    let mut buf = Vec::new();
    write_instances(&mut buf, &corpus.dataset.instances).unwrap();
    let back = read_instances(buf.as_slice(), LoadOptions::default()).unwrap();
    assert_eq!(back, corpus.dataset.instances);
}

#[test]
fn binary_report_counts_cover_dataset() {
    let corpus = synth_generate(&small_spec(2));
    let (model, _) = train(&corpus.dataset, &corpus.embeddings, None, &config(ModelMode::Upward)).unwrap();
    let pos = corpus.dataset.labels()[0].clone();
    let r = eval_binary(&model, &corpus.dataset, &corpus.embeddings, &pos).unwrap();
    let b = r.binary.unwrap();
    assert_eq!(b.tp + b.fp + b.fn_ + b.tn, corpus.dataset.len());
}

#[test]
fn mode_without_features_rejects_missing_map() {
    let corpus = synth_generate(&small_spec(1));
    assert!(train(&corpus.dataset, &corpus.embeddings, None, &config(ModelMode::UpwardFeatures)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synth_instances_are_well_formed(seed in any::<u64>(), pairs in 1usize..20) {
        let corpus = synth_generate(&SynthSpec { pairs, k: 4, seed, ..SynthSpec::default() });
        let ds: &Dataset = &corpus.dataset;
        prop_assert_eq!(ds.len(), 2 * pairs);
        let subjects = ds.instances.iter().filter(|i| i.labels == ["subject"]).count();
        prop_assert_eq!(subjects, pairs);
        for inst in &ds.instances {
            prop_assert!(inst.has_shared_entity());
            prop_assert_eq!(inst.labels.len(), 1);
            for tok in inst.tokens_m().into_iter().chain(inst.tokens_n()) {
                prop_assert!(corpus.embeddings.contains(tok));
            }
        }
    }

    #[test]
    fn prediction_ignores_instance_order(seed in 0u64..1000) {
        let corpus = synth_generate(&small_spec(seed));
        let cfg = TrainConfig { epochs: 1, seed, ..config(ModelMode::UpwardDownward) };
        let (model, _) = train(&corpus.dataset, &corpus.embeddings, None, &cfg).unwrap();
        let forward = model.predict_all(&corpus.dataset.instances, &corpus.embeddings).unwrap();
        let mut reversed: Vec<_> = corpus.dataset.instances.clone();
        reversed.reverse();
        let mut backward = model.predict_all(&reversed, &corpus.embeddings).unwrap();
        backward.reverse();
        prop_assert_eq!(forward, backward);
    }

    #[test]
    fn dev_split_partitions(n in 0usize..200, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let (train_idx, dev) = train_dev_split(n, fraction, seed);
        prop_assert_eq!(dev.len(), (fraction * n as f64).round() as usize);
        let mut all: Vec<_> = train_idx.iter().chain(&dev).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
