mod common;

use common::{synth, tiny};
use ndcore::{AdamConfig, AdamState, Tape64};
use pfuse::corpus::{sample_negatives, PersonaConfig, Signal};
use pfuse::fusion::FusionStrategy;
use pfuse::harness::{
    hits_at_k, mrr, paired_significance, paired_t_test, rank_of, train, train_model, ModelCheckpoint, Preset, RankingReport,
    ReportMeta, TrainConfig,
};
use pfuse::matchers::{Family, Pass};
use pfuse::{Error, Model32, Model64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Rank by explicit sorting of (score, index) pairs.
fn brute_rank(scores: &[f64], label: usize) -> usize {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.iter().position(|&i| i == label).unwrap() + 1
}

#[test]
fn metrics_agree_with_brute_force_on_small_matrices() {
    for n in 1..=4 {
        let perms = permutations(n);
        for p in &perms {
            let scores: Vec<f64> = p.iter().map(|&v| v as f64).collect();
            for label in 0..n {
                assert_eq!(rank_of(&scores, label), brute_rank(&scores, label));
            }
        }
        // All matrices of up to 4 rows drawn from the permutations, labels fixed per row.
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        for _ in 0..200 {
            let rows = rng.gen_range(1..=4);
            let picks: Vec<(Vec<f64>, usize)> = (0..rows)
                .map(|_| {
                    let p = &perms[rng.gen_range(0..perms.len())];
                    (p.iter().map(|&v| v as f64 + rng.gen::<f64>() * 0.1).collect(), rng.gen_range(0..n))
                })
                .collect();
            let ranks: Vec<usize> = picks.iter().map(|(s, l)| rank_of(s, *l)).collect();
            let brute: Vec<usize> = picks.iter().map(|(s, l)| brute_rank(s, *l)).collect();
            assert_eq!(ranks, brute);
            for k in 1..=n {
                let want = brute.iter().filter(|&&r| r <= k).count() as f64 / rows as f64;
                assert_eq!(hits_at_k(&ranks, k).unwrap(), want);
            }
            let want = brute.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / rows as f64;
            assert!((mrr(&ranks).unwrap() - want).abs() < 1e-15);
        }
    }
    assert_eq!(hits_at_k(&[1, 3, 2, 1], 1).unwrap(), 0.5);
    assert_eq!(mrr(&[1, 2, 4]).unwrap(), 1.75 / 3.0);
}

#[test]
fn random_permutation_mrr_matches_harmonic_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ranks: Vec<usize> = (0..100_000).map(|_| rng.gen_range(1..=20)).collect();
    let oracle = (1..=20).map(|r| 1.0 / r as f64).sum::<f64>() / 20.0;
    assert!((oracle - 0.17988).abs() < 1e-5);
    assert!((mrr(&ranks).unwrap() - oracle).abs() < 0.002);
}

/// Report in which example `i` has its true response at rank `ranks[i]`.
fn report(ids: &[&str], ranks: &[usize]) -> RankingReport {
    let scores = vec![(0..5).map(|i| 4.0 - i as f64).collect::<Vec<f64>>(); ranks.len()];
    let labels: Vec<usize> = ranks.iter().map(|&r| r - 1).collect();
    let ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    RankingReport::from_scores(&ids, &scores, &labels, ReportMeta::default()).unwrap()
}

#[test]
fn student_t_against_table_values() {
    // Paired differences of the classic two-drug sleep study: t = 4.0621, df = 9, p = 0.002833.
    let d = [1.2, 2.4, 1.3, 1.3, 0.0, 1.0, 1.8, 0.8, 4.6, 1.4];
    let zeros = [0.0; 10];
    let s = paired_t_test(&d, &zeros).unwrap();
    assert_eq!(s.df, 9);
    assert!((s.t - 4.0621).abs() < 1e-4);
    assert!((s.p_value - 0.002833).abs() < 1e-3);

    // A sample constructed to sit at the two-sided 5% critical value for df = 9.
    let e = [-1.0, 1.0, -2.0, 2.0, 0.5, -0.5, 1.5, -1.5, 0.0, 0.0];
    let sd = (e.iter().map(|x: &f64| x * x).sum::<f64>() / 9.0).sqrt();
    let mean = 2.262157 * sd / 10f64.sqrt();
    let a: Vec<f64> = e.iter().map(|x| x + mean).collect();
    let s = paired_t_test(&a, &zeros).unwrap();
    assert!((s.p_value - 0.05).abs() < 1e-3, "{}", s.p_value);
}

#[test]
fn paired_significance_conventions() {
    let a = report(&["x", "y", "z"], &[1, 2, 3]);
    let s = paired_significance(&a, &a).unwrap();
    assert_eq!((s.p_value, s.degenerate), (1.0, true));

    let better = report(&["1", "2", "3", "4"], &[1, 1, 1, 1]);
    let worse = report(&["1", "2", "3", "4"], &[2, 2, 2, 2]);
    let s = paired_significance(&better, &worse).unwrap();
    assert!(s.degenerate && s.p_value == 0.0 && s.mean_diff == 0.5);

    let other = report(&["x", "y", "w"], &[1, 2, 3]);
    assert!(matches!(paired_significance(&a, &other), Err(Error::Mismatch(_))));
    let short = report(&["x", "y"], &[1, 2]);
    assert!(paired_significance(&a, &short).is_err());
    // Alignment is by id, not position.
    let shuffled = report(&["z", "x", "y"], &[3, 1, 2]);
    assert_eq!(paired_significance(&a, &shuffled).unwrap().p_value, 1.0);
}

#[test]
fn report_invariants_and_formats() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let n = rng.gen_range(1..30);
        let ids: Vec<String> = (0..n).map(|i| format!("e{i}")).collect();
        let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..20).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..20)).collect();
        let r = RankingReport::from_scores(&ids, &scores, &labels, ReportMeta::default()).unwrap();
        let (h1, h5, m) = (r.hits_at(1).unwrap(), r.hits_at(5).unwrap(), r.mrr().unwrap());
        assert!(h1 <= h5 && h5 <= 1.0 && h1 <= m && m <= 1.0 && m > 0.0);
        assert_eq!(r.hits_at(20).unwrap(), 1.0);
    }
    let r = report(&["a:1", "b:2"], &[1, 3]);
    let tsv = r.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "example_id\trank\tscore_true\thits1");
    assert_eq!(lines[1], "a:1\t1\t4\t1");
    assert_eq!(lines[2], "b:2\t3\t2\t0");
    let json: serde_json::Value = serde_json::from_str(&r.aggregate_json().unwrap()).unwrap();
    for key in ["hits1", "hits5", "mrr", "n", "config_hash"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["n"], 2);
}

#[test]
fn perfect_uniform_and_permuted_scorers() {
    let labels = [0usize, 3, 19, 7, 0];
    let ids: Vec<String> = (0..labels.len()).map(|i| i.to_string()).collect();
    let perfect: Vec<Vec<f64>> = labels.iter().map(|&l| (0..20).map(|i| f64::from(u8::from(i == l))).collect()).collect();
    let r = RankingReport::from_scores(&ids, &perfect, &labels, ReportMeta::default()).unwrap();
    assert_eq!((r.hits_at(1).unwrap(), r.mrr().unwrap()), (1.0, 1.0));

    let uniform = vec![vec![0.25; 20]; labels.len()];
    let r = RankingReport::from_scores(&ids, &uniform, &labels, ReportMeta::default()).unwrap();
    assert_eq!(r.ranks(), labels.iter().map(|l| l + 1).collect::<Vec<_>>());
    assert_eq!(r.hits_at(1).unwrap(), 0.4);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let scores: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let label = rng.gen_range(0..20);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let new_label = perm.iter().position(|&i| i == label).unwrap();
        assert_eq!(rank_of(&scores, label), rank_of(&permuted, new_label));
    }
}

fn tiny_train_config(family: Family, strategy: FusionStrategy) -> TrainConfig {
    let mut c = TrainConfig::defaults(family, strategy, Preset::Desk);
    c.model = tiny(family, strategy);
    c.fixed_dim = 4;
    c.trained_dim = 2;
    c.max_epochs = 2;
    c.batch_size = 4;
    c.lr = 1e-2;
    c
}

#[test]
fn first_step_reduces_the_batch_loss() {
    let (vocab, examples) = synth(Signal::Persona, 2, 20, 4, 31);
    let batch = &examples[..4];
    let config = tiny(Family::Hre, FusionStrategy::ResponseAware);
    let mut model = Model64::init(config, &vocab, 1).unwrap();
    let batch_loss = |model: &Model64| -> f64 {
        batch
            .iter()
            .map(|ex| {
                let mut t = Tape64::new();
                let inst = sample_negatives(ex, pfuse::corpus::NegativeMode::Static19, 0, 0)[0];
                let l = model.loss(&mut t, ex, &inst, &mut Pass::eval()).unwrap();
                t.value(l).item()
            })
            .sum::<f64>()
            / batch.len() as f64
    };
    let before = batch_loss(&model);
    model.store.zero_grad();
    for ex in batch {
        let mut t = Tape64::new();
        let inst = sample_negatives(ex, pfuse::corpus::NegativeMode::Static19, 0, 0)[0];
        let l = model.loss(&mut t, ex, &inst, &mut Pass::eval()).unwrap();
        let l = t.scale(l, 1.0 / batch.len() as f64).unwrap();
        t.backward(l).unwrap().accumulate_into(&t, &mut model.store);
    }
    let mut adam = AdamState::new(AdamConfig { lr: 1e-3, ..AdamConfig::default() }, &model.store);
    adam.step(&mut model.store).unwrap();
    assert!(batch_loss(&model) < before);
}

#[test]
fn training_is_reproducible_and_checkpoints_round_trip() {
    let (vocab, examples) = synth(Signal::Persona, 6, 5, 4, 32);
    let (train_set, valid_set) = examples.split_at(12);
    for family in Family::ALL {
        let config = tiny_train_config(family, FusionStrategy::ContextResponseAware);
        let a = train::<f64>(&config, &vocab, train_set, valid_set).unwrap();
        let b = train::<f64>(&config, &vocab, train_set, valid_set).unwrap();
        assert_eq!(a.log.to_text(), b.log.to_text());
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert!(a.log.steps.len() == 2 * 3 && a.log.epochs.len() == 2);

        let bytes = a.checkpoint.to_bytes();
        let loaded = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, a.checkpoint);
        assert_eq!(loaded.to_bytes(), bytes);
        let restored: Model64 = loaded.to_model().unwrap();
        let meta = ReportMeta::default();
        let persona = PersonaConfig::default();
        let r1 = pfuse::harness::evaluate(&a.model, valid_set, persona, meta.clone(), 1).unwrap();
        let r2 = pfuse::harness::evaluate(&restored, valid_set, persona, meta.clone(), 3).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(loaded.config().unwrap(), config);
        assert!(loaded.check_matches(family, FusionStrategy::ContextResponseAware).is_ok());
        assert!(loaded.check_matches(family, FusionStrategy::NoneAware).is_err());
        assert!(matches!(loaded.to_model::<f32>(), Err(Error::Mismatch(_))));
    }
}

#[test]
fn corrupted_truncated_and_foreign_checkpoints_are_rejected() {
    let (vocab, examples) = synth(Signal::Persona, 3, 5, 4, 33);
    let config = tiny_train_config(Family::Imn, FusionStrategy::ResponseAware);
    let model = Model64::init(config.model.clone(), &vocab, 2).unwrap();
    let ckpt = ModelCheckpoint::from_model(&model, &config, &vocab, 7, 0.5);
    let bytes = ckpt.to_bytes();
    let table_start = 8 + 4 + 16 + ckpt.config_text.len() + ckpt.vocab_text.len() + 24;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let mut bad = bytes.clone();
        let i = rng.gen_range(table_start..bytes.len());
        bad[i] ^= 1 << rng.gen_range(0..8);
        assert!(ModelCheckpoint::from_bytes(&bad).is_err());
    }
    assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(ModelCheckpoint::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(ModelCheckpoint::from_bytes(&wrong_magic).unwrap_err().to_string().contains("magic"));
    let mut wrong_version = bytes.clone();
    wrong_version[8] = 9;
    assert!(ModelCheckpoint::from_bytes(&wrong_version).unwrap_err().to_string().contains("version"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(ModelCheckpoint::load(&path).unwrap(), ckpt);

    // IMN parameters under an HRE configuration.
    let hre = tiny(Family::Hre, FusionStrategy::ResponseAware);
    assert!(matches!(Model64::from_store(hre, model.store.clone()), Err(Error::Mismatch(_))));
    let _ = examples;
}

#[test]
fn non_finite_loss_aborts_with_the_last_good_parameters() {
    let (vocab, examples) = synth(Signal::Persona, 4, 5, 4, 34);
    let config = tiny_train_config(Family::Hre, FusionStrategy::NoneAware);
    let mut model = Model64::init(config.model.clone(), &vocab, 3).unwrap();
    let id = model.store.id("mlp.b2").unwrap();
    model.store.get_mut(id).value.data_mut()[0] = f64::NAN;
    let err = train_model(model, &config, &vocab, &examples[..8], &examples[8..]).err().unwrap();
    match err {
        Error::Diverged { step, checkpoint } => {
            assert_eq!(step, 0);
            assert_eq!(checkpoint.step, 0);
            let restored: Model64 = checkpoint.to_model().unwrap();
            assert!(restored.store.value(restored.store.id("mlp.b2").unwrap()).data()[0].is_nan());
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn single_precision_models_train() {
    let (vocab, examples) = synth(Signal::Persona, 4, 5, 4, 35);
    let config = tiny_train_config(Family::Transformer, FusionStrategy::ResponseAware);
    let out = train::<f32>(&config, &vocab, &examples[..8], &examples[8..]).unwrap();
    let m: Model32 = out.checkpoint.to_model().unwrap();
    assert!(m.scores(&examples[0]).unwrap().iter().all(|s| s.is_finite()));
}

#[test]
fn untrained_scorers_are_at_chance() {
    let (vocab, examples) = synth(Signal::Persona, 400, 20, 6, 36);
    assert!(examples.len() >= 2000);
    let examples = &examples[..2000];
    for family in Family::ALL {
        let model = Model64::init(tiny(family, FusionStrategy::ResponseAware), &vocab, 0).unwrap();
        let r = pfuse::harness::evaluate(&model, examples, PersonaConfig::default(), ReportMeta::default(), 1).unwrap();
        let h = r.hits_at(1).unwrap();
        assert!((h - 0.05).abs() <= 0.02, "{family}: {h}");
    }
}
