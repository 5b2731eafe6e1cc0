mod common;

use common::{configs, synth, synth_with, tiny};
use ndcore::{ParamStore, Tape64, Tensor64};
use pfuse::corpus::{PersonaConfig, PersonaSide, Signal, CLS, SEP};
use pfuse::fusion::FusionStrategy;
use pfuse::matchers::{
    arrange, imn_interact, transformer_encode, truncate_for_transformer, Family, Model, Pass, Subtype, TransformerNet,
};
use pfuse::Model64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

#[test]
fn imn_alignment_two_by_two() {
    let mut t = Tape64::new();
    let c = t.constant(Tensor64::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let r = t.constant(Tensor64::matrix(2, 2, vec![1.0, 1.0, 2.0, 0.0]).unwrap());
    let i = imn_interact(&mut t, c, r).unwrap();
    // e = C R^T
    assert_eq!(t.value(i.alignment).data(), &[1.0, 2.0, 1.0, 0.0]);
    let (a0, a1) = (softmax(&[1.0, 2.0]), softmax(&[1.0, 0.0]));
    let ca = [a0[0] + 2.0 * a0[1], a0[0], a1[0] + 2.0 * a1[1], a1[0]];
    close(t.value(i.context_aligned).data(), &ca, 1e-12);
    let (b0, b1) = (softmax(&[1.0, 1.0]), softmax(&[2.0, 0.0]));
    let ra = [b0[0], b0[1], b1[0], b1[1]];
    close(t.value(i.response_aligned).data(), &ra, 1e-12);
    assert_eq!(t.shape(i.context), &[2, 8]);
}

#[test]
fn imn_degenerate_alignments() {
    let mut t = Tape64::new();
    let x = t.constant(Tensor64::matrix(1, 3, vec![0.4, -1.0, 2.0]).unwrap());
    let i = imn_interact(&mut t, x, x).unwrap();
    let enhanced = t.value(i.context).data().to_vec();
    assert!(enhanced[6..9].iter().all(|&v| v == 0.0));

    let c = t.constant(Tensor64::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    let r = t.constant(Tensor64::matrix(2, 2, vec![0.0, 1.0, 0.0, 2.0]).unwrap());
    let i = imn_interact(&mut t, c, r).unwrap();
    assert_eq!(t.value(i.context_aligned).data(), &[0.0, 1.5]);
    assert_eq!(t.value(i.response_aligned).data(), &[1.0, 0.0, 1.0, 0.0]);
}

#[test]
fn identical_candidates_score_identically() {
    let (vocab, examples) = synth(Signal::Persona, 2, 4, 3, 1);
    for (family, strategy) in configs() {
        let model = Model64::init(tiny(family, strategy), &vocab, 9).unwrap();
        let mut ex = examples[0].clone();
        ex.candidates[1] = ex.candidates[2].clone();
        let s = model.scores(&ex).unwrap();
        assert_eq!(s[1], s[2], "{family}-{strategy}");
        assert!(s.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn persona_enters_only_through_its_slot() {
    let (vocab, examples) = synth(Signal::Persona, 2, 4, 3, 2);
    for family in [Family::Hre, Family::Imn] {
        for strategy in FusionStrategy::ALL {
            let config = tiny(family, strategy);
            let mut model = Model64::init(config.clone(), &vocab, 4).unwrap();
            let id = model.store.id("mlp.w1").unwrap();
            let mut w1 = model.store.value(id).clone();
            let (dc, dp) = (4 * config.context_hidden, 4 * config.hidden);
            let cols = config.mlp_hidden;
            w1.data_mut()[dc * cols..(dc + dp) * cols].iter_mut().for_each(|v| *v = 0.0);
            model.store.set_value(id, w1).unwrap();
            let ex = &examples[1];
            let mut bare = ex.clone();
            bare.persona.clear();
            close(&model.scores(ex).unwrap(), &model.scores(&bare).unwrap(), 1e-12);
        }
    }
}

#[test]
fn none_and_context_aware_agree_without_persona() {
    let persona = PersonaConfig {
        side: PersonaSide::Disabled,
        ..PersonaConfig::default()
    };
    let (vocab, examples) = synth_with(Signal::Context, 2, 4, 3, 3, persona);
    assert!(examples[0].persona.is_empty());
    let na = Model64::init(tiny(Family::Transformer, FusionStrategy::NoneAware), &vocab, 1).unwrap();
    let ca = Model64::from_store(tiny(Family::Transformer, FusionStrategy::ContextAware), na.store.clone()).unwrap();
    assert_eq!(na.scores(&examples[0]).unwrap(), ca.scores(&examples[0]).unwrap());
}

#[test]
fn transformer_probabilities_follow_logits() {
    let (vocab, examples) = synth(Signal::Persona, 2, 6, 3, 4);
    let model = Model64::init(tiny(Family::Transformer, FusionStrategy::ContextResponseAware), &vocab, 2).unwrap();
    let ex = &examples[0];
    let probs = model.scores(ex).unwrap();
    let mut tape = Tape64::new();
    let all: Vec<usize> = (0..ex.candidates.len()).collect();
    let logits = model.logits(&mut tape, ex, &all, &mut Pass::eval()).unwrap();
    let z = tape.value(logits).to_f64_vec();
    for i in 0..z.len() {
        assert!(probs[i] > 0.0 && probs[i] < 1.0);
        for j in 0..z.len() {
            assert_eq!(z[i] < z[j], probs[i] < probs[j]);
        }
    }
}

fn without(store: &ParamStore<f64>, name: &str) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for (_, p) in store.iter().filter(|(_, p)| p.name != name) {
        out.add(&p.name, p.value.clone(), p.trainable).unwrap();
    }
    out
}

#[test]
fn zero_subtype_table_is_a_no_op() {
    let (vocab, examples) = synth(Signal::Persona, 2, 4, 3, 5);
    let config = tiny(Family::Transformer, FusionStrategy::ContextResponseAware);
    let mut model = Model64::init(config.clone(), &vocab, 3).unwrap();
    let sub = model.store.id("tf.sub").unwrap();
    model.store.set_value(sub, Tensor64::zeros(&[3, config.model_dim])).unwrap();
    let plain_config = pfuse::matchers::ModelConfig {
        subtypes: false,
        ..config
    };
    let plain = Model64::from_store(plain_config, without(&model.store, "tf.sub")).unwrap();
    close(&model.scores(&examples[0]).unwrap(), &plain.scores(&examples[0]).unwrap(), 1e-12);
    assert!(Model64::from_store(model.config.clone(), plain.store.clone()).is_err());
}

#[test]
fn padded_positions_do_not_reach_the_classification_state() {
    let (vocab, _) = synth(Signal::Persona, 1, 4, 3, 6);
    let config = tiny(Family::Transformer, FusionStrategy::ContextResponseAware);
    let model = Model64::init(config.clone(), &vocab, 3).unwrap();
    let net = TransformerNet::from_store(&model.store, &config).unwrap();
    let segments = [0, 0, 0, 1, 1, 1];
    let subtypes = [0, 0, 1, 2, 2, 2];
    let mask = [true, true, true, true, true, false];
    let cls = |tokens: &[usize]| {
        let mut t = Tape64::new();
        let x = transformer_encode(&mut t, &model.store, &net, tokens, &segments, Some(&subtypes), &mask, 0.0, &mut Pass::eval())
            .unwrap();
        t.value(x).row(0).to_vec()
    };
    assert_eq!(cls(&[CLS, 5, 6, SEP, 7, 8]), cls(&[CLS, 5, 6, SEP, 7, 11]));
    assert_ne!(cls(&[CLS, 5, 6, SEP, 7, 8]), cls(&[CLS, 5, 9, SEP, 7, 8]));
}

/// Straight-line recomputation of one post-norm encoder layer with one head.
fn reference_cls(store: &ParamStore<f64>, tokens: &[usize], segments: &[usize], subtypes: &[usize]) -> Vec<f64> {
    let get = |n: &str| store.value(store.id(n).unwrap()).clone();
    let d = 4;
    let n = tokens.len();
    let ln = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / d as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let s = (var + 1e-6).sqrt();
        (0..d).map(|j| (x[j] - mean) / s * g[j] + b[j]).collect()
    };
    let lin = |x: &[f64], w: &Tensor64, b: &Tensor64| -> Vec<f64> {
        let (r, c) = w.dims2();
        (0..c).map(|j| b.data()[j] + (0..r).map(|i| x[i] * w.data()[i * c + j]).sum::<f64>()).collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
    let (tok, pos, seg, sub) = (get("tf.tok"), get("tf.pos"), get("tf.seg"), get("tf.sub"));
    let (eg, eb) = (get("tf.emb_ln.g"), get("tf.emb_ln.b"));
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let e: Vec<f64> = (0..d)
                .map(|j| tok.row(tokens[i])[j] + pos.row(i)[j] + seg.row(segments[i])[j] + sub.row(subtypes[i])[j])
                .collect();
            ln(&e, eg.data(), eb.data())
        })
        .collect();
    let p = |k: &str| get(&format!("tf.0.{k}"));
    let q: Vec<Vec<f64>> = x.iter().map(|r| lin(r, &p("wq"), &p("bq"))).collect();
    let k: Vec<Vec<f64>> = x.iter().map(|r| lin(r, &p("wk"), &p("bk"))).collect();
    let v: Vec<Vec<f64>> = x.iter().map(|r| lin(r, &p("wv"), &p("bv"))).collect();
    let scores: Vec<f64> = (0..n).map(|j| (0..d).map(|c| q[0][c] * k[j][c]).sum::<f64>() / 2.0).collect();
    let a = softmax(&scores);
    let ctx: Vec<f64> = (0..d).map(|c| (0..n).map(|j| a[j] * v[j][c]).sum()).collect();
    let o = lin(&ctx, &p("wo"), &p("bo"));
    let h: Vec<f64> = (0..d).map(|c| x[0][c] + o[c]).collect();
    let h = ln(&h, p("ln1.g").data(), p("ln1.b").data());
    let f: Vec<f64> = lin(&h, &p("w1"), &p("b1")).into_iter().map(gelu).collect();
    let f = lin(&f, &p("w2"), &p("b2"));
    let y: Vec<f64> = (0..d).map(|c| h[c] + f[c]).collect();
    ln(&y, p("ln2.g").data(), p("ln2.b").data())
}

#[test]
fn single_head_layer_matches_reference() {
    let (vocab, _) = synth(Signal::Persona, 1, 4, 3, 7);
    let mut config = tiny(Family::Transformer, FusionStrategy::ContextResponseAware);
    config.heads = 1;
    let mut model = Model64::init(config.clone(), &vocab, 5).unwrap();
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for (k, id) in ids.into_iter().enumerate() {
        let p = model.store.get_mut(id);
        for (i, v) in p.value.data_mut().iter_mut().enumerate() {
            *v = 0.5 * ((k * 31 + i) as f64 * 0.7).sin() + if p.name.ends_with(".g") { 1.0 } else { 0.0 };
        }
    }
    let net = TransformerNet::from_store(&model.store, &config).unwrap();
    let tokens = [CLS, 6, 9, 4, SEP, 7, SEP];
    let segments = [0, 0, 0, 0, 0, 1, 1];
    let subtypes = [0, 0, 0, 1, 2, 2, 2];
    let mut t = Tape64::new();
    let x = transformer_encode(&mut t, &model.store, &net, &tokens, &segments, Some(&subtypes), &[true; 7], 0.0, &mut Pass::eval())
        .unwrap();
    let got = t.value(x).row(0).to_vec();
    close(&got, &reference_cls(&model.store, &tokens, &segments, &subtypes), 1e-10);
}

#[test]
fn empty_persona_uses_context_and_response_subtypes_only() {
    let (c, r): (Vec<usize>, Vec<usize>) = (vec![5, 6], vec![7]);
    let a = arrange(&[(&[], Subtype::Persona), (&c, Subtype::Context)], &[(&r, Subtype::Response)]);
    assert!(!a.subtypes.contains(&(Subtype::Persona as usize)));
}

#[test]
fn truncation_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sent = |rng: &mut ChaCha8Rng, max: usize| -> Vec<usize> { (0..rng.gen_range(1..=max)).map(|_| rng.gen_range(4..50)).collect() };
    for _ in 0..1000 {
        let persona: Vec<Vec<usize>> = (0..rng.gen_range(0..=5)).map(|_| sent(&mut rng, 40)).collect();
        let context: Vec<Vec<usize>> = (0..rng.gen_range(1..=15)).map(|_| sent(&mut rng, 60)).collect();
        let response = sent(&mut rng, 400);
        let t = truncate_for_transformer(&persona, &context, &response, 3, 320).unwrap();
        let flat = |v: &[Vec<usize>]| v.concat();
        let a = arrange(
            &[(&flat(&t.persona), Subtype::Persona), (&flat(&t.context), Subtype::Context)],
            &[(&t.response, Subtype::Response)],
        );
        assert!(a.len() <= 320);
        assert!(!t.response.is_empty());
        // Surviving context is a suffix of the original.
        assert_eq!(t.context.as_slice(), &context[context.len() - t.context.len()..]);
    }
    let (p, c, r) = (vec![vec![4; 3]], vec![vec![5; 4]], vec![6; 2]);
    let t = truncate_for_transformer(&p, &c, &r, 3, 320).unwrap();
    assert_eq!((t.persona, t.context, t.response), (p, c, r));
    let long: Vec<Vec<usize>> = (0..20).map(|i| vec![10 + i; 20]).collect();
    let t = truncate_for_transformer(&[], &long, &[6; 10], 3, 320).unwrap();
    assert_eq!(t.context.len(), 15);
    assert_eq!(t.context[0][0], 15);
}

#[test]
fn interaction_free_imn_is_hre_shaped() {
    let (vocab, examples) = synth(Signal::Persona, 2, 4, 3, 9);
    for strategy in FusionStrategy::ALL {
        let hre = Model64::init(tiny(Family::Hre, strategy), &vocab, 6).unwrap();
        let mut cfg = tiny(Family::Imn, strategy);
        cfg.interaction = false;
        let imn = Model::from_store(cfg, hre.store.clone()).unwrap();
        assert_eq!(hre.scores(&examples[0]).unwrap(), imn.scores(&examples[0]).unwrap());
    }
}
