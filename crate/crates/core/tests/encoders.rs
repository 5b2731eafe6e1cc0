use ndcore::{LstmParams, ParamStore, Tape64, Tensor64};
use pfuse::corpus::{Sentence, Vocab};
use pfuse::encoders::{encode_context, encode_sentence, WordEmbedder};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vocab() -> Vocab {
    Vocab::from_tokens(["cat", "dog", "runs"])
}

fn embedder(store: &mut ParamStore<f64>, vocab: &Vocab, fixed: usize) -> WordEmbedder {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..vocab.len() * fixed).map(|i| (i as f64 * 0.37).sin()).collect();
    let vectors = Tensor64::new(vec![vocab.len(), fixed], data).unwrap();
    WordEmbedder::init(store, vectors, vocab.char_count(), 3, &[2, 3], 2, &mut rng).unwrap()
}

fn sentence(vocab: &Vocab, text: &str) -> Sentence {
    Sentence::encode(text, vocab, 20, 18).unwrap()
}

#[test]
fn padding_is_zero_and_repeats_are_identical() {
    let v = vocab();
    let mut store = ParamStore::new();
    let e = embedder(&mut store, &v, 4);
    let mut t = Tape64::new();
    let cat = v.word_id("cat");
    let chars = v.char_ids("cat", 18);
    let x = e.embed_words(&mut t, &store, &[cat, 0, cat], &[chars.clone(), vec![], chars]).unwrap();
    let x = t.value(x);
    assert_eq!(x.shape(), &[3, e.dim]);
    assert_eq!(e.dim, 4 + 2 * 2);
    assert!(x.row(1).iter().all(|&v| v == 0.0));
    assert_eq!(x.row(0), x.row(2));
}

#[test]
fn hand_concatenation_with_zero_convolutions() {
    let v = vocab();
    let mut store = ParamStore::new();
    let e = embedder(&mut store, &v, 3);
    let dog = v.word_id("dog");
    let mut fixed = vec![0.0; v.len() * 3];
    fixed[dog * 3] = 1.0;
    store.set_value(store.id("embed.words").unwrap(), Tensor64::new(vec![v.len(), 3], fixed).unwrap()).unwrap();
    for (k, conv) in e.convs.iter().enumerate() {
        let shape = store.value(conv.w).shape().to_vec();
        store.set_value(conv.w, Tensor64::zeros(&shape)).unwrap();
        let bias = vec![0.5 + k as f64, -1.0 - k as f64];
        store.set_value(conv.b, Tensor64::vector(bias)).unwrap();
    }
    let mut t = Tape64::new();
    let x = e.embed_words(&mut t, &store, &[dog], &[v.char_ids("dog", 18)]).unwrap();
    assert_eq!(t.value(x).data(), &[1.0, 0.0, 0.0, 0.5, -1.0, 1.5, -2.0]);
}

#[test]
fn out_of_vocabulary_word_keeps_character_features() {
    let v = vocab();
    let mut store = ParamStore::new();
    let e = embedder(&mut store, &v, 4);
    let unk = v.word_id("cats");
    assert_eq!(unk, pfuse::corpus::UNK);
    let mut t = Tape64::new();
    let x = e.embed_words(&mut t, &store, &[unk], &[v.char_ids("cats", 18)]).unwrap();
    let row = t.value(x).row(0).to_vec();
    assert!(row[4..].iter().any(|&x| x != 0.0));
}

fn setup(h: usize) -> (Vocab, ParamStore<f64>, WordEmbedder, LstmParams) {
    let v = vocab();
    let mut store = ParamStore::new();
    let e = embedder(&mut store, &v, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lstm = LstmParams::init(&mut store, "sent", e.dim, h, &mut rng).unwrap();
    (v, store, e, lstm)
}

#[test]
fn shared_sentence_encoder_and_pooling() {
    let (v, store, e, lstm) = setup(3);
    let mut t = Tape64::new();
    let a = sentence(&v, "cat runs dog");
    let one = sentence(&v, "dog");
    let parts = e.embed_sentences(&mut t, &store, &[&a, &one, &a]).unwrap();
    let ea = encode_sentence(&mut t, &store, &lstm, parts[0], a.len()).unwrap();
    let eb = encode_sentence(&mut t, &store, &lstm, parts[2], a.len()).unwrap();
    assert_eq!(t.value(ea.pooled), t.value(eb.pooled));

    let h = t.value(ea.hiddens).clone();
    let (n, w) = h.dims2();
    let mut oracle: Vec<f64> = (0..w).map(|j| (0..n).map(|i| h.row(i)[j]).fold(f64::MIN, f64::max)).collect();
    oracle.extend_from_slice(h.row(n - 1));
    assert_eq!(t.value(ea.pooled).data(), oracle.as_slice());

    let e1 = encode_sentence(&mut t, &store, &lstm, parts[1], 1).unwrap();
    let h1 = t.value(e1.hiddens).row(0).to_vec();
    assert_eq!(t.value(e1.pooled).data(), [h1.clone(), h1].concat().as_slice());
}

#[test]
fn context_encoder_cases() {
    let (v, mut store, e, lstm) = setup(3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ctx = LstmParams::init(&mut store, "ctx", 12, 2, &mut rng).unwrap();
    let mut t = Tape64::new();
    let sents = [sentence(&v, "cat runs"), sentence(&v, "dog"), sentence(&v, "runs runs cat")];
    let refs: Vec<&Sentence> = sents.iter().collect();
    let parts = e.embed_sentences(&mut t, &store, &refs).unwrap();
    let aggs: Vec<_> = parts
        .iter()
        .zip(&sents)
        .map(|(&p, s)| encode_sentence(&mut t, &store, &lstm, p, s.len()).unwrap().pooled)
        .collect();

    let single = encode_context(&mut t, &store, &ctx, &aggs[..1]).unwrap();
    let h = t.value(single.context_hiddens).row(0).to_vec();
    assert_eq!(t.value(single.pooled).data(), [h.clone(), h].concat().as_slice());

    let full = encode_context(&mut t, &store, &ctx, &aggs).unwrap();
    let zero = t.constant(Tensor64::zeros(&[12]));
    let padded = t.stack_rows(&[aggs[0], aggs[1], aggs[2], zero]).unwrap();
    let hp = ctx.encode(&mut t, &store, padded, 3).unwrap();
    let pooled = t.pool_max_last(hp, 3).unwrap();
    assert_eq!(t.value(pooled), t.value(full.pooled));

    let swapped = encode_context(&mut t, &store, &ctx, &[aggs[2], aggs[1], aggs[0]]).unwrap();
    let diff: f64 = t
        .value(swapped.pooled)
        .data()
        .iter()
        .zip(t.value(full.pooled).data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-6);
    assert!(matches!(encode_context(&mut t, &store, &ctx, &[]), Err(pfuse::Error::EmptyContext)));
}
