//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see
//! the lines; the test fails if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsc_core::depmask::{build_word_mask, expand_to_subwords, parse_conllu};
use wsc_core::encoder::{resolve_inside_indices, EncoderConfig, LayerPosition, MaskPlan, Model};
use wsc_core::evaluator::{consistent_accuracy, evaluate, Report};
use wsc_core::numcore::{masked_softmax, softmax_rows, MaskMatrix, MaskMode, Tensor};
use wsc_core::schema::{generate_candidates, parse_schemas, ModelBundle, Prediction, Schema};
use wsc_core::seeds;
use wsc_core::synth;
use wsc_core::tokenizer::{encode_pair, Encoding, Vocab};
use wsc_core::trainer::{
    decode_checkpoint, encode_checkpoint, fine_tune, make_training_examples, CheckpointMeta, Hyperparams,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let head_mask = build_word_mask(&random_tree(4, &mut rng));
    let head = head_gradcheck(4, 6, 6, &head_mask, MaskMode::Additive, &mut rng);

    let vocab = toy_vocab();
    let cfg = toy_config(vocab.len(), 10);
    let mut inside = model(cfg.clone(), MaskPlan::inside(LayerPosition::Last, 1, 2).unwrap(), &mut rng);
    perturb(&mut inside.params, 0.3, &mut rng);
    let (enc, mask) = random_encoding(&vocab, 8, &mut rng);
    let inside_r = encoder_gradcheck(&inside, &enc, &mask, &mut rng);

    let mut outside = model(cfg, MaskPlan::Outside { steps: 3 }, &mut rng);
    perturb(&mut outside.params, 0.3, &mut rng);
    let (enc, mask) = random_encoding(&vocab, 8, &mut rng);
    let outside_r = encoder_gradcheck(&outside, &enc, &mask, &mut rng);

    let elapsed = start.elapsed();
    let worst = head.max_rel_error.max(inside_r.max_rel_error).max(outside_r.max_rel_error);
    let pass = head.passed && inside_r.passed && outside_r.passed && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "max rel err head {:.2e}, inside-last-1 {:.2e}, outside-3 {:.2e} (worst {worst:.2e} < 1e-4), {} coords, {:.1}s < 60s",
            head.max_rel_error,
            inside_r.max_rel_error,
            outside_r.max_rel_error,
            head.coordinates + inside_r.coordinates + outside_r.coordinates,
            elapsed.as_secs_f64()
        ),
    )
}

fn mask_semantics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_masked: f32 = 0.0;
    let mut identical = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let logits: Vec<f64> = (0..n * n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let logits = Tensor::<f32>::from_f64(vec![n, n], &logits).unwrap();
        let mask = build_word_mask(&random_tree(n, &mut rng));
        let probs = masked_softmax(&logits, &mask, MaskMode::Additive).unwrap();
        for i in 0..n {
            for j in 0..n {
                if !mask.get(i, j) {
                    worst_masked = worst_masked.max(probs.at(i, j));
                }
            }
        }
        let plain = softmax_rows(&logits).unwrap();
        let ones = MaskMatrix::ones(n, n);
        for mode in [MaskMode::Additive, MaskMode::Multiplicative] {
            let masked = masked_softmax(&logits, &ones, mode).unwrap();
            identical &= masked.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_masked < 1e-7 && identical && elapsed < Duration::from_secs(10),
        format!(
            "1000 instances: max masked prob {worst_masked:.1e} < 1e-7, all-ones bit-identical in both modes: {identical}, {:.2}s < 10s",
            elapsed.as_secs_f64()
        ),
    )
}

const CAT_SITS: &str = "\
# sent_id = cat-sits
1\tA\ta\tDET\t_\t_\t2\tdet\t_\t_
2\tcat\tcat\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tsits\tsit\tVERB\t_\t_\t0\troot\t_\t_
4\ton\ton\tADP\t_\t_\t3\tprep\t_\t_
5\tthe\tthe\tDET\t_\t_\t6\tdet\t_\t_
6\tdesk\tdesk\tNOUN\t_\t_\t4\tpobj\t_\t_
7\t.\t.\tPUNCT\t_\t_\t3\tpunct\t_\t_
";

/// Hand-derived: each row marks the word itself, its head and its children.
const CAT_SITS_GRID: &str = "\
1 1 0 0 0 0 0
1 1 1 0 0 0 0
0 1 1 1 0 0 1
0 0 1 1 0 1 0
0 0 0 0 1 1 0
0 0 0 1 1 1 0
0 0 1 0 0 0 1
";

fn mask_construction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let vocab = toy_vocab();
    let mut trees_ok = true;
    let mut expansion_ok = true;
    for _ in 0..500 {
        let n = rng.random_range(1..=15);
        let words: Vec<String> = (0..n).map(|_| TOY_WORDS[rng.random_range(0..TOY_WORDS.len())].to_string()).collect();
        let parse = random_parse(&words, &mut rng);
        let d = build_word_mask(&parse);
        trees_ok &= d.is_symmetric() && d.has_unit_diagonal();

        let split = rng.random_range(0..n);
        let enc = encode_pair(&words[..split], &words[split..], &vocab, 64).unwrap();
        let t = expand_to_subwords(&d, &enc).unwrap();
        expansion_ok &= t.first_empty_row().is_none() && expansion_follows_words(&d, &t, &enc);
        // monotone: adding a word-level edge only adds token-level entries
        let mut wider = d.clone();
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        wider.set(a, b, true);
        let t2 = expand_to_subwords(&wider, &enc).unwrap();
        expansion_ok &= t.bits().iter().zip(t2.bits()).all(|(x, y)| x <= y);
    }
    let cat_sits = &parse_conllu(CAT_SITS).unwrap()[0];
    let grid = build_word_mask(cat_sits).to_grid();
    let cat_sits_ok = grid == CAT_SITS_GRID;
    outcome(
        trees_ok && expansion_ok && cat_sits_ok,
        format!("500 trees symmetric+unit diagonal: {trees_ok}, expansion monotone with no empty rows: {expansion_ok}, 'a cat sits on the desk' grid exact: {cat_sits_ok}"),
    )
}

fn expansion_follows_words(word: &MaskMatrix, token: &MaskMatrix, enc: &Encoding) -> bool {
    let n = enc.len();
    (0..n).all(|i| {
        (0..n).all(|j| match (enc.alignment[i], enc.alignment[j]) {
            (Some(a), Some(b)) => token.get(i, j) == word.get(a, b),
            _ => token.get(i, j),
        })
    })
}

fn layer_range_fidelity() -> Outcome {
    use LayerPosition::*;
    let cases: [(LayerPosition, usize, usize, Vec<usize>); 5] = [
        (Last, 5, 12, (7..=11).collect()),
        (Middle, 5, 12, (3..=7).collect()),
        (First, 5, 12, (0..=4).collect()),
        (Last, 5, 24, (19..=23).collect()),
        (Middle, 5, 24, (10..=14).collect()),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (pos, t, l, want) in cases {
        let got = resolve_inside_indices(pos, t, l).unwrap();
        let ok = got == want;
        pass &= ok;
        let span = |v: &[usize]| format!("{{{}..{}}}", v[0], v[v.len() - 1]);
        if ok {
            parts.push(format!("({pos},{t},{l})={}", span(&got)));
        } else {
            parts.push(format!("({pos},{t},{l})={} expected {}", span(&got), span(&want)));
        }
    }
    outcome(pass, parts.join(", "))
}

fn parameter_sharing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let vocab = toy_vocab();
    let counts: Vec<(usize, usize)> = [2, 3, 5, 8]
        .into_iter()
        .map(|t| {
            let m = model(toy_config(vocab.len(), 16), MaskPlan::Outside { steps: t }, &mut rng);
            let bytes = encode_checkpoint(&m, &CheckpointMeta::default()).unwrap();
            (t, decode_checkpoint(&bytes).unwrap().0.params.len())
        })
        .collect();
    let pass = counts.windows(2).all(|w| w[0].1 == w[1].1);
    let desc: Vec<String> = counts.iter().map(|(t, c)| format!("t={t}: {c}")).collect();
    outcome(pass, format!("distinct tensors per checkpoint {}", desc.join(", ")))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let vocab = toy_vocab();
    let cfg = toy_config(vocab.len(), 10);
    let mut worst: f64 = 0.0;
    for plan in [MaskPlan::None, MaskPlan::Inside { layers: vec![0, 1] }] {
        let mut m = model(cfg.clone(), plan, &mut rng);
        perturb(&mut m.params, 0.5, &mut rng);
        for _ in 0..20 {
            let (enc, mask) = random_encoding(&vocab, 10, &mut rng);
            let got = m.score(&enc, Some(&mask)).unwrap();
            let want = reference_probability(&m, &enc, Some(&mask));
            worst = worst.max((got - want).abs());
        }
    }
    outcome(
        worst < 1e-5,
        format!("max |p - p_ref| over 20 encodings without and 20 with masks: {worst:.2e} < 1e-5"),
    )
}

fn overfit_integration() -> Outcome {
    let start = Instant::now();
    let corpus = synth::generate(20, 7, false).unwrap();
    let parses = corpus.parse_index().unwrap();
    let hyper = Hyperparams::default();
    let cfg = EncoderConfig::desk(corpus.vocab.len());
    let init = Model::init(cfg, MaskPlan::None, &mut seeds::rng(hyper.seed, seeds::INIT)).unwrap();
    let ex = make_training_examples(&corpus.schemas, &corpus.vocab, &parses, hyper.max_seq_len).unwrap();
    let (trained, log) = fine_tune(&init, &ex, &hyper).unwrap();
    let elapsed = start.elapsed();
    let bundle = ModelBundle {
        model: &trained,
        vocab: &corpus.vocab,
    };
    let report = evaluate(bundle, &corpus.schemas, &parses).unwrap();
    let (again, _) = fine_tune(&init, &ex, &hyper).unwrap();
    let meta = CheckpointMeta::default();
    let same = encode_checkpoint(&trained, &meta).unwrap() == encode_checkpoint(&again, &meta).unwrap();
    let train_acc = log.last().unwrap().train_accuracy;
    let best = log.iter().map(|l| l.train_accuracy).fold(0.0, f64::max);
    let full = report.full.accuracy.unwrap();
    outcome(
        train_acc == 1.0 && full == 1.0 && same && elapsed < Duration::from_secs(300),
        format!(
            "{} epochs: train acc {train_acc:.3} (best {best:.3}), full acc {full:.3}, rerun bit-identical: {same}, {:.1}s < 300s",
            log.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_prediction_set<R: Rng + ?Sized>(rng: &mut R) -> (Vec<Schema>, Vec<Prediction>) {
    let mut schemas = Vec::new();
    let groups = rng.random_range(0..8);
    let singles = rng.random_range(0..12);
    let base = |id: String, associative: bool, group: Option<String>, switched: bool, answer: usize| Schema {
        id,
        words: vec!["x".into(), "it".into()],
        pronoun_span: [1, 2],
        candidates: vec!["a".into(), "b".into()],
        answer_index: answer,
        associative,
        switchable: group.is_some(),
        switch_group: group,
        switched,
    };
    for g in 0..groups {
        let answer = rng.random_range(0..2);
        let assoc = rng.random_bool(0.3);
        schemas.push(base(format!("g{g}"), assoc, Some(format!("grp{g}")), false, answer));
        schemas.push(base(format!("g{g}-sw"), assoc, Some(format!("grp{g}")), true, 1 - answer));
    }
    for s in 0..singles {
        schemas.push(base(format!("s{s}"), rng.random_bool(0.3), None, false, rng.random_range(0..2)));
    }
    let preds = schemas
        .iter()
        .map(|s| {
            let a: f64 = rng.random();
            let b = if rng.random_bool(0.1) { a } else { rng.random() };
            Prediction::from_scores(s, [a, b])
        })
        .collect();
    (schemas, preds)
}

fn protocol_arithmetic() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut ok = 0;
    for _ in 0..1000 {
        let (schemas, preds) = random_prediction_set(&mut rng);
        let r = Report::from_predictions(&schemas, preds).unwrap();
        let min_acc = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a.min(b));
        let consistent_bounded = match (r.consistent.accuracy, min_acc(r.unswitched.accuracy, r.switched.accuracy)) {
            (Some(c), Some(m)) => c <= m,
            (None, None) => true,
            _ => false,
        };
        let counts = r.full.total == r.associative.total + r.non_associative.total
            && r.full.correct == r.associative.correct + r.non_associative.correct
            && r.unswitched.total == r.switched.total
            && r.switched.total == r.consistent.total;
        ok += (counts && consistent_bounded) as usize;
    }
    // pairs (T,T), (T,F), (F,F)
    let mut schemas = Vec::new();
    let mut preds = Vec::new();
    for (k, (x, y)) in [(true, true), (true, false), (false, false)].into_iter().enumerate() {
        for (switched, right) in [(false, x), (true, y)] {
            let s = Schema {
                id: format!("p{k}{}", if switched { "-sw" } else { "" }),
                words: vec!["x".into(), "it".into()],
                pronoun_span: [1, 2],
                candidates: vec!["a".into(), "b".into()],
                answer_index: 0,
                associative: false,
                switchable: true,
                switch_group: Some(format!("p{k}")),
                switched,
            };
            preds.push(Prediction::from_scores(&s, if right { [1.0, 0.0] } else { [0.0, 1.0] }));
            schemas.push(s);
        }
    }
    let third = consistent_accuracy(&schemas, &preds).unwrap();
    let third_ok = (third.correct, third.total) == (1, 3);
    outcome(
        ok == 1000 && third_ok,
        format!("invariants held in {ok}/1000 trials, consistent((T,T),(T,F),(F,F)) = {}/{}", third.correct, third.total),
    )
}

const TROPHY: &str = r#"{"id":"trophy","words":["The","trophy","doesn't","fit","into","the","brown","suitcase","because","it","is","too","large","."],"pronoun_span":[9,10],"candidates":["the trophy","the brown suitcase"],"answer_index":0,"associative":false,"switchable":false,"switch_group":null,"switched":false}"#;

/// Rebuilds word-level text from an encoding: specials stay, pieces of one
/// word are glued back together.
fn layout(enc: &Encoding) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut last_word = None;
    for (i, piece) in enc.pieces.iter().enumerate() {
        match enc.alignment[i] {
            None => {
                out.push(piece.clone());
                last_word = None;
            }
            Some(w) if last_word == Some(w) => {
                out.last_mut().unwrap().push_str(piece.trim_start_matches("##"));
            }
            Some(w) => {
                out.push(piece.clone());
                last_word = Some(w);
            }
        }
    }
    out
}

fn candidate_fidelity() -> Outcome {
    let schema = parse_schemas(TROPHY).unwrap().remove(0);
    let vocab = Vocab::from_pieces([
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "trophy", "doesn", "'", "t", "fit", "into", "brown", "suit",
        "##case", "because", "is", "too", "large", ".",
    ])
    .unwrap();
    let expected = [
        "[CLS] the trophy doesn't fit into the brown suitcase because [SEP] the trophy is too large . [SEP]",
        "[CLS] the trophy doesn't fit into the brown suitcase because [SEP] the brown suitcase is too large . [SEP]",
    ];
    let pair = generate_candidates(&schema);
    let mut ok = true;
    let mut shown = Vec::new();
    for (sentence, want) in pair.0.iter().zip(expected) {
        let enc = encode_pair(&sentence.seg_a, &sentence.seg_b, &vocab, 64).unwrap();
        let got = layout(&enc).join(" ");
        ok &= got == want && !enc.token_ids.contains(&vocab.unk_id());
        shown.push(got);
    }
    outcome(ok, format!("candidate 1: \"{}\"", shown[0]))
}

fn checkpoint_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let vocab = toy_vocab();
    let mut identical = 0;
    let mut rejected = 0;
    for k in 0..10 {
        let plan = match k % 3 {
            0 => MaskPlan::None,
            1 => MaskPlan::inside(LayerPosition::Last, 1, 2).unwrap(),
            _ => MaskPlan::Outside { steps: 1 + k },
        };
        let mut m = model(toy_config(vocab.len(), 12), plan, &mut rng);
        perturb(&mut m.params, 1.0, &mut rng);
        let meta = CheckpointMeta {
            step: k,
            seed: rng.random(),
            corpus_digest: format!("{k:064x}"),
        };
        let bytes = encode_checkpoint(&m, &meta).unwrap();
        let (back, back_meta) = decode_checkpoint(&bytes).unwrap();
        identical += (encode_checkpoint(&back, &back_meta).unwrap() == bytes && back == m) as usize;
        let mut bad = bytes.clone();
        let at = bytes.len() - 1 - rng.random_range(0..4);
        bad[at] ^= 0x5a;
        rejected += decode_checkpoint(&bad).is_err() as usize;
    }
    outcome(
        identical == 10 && rejected == 10,
        format!("byte-identical round trips {identical}/10 (including outside plans), corrupted CRC rejected {rejected}/10"),
    )
}

fn directional_sanity() -> Outcome {
    let corpus = synth::generate(200, 11, false).unwrap();
    let parses = corpus.parse_index().unwrap();
    let cfg = EncoderConfig::desk(corpus.vocab.len());
    let mut sums = [0.0; 2];
    let mut identical_to_none = true;
    let plans = [
        MaskPlan::None,
        MaskPlan::inside(LayerPosition::Last, 1, cfg.num_layers).unwrap(),
    ];
    let ex = make_training_examples(&corpus.schemas, &corpus.vocab, &parses, 64).unwrap();
    for seed in 0..5u64 {
        let hyper = Hyperparams {
            seed,
            ..Hyperparams::default()
        };
        let mut trained = Vec::new();
        for (k, plan) in plans.iter().enumerate() {
            let init = Model::init(cfg.clone(), plan.clone(), &mut seeds::rng(seed, seeds::INIT)).unwrap();
            let (m, _) = fine_tune(&init, &ex, &hyper).unwrap();
            let bundle = ModelBundle {
                model: &m,
                vocab: &corpus.vocab,
            };
            let r = evaluate(bundle, &corpus.schemas, &parses).unwrap();
            sums[k] += r.full.accuracy.unwrap() / 5.0;
            trained.push(m);
        }
        identical_to_none &= trained[0].params == trained[1].params;
    }
    outcome(
        sums[1] > sums[0],
        format!(
            "mean full acc over 5 seeds: inside-last-1 {:.3} vs none {:.3} (trained weights identical: {identical_to_none})",
            sums[1], sums[0]
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("mask semantics", mask_semantics),
        ("mask construction", mask_construction),
        ("layer-range fidelity", layer_range_fidelity),
        ("parameter sharing", parameter_sharing),
        ("oracle equivalence", oracle_equivalence),
        ("overfit integration", overfit_integration),
        ("protocol arithmetic", protocol_arithmetic),
        ("candidate fidelity", candidate_fidelity),
        ("checkpoint round trip", checkpoint_round_trip),
        ("directional sanity", directional_sanity),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2}. {name}: {}", k + 1, o.detail);
        if !o.pass {
            failed.push(k + 1);
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed.len(), criteria.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
