//! Seeded synthetic schemas with gold parses and a matching vocabulary.
//!
//! Each sentence reads "the A VERB the B because it was ADJ ." where A and B
//! come from opposite noun classes and the answer is the noun whose class
//! matches the adjective. The gold parses mirror a parser that only accepts
//! the plausible reading: in the correct candidate sentence the substituted
//! noun is the subject of the adjective, in the other it hangs off the main
//! verb and the adjective has no subject.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::depmask::DepParse;
use crate::error::{Error, Result};
use crate::schema::{generate_candidates, CandidateSentence, ParseIndex, Schema};
use crate::seeds;
use crate::tokenizer::{Vocab, CLS, MASK, PAD, SEP, UNK};

const HEAVY_NOUNS: &[&str] = &["rock", "anvil", "boulder", "safe", "piano", "bookcase", "truck", "statue"];
const LIGHT_NOUNS: &[&str] = &["feather", "leaf", "balloon", "napkin", "ribbon", "suitcase", "kite", "petal"];
const HEAVY_ADJS: &[&str] = &["heavy", "massive", "dense"];
const LIGHT_ADJS: &[&str] = &["light", "flimsy", "airy"];
const VERBS: &[&str] = &["crushed", "hit", "covered", "pushed", "followed", "passed"];

/// Words stored in the vocabulary as two pieces, so some candidates span
/// several tokens.
const SPLIT_WORDS: &[(&str, &str, &str)] = &[("bookcase", "book", "##case"), ("suitcase", "suit", "##case")];

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub schemas: Vec<Schema>,
    /// One parse per candidate sentence, `sent_id` = `<schema id>/<candidate>`.
    pub parses: Vec<DepParse>,
    pub vocab: Vocab,
}

impl SynthCorpus {
    pub fn parse_index(&self) -> Result<ParseIndex> {
        ParseIndex::from_parses(self.parses.clone())
    }

    pub fn conllu(&self) -> String {
        self.parses.iter().map(crate::depmask::to_conllu).collect()
    }
}

/// Parse of a candidate sentence built from the template. `correct` decides
/// whether the substituted noun attaches to the adjective or to the verb.
pub fn template_parse(sentence: &CandidateSentence, correct: bool, sent_id: String) -> Result<DepParse> {
    let words = sentence.words();
    // the A VERB the B because | the X was ADJ .
    let n_sub = sentence.seg_b.len() - 3;
    let subj = 6 + n_sub - 1;
    let adj = subj + 2;
    let mut heads: Vec<Option<usize>> = vec![Some(1), Some(2), None, Some(4), Some(2), Some(adj)];
    let mut deprels: Vec<String> = ["det", "nsubj", "root", "det", "obj", "mark"].map(String::from).to_vec();
    for k in 0..n_sub {
        let i = 6 + k;
        if i == subj && correct {
            heads.push(Some(adj));
            deprels.push("nsubj".into());
        } else if i == subj {
            heads.push(Some(2));
            deprels.push("dep".into());
        } else {
            heads.push(Some(subj));
            deprels.push("det".into());
        }
    }
    heads.extend([Some(adj), Some(2), Some(2)]);
    deprels.extend(["cop", "advcl", "punct"].map(String::from));
    let mut parse = DepParse::new(words, heads, deprels).map_err(Error::contract)?;
    parse.sent_id = Some(sent_id);
    Ok(parse)
}

fn make_schema<R: Rng + ?Sized>(id: String, rng: &mut R) -> (Schema, bool) {
    let heavy = *HEAVY_NOUNS.choose(rng).expect("non-empty");
    let light = *LIGHT_NOUNS.choose(rng).expect("non-empty");
    let heavy_first = rng.random_bool(0.5);
    let (a, b) = if heavy_first { (heavy, light) } else { (light, heavy) };
    let wants_heavy = rng.random_bool(0.5);
    let adj = *if wants_heavy { HEAVY_ADJS } else { LIGHT_ADJS }.choose(rng).expect("non-empty");
    let verb = *VERBS.choose(rng).expect("non-empty");
    let words = ["the", a, verb, "the", b, "because", "it", "was", adj, "."].map(String::from).to_vec();
    let schema = Schema {
        id,
        words,
        pronoun_span: [6, 7],
        candidates: vec![format!("the {a}"), format!("the {b}")],
        answer_index: if wants_heavy == heavy_first { 0 } else { 1 },
        associative: rng.random_bool(0.2),
        switchable: false,
        switch_group: None,
        switched: false,
    };
    (schema, wants_heavy)
}

/// Same sentence with the adjective drawn from the opposite class, so the
/// answer flips.
fn switch(original: &Schema, wants_heavy: bool, rng: &mut impl Rng) -> Schema {
    let mut s = original.clone();
    let adjs = if wants_heavy { LIGHT_ADJS } else { HEAVY_ADJS };
    s.words[8] = adjs.choose(rng).expect("non-empty").to_string();
    s.answer_index = 1 - original.answer_index;
    s.id = format!("{}-sw", original.id);
    s.switched = true;
    s
}

/// `count` schemas. With `paired`, consecutive schemas form original/switched
/// pairs (an odd count leaves the last one unpaired and not switchable).
pub fn generate(count: usize, seed: u64, paired: bool) -> Result<SynthCorpus> {
    let mut rng = seeds::rng(seed, "synth");
    let mut schemas = Vec::with_capacity(count);
    while schemas.len() < count {
        let id = format!("syn{:04}", schemas.len());
        let (mut s, wants_heavy) = make_schema(id, &mut rng);
        if paired && schemas.len() + 2 <= count {
            s.switchable = true;
            s.switch_group = Some(s.id.clone());
            let sw = switch(&s, wants_heavy, &mut rng);
            schemas.push(s);
            schemas.push(sw);
        } else {
            schemas.push(s);
        }
    }
    let mut parses = Vec::with_capacity(2 * count);
    for s in &schemas {
        for sentence in generate_candidates(s).0 {
            let sent_id = format!("{}/{}", s.id, sentence.candidate);
            let correct = sentence.candidate == s.answer_index;
            parses.push(template_parse(&sentence, correct, sent_id)?);
        }
    }
    Ok(SynthCorpus {
        schemas,
        parses,
        vocab: vocab()?,
    })
}

/// Specials, the template words, and the pieces of split words.
pub fn vocab() -> Result<Vocab> {
    let mut pieces: Vec<String> = [PAD, UNK, CLS, SEP, MASK].map(String::from).to_vec();
    let words = HEAVY_NOUNS
        .iter()
        .chain(LIGHT_NOUNS)
        .chain(HEAVY_ADJS)
        .chain(LIGHT_ADJS)
        .chain(VERBS)
        .chain(&["the", "because", "it", "was", "."]);
    for w in words {
        match SPLIT_WORDS.iter().find(|(whole, _, _)| whole == w) {
            Some((_, head, tail)) => pieces.extend([head.to_string(), tail.to_string()]),
            None => pieces.push(w.to_string()),
        }
    }
    let mut seen = std::collections::HashSet::new();
    pieces.retain(|p| seen.insert(p.clone()));
    Vocab::from_pieces(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depmask::parse_conllu;
    use crate::tokenizer::wordpiece;

    #[test]
    fn deterministic_and_valid() {
        let a = generate(12, 5, true).unwrap();
        let b = generate(12, 5, true).unwrap();
        assert_eq!(a.schemas, b.schemas);
        assert_eq!(a.schemas.len(), 12);
        assert_eq!(a.parses.len(), 24);
        for s in &a.schemas {
            s.validate().unwrap();
        }
        assert_eq!(a.schemas.iter().filter(|s| s.switched).count(), 6);
        let back = parse_conllu(&a.conllu()).unwrap();
        assert_eq!(back, a.parses);
        a.parse_index().unwrap();
    }

    #[test]
    fn only_the_answer_attaches_to_the_adjective() {
        let c = generate(4, 1, false).unwrap();
        for (s, pair) in c.schemas.iter().zip(c.parses.chunks(2)) {
            for (k, p) in pair.iter().enumerate() {
                let adj = p.words.len() - 2;
                let subj = adj - 2;
                let want = if k == s.answer_index { adj } else { 2 };
                assert_eq!(p.heads[subj], Some(want), "{:?}", p.words);
                assert_eq!(p.heads[adj], Some(2));
            }
        }
    }

    #[test]
    fn split_words_tokenize_to_pieces() {
        let v = vocab().unwrap();
        assert_eq!(wordpiece("suitcase", &v), ["suit", "##case"]);
        assert_eq!(wordpiece("rock", &v), ["rock"]);
    }
}
