//! Winograd schemas, candidate sentences by pronoun substitution, and
//! resolution by comparing NSP scores.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depmask::{build_word_mask, expand_to_subwords, DepParse};
use crate::encoder::Model;
use crate::error::{read_to_string, Error, Result};
use crate::numcore::MaskMatrix;
use crate::tokenizer::{encode_pair, Encoding, Vocab};

/// Scores closer than this are a tie.
pub const TIE_EPS: f64 = 1e-9;

/// One line of the schema corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub id: String,
    pub words: Vec<String>,
    /// `[start, end)` word indices of the pronoun.
    pub pronoun_span: [usize; 2],
    pub candidates: Vec<String>,
    pub answer_index: usize,
    pub associative: bool,
    pub switchable: bool,
    pub switch_group: Option<String>,
    pub switched: bool,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Schema {
                id: self.id.clone(),
                message,
            })
        };
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        let [start, end] = self.pronoun_span;
        if start >= end || end > self.words.len() {
            return fail(format!(
                "pronoun span [{start}, {end}) outside {} words",
                self.words.len()
            ));
        }
        if self.candidates.len() != 2 {
            return fail(format!("expected 2 candidates, found {}", self.candidates.len()));
        }
        if self.candidates.iter().any(|c| c.split_whitespace().next().is_none()) {
            return fail("blank candidate".into());
        }
        if normalize(&self.candidates[0]) == normalize(&self.candidates[1]) {
            return fail("candidates are identical".into());
        }
        if self.answer_index > 1 {
            return fail(format!("answer_index {} not in {{0, 1}}", self.answer_index));
        }
        if self.switchable != self.switch_group.is_some() {
            return fail("switch_group must be present exactly when switchable".into());
        }
        if self.switched && !self.switchable {
            return fail("switched schema is not switchable".into());
        }
        Ok(())
    }

    pub fn pronoun(&self) -> String {
        self.words[self.pronoun_span[0]..self.pronoun_span[1]].join(" ")
    }
}

fn normalize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses JSON-lines schemas. Blank lines are skipped.
pub fn parse_schemas(text: &str) -> Result<Vec<Schema>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema: Schema =
            serde_json::from_str(line).map_err(|e| Error::format(i + 1, e.to_string()))?;
        schema.validate()?;
        if !seen.insert(schema.id.clone()) {
            return Err(Error::Schema {
                id: schema.id,
                message: format!("duplicate id (line {})", i + 1),
            });
        }
        out.push(schema);
    }
    Ok(out)
}

pub fn load_schemas(path: impl AsRef<Path>) -> Result<Vec<Schema>> {
    parse_schemas(&read_to_string(path.as_ref())?)
}

pub fn to_jsonl(schemas: &[Schema]) -> Result<String> {
    let mut s = String::new();
    for sc in schemas {
        s.push_str(&serde_json::to_string(sc)?);
        s.push('\n');
    }
    Ok(s)
}

/// Pairs `(id in a, id in b)` whose word sequences match exactly.
pub fn find_overlaps(a: &[Schema], b: &[Schema]) -> Vec<(String, String)> {
    let mut by_words: HashMap<&[String], Vec<&str>> = HashMap::new();
    for s in b {
        by_words.entry(&s.words).or_default().push(&s.id);
    }
    let mut out = Vec::new();
    for s in a {
        if let Some(ids) = by_words.get(s.words.as_slice()) {
            out.extend(ids.iter().map(|id| (s.id.clone(), id.to_string())));
        }
    }
    out
}

/// The original sentence with the pronoun replaced, split before the
/// substitution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSentence {
    pub seg_a: Vec<String>,
    pub seg_b: Vec<String>,
    pub candidate: usize,
}

impl CandidateSentence {
    pub fn words(&self) -> Vec<String> {
        self.seg_a.iter().chain(&self.seg_b).cloned().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidatePair(pub [CandidateSentence; 2]);

/// Replaces the pronoun span with `text` (lowercased, split on whitespace).
pub fn substitute(schema: &Schema, text: &str, candidate: usize) -> CandidateSentence {
    let [start, end] = schema.pronoun_span;
    if start == 0 {
        log::warn!("schema {}: pronoun starts the sentence, first segment is empty", schema.id);
    }
    let mut seg_b: Vec<String> = normalize(text);
    seg_b.extend(schema.words[end..].iter().cloned());
    CandidateSentence {
        seg_a: schema.words[..start].to_vec(),
        seg_b,
        candidate,
    }
}

pub fn generate_candidates(schema: &Schema) -> CandidatePair {
    CandidatePair([
        substitute(schema, &schema.candidates[0], 0),
        substitute(schema, &schema.candidates[1], 1),
    ])
}

/// Parses of candidate sentences, keyed by `<schema id>/<candidate index>`.
#[derive(Clone, Debug, Default)]
pub struct ParseIndex {
    parses: HashMap<(String, usize), DepParse>,
}

impl ParseIndex {
    pub fn from_parses(parses: Vec<DepParse>) -> Result<Self> {
        let mut out = HashMap::new();
        for (i, p) in parses.into_iter().enumerate() {
            let key = p
                .sent_id
                .as_deref()
                .and_then(|s| s.rsplit_once('/'))
                .and_then(|(id, c)| Some((id.to_string(), c.parse::<usize>().ok()?)))
                .ok_or_else(|| {
                    Error::contract(format!(
                        "sentence {i}: sent_id {:?} is not <schema_id>/<candidate>",
                        p.sent_id
                    ))
                })?;
            if out.contains_key(&key) {
                return Err(Error::contract(format!("duplicate parse for {}/{}", key.0, key.1)));
            }
            out.insert(key, p);
        }
        Ok(ParseIndex { parses: out })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_parses(crate::depmask::load_conllu(path)?)
    }

    pub fn get(&self, id: &str, candidate: usize) -> Result<&DepParse> {
        self.parses
            .get(&(id.to_string(), candidate))
            .ok_or_else(|| Error::MissingParse {
                id: id.to_string(),
                candidate,
            })
    }

    pub fn pair(&self, id: &str) -> Result<[&DepParse; 2]> {
        Ok([self.get(id, 0)?, self.get(id, 1)?])
    }

    pub fn insert(&mut self, id: &str, candidate: usize, parse: DepParse) {
        self.parses.insert((id.to_string(), candidate), parse);
    }

    pub fn len(&self) -> usize {
        self.parses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parses.is_empty()
    }
}

/// Encoding and token-level dependency mask of one candidate sentence.
pub fn candidate_inputs(
    schema_id: &str,
    sentence: &CandidateSentence,
    parse: &DepParse,
    vocab: &Vocab,
    max_len: usize,
) -> Result<(Encoding, MaskMatrix)> {
    let n_words = sentence.seg_a.len() + sentence.seg_b.len();
    if parse.len() != n_words {
        return Err(Error::Alignment {
            id: schema_id.to_string(),
            message: format!(
                "candidate {} has {n_words} words but its parse has {}",
                sentence.candidate,
                parse.len()
            ),
        });
    }
    let enc = encode_pair(&sentence.seg_a, &sentence.seg_b, vocab, max_len)?;
    let mask = expand_to_subwords(&build_word_mask(parse), &enc)?;
    Ok((enc, mask))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub schema_id: String,
    pub scores: [f64; 2],
    pub predicted_index: usize,
    pub tie: bool,
    pub correct: bool,
}

impl Prediction {
    /// Higher score wins; ties go to candidate 0 and are flagged.
    pub fn from_scores(schema: &Schema, scores: [f64; 2]) -> Self {
        let tie = (scores[0] - scores[1]).abs() <= TIE_EPS;
        let predicted_index = if tie || scores[0] > scores[1] { 0 } else { 1 };
        Prediction {
            schema_id: schema.id.clone(),
            scores,
            predicted_index,
            tie,
            correct: predicted_index == schema.answer_index,
        }
    }
}

/// A model together with the vocabulary it was trained with.
#[derive(Clone, Copy)]
pub struct ModelBundle<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocab,
}

impl ModelBundle<'_> {
    pub fn max_len(&self) -> usize {
        self.model.config.max_positions
    }
}

pub fn resolve(bundle: ModelBundle<'_>, schema: &Schema, parses: [&DepParse; 2]) -> Result<Prediction> {
    let pair = generate_candidates(schema);
    let mut scores = [0.0; 2];
    for (k, sentence) in pair.0.iter().enumerate() {
        let (enc, mask) = candidate_inputs(&schema.id, sentence, parses[k], bundle.vocab, bundle.max_len())?;
        scores[k] = bundle.model.score(&enc, Some(&mask))?;
    }
    Ok(Prediction::from_scores(schema, scores))
}
