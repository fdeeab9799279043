//! Lowercasing word splitter, greedy longest-match WordPiece, and
//! `[CLS] A [SEP] B [SEP]` pair encoding with a word alignment map.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{read_to_string, Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const CONTINUATION: &str = "##";

/// Words longer than this (in chars) map straight to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

#[derive(Clone, Debug)]
pub struct Vocab {
    pieces: Vec<String>,
    ids: HashMap<String, u32>,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    /// One piece per line; the line number (from 0) is the id.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_to_string(path.as_ref())?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let pieces: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::from_pieces(pieces)
    }

    pub fn from_pieces<S: Into<String>>(pieces: impl IntoIterator<Item = S>) -> Result<Self> {
        let pieces: Vec<String> = pieces.into_iter().map(Into::into).collect();
        let mut ids = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(Error::format(i + 1, "empty piece"));
            }
            if ids.insert(p.clone(), i as u32).is_some() {
                return Err(Error::format(i + 1, format!("duplicate piece {p:?}")));
            }
        }
        for special in [PAD, UNK, CLS, SEP, MASK] {
            if !ids.contains_key(special) {
                return Err(Error::format(
                    pieces.len(),
                    format!("missing special token {special}"),
                ));
            }
        }
        if ids[PAD] != 0 {
            return Err(Error::format(ids[PAD] as usize + 1, "[PAD] must have id 0"));
        }
        Ok(Vocab {
            unk: ids[UNK],
            cls: ids[CLS],
            sep: ids[SEP],
            pieces,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.ids.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn to_text(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
        )
}

/// Lowercased words with their char spans in `text`. Whitespace separates
/// words and every punctuation char is its own word.
pub fn word_tokenize(text: &str) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    let flush = |cur: &mut String, start: usize, end: usize, out: &mut Vec<(String, (usize, usize))>| {
        if !cur.is_empty() {
            out.push((std::mem::take(cur), (start, end)));
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut cur, start, i, &mut out);
        } else if is_punct(c) {
            flush(&mut cur, start, i, &mut out);
            out.push((c.to_lowercase().collect(), (i, i + 1)));
        } else {
            if cur.is_empty() {
                start = i;
            }
            cur.extend(c.to_lowercase());
        }
    }
    let end = text.chars().count();
    flush(&mut cur, start, end, &mut out);
    out
}

/// Greedy longest-match-first segmentation. Falls back to a single `[UNK]`
/// if any position of the word cannot be matched.
pub fn wordpiece(word: &str, vocab: &Vocab) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return vec![UNK.to_string()];
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let mut cand: String = chars[start..end].iter().collect();
            if start > 0 {
                cand.insert_str(0, CONTINUATION);
            }
            if vocab.ids.contains_key(&cand) {
                found = Some(cand);
                break;
            }
            end -= 1;
        }
        match found {
            Some(p) => out.push(p),
            None => return vec![UNK.to_string()],
        }
        start = end;
    }
    out
}

/// Token ids and bookkeeping for one `[CLS] A [SEP] B [SEP]` sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoding {
    pub token_ids: Vec<u32>,
    pub pieces: Vec<String>,
    pub segment_ids: Vec<u8>,
    /// Source word index per position (A words first, then B words);
    /// `None` marks special tokens.
    pub alignment: Vec<Option<usize>>,
    /// Char spans of the source words within `A B` joined by single spaces.
    pub word_offsets: Vec<(usize, usize)>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn is_special(&self, pos: usize) -> bool {
        self.alignment[pos].is_none()
    }
}

struct Piece {
    text: String,
    word: usize,
}

fn pieces_for(words: &[String], first_word: usize, vocab: &Vocab) -> Vec<Piece> {
    let mut out = Vec::new();
    for (k, w) in words.iter().enumerate() {
        for (sub, _) in word_tokenize(w) {
            for p in wordpiece(&sub, vocab) {
                out.push(Piece {
                    text: p,
                    word: first_word + k,
                });
            }
        }
    }
    out
}

/// Encodes a sentence pair. When the layout exceeds `max_len`, trailing
/// pieces are dropped from the longer segment (B on ties) until it fits.
pub fn encode_pair(
    seg_a: &[String],
    seg_b: &[String],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Encoding> {
    if max_len < 3 {
        return Err(Error::contract(format!("max_len {max_len} leaves no room for specials")));
    }
    if seg_b.is_empty() {
        return Err(Error::contract("second segment is empty"));
    }
    let mut a = pieces_for(seg_a, 0, vocab);
    let mut b = pieces_for(seg_b, seg_a.len(), vocab);
    while 3 + a.len() + b.len() > max_len {
        if a.len() > b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }

    let n = 3 + a.len() + b.len();
    let mut enc = Encoding {
        token_ids: Vec::with_capacity(n),
        pieces: Vec::with_capacity(n),
        segment_ids: Vec::with_capacity(n),
        alignment: Vec::with_capacity(n),
        word_offsets: Vec::new(),
    };
    let mut push = |text: &str, seg: u8, word: Option<usize>| {
        enc.token_ids.push(vocab.id(text).unwrap_or(vocab.unk));
        enc.pieces.push(text.to_string());
        enc.segment_ids.push(seg);
        enc.alignment.push(word);
    };
    push(CLS, 0, None);
    for p in &a {
        push(&p.text, 0, Some(p.word));
    }
    push(SEP, 0, None);
    for p in &b {
        push(&p.text, 1, Some(p.word));
    }
    push(SEP, 1, None);

    let mut pos = 0;
    for w in seg_a.iter().chain(seg_b) {
        let len = w.chars().count();
        enc.word_offsets.push((pos, pos + len));
        pos += len + 1;
    }
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn vocab(extra: &[&str]) -> Vocab {
        let mut p = vec![PAD, UNK, CLS, SEP, MASK];
        p.extend_from_slice(extra);
        Vocab::from_pieces(p).unwrap()
    }

    #[test]
    fn load_ten_line_vocab() {
        let v = Vocab::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\na\ncat\nsits\non\ndesk\n").unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v.id("cat"), Some(6));
        assert_eq!(v.piece(9), Some("desk"));
    }

    #[test]
    fn duplicate_piece_reports_second_line() {
        let err = Vocab::parse("[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\ncat\ndog\ncat\n").unwrap_err();
        match err {
            Error::Format { line, message } => {
                assert_eq!(line, 8);
                assert!(message.contains("cat"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_special_is_named() {
        let err = Vocab::parse("[PAD]\n[UNK]\n[SEP]\n[MASK]\ncat\n").unwrap_err().to_string();
        assert!(err.contains("[CLS]"), "{err}");
    }

    #[test]
    fn word_tokenize_examples() {
        let toks: Vec<String> = word_tokenize("A cat sits on the desk.").into_iter().map(|t| t.0).collect();
        assert_eq!(toks, ["a", "cat", "sits", "on", "the", "desk", "."]);
        assert!(word_tokenize("").is_empty());
        let toks: Vec<String> = word_tokenize("don't").into_iter().map(|t| t.0).collect();
        assert_eq!(toks, ["don", "'", "t"]);
    }

    #[test]
    fn word_spans_index_original_text() {
        let text = "The  Desk.";
        let toks = word_tokenize(text);
        let chars: Vec<char> = text.chars().collect();
        for (w, (s, e)) in toks {
            let orig: String = chars[s..e].iter().collect();
            assert_eq!(orig.to_lowercase(), w);
        }
    }

    #[test]
    fn wordpiece_examples() {
        let v = vocab(&["suit", "##case", "cat"]);
        assert_eq!(wordpiece("suitcase", &v), ["suit", "##case"]);
        assert_eq!(wordpiece("cat", &v), ["cat"]);
        assert_eq!(wordpiece("suitcasez", &v), [UNK]);
        assert_eq!(wordpiece("dog", &v), [UNK]);
    }

    #[test]
    fn empty_first_segment_layout() {
        let v = vocab(&["it", "is", "big"]);
        let e = encode_pair(&[], &words("it is big"), &v, 16).unwrap();
        assert_eq!(e.pieces, [CLS, SEP, "it", "is", "big", SEP]);
        assert_eq!(e.segment_ids, [0, 0, 1, 1, 1, 1]);
        assert_eq!(e.alignment, [None, None, Some(0), Some(1), Some(2), None]);
    }

    #[test]
    fn truncation_drops_from_longer_segment() {
        let v = vocab(&["a", "b", "c", "d", "e"]);
        let a = words("a b c");
        let b = words("d e");
        let full = encode_pair(&a, &b, &v, 8).unwrap();
        assert_eq!(full.len(), 8);
        let cut = encode_pair(&a, &b, &v, 7).unwrap();
        assert_eq!(cut.pieces, [CLS, "a", "b", SEP, "d", "e", SEP]);
        let cut = encode_pair(&a, &b, &v, 6).unwrap();
        // tie between 2 and 2 pieces: B loses first
        assert_eq!(cut.pieces, [CLS, "a", "b", SEP, "d", SEP]);
    }

    #[test]
    fn rejects_bad_layouts() {
        let v = vocab(&["a"]);
        assert!(encode_pair(&words("a"), &[], &v, 10).is_err());
        assert!(encode_pair(&words("a"), &words("a"), &v, 2).is_err());
    }
}
