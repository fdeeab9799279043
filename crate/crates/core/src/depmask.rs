//! CoNLL-U ingestion and dependency attention masks.
//!
//! A word attends to its head, its children, and itself. At token level,
//! subwords inherit their word's row and column, and special tokens see and
//! are seen by every position.

use std::path::Path;

use crate::error::{read_to_string, Error, Result};
use crate::tokenizer::Encoding;

pub use crate::numcore::MaskMatrix;

/// One dependency-parsed sentence with 0-based heads; `None` is the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepParse {
    pub sent_id: Option<String>,
    pub words: Vec<String>,
    pub heads: Vec<Option<usize>>,
    pub deprels: Vec<String>,
}

impl DepParse {
    pub fn new(
        words: Vec<String>,
        heads: Vec<Option<usize>>,
        deprels: Vec<String>,
    ) -> std::result::Result<Self, String> {
        let p = DepParse {
            sent_id: None,
            words,
            heads,
            deprels,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.heads.iter().position(Option::is_none)
    }

    /// Checks that the head links form a single rooted tree.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.words.len();
        if n == 0 {
            return Err("empty sentence".into());
        }
        if self.heads.len() != n || self.deprels.len() != n {
            return Err(format!(
                "{} words but {} heads and {} relations",
                n,
                self.heads.len(),
                self.deprels.len()
            ));
        }
        let roots = self.heads.iter().filter(|h| h.is_none()).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for (i, h) in self.heads.iter().enumerate() {
            match *h {
                Some(h) if h >= n => return Err(format!("word {} has head {} out of range", i + 1, h + 1)),
                Some(h) if h == i => return Err(format!("word {} is its own head", i + 1)),
                _ => {}
            }
        }
        // every word must reach the root within n hops
        for start in 0..n {
            let mut cur = start;
            let mut hops = 0;
            while let Some(h) = self.heads[cur] {
                cur = h;
                hops += 1;
                if hops > n {
                    return Err(format!("cycle through word {}", start + 1));
                }
            }
        }
        Ok(())
    }
}

/// Parses CoNLL-U text. Multiword-token ranges and empty nodes are skipped;
/// `# sent_id = ...` comments are kept on the parse.
pub fn parse_conllu(text: &str) -> Result<Vec<DepParse>> {
    let mut out = Vec::new();
    let mut sent = Builder::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            sent.finish(&mut out)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    sent.sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::format(
                line_no,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| Error::format(line_no, format!("bad token id {id:?}")))?;
        if id != sent.words.len() + 1 {
            return Err(Error::format(
                line_no,
                format!("token id {id} out of sequence (expected {})", sent.words.len() + 1),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::format(line_no, format!("bad head {:?}", cols[6])))?;
        if sent.words.is_empty() {
            sent.first_line = line_no;
        }
        sent.words.push(cols[1].to_string());
        sent.heads.push(head.checked_sub(1));
        sent.deprels.push(cols[7].to_string());
    }
    sent.finish(&mut out)?;
    Ok(out)
}

pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<DepParse>> {
    parse_conllu(&read_to_string(path.as_ref())?)
}

#[derive(Default)]
struct Builder {
    sent_id: Option<String>,
    words: Vec<String>,
    heads: Vec<Option<usize>>,
    deprels: Vec<String>,
    first_line: usize,
}

impl Builder {
    fn finish(&mut self, out: &mut Vec<DepParse>) -> Result<()> {
        let b = std::mem::take(self);
        if b.words.is_empty() {
            // a comment-only block carries its sent_id over to nothing
            return Ok(());
        }
        let parse = DepParse {
            sent_id: b.sent_id,
            words: b.words,
            heads: b.heads,
            deprels: b.deprels,
        };
        parse.validate().map_err(|message| Error::Tree {
            sentence: out.len(),
            message: format!("{message} (starting at line {})", b.first_line),
        })?;
        out.push(parse);
        Ok(())
    }
}

/// Renders a parse as CoNLL-U, with a `sent_id` comment when one is set.
pub fn to_conllu(parse: &DepParse) -> String {
    let mut s = String::new();
    if let Some(id) = &parse.sent_id {
        s.push_str(&format!("# sent_id = {id}\n"));
    }
    for (i, w) in parse.words.iter().enumerate() {
        let head = parse.heads[i].map_or(0, |h| h + 1);
        s.push_str(&format!(
            "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n",
            i + 1,
            w,
            head,
            parse.deprels[i]
        ));
    }
    s.push('\n');
    s
}

/// `D[i][j] = 1` iff `j == i`, `j` is the head of `i`, or `i` is the head of `j`.
pub fn build_word_mask(parse: &DepParse) -> MaskMatrix {
    let n = parse.len();
    let mut m = MaskMatrix::identity(n);
    for (i, h) in parse.heads.iter().enumerate() {
        if let Some(h) = *h {
            m.set(i, h, true);
            m.set(h, i, true);
        }
    }
    m
}

/// Lifts a word-level mask to the token positions of `encoding`. Special
/// tokens get all-ones rows and columns.
pub fn expand_to_subwords(word_mask: &MaskMatrix, encoding: &Encoding) -> Result<MaskMatrix> {
    let n = encoding.len();
    let words = word_mask.rows();
    if let Some(bad) = encoding.alignment.iter().flatten().find(|&&w| w >= words) {
        return Err(Error::contract(format!(
            "alignment references word {bad} but the mask covers {words} words"
        )));
    }
    let mut m = MaskMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let on = match (encoding.alignment[i], encoding.alignment[j]) {
                (Some(wi), Some(wj)) => word_mask.get(wi, wj),
                _ => true,
            };
            m.set(i, j, on);
        }
    }
    Ok(m)
}
