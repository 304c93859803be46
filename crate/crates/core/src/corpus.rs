//! CoNLL-U reading and writing, POS vocabulary, length filtering.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::tree::{check_rooted_tree, DepTree};

const N_COLUMNS: usize = 10;
const HEAD_COLUMN: usize = 6;

/// One word of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub upos: String,
    /// Gold head: 0 is the root, otherwise the 1-based position of the head.
    pub gold_head: Option<usize>,
    pub is_punct: bool,
    /// All ten raw columns, kept so that writing preserves the input.
    columns: Vec<String>,
}

impl Token {
    /// Builds a token with placeholder columns. Mostly useful for synthetic
    /// corpora and tests.
    pub fn new(id: usize, form: &str, upos: &str, gold_head: Option<usize>) -> Self {
        let head = gold_head.map_or_else(|| "_".to_string(), |h| h.to_string());
        let columns = vec![
            id.to_string(),
            form.to_string(),
            form.to_lowercase(),
            upos.to_string(),
            "_".to_string(),
            "_".to_string(),
            head,
            "_".to_string(),
            "_".to_string(),
            "_".to_string(),
        ];
        Token {
            form: form.to_string(),
            upos: upos.to_string(),
            gold_head,
            is_punct: upos == "PUNCT",
            columns,
        }
    }

    fn line_with_head(&self, head: usize) -> String {
        let mut s = String::new();
        for (i, col) in self.columns.iter().enumerate() {
            if i > 0 {
                s.push('\t');
            }
            if i == HEAD_COLUMN {
                let _ = write!(s, "{head}");
            } else {
                s.push_str(col);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Comment lines (without the trailing newline), written back verbatim.
    pub comments: Vec<String>,
}

impl Sentence {
    /// Builds a sentence from UPOS tags alone, with optional gold heads.
    pub fn from_tags(tags: &[&str], heads: Option<&[usize]>) -> Self {
        let tokens = tags
            .iter()
            .enumerate()
            .map(|(i, t)| Token::new(i + 1, &format!("w{}", i + 1), t, heads.map(|h| h[i])))
            .collect();
        Sentence {
            tokens,
            comments: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of tokens that are not punctuation.
    pub fn len_without_punct(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_punct).count()
    }

    pub fn upos(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.upos.as_str())
    }

    /// The gold tree, if every token carries a gold head. Non-projective gold
    /// trees yield an error.
    pub fn gold_tree(&self) -> Option<Result<DepTree>> {
        let heads: Option<Vec<usize>> = self.tokens.iter().map(|t| t.gold_head).collect();
        heads.map(DepTree::new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    /// UPOS tags in first-seen order.
    pub pos_vocab: Vec<String>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        let mut pos_vocab = Vec::new();
        let mut seen = HashMap::new();
        for s in &sentences {
            for t in &s.tokens {
                if !seen.contains_key(&t.upos) {
                    seen.insert(t.upos.clone(), pos_vocab.len());
                    pos_vocab.push(t.upos.clone());
                }
            }
        }
        Corpus {
            sentences,
            pos_vocab,
        }
    }

    /// Number of sentences.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn gold_trees(&self) -> Result<Vec<DepTree>> {
        self.sentences
            .iter()
            .enumerate()
            .map(|(i, s)| s.gold_tree().ok_or(Error::MissingGold(i + 1))?)
            .collect()
    }
}

fn parse_id(field: &str, line: usize) -> Result<Option<usize>> {
    if field.contains('-') || field.contains('.') {
        return Ok(None);
    }
    field
        .parse::<usize>()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("invalid token id {field:?}")))
}

fn finish_sentence(
    tokens: Vec<Token>,
    comments: Vec<String>,
    start_line: usize,
    out: &mut Vec<Sentence>,
) -> Result<()> {
    if tokens.is_empty() {
        if comments.is_empty() {
            return Ok(());
        }
        return Err(Error::parse(start_line, "sentence block without tokens"));
    }
    let n = tokens.len();
    for (i, t) in tokens.iter().enumerate() {
        if let Some(h) = t.gold_head {
            if h > n || h == i + 1 {
                return Err(Error::parse(
                    start_line,
                    format!("head {h} of token {} is out of range", i + 1),
                ));
            }
        }
    }
    let heads: Option<Vec<usize>> = tokens.iter().map(|t| t.gold_head).collect();
    if let Some(Err(e)) = heads.as_deref().map(check_rooted_tree) {
        return Err(Error::parse(start_line, format!("gold heads do not form a tree: {e}")));
    }
    let s = Sentence { tokens, comments };
    out.push(s);
    Ok(())
}

/// Reads a CoNLL-U treebank. Multiword ranges and empty nodes are skipped.
pub fn parse_conllu<R: BufRead>(input: R) -> Result<Corpus> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut comments: Vec<String> = Vec::new();
    let mut start_line = 1;

    for (idx, line) in input.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish_sentence(
                std::mem::take(&mut tokens),
                std::mem::take(&mut comments),
                start_line,
                &mut sentences,
            )?;
            start_line = lineno + 1;
            continue;
        }
        if line.starts_with('#') {
            if tokens.is_empty() && comments.is_empty() {
                start_line = lineno;
            }
            comments.push(line.to_string());
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != N_COLUMNS {
            return Err(Error::parse(
                lineno,
                format!("expected {N_COLUMNS} tab-separated columns, found {}", columns.len()),
            ));
        }
        let Some(id) = parse_id(columns[0], lineno)? else {
            continue;
        };
        if tokens.is_empty() && comments.is_empty() {
            start_line = lineno;
        }
        if id != tokens.len() + 1 {
            return Err(Error::parse(
                lineno,
                format!("token id {id} out of sequence (expected {})", tokens.len() + 1),
            ));
        }
        let gold_head = match columns[HEAD_COLUMN] {
            "_" => None,
            h => Some(
                h.parse::<usize>()
                    .map_err(|_| Error::parse(lineno, format!("invalid head {h:?}")))?,
            ),
        };
        let upos = columns[3].to_string();
        tokens.push(Token {
            form: columns[1].to_string(),
            is_punct: upos == "PUNCT",
            upos,
            gold_head,
            columns: columns.iter().map(|c| c.to_string()).collect(),
        });
    }
    finish_sentence(tokens, comments, start_line, &mut sentences)?;
    Ok(Corpus::new(sentences))
}

pub fn parse_conllu_str(text: &str) -> Result<Corpus> {
    parse_conllu(text.as_bytes())
}

/// Keeps sentences whose length is at most `max_len`. Punctuation counts
/// towards the length only when `count_punct` is set.
pub fn filter_corpus(c: &Corpus, max_len: usize, count_punct: bool) -> Corpus {
    let kept = c
        .sentences
        .iter()
        .filter(|s| {
            let len = if count_punct {
                s.len()
            } else {
                s.len_without_punct()
            };
            len <= max_len
        })
        .cloned()
        .collect();
    Corpus::new(kept)
}

/// Writes `c` with column 7 replaced by the predicted heads.
pub fn write_conllu<W: Write>(c: &Corpus, predicted: &[DepTree], mut out: W) -> Result<()> {
    if predicted.len() != c.len() {
        return Err(Error::contract(format!(
            "{} trees for {} sentences",
            predicted.len(),
            c.len()
        )));
    }
    for (i, (s, tree)) in c.sentences.iter().zip(predicted).enumerate() {
        if tree.len() != s.len() {
            return Err(Error::contract(format!(
                "tree {i} has {} heads, sentence has {} tokens",
                tree.len(),
                s.len()
            )));
        }
    }
    for (s, tree) in c.sentences.iter().zip(predicted) {
        for comment in &s.comments {
            writeln!(out, "{comment}")?;
        }
        for (t, &h) in s.tokens.iter().zip(tree.heads()) {
            writeln!(out, "{}", t.line_with_head(h))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
