use std::collections::BTreeSet;
use std::io::BufRead;

use crate::error::{Error, Result};

/// Head tag used for arcs from the root pseudo-node.
pub const ROOT_TAG: &str = "ROOT";

const DEFAULT_RULES: &[(&str, &str)] = &[
    ("ROOT", "VERB"),
    ("ROOT", "NOUN"),
    ("VERB", "NOUN"),
    ("VERB", "PRON"),
    ("VERB", "ADV"),
    ("VERB", "VERB"),
    ("VERB", "ADP"),
    ("NOUN", "ADJ"),
    ("NOUN", "DET"),
    ("NOUN", "NOUN"),
    ("NOUN", "NUM"),
    ("ADP", "NOUN"),
    ("ADP", "PRON"),
    ("ADJ", "ADV"),
];

/// Directed `head -> dependent` UPOS pairs counted as linguistically
/// plausible.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    rules: BTreeSet<(String, String)>,
}

impl RuleSet {
    pub fn empty() -> Self {
        RuleSet::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        RuleSet {
            rules: pairs
                .into_iter()
                .map(|(h, d)| (h.to_string(), d.to_string()))
                .collect(),
        }
    }

    pub fn contains(&self, head: &str, dep: &str) -> bool {
        self.rules.contains(&(head.to_string(), dep.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.rules.iter().map(|(h, d)| (h.as_str(), d.as_str()))
    }

    /// Parses `HEAD DEP` lines; `#` starts a comment.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut rules = BTreeSet::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let f: Vec<&str> = body.split_whitespace().collect();
            let [h, d] = f.as_slice() else {
                return Err(Error::parse(i + 1, "expected `HEADTAG DEPTAG`"));
            };
            if *d == ROOT_TAG {
                return Err(Error::parse(i + 1, "ROOT cannot be a dependent"));
            }
            rules.insert((h.to_string(), d.to_string()));
        }
        Ok(RuleSet { rules })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# head dependent\n");
        for (h, d) in self.iter() {
            s.push_str(h);
            s.push(' ');
            s.push_str(d);
            s.push('\n');
        }
        s
    }
}

/// The built-in universal rule list.
pub fn default_rules() -> RuleSet {
    RuleSet::from_pairs(DEFAULT_RULES.iter().copied())
}
