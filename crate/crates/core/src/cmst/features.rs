use std::collections::HashMap;

use crate::cmst::rules::ROOT_TAG;
use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::tree::arc_index;

pub const UNK_TAG: &str = "<unk>";
const ROOT_ID: usize = 0;
const UNK_ID: usize = 1;

/// Distance bins: 1, 2, 3, 4, 5, 6-10, >10.
pub const DIST_BINS: usize = 7;
const BIN_LABELS: [&str; DIST_BINS] = ["1", "2", "3", "4", "5", "6-10", ">10"];

pub fn distance_bin(dist: usize) -> usize {
    match dist {
        0 | 1 => 0,
        2..=5 => dist - 1,
        6..=10 => 5,
        _ => 6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    Bias,
    HeadTag,
    DepTag,
    Pair,
    PairDir,
    PairDirBin,
    DirBin,
    RootArc,
    RootDep,
}

impl Template {
    pub const ALL: [Template; 9] = [
        Template::Bias,
        Template::HeadTag,
        Template::DepTag,
        Template::Pair,
        Template::PairDir,
        Template::PairDirBin,
        Template::DirBin,
        Template::RootArc,
        Template::RootDep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Bias => "bias",
            Template::HeadTag => "head",
            Template::DepTag => "dep",
            Template::Pair => "pair",
            Template::PairDir => "pair-dir",
            Template::PairDirBin => "pair-dir-bin",
            Template::DirBin => "dir-bin",
            Template::RootArc => "root",
            Template::RootDep => "root-dep",
        }
    }

    pub fn from_name(s: &str) -> Option<Template> {
        Template::ALL.into_iter().find(|t| t.name() == s)
    }

    fn size(self, t: usize) -> usize {
        match self {
            Template::Bias | Template::RootArc => 1,
            Template::HeadTag | Template::DepTag | Template::RootDep => t,
            Template::Pair => t * t,
            Template::PairDir => t * t * 2,
            Template::PairDirBin => t * t * 2 * DIST_BINS,
            Template::DirBin => 2 * DIST_BINS,
        }
    }
}

/// Feature templates over a fixed tag inventory. Feature ids are computed
/// arithmetically from the tag ids, so the mapping only depends on the tag
/// list and the template list.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTemplate {
    tags: Vec<String>,
    tag_index: HashMap<String, usize>,
    templates: Vec<Template>,
    offsets: Vec<usize>,
    dim: usize,
}

impl FeatureTemplate {
    /// All templates over the corpus vocabulary.
    pub fn for_corpus(c: &Corpus) -> Self {
        Self::new(&c.pos_vocab, &Template::ALL).expect("default templates are valid")
    }

    /// `vocab` must not contain the reserved ROOT or unknown tags.
    pub fn new(vocab: &[String], templates: &[Template]) -> Result<Self> {
        let mut tags = vec![ROOT_TAG.to_string(), UNK_TAG.to_string()];
        for t in vocab {
            if t == ROOT_TAG || t == UNK_TAG {
                return Err(Error::contract(format!("reserved tag {t:?} in vocabulary")));
            }
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
        if !templates.contains(&Template::Bias) {
            return Err(Error::contract("the bias template is required"));
        }
        let tag_index = tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut offsets = Vec::with_capacity(templates.len());
        let mut dim = 0;
        for t in templates {
            offsets.push(dim);
            dim += t.size(tags.len());
        }
        Ok(FeatureTemplate {
            tags,
            tag_index,
            templates: templates.to_vec(),
            offsets,
            dim,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Tags in id order, ROOT and the unknown tag first.
    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// The corpus tags (without the two reserved entries).
    pub fn vocab(&self) -> &[String] {
        &self.tags[2..]
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn tag_id(&self, tag: &str) -> usize {
        self.tag_index.get(tag).copied().unwrap_or(UNK_ID)
    }

    fn push_arc_features(&self, th: usize, td: usize, head: usize, dep: usize, out: &mut Vec<u32>) {
        let t = self.tags.len();
        let is_root = head == 0;
        let dir = usize::from(dep > head);
        let bin = distance_bin(head.abs_diff(dep));
        for (tpl, &off) in self.templates.iter().zip(&self.offsets) {
            let local = match (tpl, is_root) {
                (Template::Bias, _) => Some(0),
                (Template::HeadTag, _) => Some(th),
                (Template::DepTag, _) => Some(td),
                (Template::Pair, _) => Some(th * t + td),
                (Template::PairDir, false) => Some((th * t + td) * 2 + dir),
                (Template::PairDirBin, false) => Some(((th * t + td) * 2 + dir) * DIST_BINS + bin),
                (Template::DirBin, false) => Some(dir * DIST_BINS + bin),
                (Template::RootArc, true) => Some(0),
                (Template::RootDep, true) => Some(td),
                _ => None,
            };
            if let Some(l) = local {
                out.push((off + l) as u32);
            }
        }
    }

    /// Ids of the features firing on arc `head -> dep` (1-based, 0 = root)
    /// of sentence `x`.
    pub fn arc_features(&self, x: &Sentence, head: usize, dep: usize) -> Vec<u32> {
        let th = if head == 0 { ROOT_ID } else { self.tag_id(&x.tokens[head - 1].upos) };
        let td = self.tag_id(&x.tokens[dep - 1].upos);
        let mut v = Vec::new();
        self.push_arc_features(th, td, head, dep, &mut v);
        v
    }

    /// Human-readable name of feature `id`.
    pub fn describe(&self, id: usize) -> String {
        let t = self.tags.len();
        let k = self.offsets.partition_point(|&o| o <= id) - 1;
        let l = id - self.offsets[k];
        let tag = |i: usize| self.tags[i].as_str();
        let dir = |d: usize| if d == 1 { "right" } else { "left" };
        match self.templates[k] {
            Template::Bias => "bias".into(),
            Template::HeadTag => format!("head={}", tag(l)),
            Template::DepTag => format!("dep={}", tag(l)),
            Template::Pair => format!("head={},dep={}", tag(l / t), tag(l % t)),
            Template::PairDir => format!("head={},dep={},dir={}", tag(l / 2 / t), tag(l / 2 % t), dir(l % 2)),
            Template::PairDirBin => {
                let (rest, bin) = (l / DIST_BINS, l % DIST_BINS);
                format!(
                    "head={},dep={},dir={},bin={}",
                    tag(rest / 2 / t),
                    tag(rest / 2 % t),
                    dir(rest % 2),
                    BIN_LABELS[bin]
                )
            }
            Template::DirBin => format!("dir={},bin={}", dir(l / DIST_BINS), BIN_LABELS[l % DIST_BINS]),
            Template::RootArc => "root-arc".into(),
            Template::RootDep => format!("root,dep={}", tag(l)),
        }
    }
}

/// Sparse 0/1 matrix with one row per arc slot of a sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    /// Active feature ids of row `slot`.
    pub fn row(&self, slot: usize) -> &[u32] {
        &self.cols[self.row_ptr[slot] as usize..self.row_ptr[slot + 1] as usize]
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `X w`.
    pub fn mul(&self, w: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|r| self.row(r).iter().map(|&c| w[c as usize]).sum())
            .collect()
    }

    /// `out += scale * X^T t`.
    pub fn mul_t_add(&self, t: &[f64], scale: f64, out: &mut [f64]) {
        for (r, &tr) in t.iter().enumerate() {
            if tr == 0.0 {
                continue;
            }
            let s = scale * tr;
            for &c in self.row(r) {
                out[c as usize] += s;
            }
        }
    }

    /// `out[c] += scale * (number of rows where feature c fires)`, the
    /// diagonal of `X^T X` for a 0/1 matrix with distinct columns per row.
    pub fn add_col_counts(&self, scale: f64, out: &mut [f64]) {
        for &c in &self.cols {
            out[c as usize] += scale;
        }
    }
}

/// Builds `X` for a sentence. Unseen tags map to the unknown tag.
pub fn extract_features(x: &Sentence, t: &FeatureTemplate) -> FeatureMatrix {
    let n = x.len();
    let tag_ids: Vec<usize> = x.upos().map(|u| t.tag_id(u)).collect();
    let mut row_ptr = vec![0u32; n * n + 1];
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n * n];
    for d in 1..=n {
        for h in 0..=n {
            if h == d {
                continue;
            }
            let th = if h == 0 { ROOT_ID } else { tag_ids[h - 1] };
            let mut feats = Vec::with_capacity(8);
            t.push_arc_features(th, tag_ids[d - 1], h, d, &mut feats);
            rows[arc_index(n, h, d)] = feats;
        }
    }
    let mut cols = Vec::new();
    for (r, feats) in rows.into_iter().enumerate() {
        cols.extend(feats);
        row_ptr[r + 1] = cols.len() as u32;
    }
    FeatureMatrix { n, row_ptr, cols }
}
