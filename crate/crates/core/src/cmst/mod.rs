//! The discriminative side: arc features, a rule prior and the convex
//! discriminative clustering objective
//!
//! ```text
//! G(x, y; w) = 1/(2n) |y - X w|^2 + lambda/(2N) |w|^2 - mu v.y
//! ```
//!
//! where `X` holds one feature row per arc slot, `v` marks rule-satisfying
//! arcs and `N` is the corpus size.

mod eisner;
mod features;
mod fw;
mod rules;

pub use eisner::min_cost_tree;
pub use features::{distance_bin, extract_features, FeatureMatrix, FeatureTemplate, Template, DIST_BINS, UNK_TAG};
pub use fw::{fw_train, solve_ridge, FwConfig, FwStats, FwTrainer};
pub use rules::{default_rules, RuleSet, ROOT_TAG};

use std::io::{BufRead, Write};

use crate::corpus::{Corpus, Sentence};
use crate::decoder::DualPrices;
use crate::error::{Error, Result};
use crate::tree::{arc_index, ArcVector, DepTree};

pub const FORMAT_HEADER: &str = "dualdep-cmst";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CmstModel {
    pub w: Vec<f64>,
    /// Ridge weight.
    pub lambda: f64,
    /// Rule prior weight.
    pub mu: f64,
    pub templates: FeatureTemplate,
    pub rules: RuleSet,
}

impl CmstModel {
    /// Zero weights over the given templates.
    pub fn new(templates: FeatureTemplate, rules: RuleSet, lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda >= 0.0 && mu >= 0.0) {
            return Err(Error::contract("lambda and mu must be non-negative"));
        }
        Ok(CmstModel {
            w: vec![0.0; templates.dimension()],
            lambda,
            mu,
            templates,
            rules,
        })
    }

    /// Zero weights with all templates over the corpus vocabulary.
    pub fn for_corpus(c: &Corpus, rules: RuleSet, lambda: f64, mu: f64) -> Result<Self> {
        CmstModel::new(FeatureTemplate::for_corpus(c), rules, lambda, mu)
    }

    pub fn instance(&self, x: &Sentence) -> CmstInstance {
        CmstInstance::new(x, self)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{FORMAT_HEADER} {FORMAT_VERSION}")?;
        writeln!(out, "lambda {:.16e}", self.lambda)?;
        writeln!(out, "mu {:.16e}", self.mu)?;
        writeln!(out, "tags {}", self.templates.vocab().join(" "))?;
        let names: Vec<&str> = self.templates.templates().iter().map(|t| t.name()).collect();
        writeln!(out, "templates {}", names.join(" "))?;
        for (h, d) in self.rules.iter() {
            writeln!(out, "rule {h} {d}")?;
        }
        writeln!(out, "dim {}", self.w.len())?;
        for (i, &x) in self.w.iter().enumerate() {
            if x != 0.0 {
                writeln!(out, "w {i} {x:.16e}")?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lambda = None;
        let mut mu = None;
        let mut tags: Option<Vec<String>> = None;
        let mut templates: Option<Vec<Template>> = None;
        let mut rules = Vec::new();
        let mut dim = None;
        let mut weights = Vec::new();
        let mut saw_header = false;
        for (i, line) in input.lines().enumerate() {
            let ln = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if !saw_header {
                if f != [FORMAT_HEADER, &FORMAT_VERSION.to_string()] {
                    return Err(Error::parse(ln, format!("expected header `{FORMAT_HEADER} {FORMAT_VERSION}`")));
                }
                saw_header = true;
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(ln, format!("bad number {s:?}")));
            match f.as_slice() {
                ["lambda", x] => lambda = Some(num(x)?),
                ["mu", x] => mu = Some(num(x)?),
                ["tags", rest @ ..] => tags = Some(rest.iter().map(|s| s.to_string()).collect()),
                ["templates", rest @ ..] => {
                    let parsed: Option<Vec<Template>> = rest.iter().map(|s| Template::from_name(s)).collect();
                    templates = Some(parsed.ok_or_else(|| Error::parse(ln, "unknown template"))?);
                }
                ["rule", h, d] => rules.push((h.to_string(), d.to_string())),
                ["dim", d] => dim = Some(d.parse::<usize>().map_err(|_| Error::parse(ln, "bad dimension"))?),
                ["w", idx, x] => {
                    let idx = idx.parse::<usize>().map_err(|_| Error::parse(ln, "bad weight index"))?;
                    weights.push((ln, idx, num(x)?));
                }
                _ => return Err(Error::parse(ln, "unrecognized entry")),
            }
        }
        let missing = |what: &str| Error::parse(0, format!("model file lacks `{what}`"));
        let templates = FeatureTemplate::new(&tags.ok_or_else(|| missing("tags"))?, &templates.ok_or_else(|| missing("templates"))?)?;
        let rules = RuleSet::from_pairs(rules.iter().map(|(h, d)| (h.as_str(), d.as_str())));
        let mut m = CmstModel::new(
            templates,
            rules,
            lambda.ok_or_else(|| missing("lambda"))?,
            mu.ok_or_else(|| missing("mu"))?,
        )?;
        let dim = dim.ok_or_else(|| missing("dim"))?;
        if dim != m.w.len() {
            return Err(Error::parse(0, format!("dimension {dim} does not match templates ({})", m.w.len())));
        }
        for (ln, idx, x) in weights {
            if idx >= dim {
                return Err(Error::parse(ln, format!("weight index {idx} out of range")));
            }
            m.w[idx] = x;
        }
        Ok(m)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        CmstModel::read_from(text.as_bytes())
    }
}

/// Feature matrix and rule vector of one sentence.
#[derive(Debug, Clone)]
pub struct CmstInstance {
    pub x: FeatureMatrix,
    pub v: Vec<f64>,
}

impl CmstInstance {
    pub fn new(s: &Sentence, m: &CmstModel) -> Self {
        CmstInstance {
            x: extract_features(s, &m.templates),
            v: rule_vector(s, &m.rules),
        }
    }

    pub fn sentence_len(&self) -> usize {
        self.x.sentence_len()
    }

    /// `1/(2n) |y - X w|^2 - mu v.y` for a (possibly relaxed) arc vector.
    pub fn loss(&self, y: &[f64], w: &[f64], mu: f64) -> f64 {
        let n = self.sentence_len() as f64;
        let xw = self.x.mul(w);
        let sq: f64 = y.iter().zip(&xw).map(|(a, b)| (a - b) * (a - b)).sum();
        let prior: f64 = self.v.iter().zip(y).map(|(a, b)| a * b).sum();
        sq / (2.0 * n) - mu * prior
    }

    /// Per-arc linear cost of `scale * G - u.z` over tree indicators.
    pub fn arc_costs(&self, w: &[f64], mu: f64, u: Option<&DualPrices>, scale: f64) -> Vec<f64> {
        let n = self.sentence_len() as f64;
        let xw = self.x.mul(w);
        xw.iter()
            .zip(&self.v)
            .enumerate()
            .map(|(i, (&s, &v))| {
                let base = (1.0 - 2.0 * s) / (2.0 * n) - mu * v;
                scale * base - u.map_or(0.0, |u| u.values()[i])
            })
            .collect()
    }

    /// Gradient of `G` with respect to `w` at a fixed arc vector.
    pub fn grad_w(&self, y: &[f64], w: &[f64], lambda: f64, n_corpus: usize) -> Vec<f64> {
        let n = self.sentence_len() as f64;
        let resid: Vec<f64> = self.x.mul(w).iter().zip(y).map(|(a, b)| a - b).collect();
        let mut g: Vec<f64> = w.iter().map(|&wi| lambda / n_corpus as f64 * wi).collect();
        self.x.mul_t_add(&resid, 1.0 / n, &mut g);
        g
    }
}

/// 1.0 on arc slots whose `(head tag, dependent tag)` is a rule.
pub fn rule_vector(x: &Sentence, r: &RuleSet) -> Vec<f64> {
    let n = x.len();
    let mut v = vec![0.0; n * n];
    if r.is_empty() {
        return v;
    }
    for d in 1..=n {
        let dep = &x.tokens[d - 1].upos;
        for h in 0..=n {
            if h == d {
                continue;
            }
            let head = if h == 0 { ROOT_TAG } else { x.tokens[h - 1].upos.as_str() };
            if r.contains(head, dep) {
                v[arc_index(n, h, d)] = 1.0;
            }
        }
    }
    v
}

/// `G(x, y; w)` with the regularizer split over `n_corpus` sentences.
pub fn sentence_objective(x: &Sentence, y: &ArcVector, m: &CmstModel, n_corpus: usize) -> Result<f64> {
    if y.sentence_len() != x.len() {
        return Err(Error::contract("arc vector does not match the sentence"));
    }
    if m.w.len() != m.templates.dimension() {
        return Err(Error::contract("weight vector does not match the templates"));
    }
    if n_corpus == 0 {
        return Err(Error::contract("corpus size must be positive"));
    }
    let inst = m.instance(x);
    Ok(inst.loss(&y.to_f64(), &m.w, m.mu) + regularizer(m, n_corpus))
}

/// `lambda/(2N) |w|^2`.
pub fn regularizer(m: &CmstModel, n_corpus: usize) -> f64 {
    m.lambda / (2.0 * n_corpus as f64) * m.w.iter().map(|x| x * x).sum::<f64>()
}

/// `argmin_z G(x, z; w) - u.z` over projective trees. Since `z_i^2 = z_i`
/// on tree indicators, the objective is linear in `z` up to a constant; the
/// returned score is that linear part.
pub fn lmo_decode(x: &Sentence, m: &CmstModel, u: Option<&DualPrices>) -> Result<(DepTree, f64)> {
    if x.is_empty() {
        return Err(Error::contract("empty sentence"));
    }
    if let Some(u) = u {
        if u.sentence_len() != x.len() {
            return Err(Error::contract("prices do not match the sentence"));
        }
    }
    Ok(lmo_decode_instance(&m.instance(x), m, u, 1.0))
}

/// [`lmo_decode`] on a prepared instance, with `G` scaled by `scale`.
pub fn lmo_decode_instance(inst: &CmstInstance, m: &CmstModel, u: Option<&DualPrices>, scale: f64) -> (DepTree, f64) {
    let costs = inst.arc_costs(&m.w, m.mu, u, scale);
    min_cost_tree(inst.sentence_len(), &costs)
}

/// One pass of mini-batch SGD over `sentences` in order, with fixed trees.
pub fn sgd_update(
    sentences: &[Sentence],
    trees: &[ArcVector],
    m: &CmstModel,
    lr: f64,
    n_corpus: usize,
    batch_size: usize,
) -> Result<CmstModel> {
    if trees.len() != sentences.len() {
        return Err(Error::contract("trees do not align with sentences"));
    }
    let instances: Vec<CmstInstance> = sentences.iter().map(|s| m.instance(s)).collect();
    let ys: Vec<Vec<f64>> = trees.iter().map(|t| t.to_f64()).collect();
    let pairs: Vec<(&CmstInstance, &[f64])> = instances.iter().zip(ys.iter().map(|y| y.as_slice())).collect();
    let mut out = m.clone();
    sgd_epoch(&pairs, &mut out.w, m.lambda, lr, n_corpus, batch_size)?;
    Ok(out)
}

/// Mini-batch SGD pass on prepared instances. Each step moves along the
/// mean gradient of the batch.
pub(crate) fn sgd_epoch(
    data: &[(&CmstInstance, &[f64])],
    w: &mut [f64],
    lambda: f64,
    lr: f64,
    n_corpus: usize,
    batch_size: usize,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::contract("learning rate must be positive"));
    }
    if batch_size == 0 || n_corpus == 0 {
        return Err(Error::contract("batch size and corpus size must be positive"));
    }
    for batch in data.chunks(batch_size) {
        let mut g = vec![0.0; w.len()];
        for (inst, y) in batch {
            if y.len() != inst.x.rows() {
                return Err(Error::contract("arc vector does not match the sentence"));
            }
            let n = inst.sentence_len() as f64;
            let resid: Vec<f64> = inst.x.mul(w).iter().zip(y.iter()).map(|(a, b)| a - b).collect();
            inst.x.mul_t_add(&resid, 1.0 / n, &mut g);
        }
        let k = batch.len() as f64;
        let reg = lambda / n_corpus as f64;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= lr * (gi / k + reg * *wi);
        }
    }
    Ok(())
}
