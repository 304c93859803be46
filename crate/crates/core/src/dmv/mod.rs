//! The generative side: a dependency model with valence, trained with a
//! center-embedding cap and a short-dependency preference.
//!
//! For a sentence `x` and projective tree `y` the model scores
//!
//! ```text
//! log P(x, y) + log f(x, y)
//! log f(x, y) = -beta * sum over non-root arcs (|h - d| - 1)   if ce_depth(y) <= D
//!             = -inf                                          otherwise
//! ```
//!
//! All chart computations run in the log domain; impossible items hold
//! `f64::NEG_INFINITY`.

mod chart;
mod params;

pub use params::{init_params, Dir, DmvCounts, DmvParams, InitMode};
pub use crate::tree::ce_depth;

use crate::corpus::{Corpus, Sentence};
use crate::decoder::DualPrices;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tree::{arc_index, DepTree};
use chart::{EventLayout, Layout};

/// The structural constraint factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintConfig {
    /// Maximum center-embedding depth; `None` disables the cap.
    pub max_ce_depth: Option<usize>,
    /// Weight of the per-arc length penalty.
    pub dep_len_beta: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            max_ce_depth: Some(1),
            dep_len_beta: 0.1,
        }
    }
}

impl ConstraintConfig {
    /// No cap and no length penalty: plain DMV.
    pub fn unconstrained() -> Self {
        ConstraintConfig {
            max_ce_depth: None,
            dep_len_beta: 0.0,
        }
    }

    pub fn without_depth_cap(self) -> Self {
        ConstraintConfig {
            max_ce_depth: None,
            ..self
        }
    }

    /// Log factor contributed by arc `head -> dep` (1-based, 0 = root).
    pub fn arc_log_factor(&self, head: usize, dep: usize) -> f64 {
        if head == 0 {
            0.0
        } else {
            -self.dep_len_beta * (head.abs_diff(dep) as f64 - 1.0)
        }
    }
}

/// Log rule probabilities laid out for the chart.
#[derive(Debug, Clone)]
pub struct LogTables {
    events: EventLayout,
    logw: Vec<f64>,
    vocab_size: usize,
}

impl LogTables {
    pub fn new(theta: &DmvParams) -> Self {
        let v = theta.num_tags();
        let events = EventLayout::new(v);
        let mut logw = vec![f64::NEG_INFINITY; events.len()];
        for p in 0..v {
            logw[events.root(p) as usize] = theta.root(p).ln();
        }
        for h in 0..v {
            for dir in Dir::BOTH {
                for c in 0..v {
                    logw[events.attach(h, dir, c) as usize] = theta.attach(h, dir, c).ln();
                }
                for adj in [false, true] {
                    let s = theta.stop(h, dir, adj);
                    logw[events.stop(h, dir, adj) as usize] = s.ln();
                    logw[events.cont(h, dir, adj) as usize] = (1.0 - s).ln();
                }
            }
        }
        LogTables {
            events,
            logw,
            vocab_size: v,
        }
    }

    fn counts_from_events(&self, flat: &[f64]) -> DmvCounts {
        let v = self.vocab_size;
        let ev = self.events;
        let mut c = DmvCounts::zeros(v);
        for p in 0..v {
            c.root[p] = flat[ev.root(p) as usize];
        }
        for h in 0..v {
            for dir in Dir::BOTH {
                for ch in 0..v {
                    c.attach[(h * 2 + dir as usize) * v + ch] = flat[ev.attach(h, dir, ch) as usize];
                }
                for adj in [false, true] {
                    let slot = (h * 2 + dir as usize) * 2 + usize::from(adj);
                    c.stop[slot] = flat[ev.stop(h, dir, adj) as usize];
                    c.cont[slot] = flat[ev.cont(h, dir, adj) as usize];
                }
            }
        }
        c
    }
}

/// Per-arc log bonus: the length factor minus the dual price.
fn arc_bonus(n: usize, cfg: &ConstraintConfig, u: Option<&DualPrices>) -> Result<Vec<f64>> {
    if let Some(u) = u {
        if u.sentence_len() != n {
            return Err(Error::contract(format!(
                "prices for length {} used on a sentence of length {n}",
                u.sentence_len()
            )));
        }
    }
    let mut b = vec![0.0; n * n];
    for d in 1..=n {
        for h in 0..=n {
            if h == d {
                continue;
            }
            let slot = arc_index(n, h, d);
            b[slot] = cfg.arc_log_factor(h, d) - u.map_or(0.0, |u| u.values()[slot]);
        }
    }
    Ok(b)
}

fn check_len(x: &Sentence) -> Result<()> {
    if x.is_empty() {
        Err(Error::contract("empty sentence"))
    } else {
        Ok(())
    }
}

/// `log P(x, y) + log f(x, y)`.
pub fn tree_logprob(x: &Sentence, y: &DepTree, theta: &DmvParams, cfg: &ConstraintConfig) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "tree of length {} for sentence of length {}",
            y.len(),
            x.len()
        )));
    }
    if let Some(d) = cfg.max_ce_depth {
        if ce_depth(y) > d {
            return Ok(f64::NEG_INFINITY);
        }
    }
    let tags = theta.encode(x);
    let mut counts = DmvCounts::zeros(theta.num_tags());
    counts.add_tree(&tags, y);
    Ok(log_score_of_counts(&counts, theta) + y.arcs().map(|(h, d)| cfg.arc_log_factor(h, d)).sum::<f64>())
}

fn log_score_of_counts(c: &DmvCounts, theta: &DmvParams) -> f64 {
    let v = theta.num_tags();
    let mut s = 0.0;
    let mut add = |count: f64, p: f64| {
        if count > 0.0 {
            s += count * p.ln();
        }
    };
    for p in 0..v {
        add(c.root[p], theta.root(p));
    }
    for h in 0..v {
        for dir in Dir::BOTH {
            for ch in 0..v {
                add(c.attach(h, dir, ch), theta.attach(h, dir, ch));
            }
            for adj in [false, true] {
                add(c.stop(h, dir, adj), theta.stop(h, dir, adj));
                add(c.cont(h, dir, adj), 1.0 - theta.stop(h, dir, adj));
            }
        }
    }
    s
}

/// Inside and outside tables of one sentence.
#[derive(Debug, Clone)]
pub struct DmvCharts {
    pub inside: Vec<f64>,
    pub outside: Vec<f64>,
    /// Log marginal of the sentence.
    pub log_z: f64,
}

/// Log of the constrained marginal `sum_y P(x, y) f(x, y)`.
pub fn inside_loglik(x: &Sentence, theta: &DmvParams, cfg: &ConstraintConfig) -> Result<f64> {
    check_len(x)?;
    let tables = LogTables::new(theta);
    inside_loglik_with(x, theta, &tables, cfg)
}

pub fn inside_loglik_with(x: &Sentence, theta: &DmvParams, tables: &LogTables, cfg: &ConstraintConfig) -> Result<f64> {
    check_len(x)?;
    let lay = Layout::new(x.len(), cfg.max_ce_depth);
    let bonus = arc_bonus(x.len(), cfg, None)?;
    let ins = chart::inside(&lay, &theta.encode(x), tables.events, &tables.logw, &bonus);
    Ok(ins[lay.goal() as usize])
}

/// Expected rule counts of one sentence under the posterior, with charts.
pub fn expected_counts(x: &Sentence, theta: &DmvParams, cfg: &ConstraintConfig) -> Result<(DmvCounts, DmvCharts)> {
    check_len(x)?;
    let tables = LogTables::new(theta);
    expected_counts_with(x, theta, &tables, cfg)
}

fn expected_counts_with(
    x: &Sentence,
    theta: &DmvParams,
    tables: &LogTables,
    cfg: &ConstraintConfig,
) -> Result<(DmvCounts, DmvCharts)> {
    let lay = Layout::new(x.len(), cfg.max_ce_depth);
    let bonus = arc_bonus(x.len(), cfg, None)?;
    let io = chart::inside_outside(&lay, &theta.encode(x), tables.events, &tables.logw, &bonus);
    let counts = tables.counts_from_events(&io.event_counts);
    Ok((
        counts,
        DmvCharts {
            inside: io.inside,
            outside: io.outside,
            log_z: io.log_z,
        },
    ))
}

/// Result of one EM iteration.
#[derive(Debug, Clone)]
pub struct EmStep {
    pub params: DmvParams,
    /// Corpus log likelihood under the parameters before the step.
    pub loglik: f64,
    /// Sentences whose marginal was zero; they contribute no counts.
    pub skipped: usize,
}

/// One EM iteration over the corpus.
pub fn em_step(c: &Corpus, theta: &DmvParams, cfg: &ConstraintConfig, smoothing: f64) -> Result<EmStep> {
    em_step_with(c, theta, cfg, smoothing, Execution::default())
}

pub fn em_step_with(
    c: &Corpus,
    theta: &DmvParams,
    cfg: &ConstraintConfig,
    smoothing: f64,
    exec: Execution,
) -> Result<EmStep> {
    if smoothing < 0.0 {
        return Err(Error::contract("smoothing must be non-negative"));
    }
    let tables = LogTables::new(theta);
    let v = theta.num_tags();
    let per_sentence = par::map(exec, &c.sentences, |_, s| {
        if s.is_empty() {
            return Err(Error::contract("empty sentence"));
        }
        expected_counts_with(s, theta, &tables, cfg).map(|(counts, charts)| (counts, charts.log_z))
    });
    let mut total = DmvCounts::zeros(v);
    let mut loglik = 0.0;
    let mut skipped = 0;
    for r in per_sentence {
        let (counts, log_z) = r?;
        if log_z == f64::NEG_INFINITY {
            skipped += 1;
            continue;
        }
        loglik += log_z;
        total.merge(&counts);
    }
    Ok(EmStep {
        params: total.normalize(theta.vocab().to_vec(), smoothing, Some(theta)),
        loglik,
        skipped,
    })
}

/// Corpus log likelihood (sentences with zero marginal are skipped).
pub fn corpus_loglik(c: &Corpus, theta: &DmvParams, cfg: &ConstraintConfig, exec: Execution) -> Result<f64> {
    let tables = LogTables::new(theta);
    let lls = par::map(exec, &c.sentences, |_, s| inside_loglik_with(s, theta, &tables, cfg));
    let mut total = 0.0;
    for ll in lls {
        let ll = ll?;
        if ll > f64::NEG_INFINITY {
            total += ll;
        }
    }
    Ok(total)
}

/// `argmin_y -log(P(x, y) f(x, y)) + u . y` over projective trees. The
/// returned score is the attained minimum.
pub fn viterbi_decode(
    x: &Sentence,
    theta: &DmvParams,
    cfg: &ConstraintConfig,
    u: Option<&DualPrices>,
) -> Result<(DepTree, f64)> {
    let tables = LogTables::new(theta);
    viterbi_decode_with(x, theta, &tables, cfg, u)
}

pub fn viterbi_decode_with(
    x: &Sentence,
    theta: &DmvParams,
    tables: &LogTables,
    cfg: &ConstraintConfig,
    u: Option<&DualPrices>,
) -> Result<(DepTree, f64)> {
    check_len(x)?;
    let lay = Layout::new(x.len(), cfg.max_ce_depth);
    let bonus = arc_bonus(x.len(), cfg, u)?;
    let (tree, best) = chart::viterbi(&lay, &theta.encode(x), tables.events, &tables.logw, &bonus)?;
    Ok((tree, -best))
}

/// Count-and-normalize estimate from fixed trees.
pub fn mstep_from_trees(c: &Corpus, trees: &[DepTree], smoothing: f64) -> Result<DmvParams> {
    mstep_from_partial_trees(c, &trees.iter().map(Some).collect::<Vec<_>>(), smoothing, None)
}

/// Like [`mstep_from_trees`], skipping sentences without a tree. Contexts
/// without any mass keep their distribution from `fallback` when given.
pub fn mstep_from_partial_trees(
    c: &Corpus,
    trees: &[Option<&DepTree>],
    smoothing: f64,
    fallback: Option<&DmvParams>,
) -> Result<DmvParams> {
    if trees.len() != c.len() {
        return Err(Error::contract(format!(
            "{} trees for {} sentences",
            trees.len(),
            c.len()
        )));
    }
    if c.pos_vocab.is_empty() {
        return Err(Error::contract("empty vocabulary"));
    }
    let vocab = fallback.map_or_else(|| c.pos_vocab.clone(), |f| f.vocab().to_vec());
    let encoder = DmvParams::uniform(vocab.clone());
    let mut counts = DmvCounts::zeros(vocab.len());
    for (i, (s, t)) in c.sentences.iter().zip(trees).enumerate() {
        let Some(t) = t else { continue };
        if t.len() != s.len() {
            return Err(Error::contract(format!("tree {i} does not match its sentence")));
        }
        counts.add_tree(&encoder.encode(s), t);
    }
    Ok(counts.normalize(vocab, smoothing, fallback))
}
