//! Brute-force oracles and synthetic data shared by the integration tests.
//!
//! Nothing here reuses the chart, the Eisner decoder or the count tables:
//! trees are enumerated exhaustively and scored by walking them directly.

#![allow(dead_code)]

use dualdep::cmst::{CmstModel, FeatureTemplate, RuleSet, ROOT_TAG};
use dualdep::corpus::{Corpus, Sentence};
use dualdep::dmv::{init_params, ConstraintConfig, Dir, DmvParams, InitMode};
use dualdep::tree::{arc_index, DepTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TAGS: &[&str] = &["DET", "NOUN", "VERB", "ADJ", "ADP", "PRON", "ADV", "PUNCT"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every projective single-rooted tree over `n` tokens.
pub fn all_trees(n: usize) -> Vec<DepTree> {
    let mut out = Vec::new();
    let mut heads = vec![0usize; n];
    fn rec(i: usize, heads: &mut Vec<usize>, out: &mut Vec<DepTree>) {
        let n = heads.len();
        if i == n {
            if let Ok(t) = DepTree::new(heads.clone()) {
                out.push(t);
            }
            return;
        }
        for h in 0..=n {
            if h != i + 1 {
                heads[i] = h;
                rec(i + 1, heads, out);
            }
        }
    }
    rec(0, &mut heads, &mut out);
    out
}

/// Center-embedding depth from explicit span nesting: a token nests one
/// level deeper than its head when its subtree yield shares neither end
/// with the head's yield.
pub fn depth_oracle(y: &DepTree) -> usize {
    let n = y.len();
    let heads = y.heads();
    let dominates = |a: usize, mut d: usize| -> bool {
        loop {
            if d == a {
                return true;
            }
            if d == 0 {
                return false;
            }
            d = heads[d - 1];
        }
    };
    let span = |t: usize| -> (usize, usize) {
        let members: Vec<usize> = (1..=n).filter(|&d| dominates(t, d)).collect();
        (*members.first().unwrap(), *members.last().unwrap())
    };
    let mut best = 0;
    for t in 1..=n {
        let mut depth = 0;
        let mut cur = t;
        while heads[cur - 1] != 0 {
            let h = heads[cur - 1];
            let (l, r) = span(cur);
            let (hl, hr) = span(h);
            if l > hl && r < hr {
                depth += 1;
            }
            cur = h;
        }
        best = best.max(depth);
    }
    best
}

/// `log P(x, y)` by generating the tree head by head: the root picks its
/// token, then every head emits its children on each side nearest first,
/// each preceded by a continue decision, and finally stops.
pub fn dmv_logprob_oracle(x: &Sentence, y: &DepTree, theta: &DmvParams) -> f64 {
    let n = x.len();
    let tag = |i: usize| theta.tag_id(&x.tokens[i - 1].upos).unwrap_or(0);
    let mut lp = theta.root(tag(y.root())).ln();
    for h in 1..=n {
        let left: Vec<usize> = (1..h).rev().filter(|&d| y.head(d) == h).collect();
        let right: Vec<usize> = (h + 1..=n).filter(|&d| y.head(d) == h).collect();
        for (dir, kids) in [(Dir::Left, left), (Dir::Right, right)] {
            let mut adj = false;
            for d in kids {
                lp += (1.0 - theta.stop(tag(h), dir, adj)).ln();
                lp += theta.attach(tag(h), dir, tag(d)).ln();
                adj = true;
            }
            lp += theta.stop(tag(h), dir, adj).ln();
        }
    }
    lp
}

/// `log P + log f`, or `-inf` over the depth cap.
pub fn constrained_logprob_oracle(x: &Sentence, y: &DepTree, theta: &DmvParams, cfg: &ConstraintConfig) -> f64 {
    if let Some(d) = cfg.max_ce_depth {
        if depth_oracle(y) > d {
            return f64::NEG_INFINITY;
        }
    }
    let mut lp = dmv_logprob_oracle(x, y, theta);
    for d in 1..=y.len() {
        let h = y.head(d);
        if h != 0 {
            lp -= cfg.dep_len_beta * (h.abs_diff(d) as f64 - 1.0);
        }
    }
    lp
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn price_dot(y: &DepTree, u: &[f64]) -> f64 {
    let n = y.len();
    (1..=n).map(|d| u[arc_index(n, y.head(d), d)]).sum()
}

/// `G(x, y; w)` from dense feature rows, written out term by term.
pub fn g_oracle(x: &Sentence, y: &DepTree, m: &CmstModel, n_corpus: usize) -> f64 {
    let n = x.len();
    let mut sq = 0.0;
    let mut prior = 0.0;
    for d in 1..=n {
        for h in 0..=n {
            if h == d {
                continue;
            }
            let score: f64 = m
                .templates
                .arc_features(x, h, d)
                .iter()
                .map(|&f| m.w[f as usize])
                .sum();
            let yi = if y.head(d) == h { 1.0 } else { 0.0 };
            sq += (yi - score) * (yi - score);
            let head_tag = if h == 0 { ROOT_TAG } else { x.tokens[h - 1].upos.as_str() };
            if yi == 1.0 && m.rules.contains(head_tag, &x.tokens[d - 1].upos) {
                prior += 1.0;
            }
        }
    }
    let wn: f64 = m.w.iter().map(|v| v * v).sum();
    sq / (2.0 * n as f64) + m.lambda / (2.0 * n_corpus as f64) * wn - m.mu * prior
}

pub fn random_sentence(r: &mut impl Rng, n: usize, tags: &[&str]) -> Sentence {
    let t: Vec<&str> = (0..n).map(|_| tags[r.gen_range(0..tags.len())]).collect();
    Sentence::from_tags(&t, None)
}

/// Random distributions over the corpus vocabulary.
pub fn random_params(c: &Corpus, seed: u64) -> DmvParams {
    init_params(c, InitMode::Random, seed).unwrap()
}

pub fn random_constraints(r: &mut impl Rng) -> ConstraintConfig {
    ConstraintConfig {
        max_ce_depth: match r.gen_range(0..4) {
            0 => None,
            k => Some(k - 1),
        },
        dep_len_beta: if r.gen_bool(0.5) { 0.0 } else { r.gen_range(0.0..1.0) },
    }
}

pub fn random_prices(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n * n).map(|_| r.gen_range(-scale..scale)).collect()
}

/// A model over `c` with random weights and hyperparameters.
pub fn random_cmst(r: &mut impl Rng, c: &Corpus, rules: RuleSet) -> CmstModel {
    let t = FeatureTemplate::for_corpus(c);
    let mut m = CmstModel::new(t, rules, r.gen_range(0.0..2.0), r.gen_range(0.0..1.5)).unwrap();
    for w in m.w.iter_mut() {
        *w = r.gen_range(-0.5..0.5);
    }
    m
}

/// A peaked random valence grammar used to sample synthetic treebanks.
pub fn truth_grammar(seed: u64) -> DmvParams {
    let vocab: Vec<String> = TAGS.iter().map(|s| s.to_string()).collect();
    let mut p = DmvParams::uniform(vocab);
    let mut r = rng(seed);
    let v = TAGS.len();
    let peaked = |r: &mut ChaCha8Rng| -> Vec<f64> {
        let mut x: Vec<f64> = (0..v).map(|_| r.gen_range(0.0f64..1.0).powi(4) + 1e-3).collect();
        let s: f64 = x.iter().sum();
        x.iter_mut().for_each(|a| *a /= s);
        x
    };
    let root = peaked(&mut r);
    for (i, &x) in root.iter().enumerate() {
        p.set_root(i, x);
    }
    for h in 0..v {
        for dir in Dir::BOTH {
            let a = peaked(&mut r);
            for (c, &x) in a.iter().enumerate() {
                p.set_attach(h, dir, c, x);
            }
            p.set_stop(h, dir, false, r.gen_range(0.45..0.8));
            p.set_stop(h, dir, true, r.gen_range(0.75..0.95));
        }
    }
    p
}

fn sample_subtree(p: &DmvParams, r: &mut ChaCha8Rng, tag: usize, depth: usize, out: &mut Vec<(usize, Option<usize>)>) -> usize {
    // Returns the position of the head within `out`; children point at
    // their head's position through the second field.
    let sample = |r: &mut ChaCha8Rng, dist: &dyn Fn(usize) -> f64| -> usize {
        let u: f64 = r.gen_range(0.0..1.0);
        let mut acc = 0.0;
        for c in 0..p.num_tags() {
            acc += dist(c);
            if u < acc {
                return c;
            }
        }
        p.num_tags() - 1
    };
    let mut kids = [Vec::new(), Vec::new()];
    for dir in Dir::BOTH {
        let mut adj = false;
        while depth < 6 && r.gen_range(0.0..1.0) >= p.stop(tag, dir, adj) {
            kids[dir as usize].push(sample(r, &|c| p.attach(tag, dir, c)));
            adj = true;
        }
    }
    // Left children were generated nearest first; lay them out far to near.
    let mut left_heads = Vec::new();
    for &c in kids[0].iter().rev() {
        left_heads.push(sample_subtree(p, r, c, depth + 1, out));
    }
    let me = out.len();
    out.push((tag, None));
    for h in left_heads {
        out[h].1 = Some(me);
    }
    for &c in &kids[1] {
        let h = sample_subtree(p, r, c, depth + 1, out);
        out[h].1 = Some(me);
    }
    me
}

/// Sentences sampled from [`truth_grammar`] with gold heads, lengths in
/// `1..=max_len`.
pub fn synthetic_corpus(seed: u64, sentences: usize, max_len: usize) -> Corpus {
    let p = truth_grammar(seed);
    let mut r = rng(seed ^ 0x5eed);
    let mut out = Vec::new();
    while out.len() < sentences {
        let root = {
            let u: f64 = r.gen_range(0.0..1.0);
            let mut acc = 0.0;
            let mut pick = p.num_tags() - 1;
            for t in 0..p.num_tags() {
                acc += p.root(t);
                if u < acc {
                    pick = t;
                    break;
                }
            }
            pick
        };
        let mut nodes = Vec::new();
        sample_subtree(&p, &mut r, root, 0, &mut nodes);
        if nodes.len() > max_len {
            continue;
        }
        let tags: Vec<&str> = nodes.iter().map(|(t, _)| TAGS[*t]).collect();
        let heads: Vec<usize> = nodes.iter().map(|(_, h)| h.map_or(0, |h| h + 1)).collect();
        out.push(Sentence::from_tags(&tags, Some(&heads)));
    }
    Corpus::new(out)
}
