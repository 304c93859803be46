use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};
use crate::tree::DepTree;

pub const FORMAT_HEADER: &str = "dualdep-dmv";
pub const FORMAT_VERSION: u32 = 1;

/// Attachment direction, seen from the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dir {
    Left = 0,
    Right = 1,
}

impl Dir {
    pub const BOTH: [Dir; 2] = [Dir::Left, Dir::Right];

    fn name(self) -> &'static str {
        match self {
            Dir::Left => "left",
            Dir::Right => "right",
        }
    }

    fn from_name(s: &str) -> Option<Dir> {
        match s {
            "left" => Some(Dir::Left),
            "right" => Some(Dir::Right),
            _ => None,
        }
    }
}

/// Initializer for [`init_params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Uniform,
    /// Attachment mass proportional to the inverse head-dependent distance,
    /// accumulated over the corpus.
    Harmonic,
    /// Random distributions drawn from the seed.
    Random,
}

impl std::str::FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(InitMode::Uniform),
            "harmonic" => Ok(InitMode::Harmonic),
            "random" => Ok(InitMode::Random),
            _ => Err(Error::Data(format!("unknown init mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::Uniform => "uniform",
            InitMode::Harmonic => "harmonic",
            InitMode::Random => "random",
        })
    }
}

/// Rule probabilities of the valence model.
///
/// * `root[p]`: the root generates a token of tag `p`;
/// * `attach[h][dir][c]`: head tag `h` generates a child of tag `c` in `dir`;
/// * `stop[h][dir][adj]`: head tag `h` stops generating in `dir`, where
///   `adj = 0` before its first child on that side and `adj = 1` after.
#[derive(Debug, Clone, PartialEq)]
pub struct DmvParams {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    root: Vec<f64>,
    attach: Vec<f64>,
    stop: Vec<f64>,
}

impl DmvParams {
    fn zeros(vocab: Vec<String>) -> Self {
        let v = vocab.len();
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        DmvParams {
            vocab,
            index,
            root: vec![0.0; v],
            attach: vec![0.0; 2 * v * v],
            stop: vec![0.0; 4 * v],
        }
    }

    pub fn uniform(vocab: Vec<String>) -> Self {
        let v = vocab.len() as f64;
        let mut p = DmvParams::zeros(vocab);
        p.root.fill(1.0 / v);
        p.attach.fill(1.0 / v);
        p.stop.fill(0.5);
        p
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn num_tags(&self) -> usize {
        self.vocab.len()
    }

    pub fn tag_id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    /// Tag ids of a sentence. Tags outside the vocabulary map to the first
    /// vocabulary entry.
    pub fn encode(&self, x: &Sentence) -> Vec<usize> {
        x.upos().map(|t| self.tag_id(t).unwrap_or(0)).collect()
    }

    pub fn root(&self, p: usize) -> f64 {
        self.root[p]
    }

    pub fn attach(&self, h: usize, dir: Dir, c: usize) -> f64 {
        self.attach[self.attach_slot(h, dir, c)]
    }

    pub fn stop(&self, h: usize, dir: Dir, adj: bool) -> f64 {
        self.stop[stop_slot(h, dir, adj)]
    }

    pub fn set_root(&mut self, p: usize, value: f64) {
        self.root[p] = value;
    }

    pub fn set_attach(&mut self, h: usize, dir: Dir, c: usize, value: f64) {
        let s = self.attach_slot(h, dir, c);
        self.attach[s] = value;
    }

    pub fn set_stop(&mut self, h: usize, dir: Dir, adj: bool, value: f64) {
        self.stop[stop_slot(h, dir, adj)] = value;
    }

    fn attach_slot(&self, h: usize, dir: Dir, c: usize) -> usize {
        (h * 2 + dir as usize) * self.vocab.len() + c
    }

    /// Largest deviation from 1 over all root and attachment distributions,
    /// and whether every stop probability lies in `[0, 1]`.
    pub fn normalization_error(&self) -> (f64, bool) {
        let v = self.vocab.len();
        let mut worst = (self.root.iter().sum::<f64>() - 1.0).abs();
        for ctx in self.attach.chunks(v) {
            worst = worst.max((ctx.iter().sum::<f64>() - 1.0).abs());
        }
        let stops_ok = self.stop.iter().all(|s| (0.0..=1.0).contains(s));
        (worst, stops_ok)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        let (err, ok) = self.normalization_error();
        ok && err <= tol
    }

    /// Writes the versioned text form. Values use 17 significant digits so
    /// that reading them back is bit-exact.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{FORMAT_HEADER} {FORMAT_VERSION}")?;
        writeln!(out, "vocab {}", self.vocab.join(" "))?;
        for (p, tag) in self.vocab.iter().enumerate() {
            writeln!(out, "root {tag} {:.16e}", self.root[p])?;
        }
        for (h, head) in self.vocab.iter().enumerate() {
            for dir in Dir::BOTH {
                for (c, child) in self.vocab.iter().enumerate() {
                    let value = self.attach(h, dir, c);
                    writeln!(out, "attach {head} {} {child} {value:.16e}", dir.name())?;
                }
            }
        }
        for (h, head) in self.vocab.iter().enumerate() {
            for dir in Dir::BOTH {
                for adj in [false, true] {
                    let value = self.stop(h, dir, adj);
                    writeln!(out, "stop {head} {} {} {value:.16e}", dir.name(), u8::from(adj))?;
                }
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
        let mut lines = input.lines().enumerate();
        let mut next = || -> Result<Option<(usize, String)>> {
            for (i, l) in lines.by_ref() {
                let l = l?;
                if !l.trim().is_empty() {
                    return Ok(Some((i + 1, l)));
                }
            }
            Ok(None)
        };
        let (ln, header) = next()?.ok_or_else(|| Error::parse(1, "empty parameter file"))?;
        let expected = format!("{FORMAT_HEADER} {FORMAT_VERSION}");
        if header.trim() != expected {
            return Err(Error::parse(ln, format!("expected header {expected:?}")));
        }
        let (ln, vocab_line) = next()?.ok_or_else(|| Error::parse(ln + 1, "missing vocab line"))?;
        let mut fields = vocab_line.split_whitespace();
        if fields.next() != Some("vocab") {
            return Err(Error::parse(ln, "expected vocab line"));
        }
        let vocab: Vec<String> = fields.map(str::to_string).collect();
        if vocab.is_empty() {
            return Err(Error::parse(ln, "empty vocabulary"));
        }
        let mut p = DmvParams::zeros(vocab);
        let mut seen = 0usize;
        let v = p.num_tags();
        let expected_entries = v + 2 * v * v + 4 * v;
        while let Some((ln, line)) = next()? {
            let f: Vec<&str> = line.split_whitespace().collect();
            let tag = |s: &str| p.tag_id(s).ok_or_else(|| Error::parse(ln, format!("unknown tag {s:?}")));
            let dir = |s: &str| Dir::from_name(s).ok_or_else(|| Error::parse(ln, format!("bad direction {s:?}")));
            let value = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(ln, format!("bad value {s:?}")))
            };
            match f.as_slice() {
                ["root", t, x] => {
                    let (t, x) = (tag(t)?, value(x)?);
                    p.root[t] = x;
                }
                ["attach", h, d, c, x] => {
                    let (h, d, c, x) = (tag(h)?, dir(d)?, tag(c)?, value(x)?);
                    p.set_attach(h, d, c, x);
                }
                ["stop", h, d, a, x] => {
                    let adj = match *a {
                        "0" => false,
                        "1" => true,
                        _ => return Err(Error::parse(ln, format!("bad adjacency {a:?}"))),
                    };
                    let (h, d, x) = (tag(h)?, dir(d)?, value(x)?);
                    p.set_stop(h, d, adj, x);
                }
                _ => return Err(Error::parse(ln, "unrecognized entry")),
            }
            seen += 1;
        }
        if seen != expected_entries {
            return Err(Error::parse(
                0,
                format!("expected {expected_entries} entries, found {seen}"),
            ));
        }
        Ok(p)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        DmvParams::read_from(text.as_bytes())
    }
}

fn stop_slot(h: usize, dir: Dir, adj: bool) -> usize {
    (h * 2 + dir as usize) * 2 + usize::from(adj)
}

/// Sufficient statistics for the rule probabilities (hard or expected).
#[derive(Debug, Clone, PartialEq)]
pub struct DmvCounts {
    v: usize,
    pub root: Vec<f64>,
    pub attach: Vec<f64>,
    pub stop: Vec<f64>,
    pub cont: Vec<f64>,
}

impl DmvCounts {
    pub fn zeros(v: usize) -> Self {
        DmvCounts {
            v,
            root: vec![0.0; v],
            attach: vec![0.0; 2 * v * v],
            stop: vec![0.0; 4 * v],
            cont: vec![0.0; 4 * v],
        }
    }

    pub fn num_tags(&self) -> usize {
        self.v
    }

    pub fn attach(&self, h: usize, dir: Dir, c: usize) -> f64 {
        self.attach[(h * 2 + dir as usize) * self.v + c]
    }

    pub fn stop(&self, h: usize, dir: Dir, adj: bool) -> f64 {
        self.stop[stop_slot(h, dir, adj)]
    }

    pub fn cont(&self, h: usize, dir: Dir, adj: bool) -> f64 {
        self.cont[stop_slot(h, dir, adj)]
    }

    pub fn merge(&mut self, other: &DmvCounts) {
        for (a, b) in [
            (&mut self.root, &other.root),
            (&mut self.attach, &other.attach),
            (&mut self.stop, &other.stop),
            (&mut self.cont, &other.cont),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Adds the rule uses of one tree. `tags` are vocabulary ids.
    pub fn add_tree(&mut self, tags: &[usize], y: &DepTree) {
        let v = self.v;
        let children = y.children();
        self.root[tags[y.root() - 1]] += 1.0;
        for h in 1..=y.len() {
            let th = tags[h - 1];
            let (left, right): (Vec<usize>, Vec<usize>) = children[h].iter().partition(|&&c| c < h);
            // Children are generated nearest first.
            let sides = [(Dir::Left, left.into_iter().rev().collect::<Vec<_>>()), (Dir::Right, right)];
            for (dir, kids) in sides {
                let mut adj = false;
                for c in kids {
                    self.cont[stop_slot(th, dir, adj)] += 1.0;
                    self.attach[(th * 2 + dir as usize) * v + tags[c - 1]] += 1.0;
                    adj = true;
                }
                self.stop[stop_slot(th, dir, adj)] += 1.0;
            }
        }
    }

    /// `(count + smoothing)`-normalized parameters. A context with no mass
    /// at all keeps its distribution from `fallback`, or becomes uniform.
    pub fn normalize(&self, vocab: Vec<String>, smoothing: f64, fallback: Option<&DmvParams>) -> DmvParams {
        let v = self.v;
        assert_eq!(vocab.len(), v);
        let mut p = DmvParams::zeros(vocab);
        normalize_block(&self.root, &mut p.root, smoothing, fallback.map(|f| f.root.as_slice()));
        for ctx in 0..2 * v {
            let r = ctx * v..(ctx + 1) * v;
            normalize_block(
                &self.attach[r.clone()],
                &mut p.attach[r.clone()],
                smoothing,
                fallback.map(|f| &f.attach[r.clone()]),
            );
        }
        for slot in 0..4 * v {
            let s = self.stop[slot] + smoothing;
            let c = self.cont[slot] + smoothing;
            p.stop[slot] = if s + c > 0.0 {
                s / (s + c)
            } else {
                fallback.map_or(0.5, |f| f.stop[slot])
            };
        }
        p
    }
}

fn normalize_block(counts: &[f64], out: &mut [f64], smoothing: f64, fallback: Option<&[f64]>) {
    let total: f64 = counts.iter().map(|c| c + smoothing).sum();
    if total > 0.0 {
        for (o, c) in out.iter_mut().zip(counts) {
            *o = (c + smoothing) / total;
        }
    } else if let Some(f) = fallback {
        out.copy_from_slice(f);
    } else {
        out.fill(1.0 / counts.len() as f64);
    }
}

/// Initial parameters for EM.
pub fn init_params(c: &Corpus, mode: InitMode, seed: u64) -> Result<DmvParams> {
    if c.pos_vocab.is_empty() {
        return Err(Error::contract("cannot initialize parameters over an empty vocabulary"));
    }
    let vocab = c.pos_vocab.clone();
    let v = vocab.len();
    match mode {
        InitMode::Uniform => Ok(DmvParams::uniform(vocab)),
        InitMode::Harmonic => {
            // Every ordered pair (h, d) in a sentence contributes 1/|h - d|,
            // i.e. 1/(k + 1) for k tokens in between.
            let mut counts = DmvCounts::zeros(v);
            let uniform = DmvParams::uniform(vocab.clone());
            for s in &c.sentences {
                let tags = uniform.encode(s);
                for (h, &th) in tags.iter().enumerate() {
                    counts.root[th] += 1.0 / tags.len() as f64;
                    for (d, &td) in tags.iter().enumerate() {
                        if d == h {
                            continue;
                        }
                        let dir = if d < h { Dir::Left } else { Dir::Right };
                        counts.attach[(th * 2 + dir as usize) * v + td] += 1.0 / h.abs_diff(d) as f64;
                    }
                }
            }
            let mut p = counts.normalize(vocab, 0.0, Some(&uniform));
            p.stop.fill(0.5);
            Ok(p)
        }
        InitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = DmvParams::zeros(vocab);
            let mut draw = |out: &mut [f64]| {
                for x in out.iter_mut() {
                    *x = rng.gen_range(0.05..1.0);
                }
                let s: f64 = out.iter().sum();
                out.iter_mut().for_each(|x| *x /= s);
            };
            draw(&mut p.root);
            for ctx in p.attach.chunks_mut(v) {
                draw(ctx);
            }
            for s in p.stop.iter_mut() {
                *s = rng.gen_range(0.05..0.95);
            }
            Ok(p)
        }
    }
}
