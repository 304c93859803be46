//! Split-head chart for the valence model.
//!
//! Items are half-constituents of a head `h` over a span ending at `b`:
//!
//! * `RU`/`LU`: right/left half that may still take farther children (every
//!   child so far is interior);
//! * `RF`/`LF`: half whose most recent child is declared the outermost one;
//! * `RS`/`LS`: sealed half (stop decision taken);
//! * `IRI`/`IRO`, `ILI`/`ILO`: an arc from `h` to `b` together with the
//!   head's closer children and the dependent's inner half, where the new
//!   child will end up interior (`I`) or outermost (`O`).
//!
//! Every item also carries a depth layer: the largest number of interior
//! tokens on a path from the item's head down into the half. The layer is
//! capped at the maximum center-embedding depth; with no cap a single layer
//! is used. Each tree has exactly one derivation.

use crate::dmv::params::Dir;
use crate::error::{Error, Result};
use crate::tree::DepTree;

pub(crate) const NONE: u32 = u32::MAX;
const NO_ARC: u16 = u16::MAX;

const RU: usize = 0;
const RF: usize = 1;
const RS: usize = 2;
const LU: usize = 3;
const LF: usize = 4;
const LS: usize = 5;
const IRI: usize = 6;
const IRO: usize = 7;
const ILI: usize = 8;
const ILO: usize = 9;
const KINDS: usize = 10;

/// Indexes of the rule events in a flat log-weight table.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EventLayout {
    v: usize,
}

impl EventLayout {
    pub fn new(v: usize) -> Self {
        EventLayout { v }
    }

    pub fn len(&self) -> usize {
        self.v + 2 * self.v * self.v + 8 * self.v
    }

    pub fn root(&self, p: usize) -> u32 {
        p as u32
    }

    pub fn attach(&self, h: usize, dir: Dir, c: usize) -> u32 {
        (self.v + (h * 2 + dir as usize) * self.v + c) as u32
    }

    pub fn stop(&self, h: usize, dir: Dir, adj: bool) -> u32 {
        (self.v + 2 * self.v * self.v + (h * 2 + dir as usize) * 2 + usize::from(adj)) as u32
    }

    pub fn cont(&self, h: usize, dir: Dir, adj: bool) -> u32 {
        (self.v + 2 * self.v * self.v + 4 * self.v + (h * 2 + dir as usize) * 2 + usize::from(adj)) as u32
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Edge {
    pub head: u32,
    pub tails: [u32; 2],
    pub events: [u32; 2],
    pub bonus: f64,
    pub arc: (u16, u16),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub n: usize,
    pub layers: usize,
    cap: Option<usize>,
}

impl Layout {
    pub fn new(n: usize, cap: Option<usize>) -> Self {
        let layers = cap.map_or(1, |d| d.min(n) + 1);
        Layout { n, layers, cap }
    }

    #[inline]
    fn idx(&self, kind: usize, a: usize, b: usize, k: usize) -> u32 {
        (((kind * self.n + a) * self.n + b) * self.layers + k) as u32
    }

    pub fn goal(&self) -> u32 {
        (KINDS * self.n * self.n * self.layers) as u32
    }

    pub fn size(&self) -> usize {
        self.goal() as usize + 1
    }

    /// Layer after merging a head-side layer `a` with a child-side layer `b`
    /// that gains `inc` when the child is interior.
    #[inline]
    fn combine(&self, a: usize, b: usize, inc: usize) -> Option<usize> {
        match self.cap {
            None => Some(0),
            Some(d) => {
                let k = a.max(b + inc);
                (k <= d).then_some(k)
            }
        }
    }

    pub fn axioms(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.n).flat_map(move |h| [self.idx(RU, h, h, 0), self.idx(LU, h, h, 0)])
    }
}

/// Calls `f` on every hyperedge in bottom-up order.
///
/// `tags` are vocabulary ids; `arc_bonus` is indexed by
/// [`crate::tree::arc_index`] and added to the log weight of each arc.
pub(crate) fn for_each_edge<F: FnMut(&Edge)>(
    lay: &Layout,
    tags: &[usize],
    ev: EventLayout,
    arc_bonus: &[f64],
    mut f: F,
) {
    let n = lay.n;
    let kk = lay.layers;
    let bonus = |h: usize, d: usize| arc_bonus[crate::tree::arc_index(n, h, d)];
    let arc = |h: usize, d: usize| (h as u16, d as u16);

    for h in 0..n {
        let th = tags[h];
        f(&Edge {
            head: lay.idx(RS, h, h, 0),
            tails: [lay.idx(RU, h, h, 0), NONE],
            events: [ev.stop(th, Dir::Right, false), NONE],
            bonus: 0.0,
            arc: (NO_ARC, NO_ARC),
        });
        f(&Edge {
            head: lay.idx(LS, h, h, 0),
            tails: [lay.idx(LU, h, h, 0), NONE],
            events: [ev.stop(th, Dir::Left, false), NONE],
            bonus: 0.0,
            arc: (NO_ARC, NO_ARC),
        });
    }

    for w in 1..n {
        // Arcs spanning w positions.
        for h in 0..n - w {
            let d = h + w;
            let (th, td) = (tags[h], tags[d]);
            let b = bonus(h + 1, d + 1);
            let att = ev.attach(th, Dir::Right, td);
            for m in h..d {
                let cont = ev.cont(th, Dir::Right, m > h);
                for k1 in 0..kk {
                    for kl in 0..kk {
                        let tails = [lay.idx(RU, h, m, k1), lay.idx(LS, d, m + 1, kl)];
                        for (kind, inc) in [(IRI, 1), (IRO, 0)] {
                            if let Some(k) = lay.combine(k1, kl, inc) {
                                f(&Edge {
                                    head: lay.idx(kind, h, d, k),
                                    tails,
                                    events: [cont, att],
                                    bonus: b,
                                    arc: arc(h + 1, d + 1),
                                });
                            }
                        }
                    }
                }
            }
        }
        for d in 0..n - w {
            let h = d + w;
            let (th, td) = (tags[h], tags[d]);
            let b = bonus(h + 1, d + 1);
            let att = ev.attach(th, Dir::Left, td);
            for m in d..h {
                let cont = ev.cont(th, Dir::Left, m + 1 < h);
                for kr in 0..kk {
                    for k1 in 0..kk {
                        let tails = [lay.idx(RS, d, m, kr), lay.idx(LU, h, m + 1, k1)];
                        for (kind, inc) in [(ILI, 1), (ILO, 0)] {
                            if let Some(k) = lay.combine(k1, kr, inc) {
                                f(&Edge {
                                    head: lay.idx(kind, h, d, k),
                                    tails,
                                    events: [cont, att],
                                    bonus: b,
                                    arc: arc(h + 1, d + 1),
                                });
                            }
                        }
                    }
                }
            }
        }

        // Attach the dependent's outer half.
        for h in 0..n - w {
            let j = h + w;
            for d in h + 1..=j {
                for k in 0..kk {
                    for kr in 0..kk {
                        let rs = lay.idx(RS, d, j, kr);
                        for (from, to, inc) in [(IRI, RU, 1), (IRO, RF, 0)] {
                            if let Some(k2) = lay.combine(k, kr, inc) {
                                f(&Edge {
                                    head: lay.idx(to, h, j, k2),
                                    tails: [lay.idx(from, h, d, k), rs],
                                    events: [NONE, NONE],
                                    bonus: 0.0,
                                    arc: (NO_ARC, NO_ARC),
                                });
                            }
                        }
                    }
                }
            }
        }
        for h in w..n {
            let i = h - w;
            for d in i..h {
                for k in 0..kk {
                    for kl in 0..kk {
                        let ls = lay.idx(LS, d, i, kl);
                        for (from, to, inc) in [(ILI, LU, 1), (ILO, LF, 0)] {
                            if let Some(k2) = lay.combine(k, kl, inc) {
                                f(&Edge {
                                    head: lay.idx(to, h, i, k2),
                                    tails: [ls, lay.idx(from, h, d, k)],
                                    events: [NONE, NONE],
                                    bonus: 0.0,
                                    arc: (NO_ARC, NO_ARC),
                                });
                            }
                        }
                    }
                }
            }
        }

        // Seal.
        for h in 0..n - w {
            let th = tags[h];
            for k in 0..kk {
                f(&Edge {
                    head: lay.idx(RS, h, h + w, k),
                    tails: [lay.idx(RF, h, h + w, k), NONE],
                    events: [ev.stop(th, Dir::Right, true), NONE],
                    bonus: 0.0,
                    arc: (NO_ARC, NO_ARC),
                });
            }
        }
        for h in w..n {
            let th = tags[h];
            for k in 0..kk {
                f(&Edge {
                    head: lay.idx(LS, h, h - w, k),
                    tails: [lay.idx(LF, h, h - w, k), NONE],
                    events: [ev.stop(th, Dir::Left, true), NONE],
                    bonus: 0.0,
                    arc: (NO_ARC, NO_ARC),
                });
            }
        }
    }

    for r in 0..n {
        for kl in 0..kk {
            for kr in 0..kk {
                if lay.combine(kl, kr, 0).is_some() {
                    f(&Edge {
                        head: lay.goal(),
                        tails: [lay.idx(LS, r, 0, kl), lay.idx(RS, r, n - 1, kr)],
                        events: [ev.root(tags[r]), NONE],
                        bonus: bonus(0, r + 1),
                        arc: arc(0, r + 1),
                    });
                }
            }
        }
    }
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
fn edge_weight(e: &Edge, logw: &[f64]) -> f64 {
    let mut w = e.bonus;
    for &ev in &e.events {
        if ev != NONE {
            w += logw[ev as usize];
        }
    }
    w
}

#[inline]
fn tails_score(e: &Edge, table: &[f64]) -> f64 {
    let mut s = 0.0;
    for &t in &e.tails {
        if t != NONE {
            s += table[t as usize];
        }
    }
    s
}

fn init_table(lay: &Layout) -> Vec<f64> {
    let mut t = vec![f64::NEG_INFINITY; lay.size()];
    for a in lay.axioms() {
        t[a as usize] = 0.0;
    }
    t
}

/// Inside log weights of every item.
pub(crate) fn inside(lay: &Layout, tags: &[usize], ev: EventLayout, logw: &[f64], arc_bonus: &[f64]) -> Vec<f64> {
    let mut ins = init_table(lay);
    for_each_edge(lay, tags, ev, arc_bonus, |e| {
        let s = tails_score(e, &ins) + edge_weight(e, logw);
        if s > f64::NEG_INFINITY {
            let h = e.head as usize;
            ins[h] = log_add(ins[h], s);
        }
    });
    ins
}

/// Inside and outside tables plus expected event counts.
pub(crate) struct InsideOutside {
    pub inside: Vec<f64>,
    pub outside: Vec<f64>,
    pub log_z: f64,
    pub event_counts: Vec<f64>,
}

pub(crate) fn inside_outside(
    lay: &Layout,
    tags: &[usize],
    ev: EventLayout,
    logw: &[f64],
    arc_bonus: &[f64],
) -> InsideOutside {
    let mut ins = init_table(lay);
    let mut edges = Vec::new();
    for_each_edge(lay, tags, ev, arc_bonus, |e| {
        let s = tails_score(e, &ins) + edge_weight(e, logw);
        if s > f64::NEG_INFINITY {
            let h = e.head as usize;
            ins[h] = log_add(ins[h], s);
            edges.push(*e);
        }
    });
    let goal = lay.goal() as usize;
    let log_z = ins[goal];
    let mut out = vec![f64::NEG_INFINITY; lay.size()];
    let mut counts = vec![0.0; ev.len()];
    if log_z == f64::NEG_INFINITY {
        return InsideOutside {
            inside: ins,
            outside: out,
            log_z,
            event_counts: counts,
        };
    }
    out[goal] = 0.0;
    for e in edges.iter().rev() {
        let o = out[e.head as usize];
        if o == f64::NEG_INFINITY {
            continue;
        }
        let w = edge_weight(e, logw);
        let post = (o + w + tails_score(e, &ins) - log_z).exp();
        for &event in &e.events {
            if event != NONE {
                counts[event as usize] += post;
            }
        }
        let [t0, t1] = e.tails;
        let in0 = if t0 == NONE { 0.0 } else { ins[t0 as usize] };
        let in1 = if t1 == NONE { 0.0 } else { ins[t1 as usize] };
        if t0 != NONE {
            out[t0 as usize] = log_add(out[t0 as usize], o + w + in1);
        }
        if t1 != NONE {
            out[t1 as usize] = log_add(out[t1 as usize], o + w + in0);
        }
    }
    InsideOutside {
        inside: ins,
        outside: out,
        log_z,
        event_counts: counts,
    }
}

/// Highest-weight derivation. Ties keep the first edge in enumeration
/// order, i.e. the smallest split point.
pub(crate) fn viterbi(
    lay: &Layout,
    tags: &[usize],
    ev: EventLayout,
    logw: &[f64],
    arc_bonus: &[f64],
) -> Result<(DepTree, f64)> {
    let mut best = init_table(lay);
    let mut bp: Vec<Option<Edge>> = vec![None; lay.size()];
    for_each_edge(lay, tags, ev, arc_bonus, |e| {
        let s = tails_score(e, &best) + edge_weight(e, logw);
        let h = e.head as usize;
        if s > best[h] {
            best[h] = s;
            bp[h] = Some(*e);
        }
    });
    let goal = lay.goal() as usize;
    if best[goal] == f64::NEG_INFINITY {
        return Err(Error::Infeasible {
            n: lay.n,
            depth_bound: lay.cap.map_or("none".to_string(), |d| d.to_string()),
        });
    }
    let mut heads = vec![usize::MAX; lay.n];
    let mut stack = vec![goal];
    while let Some(item) = stack.pop() {
        let Some(e) = bp[item] else { continue };
        if e.arc.0 != NO_ARC {
            heads[e.arc.1 as usize - 1] = e.arc.0 as usize;
        }
        for t in e.tails {
            if t != NONE {
                stack.push(t as usize);
            }
        }
    }
    Ok((DepTree::new_unchecked(heads), best[goal]))
}
