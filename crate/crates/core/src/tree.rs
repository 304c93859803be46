//! Projective dependency trees and their arc-indicator encoding.
//!
//! Positions are 1-based with 0 standing for the root pseudo-node. A sentence
//! of `n` tokens has `n * n` arc slots: every dependent `d` can take any of
//! the `n` heads in `{0, .., n} \ {d}`.

use crate::error::{Error, Result};

/// Slot of arc `head -> dep` in a sentence of length `n`.
#[inline]
pub fn arc_index(n: usize, head: usize, dep: usize) -> usize {
    debug_assert!(dep >= 1 && dep <= n && head <= n && head != dep);
    let h = if head < dep { head } else { head - 1 };
    (dep - 1) * n + h
}

/// Inverse of [`arc_index`].
#[inline]
pub fn arc_of_index(n: usize, slot: usize) -> (usize, usize) {
    let dep = slot / n + 1;
    let h = slot % n;
    let head = if h < dep { h } else { h + 1 };
    (head, dep)
}

/// A single-rooted, acyclic, projective dependency tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DepTree {
    heads: Vec<usize>,
}

impl DepTree {
    /// Validates `heads` (`heads[j]` is the head of token `j + 1`).
    pub fn new(heads: Vec<usize>) -> Result<Self> {
        check_heads(&heads)?;
        Ok(DepTree { heads })
    }

    pub(crate) fn new_unchecked(heads: Vec<usize>) -> Self {
        debug_assert!(check_heads(&heads).is_ok(), "invalid tree {heads:?}");
        DepTree { heads }
    }

    /// Every token attached to its left neighbour; token 1 is the root.
    pub fn left_chain(n: usize) -> Self {
        DepTree::new_unchecked((0..n).collect())
    }

    /// Every token attached to its right neighbour; token `n` is the root.
    pub fn right_chain(n: usize) -> Self {
        DepTree::new_unchecked((0..n).map(|j| if j + 1 == n { 0 } else { j + 2 }).collect())
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Head of 1-based token `d`.
    pub fn head(&self, d: usize) -> usize {
        self.heads[d - 1]
    }

    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).map(|j| j + 1).unwrap_or(0)
    }

    /// `(head, dep)` pairs, root arc included.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.heads.iter().enumerate().map(|(j, &h)| (h, j + 1))
    }

    pub fn to_arcs(&self) -> ArcVector {
        let n = self.len();
        let mut bits = vec![0u8; n * n];
        for (h, d) in self.arcs() {
            bits[arc_index(n, h, d)] = 1;
        }
        ArcVector { n, bits }
    }

    /// Dense 0/1 indicator as reals.
    pub fn indicator(&self) -> Vec<f64> {
        self.to_arcs().to_f64()
    }

    /// Dependents of every position; index 0 holds the root's single child.
    /// Children are listed left to right.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len() + 1];
        for (h, d) in self.arcs() {
            ch[h].push(d);
        }
        ch
    }

    /// Subtree yield `[left, right]` of every token (1-based, index 0 unused).
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut spans: Vec<(usize, usize)> = (0..=n).map(|i| (i, i)).collect();
        // Walk each token up to the root and widen every ancestor's span.
        for d in 1..=n {
            let mut h = self.heads[d - 1];
            while h != 0 {
                let s = &mut spans[h];
                s.0 = s.0.min(d);
                s.1 = s.1.max(d);
                h = self.heads[h - 1];
            }
        }
        spans[0] = (1, n);
        spans
    }
}

impl AsRef<[usize]> for DepTree {
    fn as_ref(&self) -> &[usize] {
        &self.heads
    }
}

fn check_heads(heads: &[usize]) -> Result<()> {
    check_rooted_tree(heads)?;
    check_projective(heads)
}

/// Checks that `heads` is single-rooted and acyclic, without requiring
/// projectivity.
pub fn check_rooted_tree(heads: &[usize]) -> Result<()> {
    let n = heads.len();
    if n == 0 {
        return Err(Error::contract("empty tree"));
    }
    let mut roots = 0;
    for (j, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(Error::contract(format!("head {h} of token {} out of range", j + 1)));
        }
        if h == j + 1 {
            return Err(Error::contract(format!("token {} heads itself", j + 1)));
        }
        if h == 0 {
            roots += 1;
        }
    }
    if roots != 1 {
        return Err(Error::contract(format!("{roots} root attachments")));
    }
    // Acyclic: every token reaches the root within n steps.
    for d in 1..=n {
        let mut h = heads[d - 1];
        let mut steps = 0;
        while h != 0 {
            h = heads[h - 1];
            steps += 1;
            if steps > n {
                return Err(Error::contract(format!("cycle through token {d}")));
            }
        }
    }
    Ok(())
}

fn check_projective(heads: &[usize]) -> Result<()> {
    // Everything strictly under an arc has its head under it too.
    for (j, &h) in heads.iter().enumerate() {
        let d = j + 1;
        let (lo, hi) = if h < d { (h, d) } else { (d, h) };
        for k in lo + 1..hi {
            let hk = heads[k - 1];
            if hk < lo || hk > hi {
                return Err(Error::contract(format!(
                    "arc {h}->{d} crosses arc {hk}->{k}"
                )));
            }
        }
    }
    Ok(())
}

/// Flattened 0/1 arc indicator of a tree (see [`arc_index`]).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArcVector {
    n: usize,
    bits: Vec<u8>,
}

impl ArcVector {
    pub fn from_bits(n: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != n * n {
            return Err(Error::contract(format!(
                "arc vector of length {} for n = {n}",
                bits.len()
            )));
        }
        Ok(ArcVector { n, bits })
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, head: usize, dep: usize) -> bool {
        self.bits[arc_index(self.n, head, dep)] == 1
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// Recovers the tree; fails unless every token has exactly one head and
    /// the result is a valid projective tree.
    pub fn to_tree(&self) -> Result<DepTree> {
        let n = self.n;
        let mut heads = vec![usize::MAX; n];
        for (slot, &b) in self.bits.iter().enumerate() {
            match b {
                0 => {}
                1 => {
                    let (h, d) = arc_of_index(n, slot);
                    if heads[d - 1] != usize::MAX {
                        return Err(Error::contract(format!("token {d} has two heads")));
                    }
                    heads[d - 1] = h;
                }
                _ => return Err(Error::contract("arc vector entries must be 0 or 1")),
            }
        }
        if let Some(j) = heads.iter().position(|&h| h == usize::MAX) {
            return Err(Error::contract(format!("token {} has no head", j + 1)));
        }
        DepTree::new(heads)
    }

    /// Number of slots where the two vectors differ.
    pub fn hamming(&self, other: &ArcVector) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }
}

/// Center-embedding depth of a tree.
///
/// A token is *interior* when its subtree yield lies strictly inside its
/// head's yield, sharing neither endpoint. The depth of a token is the number
/// of interior tokens on its path from the root (itself included); the depth
/// of the tree is the maximum over tokens.
pub fn ce_depth(y: &DepTree) -> usize {
    let spans = y.spans();
    let children = y.children();
    let mut best = 0;
    let mut stack = vec![(y.root(), 0usize)];
    while let Some((t, depth)) = stack.pop() {
        best = best.max(depth);
        let (l, r) = spans[t];
        for &c in &children[t] {
            let (cl, cr) = spans[c];
            let interior = cl > l && cr < r;
            stack.push((c, depth + usize::from(interior)));
        }
    }
    best
}
