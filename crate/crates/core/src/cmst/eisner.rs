//! Minimum-cost projective tree under arc-factored costs.

use crate::tree::{arc_index, DepTree};

#[derive(Clone, Copy)]
struct Back {
    split: u32,
}

/// Returns the single-rooted projective tree minimizing the sum of
/// `costs[arc_index(n, h, d)]`, and that sum. Among equal-cost splits the
/// smallest split point wins.
pub fn min_cost_tree(n: usize, costs: &[f64]) -> (DepTree, f64) {
    assert!(n >= 1 && costs.len() == n * n);
    let at = |s: usize, t: usize| s * n + t;
    let inf = f64::INFINITY;
    // [0] = head on the left end (right-facing), [1] = head on the right end.
    let mut comp = [vec![inf; n * n], vec![inf; n * n]];
    let mut inc = [vec![inf; n * n], vec![inf; n * n]];
    let mut comp_bp = [vec![Back { split: 0 }; n * n], vec![Back { split: 0 }; n * n]];
    let mut inc_bp = [vec![Back { split: 0 }; n * n], vec![Back { split: 0 }; n * n]];
    for s in 0..n {
        comp[0][at(s, s)] = 0.0;
        comp[1][at(s, s)] = 0.0;
    }
    for w in 1..n {
        for s in 0..n - w {
            let t = s + w;
            let mut best = inf;
            let mut arg = s;
            for r in s..t {
                let v = comp[0][at(s, r)] + comp[1][at(r + 1, t)];
                if v < best {
                    best = v;
                    arg = r;
                }
            }
            // t -> s
            inc[1][at(s, t)] = best + costs[arc_index(n, t + 1, s + 1)];
            inc_bp[1][at(s, t)] = Back { split: arg as u32 };
            // s -> t
            inc[0][at(s, t)] = best + costs[arc_index(n, s + 1, t + 1)];
            inc_bp[0][at(s, t)] = Back { split: arg as u32 };

            let mut best = inf;
            let mut arg = s;
            for r in s..t {
                let v = comp[1][at(s, r)] + inc[1][at(r, t)];
                if v < best {
                    best = v;
                    arg = r;
                }
            }
            comp[1][at(s, t)] = best;
            comp_bp[1][at(s, t)] = Back { split: arg as u32 };

            let mut best = inf;
            let mut arg = s + 1;
            for r in s + 1..=t {
                let v = inc[0][at(s, r)] + comp[0][at(r, t)];
                if v < best {
                    best = v;
                    arg = r;
                }
            }
            comp[0][at(s, t)] = best;
            comp_bp[0][at(s, t)] = Back { split: arg as u32 };
        }
    }
    let mut best = inf;
    let mut root = 0;
    for r in 0..n {
        let v = comp[1][at(0, r)] + comp[0][at(r, n - 1)] + costs[arc_index(n, 0, r + 1)];
        if v < best {
            best = v;
            root = r;
        }
    }

    let mut heads = vec![0usize; n];
    heads[root] = 0;
    // (is_complete, dir, s, t)
    let mut stack = vec![(true, 1usize, 0usize, root), (true, 0usize, root, n - 1)];
    while let Some((complete, dir, s, t)) = stack.pop() {
        if s == t {
            continue;
        }
        if complete {
            let r = comp_bp[dir][at(s, t)].split as usize;
            if dir == 1 {
                stack.push((true, 1, s, r));
                stack.push((false, 1, r, t));
            } else {
                stack.push((false, 0, s, r));
                stack.push((true, 0, r, t));
            }
        } else {
            if dir == 1 {
                heads[s] = t + 1;
            } else {
                heads[t] = s + 1;
            }
            let r = inc_bp[dir][at(s, t)].split as usize;
            stack.push((true, 0, s, r));
            stack.push((true, 1, r + 1, t));
        }
    }
    (DepTree::new_unchecked(heads), best)
}
