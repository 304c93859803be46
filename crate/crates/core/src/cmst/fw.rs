//! Frank-Wolfe training over relaxed trees.
//!
//! The corpus objective is minimized jointly over `w` and one relaxed arc
//! vector per sentence, each constrained to the convex hull of projective
//! trees. Every iteration (1) takes a linear-minimization step per sentence
//! toward the cheapest tree under the current gradient, with exact line
//! search, and (2) re-solves the ridge problem for `w`, warm-started from
//! the previous weights.

use crate::cmst::{min_cost_tree, regularizer, CmstInstance, CmstModel};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tree::DepTree;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwConfig {
    pub iters: usize,
    /// Relative residual at which the ridge solve stops.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub exec: Execution,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            iters: 50,
            cg_tol: 1e-8,
            cg_max_iters: 5000,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwStats {
    /// Corpus objective (averaged over sentences) after the iteration.
    pub objective: f64,
    /// Frank-Wolfe gap at the iterate the step started from.
    pub gap: f64,
    pub cg_iters: usize,
}

pub struct FwTrainer {
    instances: Vec<CmstInstance>,
    relaxed: Vec<Vec<f64>>,
    cfg: FwConfig,
    solved: bool,
}

impl FwTrainer {
    /// Starts from the midpoint of the left- and right-branching chains.
    pub fn new(c: &Corpus, m: &CmstModel, cfg: FwConfig) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::contract("Frank-Wolfe needs a non-empty corpus"));
        }
        let instances = par::map(cfg.exec, &c.sentences, |_, s| m.instance(s));
        let relaxed = c
            .sentences
            .iter()
            .map(|s| {
                let l = DepTree::left_chain(s.len()).indicator();
                let r = DepTree::right_chain(s.len()).indicator();
                l.iter().zip(&r).map(|(a, b)| 0.5 * (a + b)).collect()
            })
            .collect();
        Ok(FwTrainer {
            instances,
            relaxed,
            cfg,
            solved: false,
        })
    }

    /// Replaces the relaxed point of every sentence with a tree vertex.
    pub fn reset_to_trees(&mut self, trees: &[DepTree]) -> Result<()> {
        if trees.len() != self.instances.len() {
            return Err(Error::contract("trees do not align with the corpus"));
        }
        self.relaxed = trees.iter().map(|t| t.indicator()).collect();
        self.solved = false;
        Ok(())
    }

    pub fn instances(&self) -> &[CmstInstance] {
        &self.instances
    }

    pub fn relaxed(&self) -> &[Vec<f64>] {
        &self.relaxed
    }

    /// Averaged corpus objective `(1/N) sum_a G(x_a, y_a; w)` at the current
    /// relaxed point.
    pub fn objective(&self, m: &CmstModel) -> f64 {
        let n_corpus = self.instances.len();
        let total = par::map_reduce_chunks(
            self.cfg.exec,
            &self.instances,
            || 0.0,
            |acc, i, inst| *acc += inst.loss(&self.relaxed[i], &m.w, m.mu),
            |a, b| *a += b,
        );
        total / n_corpus as f64 + regularizer(m, n_corpus)
    }

    fn ensure_solved(&mut self, m: &mut CmstModel) -> usize {
        if self.solved {
            return 0;
        }
        let (w, it) = solve_ridge(&self.instances, &self.relaxed, m.lambda, &m.w, &self.cfg);
        m.w = w;
        self.solved = true;
        it
    }

    /// Per-sentence gradient and cheapest tree at the current point.
    fn linearize(&self, m: &CmstModel) -> Vec<(Vec<f64>, DepTree)> {
        par::map(self.cfg.exec, &self.instances, |i, inst| {
            let n = inst.sentence_len() as f64;
            let xw = inst.x.mul(&m.w);
            let g: Vec<f64> = self.relaxed[i]
                .iter()
                .zip(&xw)
                .zip(&inst.v)
                .map(|((y, s), v)| (y - s) / n - m.mu * v)
                .collect();
            let (tree, _) = min_cost_tree(inst.sentence_len(), &g);
            (g, tree)
        })
    }

    /// Frank-Wolfe gap `sum_a g_a.(y_a - s_a) / N` at the current point,
    /// with `w` optimal for it.
    pub fn duality_gap(&mut self, m: &mut CmstModel) -> f64 {
        self.ensure_solved(m);
        let lin = self.linearize(m);
        self.gap_of(&lin)
    }

    fn gap_of(&self, lin: &[(Vec<f64>, DepTree)]) -> f64 {
        let mut gap = 0.0;
        for ((g, s), y) in lin.iter().zip(&self.relaxed) {
            let sv = s.indicator();
            gap += g.iter().zip(y).zip(&sv).map(|((g, y), s)| g * (y - s)).sum::<f64>();
        }
        gap / self.instances.len() as f64
    }

    /// One iteration; `m.w` is updated in place.
    pub fn step(&mut self, m: &mut CmstModel) -> FwStats {
        let mut cg_iters = self.ensure_solved(m);
        let lin = self.linearize(m);
        let gap = self.gap_of(&lin);
        let moved: Vec<Vec<f64>> = par::map(self.cfg.exec, &lin, |i, (g, s)| {
            let y = &self.relaxed[i];
            let n = self.instances[i].sentence_len() as f64;
            let sv = s.indicator();
            let d: Vec<f64> = sv.iter().zip(y).map(|(s, y)| s - y).collect();
            let dd: f64 = d.iter().map(|x| x * x).sum();
            if dd == 0.0 {
                return y.clone();
            }
            let slope: f64 = g.iter().zip(&d).map(|(g, d)| g * d).sum();
            // The sentence loss along y + t d is quadratic with curvature |d|^2 / n.
            let t = (-slope * n / dd).clamp(0.0, 1.0);
            y.iter().zip(&d).map(|(y, d)| y + t * d).collect()
        });
        self.relaxed = moved;
        self.solved = false;
        cg_iters += self.ensure_solved(m);
        FwStats {
            objective: self.objective(m),
            gap,
            cg_iters,
        }
    }
}

/// Solves `(sum_a X_a^T X_a / n_a + lambda I) w = sum_a X_a^T y_a / n_a` by
/// Jacobi-preconditioned conjugate gradients from `w0`. Returns the solution
/// and the number of iterations.
pub fn solve_ridge(
    instances: &[CmstInstance],
    relaxed: &[Vec<f64>],
    lambda: f64,
    w0: &[f64],
    cfg: &FwConfig,
) -> (Vec<f64>, usize) {
    let dim = w0.len();
    let exec = cfg.exec;
    let zero = || vec![0.0; dim];
    let add = |a: &mut Vec<f64>, b: Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);

    let apply = |p: &[f64]| -> Vec<f64> {
        let mut out = par::map_reduce_chunks(
            exec,
            instances,
            zero,
            |acc, _, inst| {
                let n = inst.sentence_len() as f64;
                let xp = inst.x.mul(p);
                inst.x.mul_t_add(&xp, 1.0 / n, acc);
            },
            add,
        );
        out.iter_mut().zip(p).for_each(|(o, pi)| *o += lambda * pi);
        out
    };
    let b = par::map_reduce_chunks(
        exec,
        instances,
        zero,
        |acc, i, inst| inst.x.mul_t_add(&relaxed[i], 1.0 / inst.sentence_len() as f64, acc),
        add,
    );
    let mut diag = par::map_reduce_chunks(
        exec,
        instances,
        zero,
        |acc, _, inst| inst.x.add_col_counts(1.0 / inst.sentence_len() as f64, acc),
        add,
    );
    diag.iter_mut().for_each(|d| {
        *d += lambda;
        if *d <= 0.0 {
            *d = 1.0;
        }
    });

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(&b, &b).sqrt();
    let mut w = w0.to_vec();
    let aw = apply(&w);
    let mut r: Vec<f64> = b.iter().zip(&aw).map(|(b, a)| b - a).collect();
    let tol = cfg.cg_tol * b_norm.max(f64::MIN_POSITIVE);
    if dot(&r, &r).sqrt() <= tol {
        return (w, 0);
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=cfg.cg_max_iters {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return (w, it);
        }
        let alpha = rz / pap;
        w.iter_mut().zip(&p).for_each(|(w, p)| *w += alpha * p);
        r.iter_mut().zip(&ap).for_each(|(r, a)| *r -= alpha * a);
        if dot(&r, &r).sqrt() <= tol {
            return (w, it);
        }
        z = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    (w, cfg.cg_max_iters)
}

/// Runs `iters` Frank-Wolfe iterations from the model's current weights and
/// a fresh relaxed point.
pub fn fw_train(c: &Corpus, m: &CmstModel, iters: usize) -> Result<CmstModel> {
    if iters < 1 {
        return Err(Error::contract("Frank-Wolfe needs at least one iteration"));
    }
    let mut out = m.clone();
    let mut trainer = FwTrainer::new(c, &out, FwConfig { iters, ..FwConfig::default() })?;
    for _ in 0..iters {
        trainer.step(&mut out);
    }
    Ok(out)
}
