//! Joint decoding by dual decomposition.
//!
//! The joint problem `min_y F(x, y) + G(x, y)` is split into
//! `min_y F(x, y) + u.y` (the generative model's chart) and
//! `min_z G(x, z) - u.z` (the discriminative model's arc-factored decoder).
//! The prices `u` are raised on arcs the generative side uses and the
//! discriminative side does not, and lowered in the opposite case, until both
//! sides return the same tree.

use std::fmt;
use std::str::FromStr;

use crate::cmst::{self, sentence_objective, CmstInstance, CmstModel};
use crate::corpus::Sentence;
use crate::dmv::{self, ConstraintConfig, DmvParams, LogTables};
use crate::error::{Error, Result};
use crate::tree::DepTree;

/// Lagrange multipliers over the `n * n` arc slots of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrices {
    n: usize,
    u: Vec<f64>,
}

impl DualPrices {
    pub fn zeros(n: usize) -> Self {
        DualPrices { n, u: vec![0.0; n * n] }
    }

    pub fn from_values(n: usize, u: Vec<f64>) -> Result<Self> {
        if u.len() != n * n {
            return Err(Error::contract(format!("{} prices for n = {n}", u.len())));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("prices must be finite"));
        }
        Ok(DualPrices { n, u })
    }

    pub fn sentence_len(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    /// `u += step * (y - z)`.
    pub fn update(&mut self, y: &DepTree, z: &DepTree, step: f64) {
        let yv = y.to_arcs();
        let zv = z.to_arcs();
        for ((u, &a), &b) in self.u.iter_mut().zip(yv.bits()).zip(zv.bits()) {
            *u += step * (a as f64 - b as f64);
        }
    }

    /// `u . y` for a tree.
    pub fn dot(&self, y: &DepTree) -> f64 {
        y.arcs().map(|(h, d)| self.u[crate::tree::arc_index(self.n, h, d)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.u.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Constant,
    /// `tau0 / k`
    Harmonic,
    /// `tau0 / sqrt(k)`
    InvSqrt,
}

impl StepRule {
    pub fn step(self, tau0: f64, k: usize) -> f64 {
        match self {
            StepRule::Constant => tau0,
            StepRule::Harmonic => tau0 / k as f64,
            StepRule::InvSqrt => tau0 / (k as f64).sqrt(),
        }
    }
}

/// What to return when the two sides never agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    Generative,
    Discriminative,
    /// Whichever final proposal has the lower joint objective.
    BetterObjective,
}

macro_rules! named_enum {
    ($t:ty, $($v:path => $s:literal),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Data(format!("unknown value {s:?}"))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s,)+ })
            }
        }
    };
}

named_enum!(StepRule, StepRule::Constant => "constant", StepRule::Harmonic => "harmonic", StepRule::InvSqrt => "inv-sqrt");
named_enum!(Fallback, Fallback::Generative => "generative", Fallback::Discriminative => "discriminative", Fallback::BetterObjective => "better-objective");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DDConfig {
    pub tau0: f64,
    pub step_rule: StepRule,
    pub max_iters: usize,
    pub fallback: Fallback,
    /// Multiplier on `G` in the joint objective.
    pub g_weight: f64,
}

impl Default for DDConfig {
    fn default() -> Self {
        DDConfig {
            tau0: 1.0,
            step_rule: StepRule::InvSqrt,
            max_iters: 50,
            fallback: Fallback::BetterObjective,
            g_weight: 1.0,
        }
    }
}

impl DDConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::contract("dual decomposition needs max_iters >= 1"));
        }
        if !(self.tau0 > 0.0) {
            return Err(Error::contract("step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DDResult {
    pub tree: DepTree,
    pub converged: bool,
    pub iterations: usize,
    /// Arc slots where the last two proposals disagreed.
    pub final_gap: usize,
    /// The depth cap had to be lifted for this sentence.
    pub depth_relaxed: bool,
    /// Prices after the last update.
    pub prices: DualPrices,
}

impl DDResult {
    pub const CSV_HEADER: &'static str = "sentence,iterations,converged,final_gap,depth_relaxed";

    pub fn csv_row(&self, sentence: usize) -> String {
        format!(
            "{sentence},{},{},{},{}",
            self.iterations, self.converged, self.final_gap, self.depth_relaxed
        )
    }
}

/// Everything the decoder needs about one sentence, prepared once.
pub struct JointProblem<'a> {
    pub sentence: &'a Sentence,
    pub theta: &'a DmvParams,
    pub tables: &'a LogTables,
    pub cfg_f: ConstraintConfig,
    pub cmst: &'a CmstModel,
    pub instance: &'a CmstInstance,
    /// Corpus size used for the regularizer share in `G`.
    pub n_corpus: usize,
}

impl JointProblem<'_> {
    /// `F(x, y) + g_weight * G(x, y)`; infinite when the tree is excluded by
    /// the constraint factor.
    pub fn objective(&self, y: &DepTree, g_weight: f64) -> Result<f64> {
        let f = -dmv::tree_logprob(self.sentence, y, self.theta, &self.cfg_f)?;
        let g = sentence_objective(self.sentence, &y.to_arcs(), self.cmst, self.n_corpus)?;
        Ok(f + g_weight * g)
    }
}

/// Runs dual decomposition on one sentence.
pub fn dd_decode(
    x: &Sentence,
    theta: &DmvParams,
    cfg_f: &ConstraintConfig,
    m: &CmstModel,
    dd: &DDConfig,
    n_corpus: usize,
) -> Result<DDResult> {
    let tables = LogTables::new(theta);
    let instance = m.instance(x);
    dd_decode_problem(
        &JointProblem {
            sentence: x,
            theta,
            tables: &tables,
            cfg_f: *cfg_f,
            cmst: m,
            instance: &instance,
            n_corpus,
        },
        dd,
    )
}

pub fn dd_decode_problem(p: &JointProblem<'_>, dd: &DDConfig) -> Result<DDResult> {
    dd.validate()?;
    let n = p.sentence.len();
    if n == 0 {
        return Err(Error::contract("empty sentence"));
    }
    let mut cfg_f = p.cfg_f;
    let mut depth_relaxed = false;
    let mut u = DualPrices::zeros(n);
    let mut last: Option<(DepTree, DepTree)> = None;

    for k in 1..=dd.max_iters {
        let y = match dmv::viterbi_decode_with(p.sentence, p.theta, p.tables, &cfg_f, Some(&u)) {
            Ok((y, _)) => y,
            Err(Error::Infeasible { .. }) if cfg_f.max_ce_depth.is_some() && k == 1 => {
                cfg_f = cfg_f.without_depth_cap();
                depth_relaxed = true;
                dmv::viterbi_decode_with(p.sentence, p.theta, p.tables, &cfg_f, Some(&u))?.0
            }
            Err(e) => return Err(e),
        };
        let (z, _) = cmst::lmo_decode_instance(p.instance, p.cmst, Some(&u), dd.g_weight);
        if y == z {
            return Ok(DDResult {
                tree: y,
                converged: true,
                iterations: k,
                final_gap: 0,
                depth_relaxed,
                prices: u,
            });
        }
        u.update(&y, &z, dd.step_rule.step(dd.tau0, k));
        last = Some((y, z));
    }

    let (y, z) = last.expect("max_iters >= 1");
    let final_gap = y.to_arcs().hamming(&z.to_arcs());
    let tree = match dd.fallback {
        Fallback::Generative => y,
        Fallback::Discriminative => z,
        Fallback::BetterObjective => {
            let problem = JointProblem { cfg_f, ..*p };
            let fy = problem.objective(&y, dd.g_weight)?;
            let fz = problem.objective(&z, dd.g_weight)?;
            if fz < fy {
                z
            } else {
                y
            }
        }
    };
    Ok(DDResult {
        tree,
        converged: false,
        iterations: dd.max_iters,
        final_gap,
        depth_relaxed,
        prices: u,
    })
}
