//! Training modes: each model alone, the generative model initialized from
//! discriminative parses, and joint training by alternating agreement
//! decoding with parameter updates.
//!
//! Joint training minimizes
//!
//! ```text
//! J = sum_a [ F(x_a, y_a) + g_weight * G(x_a, y_a) ]
//! F = -log P(x, y) - log f(x, y)
//! ```
//!
//! by coordinate descent: decode all trees with the models fixed, then update
//! both models with the trees fixed.

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::cmst::{self, default_rules, sgd_epoch, CmstInstance, CmstModel, FwConfig, FwTrainer, RuleSet};
use crate::corpus::{parse_conllu, write_conllu, Corpus};
use crate::decoder::{dd_decode_problem, DDConfig, JointProblem};
use crate::dmv::{self, em_step_with, init_params, mstep_from_partial_trees, ConstraintConfig, DmvParams, InitMode, LogTables};
use crate::error::{Error, Result};
use crate::eval::directed_accuracy;
use crate::par::{self, Execution};
use crate::tree::DepTree;

pub const DMV_FILE: &str = "dmv.params";
pub const CMST_FILE: &str = "cmst.model";
pub const TREES_FILE: &str = "trees.conllu";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STATE_FILE: &str = "state.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    DmvOnly,
    CmstOnly,
    DmvInitFromCmst,
    Joint,
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dmv-only" => Ok(TrainMode::DmvOnly),
            "cmst-only" => Ok(TrainMode::CmstOnly),
            "dmv-init-from-cmst" => Ok(TrainMode::DmvInitFromCmst),
            "joint" => Ok(TrainMode::Joint),
            _ => Err(Error::Data(format!("unknown training mode {s:?}"))),
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::DmvOnly => "dmv-only",
            TrainMode::CmstOnly => "cmst-only",
            TrainMode::DmvInitFromCmst => "dmv-init-from-cmst",
            TrainMode::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub outer_iters: usize,
    /// EM and Frank-Wolfe iterations run on each model after every joint update.
    pub extra_separate_iters: usize,
    pub em_pretrain_iters: usize,
    pub init: InitMode,
    pub seed: u64,
    pub constraints: ConstraintConfig,
    pub em_smoothing: f64,
    pub mstep_smoothing: f64,
    pub lambda: f64,
    pub mu: f64,
    pub rules: RuleSet,
    pub fw_iters: usize,
    pub fw: FwConfig,
    pub sgd_lr: f64,
    pub sgd_batch: usize,
    /// Retries of an SGD pass at half the rate when it fails to lower `G`.
    pub sgd_max_halvings: usize,
    pub dd: DDConfig,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Joint,
            outer_iters: 10,
            extra_separate_iters: 3,
            em_pretrain_iters: 50,
            init: InitMode::Harmonic,
            seed: 0,
            constraints: ConstraintConfig::default(),
            em_smoothing: 0.0,
            mstep_smoothing: 0.1,
            lambda: 1.0,
            mu: 0.5,
            rules: default_rules(),
            fw_iters: 50,
            fw: FwConfig::default(),
            sgd_lr: 0.05,
            sgd_batch: 32,
            sgd_max_halvings: 10,
            dd: DDConfig::default(),
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters < 1 {
            return Err(Error::contract("outer_iters must be at least 1"));
        }
        if self.fw_iters < 1 {
            return Err(Error::contract("fw_iters must be at least 1"));
        }
        if self.dd.max_iters < 1 || !(self.dd.tau0 > 0.0) {
            return Err(Error::contract("dd needs max_iters >= 1 and tau0 > 0"));
        }
        if !(self.sgd_lr > 0.0) || self.sgd_batch == 0 {
            return Err(Error::contract("sgd needs a positive rate and batch size"));
        }
        if self.em_smoothing < 0.0 || self.mstep_smoothing < 0.0 || self.constraints.dep_len_beta < 0.0 {
            return Err(Error::contract("smoothing and beta must be non-negative"));
        }
        Ok(())
    }

    fn fw_config(&self) -> FwConfig {
        FwConfig {
            iters: self.fw_iters,
            exec: self.exec,
            ..self.fw
        }
    }
}

/// Statistics of one outer iteration of joint training.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Joint objective on the decoded trees before the updates.
    pub objective_before: f64,
    /// Joint objective on the same trees after the M-step and SGD pass.
    pub objective_after: f64,
    /// Share of sentences on which the two decoders agreed.
    pub dd_converged: f64,
    pub dd_mean_iters: f64,
    pub depth_relaxed: usize,
    pub skipped: usize,
    pub sgd_lr: f64,
    /// Accuracy of the decoded trees on the training corpus, when gold heads
    /// are available.
    pub train_dda: Option<f64>,
}

impl IterationMetrics {
    pub const CSV_HEADER: &'static str =
        "iteration,objective_before,objective_after,dd_converged,dd_mean_iters,depth_relaxed,skipped,sgd_lr,train_dda";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.objective_before,
            self.objective_after,
            self.dd_converged,
            self.dd_mean_iters,
            self.depth_relaxed,
            self.skipped,
            self.sgd_lr,
            self.train_dda.map_or(String::new(), |x| x.to_string())
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub theta: DmvParams,
    pub cmst: CmstModel,
    /// Latest decoded trees of the training corpus; empty before any decoding.
    pub trees: Vec<DepTree>,
    /// Completed outer iterations.
    pub iteration: usize,
    pub stopped_early: bool,
    pub history: Vec<IterationMetrics>,
}

impl TrainState {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(IterationMetrics::CSV_HEADER);
        s.push('\n');
        for m in &self.history {
            s.push_str(&m.csv_row());
            s.push('\n');
        }
        s
    }

    /// Writes both models, the trees (when present) and the metrics to `dir`.
    pub fn save(&self, dir: &Path, c: &Corpus) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.theta.write_to(BufWriter::new(fs::File::create(dir.join(DMV_FILE))?))?;
        self.cmst.write_to(BufWriter::new(fs::File::create(dir.join(CMST_FILE))?))?;
        if !self.trees.is_empty() {
            let mut out = BufWriter::new(fs::File::create(dir.join(TREES_FILE))?);
            write_conllu(c, &self.trees, &mut out)?;
            out.flush()?;
        }
        fs::write(dir.join(METRICS_FILE), self.metrics_csv())?;
        fs::write(
            dir.join(STATE_FILE),
            format!("iteration {}\nstopped_early {}\n", self.iteration, self.stopped_early),
        )?;
        Ok(())
    }

    /// Reads a directory written by [`TrainState::save`]. The metrics
    /// history is not restored.
    pub fn load(dir: &Path) -> Result<Self> {
        let theta = DmvParams::read_from(BufReader::new(open(&dir.join(DMV_FILE))?))?;
        let cmst = CmstModel::read_from(BufReader::new(open(&dir.join(CMST_FILE))?))?;
        let trees_path = dir.join(TREES_FILE);
        let trees = if trees_path.exists() {
            parse_conllu(BufReader::new(open(&trees_path)?))?.gold_trees()?
        } else {
            Vec::new()
        };
        let state = fs::read_to_string(dir.join(STATE_FILE)).unwrap_or_default();
        let mut iteration = 0;
        let mut stopped_early = false;
        for line in state.lines() {
            match line.split_once(' ') {
                Some(("iteration", v)) => iteration = v.parse().map_err(|_| Error::parse(1, "bad iteration"))?,
                Some(("stopped_early", v)) => stopped_early = v == "true",
                _ => {}
            }
        }
        Ok(TrainState {
            theta,
            cmst,
            trees,
            iteration,
            stopped_early,
            history: Vec::new(),
        })
    }
}

fn open(p: &Path) -> Result<fs::File> {
    fs::File::open(p).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

fn check_corpus(c: &Corpus) -> Result<()> {
    if c.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    if c.sentences.iter().any(|s| s.is_empty()) {
        return Err(Error::contract("training corpus contains an empty sentence"));
    }
    Ok(())
}

fn run_em(c: &Corpus, theta: DmvParams, iters: usize, cfg: &TrainConfig) -> Result<DmvParams> {
    let mut theta = theta;
    for _ in 0..iters {
        theta = em_step_with(c, &theta, &cfg.constraints, cfg.em_smoothing, cfg.exec)?.params;
    }
    Ok(theta)
}

fn train_cmst(c: &Corpus, cfg: &TrainConfig) -> Result<(CmstModel, FwTrainer)> {
    let mut m = CmstModel::for_corpus(c, cfg.rules.clone(), cfg.lambda, cfg.mu)?;
    let mut fw = FwTrainer::new(c, &m, cfg.fw_config())?;
    for _ in 0..cfg.fw_iters {
        fw.step(&mut m);
    }
    Ok((m, fw))
}

/// Viterbi parses of the generative model, lifting the depth cap for
/// sentences where it leaves no tree.
pub fn decode_dmv(c: &Corpus, theta: &DmvParams, cfg: &ConstraintConfig, exec: Execution) -> Result<Vec<DepTree>> {
    let tables = LogTables::new(theta);
    par::map(exec, &c.sentences, |_, s| {
        match dmv::viterbi_decode_with(s, theta, &tables, cfg, None) {
            Err(Error::Infeasible { .. }) if cfg.max_ce_depth.is_some() => {
                dmv::viterbi_decode_with(s, theta, &tables, &cfg.without_depth_cap(), None)
            }
            r => r,
        }
        .map(|(t, _)| t)
    })
    .into_iter()
    .collect()
}

/// Price-free parses of the discriminative model.
pub fn decode_cmst(c: &Corpus, m: &CmstModel, exec: Execution) -> Result<Vec<DepTree>> {
    par::map(exec, &c.sentences, |_, s| cmst::lmo_decode(s, m, None).map(|(t, _)| t))
        .into_iter()
        .collect()
}

/// Initializes the generative model, runs EM pretraining, and trains the
/// discriminative model with Frank-Wolfe.
pub fn pretrain(c: &Corpus, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    check_corpus(c)?;
    let theta = init_params(c, cfg.init, cfg.seed)?;
    let theta = run_em(c, theta, cfg.em_pretrain_iters, cfg)?;
    let (cmst, _) = train_cmst(c, cfg)?;
    Ok(TrainState {
        theta,
        cmst,
        trees: Vec::new(),
        iteration: 0,
        stopped_early: false,
        history: Vec::new(),
    })
}

/// Runs the configured mode. With `checkpoints`, per-iteration and final
/// states are written below that directory.
pub fn train(c: &Corpus, cfg: &TrainConfig, checkpoints: Option<&Path>) -> Result<TrainState> {
    cfg.validate()?;
    check_corpus(c)?;
    let state = match cfg.mode {
        TrainMode::DmvOnly => {
            let theta = run_em(c, init_params(c, cfg.init, cfg.seed)?, cfg.em_pretrain_iters, cfg)?;
            let trees = decode_dmv(c, &theta, &cfg.constraints, cfg.exec)?;
            TrainState {
                theta,
                cmst: CmstModel::for_corpus(c, cfg.rules.clone(), cfg.lambda, cfg.mu)?,
                trees,
                iteration: 0,
                stopped_early: false,
                history: Vec::new(),
            }
        }
        TrainMode::CmstOnly => {
            let (cmst, _) = train_cmst(c, cfg)?;
            let trees = decode_cmst(c, &cmst, cfg.exec)?;
            TrainState {
                theta: init_params(c, cfg.init, cfg.seed)?,
                cmst,
                trees,
                iteration: 0,
                stopped_early: false,
                history: Vec::new(),
            }
        }
        TrainMode::DmvInitFromCmst => train_baseline_d_init(c, cfg)?,
        TrainMode::Joint => {
            let state = pretrain(c, cfg)?;
            if let Some(dir) = checkpoints {
                state.save(&dir.join("pretrain"), c)?;
            }
            joint_train_from(c, cfg, state, checkpoints)?
        }
    };
    if let Some(dir) = checkpoints {
        state.save(&dir.join("final"), c)?;
    }
    Ok(state)
}

/// Pretrains both models, then runs joint training.
pub fn joint_train(c: &Corpus, cfg: &TrainConfig) -> Result<TrainState> {
    if cfg.mode != TrainMode::Joint {
        return Err(Error::contract("joint_train needs mode joint"));
    }
    let state = pretrain(c, cfg)?;
    joint_train_from(c, cfg, state, None)
}

/// The discriminative model is trained to convergence, its parses set the
/// generative model's initial parameters, and EM continues from there.
pub fn train_baseline_d_init(c: &Corpus, cfg: &TrainConfig) -> Result<TrainState> {
    if cfg.mode != TrainMode::DmvInitFromCmst {
        return Err(Error::contract("train_baseline_d_init needs mode dmv-init-from-cmst"));
    }
    cfg.validate()?;
    check_corpus(c)?;
    let (cmst, _) = train_cmst(c, cfg)?;
    let parses = decode_cmst(c, &cmst, cfg.exec)?;
    let theta = dmv::mstep_from_trees(c, &parses, cfg.mstep_smoothing)?;
    let theta = run_em(c, theta, cfg.em_pretrain_iters, cfg)?;
    let trees = decode_dmv(c, &theta, &cfg.constraints, cfg.exec)?;
    Ok(TrainState {
        theta,
        cmst,
        trees,
        iteration: 0,
        stopped_early: false,
        history: Vec::new(),
    })
}

/// One sentence's outcome in the decoding phase.
struct Decoded {
    tree: Option<DepTree>,
    converged: bool,
    iterations: usize,
    depth_relaxed: bool,
}

/// Joint objective over the given trees. Sentences decoded with the depth cap
/// lifted are scored without it.
fn joint_objective(
    c: &Corpus,
    trees: &[Option<DepTree>],
    relaxed: &[bool],
    theta: &DmvParams,
    m: &CmstModel,
    instances: &[CmstInstance],
    cfg: &TrainConfig,
) -> Result<f64> {
    let n_corpus = c.len();
    let reg = cmst::regularizer(m, n_corpus);
    let parts = par::map(cfg.exec, &c.sentences, |i, s| -> Result<f64> {
        let Some(y) = &trees[i] else { return Ok(0.0) };
        let cf = if relaxed[i] {
            cfg.constraints.without_depth_cap()
        } else {
            cfg.constraints
        };
        let f = -dmv::tree_logprob(s, y, theta, &cf)?;
        let g = instances[i].loss(&y.indicator(), &m.w, m.mu) + reg;
        Ok(f + cfg.dd.g_weight * g)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total)
}

/// Joint training from an existing state (for instance after [`pretrain`] or
/// a checkpoint).
pub fn joint_train_from(c: &Corpus, cfg: &TrainConfig, state: TrainState, checkpoints: Option<&Path>) -> Result<TrainState> {
    if cfg.mode != TrainMode::Joint {
        return Err(Error::contract("joint training needs mode joint"));
    }
    cfg.validate()?;
    check_corpus(c)?;
    let mut state = state;
    if !state.trees.is_empty() && state.trees.len() != c.len() {
        return Err(Error::contract("state trees do not match the corpus"));
    }
    let n_corpus = c.len();
    let mut fw = FwTrainer::new(c, &state.cmst, cfg.fw_config())?;
    let has_gold = c.sentences.iter().all(|s| s.tokens.iter().all(|t| t.gold_head.is_some()));
    let start = state.iteration;

    for it in start..start + cfg.outer_iters {
        // Decode with frozen models.
        let tables = LogTables::new(&state.theta);
        let decoded: Vec<Decoded> = {
            let theta = &state.theta;
            let m = &state.cmst;
            let instances = fw.instances();
            par::map(cfg.exec, &c.sentences, |i, s| {
                let p = JointProblem {
                    sentence: s,
                    theta,
                    tables: &tables,
                    cfg_f: cfg.constraints,
                    cmst: m,
                    instance: &instances[i],
                    n_corpus,
                };
                match dd_decode_problem(&p, &cfg.dd) {
                    Ok(r) => Decoded {
                        tree: Some(r.tree),
                        converged: r.converged,
                        iterations: r.iterations,
                        depth_relaxed: r.depth_relaxed,
                    },
                    Err(_) => Decoded {
                        tree: None,
                        converged: false,
                        iterations: 0,
                        depth_relaxed: false,
                    },
                }
            })
        };
        let trees: Vec<Option<DepTree>> = decoded.iter().map(|d| d.tree.clone()).collect();
        let relaxed: Vec<bool> = decoded.iter().map(|d| d.depth_relaxed).collect();
        let skipped = trees.iter().filter(|t| t.is_none()).count();
        let decoded_ok = n_corpus - skipped;
        let converged = decoded.iter().filter(|d| d.converged).count();
        let mean_iters = decoded.iter().map(|d| d.iterations).sum::<usize>() as f64 / decoded_ok.max(1) as f64;

        // Skipped sentences keep their previous tree, or the discriminative
        // parse if they have none yet.
        let full: Vec<DepTree> = trees
            .iter()
            .enumerate()
            .map(|(i, t)| match t {
                Some(t) => t.clone(),
                None if !state.trees.is_empty() => state.trees[i].clone(),
                None => cmst::lmo_decode_instance(&fw.instances()[i], &state.cmst, None, 1.0).0,
            })
            .collect();
        let unchanged = state.trees == full;

        let train_dda = if has_gold {
            Some(directed_accuracy(c, &full, usize::MAX, true)?.dda_all)
        } else {
            None
        };

        let objective_before = joint_objective(c, &trees, &relaxed, &state.theta, &state.cmst, fw.instances(), cfg)?;
        let mut metrics = IterationMetrics {
            iteration: it + 1,
            objective_before,
            objective_after: objective_before,
            dd_converged: converged as f64 / n_corpus as f64,
            dd_mean_iters: mean_iters,
            depth_relaxed: relaxed.iter().filter(|&&r| r).count(),
            skipped,
            sgd_lr: 0.0,
            train_dda,
        };
        state.trees = full;

        if unchanged {
            state.iteration = it + 1;
            state.stopped_early = true;
            state.history.push(metrics);
            if let Some(dir) = checkpoints {
                state.save(&dir.join(format!("iter-{:03}", it + 1)), c)?;
            }
            break;
        }

        // Generative M-step on the decoded trees.
        let refs: Vec<Option<&DepTree>> = trees.iter().map(|t| t.as_ref()).collect();
        state.theta = mstep_from_partial_trees(c, &refs, cfg.mstep_smoothing, Some(&state.theta))?;

        // One SGD pass over the decoded sentences, halving the rate until
        // it does not raise G on those trees.
        let ys: Vec<(usize, Vec<f64>)> = trees
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_ref().map(|t| (i, t.indicator())))
            .collect();
        let data: Vec<(&CmstInstance, &[f64])> = ys.iter().map(|(i, y)| (&fw.instances()[*i], y.as_slice())).collect();
        let g_total = |w: &[f64]| -> f64 {
            let m = CmstModel { w: w.to_vec(), ..state.cmst.clone() };
            let reg = cmst::regularizer(&m, n_corpus);
            data.iter().map(|(inst, y)| inst.loss(y, w, m.mu) + reg).sum()
        };
        let g_before = g_total(&state.cmst.w);
        let mut lr = cfg.sgd_lr / (1.0 + it as f64);
        let mut accepted = None;
        for _ in 0..=cfg.sgd_max_halvings {
            let mut w = state.cmst.w.clone();
            sgd_epoch(&data, &mut w, state.cmst.lambda, lr, n_corpus, cfg.sgd_batch)?;
            if g_total(&w) <= g_before {
                accepted = Some(w);
                break;
            }
            lr *= 0.5;
        }
        if let Some(w) = accepted {
            state.cmst.w = w;
            metrics.sgd_lr = lr;
        }
        metrics.objective_after = joint_objective(c, &trees, &relaxed, &state.theta, &state.cmst, fw.instances(), cfg)?;

        // A few iterations of each model on its own objective.
        state.theta = run_em(c, state.theta, cfg.extra_separate_iters, cfg)?;
        if cfg.extra_separate_iters > 0 {
            fw.reset_to_trees(&state.trees)?;
            for _ in 0..cfg.extra_separate_iters {
                fw.step(&mut state.cmst);
            }
        }

        state.iteration = it + 1;
        state.history.push(metrics);
        if let Some(dir) = checkpoints {
            state.save(&dir.join(format!("iter-{:03}", it + 1)), c)?;
        }
    }
    Ok(state)
}
