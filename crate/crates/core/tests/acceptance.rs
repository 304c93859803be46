//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! The treebank criteria need an English UD training and test file, given by
//! `DUALDEP_UD_TRAIN` and `DUALDEP_UD_TEST`; without them they report
//! NOT RUN. Run with `--release` when those are set.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use dualdep::cmst::{default_rules, lmo_decode, sentence_objective, sgd_update, CmstModel, FwConfig, FwTrainer};
use dualdep::corpus::{filter_corpus, parse_conllu, Corpus, Sentence};
use dualdep::decoder::{dd_decode, DDConfig, DualPrices};
use dualdep::dmv::{
    ce_depth, em_step, init_params, inside_loglik, mstep_from_trees, viterbi_decode, ConstraintConfig, InitMode,
};
use dualdep::eval::{avg_dep_length, directed_accuracy, rule_satisfaction};
use dualdep::trainer::{self, decode_cmst, decode_dmv, TrainConfig, TrainMode};
use dualdep::tree::DepTree;
use rand::Rng;

const SMALL_TAGS: &[&str] = &["DET", "NOUN", "VERB", "ADJ"];
const TRAIN_ENV: &str = "DUALDEP_UD_TRAIN";
const TEST_ENV: &str = "DUALDEP_UD_TEST";

enum Outcome {
    Pass(String),
    Fail(String),
    NotRun(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn small_vocab() -> Corpus {
    Corpus::new(vec![Sentence::from_tags(SMALL_TAGS, None)])
}

fn chart_vs_oracle() -> Outcome {
    let c = small_vocab();
    let mut r = rng(101);
    let (mut vit_err, mut in_err) = (0.0f64, 0.0f64);
    let mut infeasible_mismatch = 0;
    let cases = 200;
    for case in 0..cases {
        let n = r.gen_range(1..=5);
        let x = random_sentence(&mut r, n, SMALL_TAGS);
        let theta = random_params(&c, 10_000 + case);
        let cfg = random_constraints(&mut r);
        let u = random_prices(&mut r, n, 1.0);
        let prices = DualPrices::from_values(n, u.clone()).unwrap();
        let trees = all_trees(n);
        let lps: Vec<f64> = trees.iter().map(|y| constrained_logprob_oracle(&x, y, &theta, &cfg)).collect();
        let best = trees
            .iter()
            .zip(&lps)
            .map(|(y, lp)| -lp + price_dot(y, &u))
            .fold(f64::INFINITY, f64::min);
        match viterbi_decode(&x, &theta, &cfg, Some(&prices)) {
            Ok((_, score)) => vit_err = vit_err.max((score - best).abs()),
            Err(_) => infeasible_mismatch += usize::from(best.is_finite()),
        }
        let want = log_sum_exp(&lps);
        let got = inside_loglik(&x, &theta, &cfg).unwrap();
        if want.is_finite() {
            in_err = in_err.max((got - want).abs());
        } else if got.is_finite() {
            infeasible_mismatch += 1;
        }
    }
    check(
        vit_err <= 1e-9 && in_err <= 1e-8 && infeasible_mismatch == 0,
        format!("{cases} instances, max viterbi err {vit_err:.2e}, max inside err {in_err:.2e}"),
    )
}

fn lmo_vs_oracle() -> Outcome {
    let c = small_vocab();
    let mut r = rng(102);
    let mut err = 0.0f64;
    let cases = 200;
    for _ in 0..cases {
        let n = r.gen_range(1..=5);
        let x = random_sentence(&mut r, n, SMALL_TAGS);
        let m = random_cmst(&mut r, &c, default_rules());
        let u = random_prices(&mut r, n, 1.0);
        let prices = DualPrices::from_values(n, u.clone()).unwrap();
        let best = all_trees(n)
            .iter()
            .map(|z| g_oracle(&x, z, &m, 1) - price_dot(z, &u))
            .fold(f64::INFINITY, f64::min);
        let (z, _) = lmo_decode(&x, &m, Some(&prices)).unwrap();
        err = err.max((g_oracle(&x, &z, &m, 1) - price_dot(&z, &u) - best).abs());
    }
    check(err <= 1e-9, format!("{cases} instances, max err {err:.2e}"))
}

fn dd_certificate() -> Outcome {
    let c = small_vocab();
    let mut r = rng(103);
    let cases = 100;
    let (mut converged, mut err) = (0, 0.0f64);
    for case in 0..cases {
        let n = r.gen_range(1..=4);
        let x = random_sentence(&mut r, n, SMALL_TAGS);
        let theta = random_params(&c, 20_000 + case);
        let m = random_cmst(&mut r, &c, default_rules());
        let cfg = random_constraints(&mut r);
        let dd = DDConfig {
            max_iters: 200,
            ..DDConfig::default()
        };
        let Ok(res) = dd_decode(&x, &theta, &cfg, &m, &dd, 1) else {
            continue;
        };
        if !res.converged {
            continue;
        }
        converged += 1;
        let cfg = if res.depth_relaxed { cfg.without_depth_cap() } else { cfg };
        let joint = |y: &DepTree| -constrained_logprob_oracle(&x, y, &theta, &cfg) + g_oracle(&x, y, &m, 1);
        let best = all_trees(n).iter().map(joint).fold(f64::INFINITY, f64::min);
        err = err.max((joint(&res.tree) - best).abs());
    }
    check(
        err <= 1e-9,
        format!("{cases} instances, {converged} converged, max err {err:.2e}"),
    )
}

fn em_monotone() -> Outcome {
    let c = synthetic_corpus(104, 100, 10);
    let cfg = ConstraintConfig::unconstrained();
    let mut theta = init_params(&c, InitMode::Harmonic, 0).unwrap();
    let mut prev = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let step = em_step(&c, &theta, &cfg, 0.0).unwrap();
        worst = worst.max(prev - step.loglik);
        prev = step.loglik;
        theta = step.params;
    }
    check(
        worst <= 1e-10,
        format!("20 iterations, final loglik {prev:.4}, largest decrease {worst:.2e}"),
    )
}

fn fw_monotone() -> Outcome {
    let c = synthetic_corpus(105, 100, 10);
    let mut m = CmstModel::for_corpus(&c, default_rules(), 1.0, 0.5).unwrap();
    let mut fw = FwTrainer::new(&c, &m, FwConfig::default()).unwrap();
    let first = fw.duality_gap(&mut m);
    let mut prev = fw.objective(&m);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = fw.step(&mut m);
        worst = worst.max(s.objective - prev);
        prev = s.objective;
    }
    let last = fw.duality_gap(&mut m);
    check(
        worst <= 1e-10 && last >= 0.0 && last < 0.1 * first,
        format!("50 iterations, largest increase {worst:.2e}, gap {first:.3e} -> {last:.3e}"),
    )
}

fn gradient_check() -> Outcome {
    let c = small_vocab();
    let mut r = rng(106);
    let mut worst = 0.0f64;
    let cases = 50;
    for _ in 0..cases {
        let n = r.gen_range(1..=5);
        let x = random_sentence(&mut r, n, SMALL_TAGS);
        let m = random_cmst(&mut r, &c, default_rules());
        let trees = all_trees(n);
        let y = &trees[r.gen_range(0..trees.len())];
        let n_corpus = r.gen_range(1..20);
        let h = 1e-5;
        let mut probe = m.clone();
        let fd: Vec<f64> = (0..m.w.len())
            .map(|i| {
                probe.w[i] = m.w[i] + h;
                let up = sentence_objective(&x, &y.to_arcs(), &probe, n_corpus).unwrap();
                probe.w[i] = m.w[i] - h;
                let down = sentence_objective(&x, &y.to_arcs(), &probe, n_corpus).unwrap();
                probe.w[i] = m.w[i];
                (up - down) / (2.0 * h)
            })
            .collect();
        let out = sgd_update(std::slice::from_ref(&x), &[y.to_arcs()], &m, 1.0, n_corpus, 1).unwrap();
        let diff: f64 = m.w.iter().zip(&out.w).zip(&fd).map(|((a, b), f)| (a - b - f).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-300));
    }
    check(worst < 1e-6, format!("{cases} instances, max relative error {worst:.2e}"))
}

fn normalization_and_fuzz() -> Outcome {
    let c = synthetic_corpus(107, 60, 12);
    let mut params = Vec::new();
    for mode in [InitMode::Uniform, InitMode::Harmonic, InitMode::Random] {
        params.push(init_params(&c, mode, 7).unwrap());
    }
    let mut theta = params[1].clone();
    for eps in [0.0, 0.1] {
        for _ in 0..3 {
            theta = em_step(&c, &theta, &ConstraintConfig::default(), eps).unwrap().params;
            params.push(theta.clone());
        }
        params.push(mstep_from_trees(&c, &c.gold_trees().unwrap(), eps).unwrap());
    }
    let bad_params = params.iter().filter(|p| !p.is_normalized(1e-12)).count();

    let m = fw_train_quick(&c);
    let mut r = rng(108);
    let (mut decodes, mut infeasible, mut bad_trees) = (0, 0, 0);
    while decodes < 1000 {
        let n = r.gen_range(1..=12);
        let x = random_sentence(&mut r, n, TAGS);
        let cfg = random_constraints(&mut r);
        let th = &params[r.gen_range(0..params.len())];
        let which = decodes % 3;
        let result = match which {
            0 => viterbi_decode(&x, th, &cfg, None).map(|(t, _)| (t, false)),
            1 => lmo_decode(&x, &m, None).map(|(t, _)| (t, true)),
            _ => {
                let dd = DDConfig {
                    max_iters: 10,
                    ..DDConfig::default()
                };
                dd_decode(&x, th, &cfg, &m, &dd, c.len()).map(|res| (res.tree, res.depth_relaxed))
            }
        };
        decodes += 1;
        let Ok((t, uncapped)) = result else {
            infeasible += 1;
            continue;
        };
        let valid = DepTree::new(t.heads().to_vec()).is_ok() && t.len() == n;
        let within = uncapped || cfg.max_ce_depth.is_none_or(|d| ce_depth(&t) <= d);
        bad_trees += usize::from(!valid || !within);
    }
    check(
        bad_params == 0 && bad_trees == 0,
        format!(
            "{} parameter sets, {decodes} decodes ({infeasible} infeasible), {bad_params} unnormalized, {bad_trees} invalid trees",
            params.len()
        ),
    )
}

fn fw_train_quick(c: &Corpus) -> CmstModel {
    let m = CmstModel::for_corpus(c, default_rules(), 1.0, 0.5).unwrap();
    dualdep::cmst::fw_train(c, &m, 5).unwrap()
}

fn toy_train_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        outer_iters: 3,
        em_pretrain_iters: 5,
        fw_iters: 10,
        ..TrainConfig::default()
    };
    cfg.dd.max_iters = 20;
    cfg
}

fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let c = synthetic_corpus(109, 60, 10);
    let cfg = toy_train_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    trainer::train(&c, &cfg, Some(a.path())).unwrap();
    trainer::train(&c, &cfg, Some(b.path())).unwrap();
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    check(
        sa == sb && !sa.is_empty(),
        format!("{} checkpoint files compared", sa.len()),
    )
}

/// Models trained on the English treebank slice, shared by the last two
/// criteria.
struct TreebankRun {
    test: Corpus,
    sep_dmv: Vec<DepTree>,
    joint_dmv: Vec<DepTree>,
    sep_cmst: Vec<DepTree>,
    joint_cmst: Vec<DepTree>,
}

fn read_treebank(var: &str) -> Result<Corpus, String> {
    let path = std::env::var(var).map_err(|_| format!("{var} is not set"))?;
    let f = fs::File::open(&path).map_err(|e| format!("{path}: {e}"))?;
    parse_conllu(std::io::BufReader::new(f)).map_err(|e| format!("{path}: {e}"))
}

fn treebank_run() -> Result<TreebankRun, String> {
    let train = filter_corpus(&read_treebank(TRAIN_ENV)?, 15, true);
    let test = filter_corpus(&read_treebank(TEST_ENV)?, 40, true);
    if train.len() < 2000 {
        return Err(format!("training slice has {} sentences, at least 2000 needed", train.len()));
    }
    let run = |mode| -> Result<trainer::TrainState, String> {
        let cfg = TrainConfig {
            mode,
            ..TrainConfig::default()
        };
        trainer::train(&train, &cfg, None).map_err(|e| e.to_string())
    };
    let exec = TrainConfig::default().exec;
    let constraints = TrainConfig::default().constraints;
    let sep_dmv = run(TrainMode::DmvOnly)?;
    let sep_cmst = run(TrainMode::CmstOnly)?;
    let joint = run(TrainMode::Joint)?;
    let dmv = |s: &trainer::TrainState| decode_dmv(&test, &s.theta, &constraints, exec).map_err(|e| e.to_string());
    let cmst = |s: &trainer::TrainState| decode_cmst(&test, &s.cmst, exec).map_err(|e| e.to_string());
    Ok(TreebankRun {
        sep_dmv: dmv(&sep_dmv)?,
        joint_dmv: dmv(&joint)?,
        sep_cmst: cmst(&sep_cmst)?,
        joint_cmst: cmst(&joint)?,
        test,
    })
}

fn joint_accuracy_gain(run: &Result<TreebankRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return Outcome::NotRun(e.clone()),
    };
    let sep = directed_accuracy(&run.test, &run.sep_dmv, 40, true).unwrap().dda_all;
    let joint = directed_accuracy(&run.test, &run.joint_dmv, 40, true).unwrap().dda_all;
    let gain = 100.0 * (joint - sep);
    check(
        gain >= 2.0,
        format!("separate {:.1}, joint {:.1}, gain {gain:+.1} points", 100.0 * sep, 100.0 * joint),
    )
}

fn joint_analysis_direction(run: &Result<TreebankRun, String>) -> Outcome {
    let run = match run {
        Ok(r) => r,
        Err(e) => return Outcome::NotRun(e.clone()),
    };
    let sep_len = avg_dep_length(&run.sep_cmst).unwrap();
    let joint_len = avg_dep_length(&run.joint_cmst).unwrap();
    let rules = default_rules();
    let sep_rules = rule_satisfaction(&run.sep_dmv, &run.test, &rules).unwrap().overall.fraction();
    let joint_rules = rule_satisfaction(&run.joint_dmv, &run.test, &rules).unwrap().overall.fraction();
    check(
        joint_len < sep_len && joint_rules > sep_rules,
        format!(
            "avg length {sep_len:.3} -> {joint_len:.3}, rule satisfaction {:.1}% -> {:.1}%",
            100.0 * sep_rules,
            100.0 * joint_rules
        ),
    )
}

type Criterion = fn() -> Outcome;

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Outcome::Fail(format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let offline: [(&str, Criterion); 8] = [
        ("chart matches enumeration", chart_vs_oracle),
        ("tree oracle matches enumeration", lmo_vs_oracle),
        ("agreement certifies the joint optimum", dd_certificate),
        ("EM never lowers the likelihood", em_monotone),
        ("Frank-Wolfe descends and closes the gap", fw_monotone),
        ("SGD gradient matches finite differences", gradient_check),
        ("normalized parameters and valid decodes", normalization_and_fuzz),
        ("training is deterministic", determinism),
    ];
    let mut failed = 0;
    let mut report = |i: usize, name: &str, start: Instant, o: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match o {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::NotRun(d) => ("NOT RUN", d),
        };
        println!("[{tag}] {i:>2}. {name}: {detail} ({secs:.1}s)");
    };
    for (i, (name, f)) in offline.into_iter().enumerate() {
        let start = Instant::now();
        let o = guarded(f);
        report(i + 1, name, start, o);
    }

    let start = Instant::now();
    let run = catch_unwind(treebank_run).unwrap_or_else(|_| Err("treebank run panicked".into()));
    let o = guarded(|| joint_accuracy_gain(&run));
    report(9, "joint training improves accuracy", start, o);
    let start = Instant::now();
    let o = guarded(|| joint_analysis_direction(&run));
    report(10, "joint training shortens arcs and follows rules", start, o);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
