//! Flat `key = value` run configuration.
//!
//! Values come from the built-in defaults, then a config file, then `--set`
//! overrides, then explicit subcommand flags, later sources winning.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use dualdep::cmst::{FwConfig, RuleSet};
use dualdep::decoder::{DDConfig, Fallback, StepRule};
use dualdep::dmv::{ConstraintConfig, InitMode};
use dualdep::par::Execution;
use dualdep::trainer::{TrainConfig, TrainMode};

/// Every recognized key with its default and a short description, in dump
/// order.
const KEYS: &[(&str, &str, &str)] = &[
    ("mode", "joint", "dmv-only | cmst-only | dmv-init-from-cmst | joint"),
    ("train", "", "training treebank (CoNLL-U)"),
    ("train_max_len", "15", "longest training sentence kept"),
    ("count_punct", "true", "count punctuation in sentence length filters"),
    ("eval_max_len", "40", "longest test sentence scored"),
    ("exclude_punct", "true", "leave punctuation tokens out of accuracy"),
    ("rules", "default", "rule file, or `default` for the built-in list"),
    ("seed", "0", "random seed"),
    ("threads", "0", "worker threads, 0 = all hardware threads"),
    ("outer_iters", "10", "joint training iterations"),
    ("extra_separate_iters", "3", "EM and Frank-Wolfe iterations per joint iteration"),
    ("em_pretrain_iters", "50", "EM iterations before joint training"),
    ("init", "harmonic", "uniform | harmonic | random"),
    ("max_ce_depth", "1", "center-embedding cap, or `inf`"),
    ("dep_len_beta", "0.1", "per-arc length penalty"),
    ("em_smoothing", "0", "additive smoothing in EM"),
    ("mstep_smoothing", "0.1", "additive smoothing on decoded trees"),
    ("lambda", "1", "ridge weight"),
    ("mu", "0.5", "rule prior weight"),
    ("fw_iters", "50", "Frank-Wolfe iterations"),
    ("cg_tol", "1e-8", "relative residual of the ridge solve"),
    ("cg_max_iters", "5000", "iteration cap of the ridge solve"),
    ("sgd_lr", "0.05", "SGD rate, decayed as lr / (1 + iteration)"),
    ("sgd_batch", "32", "SGD batch size"),
    ("sgd_max_halvings", "10", "rate halvings when an SGD pass raises the objective"),
    ("dd_tau0", "1", "initial price step"),
    ("dd_step_rule", "inv-sqrt", "constant | harmonic | inv-sqrt"),
    ("dd_max_iters", "50", "price updates per sentence"),
    ("dd_fallback", "better-objective", "generative | discriminative | better-objective"),
    ("g_weight", "1", "weight of the discriminative objective"),
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let Some((k, _, _)) = KEYS.iter().find(|(k, _, _)| *k == key) else {
            return Err(ConfigError(format!("unknown config key {key:?}")));
        };
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies a `KEY=VALUE` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("expected KEY=VALUE, got {pair:?}")))?;
        self.set(k.trim(), v)
    }

    /// Applies a config file body; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            self.set_pair(body)
                .map_err(|e| ConfigError(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| ConfigError(format!("invalid value {v:?} for {key}")))
    }

    fn named<T: FromStr<Err = dualdep::Error>>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|e| ConfigError(format!("{key}: {e}")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key)
    }

    pub fn threads(&self) -> Result<usize> {
        self.usize("threads")
    }

    pub fn execution(&self) -> Result<Execution> {
        Ok(if self.threads()? == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        })
    }

    /// The rule file path, or `None` for the built-in rules.
    pub fn rules_path(&self) -> Option<PathBuf> {
        match self.get("rules") {
            "default" | "" => None,
            p => Some(PathBuf::from(p)),
        }
    }

    pub fn constraints(&self) -> Result<ConstraintConfig> {
        let max_ce_depth = match self.get("max_ce_depth") {
            "inf" | "none" => None,
            _ => Some(self.usize("max_ce_depth")?),
        };
        Ok(ConstraintConfig {
            max_ce_depth,
            dep_len_beta: self.parse("dep_len_beta")?,
        })
    }

    pub fn dd(&self) -> Result<DDConfig> {
        Ok(DDConfig {
            tau0: self.parse("dd_tau0")?,
            step_rule: self.named::<StepRule>("dd_step_rule")?,
            max_iters: self.usize("dd_max_iters")?,
            fallback: self.named::<Fallback>("dd_fallback")?,
            g_weight: self.parse("g_weight")?,
        })
    }

    /// Training configuration with the given rule set.
    pub fn train_config(&self, rules: RuleSet) -> Result<TrainConfig> {
        let exec = self.execution()?;
        let cfg = TrainConfig {
            mode: self.named::<TrainMode>("mode")?,
            outer_iters: self.usize("outer_iters")?,
            extra_separate_iters: self.usize("extra_separate_iters")?,
            em_pretrain_iters: self.usize("em_pretrain_iters")?,
            init: self.named::<InitMode>("init")?,
            seed: self.parse("seed")?,
            constraints: self.constraints()?,
            em_smoothing: self.parse("em_smoothing")?,
            mstep_smoothing: self.parse("mstep_smoothing")?,
            lambda: self.parse("lambda")?,
            mu: self.parse("mu")?,
            rules,
            fw_iters: self.usize("fw_iters")?,
            fw: FwConfig {
                iters: self.usize("fw_iters")?,
                cg_tol: self.parse("cg_tol")?,
                cg_max_iters: self.usize("cg_max_iters")?,
                exec,
            },
            sgd_lr: self.parse("sgd_lr")?,
            sgd_batch: self.usize("sgd_batch")?,
            sgd_max_halvings: self.usize("sgd_max_halvings")?,
            dd: self.dd()?,
            exec,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    /// Every key with its current value, one per line, preceded by its
    /// description.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (k, _, doc) in KEYS {
            writeln!(out, "# {doc}\n{k} = {}", self.get(k)).expect("writing to a string");
        }
        out
    }
}
