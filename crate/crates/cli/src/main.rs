use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dualdep::cmst::{default_rules, lmo_decode, CmstModel, RuleSet};
use dualdep::corpus::{filter_corpus, parse_conllu, write_conllu, Corpus};
use dualdep::decoder::{dd_decode_problem, DDResult, JointProblem};
use dualdep::dmv::{DmvParams, LogTables};
use dualdep::eval::{analyze, directed_accuracy};
use dualdep::par;
use dualdep::trainer::{self, decode_dmv, CMST_FILE, DMV_FILE};
use dualdep::tree::DepTree;

mod config;

use config::{ConfigError, Settings};

const THREADS_ENV: &str = "DUALDEP_THREADS";
const CONFIG_SNAPSHOT: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "dualdep", version, about = "Unsupervised dependency parsing with jointly trained models")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train models and write checkpoints.
    Train(TrainArgs),
    /// Parse a treebank with trained models.
    Parse(ParseArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Rule satisfaction, dependency length and center-embedding statistics.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DecoderKind {
    Dmv,
    Cmst,
    Dd,
}

#[derive(Args, Debug)]
struct ParseArgs {
    /// Directory holding `dmv.params` and/or `cmst.model`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "dd")]
    decoder: DecoderKind,
    /// Drop longer sentences before parsing.
    #[arg(long)]
    max_len: Option<usize>,
    /// Write per-sentence agreement statistics (dd decoder only).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    max_len: Option<usize>,
    /// Score punctuation tokens too.
    #[arg(long)]
    include_punct: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<dualdep::Error> for Failure {
    fn from(e: dualdep::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("Run `dualdep --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let mut settings = Settings::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        settings.apply_text(&text)?;
    }
    for pair in &cli.set {
        settings.set_pair(pair)?;
    }
    if let Some(Command::Train(a)) = &cli.command {
        apply_train_flags(&mut settings, a)?;
    }
    if let Ok(t) = std::env::var(THREADS_ENV) {
        settings.set("threads", &t)?;
    }
    if cli.dump_config {
        print!("{}", settings.dump());
        return Ok(());
    }
    let threads = settings.threads()?;
    if threads > 0 {
        par::set_threads(threads);
    }
    match cli.command {
        None => Err(Failure::Usage("a subcommand is required: train | parse | eval | analyze".into())),
        Some(Command::Train(a)) => train(&settings, &a),
        Some(Command::Parse(a)) => parse(&settings, &a),
        Some(Command::Eval(a)) => eval(&settings, &a),
        Some(Command::Analyze(a)) => analyze_cmd(&settings, &a),
    }
}

fn apply_train_flags(s: &mut Settings, a: &TrainArgs) -> Result<(), ConfigError> {
    if let Some(m) = &a.mode {
        s.set("mode", m)?;
    }
    if let Some(p) = &a.train {
        s.set("train", &p.to_string_lossy())?;
    }
    if let Some(n) = a.max_len {
        s.set("train_max_len", &n.to_string())?;
    }
    if let Some(p) = &a.rules {
        s.set("rules", &p.to_string_lossy())?;
    }
    if let Some(seed) = a.seed {
        s.set("seed", &seed.to_string())?;
    }
    Ok(())
}

fn require_file(p: &Path) -> Outcome {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{}: no such file", p.display())))
    }
}

fn require_parent(p: &Path) -> Outcome {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(Failure::Data(format!("{}: directory does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

fn read_corpus(p: &Path) -> Result<Corpus, Failure> {
    let f = fs::File::open(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
    parse_conllu(BufReader::new(f)).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
}

fn read_rules(p: Option<&Path>) -> Result<RuleSet, Failure> {
    match p {
        None => Ok(default_rules()),
        Some(p) => {
            let f = fs::File::open(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            RuleSet::read_from(BufReader::new(f)).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn train(s: &Settings, a: &TrainArgs) -> Outcome {
    let train_path = s
        .path("train")
        .ok_or_else(|| Failure::Usage("training data is required (--train or train=...)".into()))?;
    require_file(&train_path)?;
    let rules_path = s.rules_path();
    if let Some(p) = &rules_path {
        require_file(p)?;
    }
    require_parent(&a.out)?;
    let rules = read_rules(rules_path.as_deref())?;
    let cfg = s.train_config(rules)?;

    let corpus = read_corpus(&train_path)?;
    let corpus = filter_corpus(&corpus, s.usize("train_max_len")?, s.bool("count_punct")?);
    if corpus.is_empty() {
        return Err(Failure::Data("no training sentences left after length filtering".into()));
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(CONFIG_SNAPSHOT), s.dump())?;
    let state = trainer::train(&corpus, &cfg, Some(&a.out))?;
    for m in &state.history {
        eprintln!(
            "iteration {}: objective {:.6} -> {:.6}, agreement {:.3}",
            m.iteration, m.objective_before, m.objective_after, m.dd_converged
        );
    }
    fs::write(a.out.join(trainer::METRICS_FILE), state.metrics_csv())?;
    Ok(())
}

fn load_dmv(dir: &Path) -> Result<DmvParams, Failure> {
    let p = dir.join(DMV_FILE);
    let f = fs::File::open(&p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
    DmvParams::read_from(BufReader::new(f)).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
}

fn load_cmst(dir: &Path) -> Result<CmstModel, Failure> {
    let p = dir.join(CMST_FILE);
    let f = fs::File::open(&p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
    CmstModel::read_from(BufReader::new(f)).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
}

fn parse(s: &Settings, a: &ParseArgs) -> Outcome {
    let needs_dmv = matches!(a.decoder, DecoderKind::Dmv | DecoderKind::Dd);
    let needs_cmst = matches!(a.decoder, DecoderKind::Cmst | DecoderKind::Dd);
    if needs_dmv {
        require_file(&a.model.join(DMV_FILE))?;
    }
    if needs_cmst {
        require_file(&a.model.join(CMST_FILE))?;
    }
    require_file(&a.input)?;
    require_parent(&a.output)?;
    if let Some(t) = &a.trace {
        require_parent(t)?;
    }
    let exec = s.execution()?;
    let constraints = s.constraints()?;
    let dd = s.dd()?;

    let mut corpus = read_corpus(&a.input)?;
    if let Some(n) = a.max_len {
        corpus = filter_corpus(&corpus, n, s.bool("count_punct")?);
    }
    let trees: Vec<DepTree> = match a.decoder {
        DecoderKind::Dmv => decode_dmv(&corpus, &load_dmv(&a.model)?, &constraints, exec)?,
        DecoderKind::Cmst => {
            let m = load_cmst(&a.model)?;
            par::map(exec, &corpus.sentences, |_, x| lmo_decode(x, &m, None).map(|(t, _)| t))
                .into_iter()
                .collect::<dualdep::Result<_>>()?
        }
        DecoderKind::Dd => {
            let theta = load_dmv(&a.model)?;
            let m = load_cmst(&a.model)?;
            let tables = LogTables::new(&theta);
            let n_corpus = corpus.len().max(1);
            let results: Vec<DDResult> = par::map(exec, &corpus.sentences, |_, x| {
                let inst = m.instance(x);
                dd_decode_problem(
                    &JointProblem {
                        sentence: x,
                        theta: &theta,
                        tables: &tables,
                        cfg_f: constraints,
                        cmst: &m,
                        instance: &inst,
                        n_corpus,
                    },
                    &dd,
                )
            })
            .into_iter()
            .collect::<dualdep::Result<_>>()?;
            if let Some(t) = &a.trace {
                let mut csv = String::from(DDResult::CSV_HEADER);
                csv.push('\n');
                for (i, r) in results.iter().enumerate() {
                    csv.push_str(&r.csv_row(i + 1));
                    csv.push('\n');
                }
                fs::write(t, csv)?;
            }
            results.into_iter().map(|r| r.tree).collect()
        }
    };
    let mut out = BufWriter::new(fs::File::create(&a.output)?);
    write_conllu(&corpus, &trees, &mut out)?;
    out.flush()?;
    Ok(())
}

fn eval(s: &Settings, a: &EvalArgs) -> Outcome {
    require_file(&a.gold)?;
    require_file(&a.pred)?;
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let gold = read_corpus(&a.gold)?;
    let pred = read_corpus(&a.pred)?;
    if gold.len() != pred.len() {
        return Err(Failure::Data(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut heads = Vec::with_capacity(pred.len());
    for (i, sent) in pred.sentences.iter().enumerate() {
        let h: Option<Vec<usize>> = sent.tokens.iter().map(|t| t.gold_head).collect();
        heads.push(h.ok_or_else(|| Failure::Data(format!("predicted sentence {} lacks heads", i + 1)))?);
    }
    let max_len = match a.max_len {
        Some(n) => n,
        None => s.usize("eval_max_len")?,
    };
    let exclude_punct = !a.include_punct && s.bool("exclude_punct")?;
    let report = directed_accuracy(&gold, &heads, max_len, exclude_punct)?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    };
    write_output(a.out.as_deref(), &text)
}

fn analyze_cmd(s: &Settings, a: &AnalyzeArgs) -> Outcome {
    require_file(&a.pred)?;
    let rules_path = a.rules.clone().or_else(|| s.rules_path());
    if let Some(p) = &rules_path {
        require_file(p)?;
    }
    if let Some(o) = &a.out {
        require_parent(o)?;
    }
    let rules = read_rules(rules_path.as_deref())?;
    let pred = read_corpus(&a.pred)?;
    let trees = pred
        .gold_trees()
        .map_err(|e| Failure::Data(format!("{}: {e}", a.pred.display())))?;
    let report = analyze(&trees, &pred, &rules)?;
    let text = match a.format {
        Format::Csv => report.to_csv(),
        Format::Table => report.to_table(),
    };
    write_output(a.out.as_deref(), &text)
}
