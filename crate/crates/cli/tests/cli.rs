use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SENTENCES: &[(&[&str], &[usize])] = &[
    (&["DET", "NOUN", "VERB"], &[2, 3, 0]),
    (&["PRON", "VERB", "DET", "NOUN", "PUNCT"], &[2, 0, 4, 2, 2]),
    (&["NOUN", "VERB", "ADV"], &[2, 0, 2]),
    (&["DET", "ADJ", "NOUN", "VERB", "ADP", "NOUN"], &[3, 3, 4, 0, 6, 4]),
    (&["VERB", "NOUN"], &[0, 1]),
    (&["PRON", "VERB", "PRON", "PUNCT"], &[2, 0, 2, 2]),
    (&["DET", "NOUN", "VERB", "DET", "NOUN"], &[2, 3, 0, 5, 3]),
    (&["ADJ", "NOUN", "VERB"], &[2, 3, 0]),
];

fn conllu() -> String {
    let mut out = String::new();
    for (k, (tags, heads)) in SENTENCES.iter().enumerate() {
        out.push_str(&format!("# sent_id = s{}\n", k + 1));
        for (i, (t, h)) in tags.iter().zip(heads.iter()).enumerate() {
            out.push_str(&format!("{}\tw{i}\tw{i}\t{t}\t_\t_\t{h}\tdep\t_\t_\n", i + 1));
        }
        out.push('\n');
    }
    out
}

fn dualdep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualdep"))
        .args(args)
        .env_remove("DUALDEP_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FAST: &[&str] = &[
    "--set", "outer_iters=2",
    "--set", "em_pretrain_iters=3",
    "--set", "fw_iters=5",
    "--set", "dd_max_iters=10",
];

fn train_into(dir: &Path, data: &Path) -> Output {
    let mut args = vec!["train", "--train", s(data), "--out", s(dir), "--seed", "3"];
    args.extend_from_slice(FAST);
    dualdep(&args)
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(dualdep(&["--help"]).status.code(), Some(0));
    assert_eq!(dualdep(&["--version"]).status.code(), Some(0));
    assert_eq!(dualdep(&["train", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dualdep(&[]).status.code(), Some(1));
    assert_eq!(dualdep(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dualdep(&["train", "--out", "x", "--set", "no_such_key=1"]).status.code(), Some(1));
    assert_eq!(dualdep(&["train", "--out", "x", "--set", "lambda=abc"]).status.code(), Some(1));
    assert_eq!(dualdep(&["train", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.conllu");
    assert_eq!(dualdep(&["train", "--train", s(&missing), "--out", s(&dir.path().join("o"))]).status.code(), Some(2));
    let bad = dir.path().join("bad.conllu");
    fs::write(&bad, "1\tx\tNOUN\n").unwrap();
    let out = dualdep(&["train", "--train", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn dump_config_reflects_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "lambda = 2\nmu = 0.25\n# comment\n").unwrap();
    let out = dualdep(&["--config", s(&cfg), "--set", "mu=0.75", "--dump-config"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "lambda = 2"), "{text}");
    assert!(text.lines().any(|l| l == "mu = 0.75"), "{text}");
    assert!(text.lines().any(|l| l == "max_ce_depth = 1"), "{text}");

    let env = Command::new(env!("CARGO_BIN_EXE_dualdep"))
        .args(["--dump-config"])
        .env("DUALDEP_THREADS", "3")
        .output()
        .unwrap();
    assert!(String::from_utf8(env.stdout).unwrap().lines().any(|l| l == "threads = 3"));
}

#[test]
fn train_parse_eval_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.conllu");
    fs::write(&data, conllu()).unwrap();
    let model = dir.path().join("model");
    let out = train_into(&model, &data);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "metrics.csv", "pretrain/dmv.params", "iter-001/cmst.model", "final/trees.conllu"] {
        assert!(model.join(f).is_file(), "{f}");
    }

    let pred = dir.path().join("pred.conllu");
    let trace = dir.path().join("trace.csv");
    let final_dir = model.join("final");
    for decoder in ["dmv", "cmst", "dd"] {
        let out = dualdep(&[
            "parse", "--model", s(&final_dir), "--input", s(&data), "--output", s(&pred), "--decoder", decoder,
            "--trace", s(&trace),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let trace_text = fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("sentence,iterations,converged,final_gap,depth_relaxed\n"));
    assert_eq!(trace_text.lines().count(), SENTENCES.len() + 1);

    let out = dualdep(&["eval", "--gold", s(&data), "--pred", s(&pred)]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("metric,group,value\nschema_version,,1\n"));
    let dda: f64 = csv
        .lines()
        .find_map(|l| l.strip_prefix("dda_all,,"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&dda));

    let self_eval = dualdep(&["eval", "--gold", s(&data), "--pred", s(&data), "--format", "table"]);
    assert!(String::from_utf8(self_eval.stdout).unwrap().contains("1.0000"));

    let report = dir.path().join("analysis.csv");
    let out = dualdep(&["analyze", "--pred", s(&pred), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(0));
    let a = fs::read_to_string(&report).unwrap();
    assert!(a.contains("rule_satisfaction,,"));
    assert!(a.contains("avg_dep_length,,"));
}

#[test]
fn missing_model_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.conllu");
    fs::write(&data, conllu()).unwrap();
    let model = dir.path().join("model");
    assert!(train_into(&model, &data).status.success());
    let final_dir = model.join("final");
    fs::remove_file(final_dir.join("cmst.model")).unwrap();
    let pred = dir.path().join("pred.conllu");
    let out = dualdep(&["parse", "--model", s(&final_dir), "--input", s(&data), "--output", s(&pred)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cmst.model"));
    assert!(!pred.exists());
    // The generative decoder alone does not need it.
    let out = dualdep(&["parse", "--model", s(&final_dir), "--input", s(&data), "--output", s(&pred), "--decoder", "dmv"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn eval_rejects_misaligned_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.conllu");
    fs::write(&gold, conllu()).unwrap();
    let pred = dir.path().join("pred.conllu");
    fs::write(&pred, "1\ta\ta\tNOUN\t_\t_\t0\tx\t_\t_\n").unwrap();
    assert_eq!(dualdep(&["eval", "--gold", s(&gold), "--pred", s(&pred)]).status.code(), Some(2));
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
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

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.conllu");
    fs::write(&data, conllu()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(train_into(&a, &data).status.success());
    let mut args = vec!["train", "--train", s(&data), "--out", s(&b), "--seed", "3", "--set", "threads=1"];
    args.extend_from_slice(FAST);
    assert!(dualdep(&args).status.success());
    let strip_threads = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(n, _)| n != "config.txt").collect()
    };
    assert_eq!(strip_threads(tree_bytes(&a)), strip_threads(tree_bytes(&b)));

    let pa = dir.path().join("pa.conllu");
    let pb = dir.path().join("pb.conllu");
    for (p, m) in [(&pa, &a), (&pb, &b)] {
        let out = dualdep(&["parse", "--model", s(&m.join("final")), "--input", s(&data), "--output", s(p)]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
}
