use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--channels", "8",
    "--verbs", "3",
    "--nouns", "6",
    "--frames", "2",
    "--per-frame", "3",
    "--distractor-count", "1",
    "--train-size", "30",
    "--val-size", "20",
    "--epochs", "2",
    "--learning-rate", "0.05",
];

fn sap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sap"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("SAP_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn with_tiny<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = Vec::new();
    v.extend_from_slice(&extra[..1]);
    v.extend_from_slice(TINY);
    v.extend_from_slice(&extra[1..]);
    v
}

#[test]
fn gen_train_eval_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = sap(&with_tiny(&["gen-data", "--output-dir", "out"]), d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("out/train.sapb").exists() && d.join("out/val.sapb").exists());

    let o = sap(&with_tiny(&["train", "--data", "out/train.sapb", "--model-out", "out/m.json"]), d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("epoch   1"));

    let o = sap(&with_tiny(&["eval", "--model", "out/m.json", "--data", "out/val.sapb"]), d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("full on 20 clips") && text.contains("top-1:"), "{text}");

    let o = sap(
        &with_tiny(&["dump-attention", "--model", "out/m.json", "--data", "out/val.sapb", "--index", "3", "--out", "out/att.csv"]),
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.join("out/att.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("row,frame_index,confidence,noun_weight,verb_weight"));
    let (mut sn, mut sv, mut n) = (0.0, 0.0, 0);
    for l in lines {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        sn += f[3];
        sv += f[4];
        n += 1;
    }
    assert_eq!(n, 6);
    assert!((sn - 1.0).abs() < 1e-9 && (sv - 1.0).abs() < 1e-9, "{sn} {sv}");
}

#[test]
fn ablation_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csvs = Vec::new();
    for out in ["a", "b"] {
        let o = sap(&with_tiny(&["ablate", "--variants", "baseline,full,no_arm", "--seeds", "0,1", "--output-dir", out]), d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(d.join(out).join("results.csv")).unwrap());
        assert!(d.join(out).join("results.jsonl").exists());
        assert!(d.join(out).join("summary.txt").exists());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(sap_core::harness::CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        let acc: Vec<f64> = f[3..11].iter().map(|x| x.parse().unwrap()).collect();
        assert!(acc.iter().all(|a| (0.0..=1.0).contains(a)), "{r}");
        for pair in acc.chunks(2) {
            assert!(pair[1] >= pair[0], "top-5 below top-1: {r}");
        }
    }
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# tiny\nchannels = 8\nverbs = 3\nnouns = 6\nframes = 2\nper-frame = 3\ndistractor-count = 1\nval-size = 4\ntrain-size = 9\n").unwrap();
    let o = sap(&["gen-data", "--config", "run.cfg", "--train-size", "5", "--output-dir", "o"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = sap_core::data::read_bank_file(&d.join("o/train.sapb")).unwrap();
    let v = sap_core::data::read_bank_file(&d.join("o/val.sapb")).unwrap();
    assert_eq!((t.episodes.len(), v.episodes.len(), t.dims.channels), (5, 4, 8));
}

#[test]
fn output_dir_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sap"))
        .args(with_tiny(&["gen-data"]))
        .current_dir(dir.path())
        .env("SAP_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("from-env/train.sapb").exists());
}

#[test]
fn gradcheck_passes_and_reports_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = sap(&["gradcheck"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));

    let o = sap(&["gradcheck", "--inject-sigmoid-fault"], dir.path());
    assert_eq!(code(&o), 1);
    let failed: Vec<String> = stdout(&o).lines().filter(|l| l.starts_with("failed:")).map(String::from).collect();
    assert!(failed.iter().any(|l| l.contains("failed: sigmoid ")), "{failed:?}");
    assert!(failed.iter().all(|l| l.contains("sigmoid") || l.contains("full_sap_loss")), "{failed:?}");

    let o = sap(&["gradcheck", "--tolerance", "1e-12"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).lines().filter(|l| l.starts_with("failed:")).count() > 0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // configuration errors
    assert_eq!(code(&sap(&["gen-data", "--epochs", "abc"], d)), 2);
    assert_eq!(code(&sap(&["gen-data", "--seeds", ""], d)), 2);
    assert_eq!(code(&sap(&["gen-data", "--variants", "nope"], d)), 2);
    assert_eq!(code(&sap(&["gen-data", "--nouns", "1"], d)), 2);
    assert_eq!(code(&sap(&["frobnicate"], d)), 2);
    std::fs::write(d.join("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(code(&sap(&["gen-data", "--config", "bad.cfg"], d)), 2);
    // I/O and format errors
    assert_eq!(code(&sap(&["eval", "--model", "missing.json"], d)), 3);
    assert_eq!(code(&sap(&["gen-data", "--config", "missing.cfg"], d)), 3);
    std::fs::write(d.join("junk.sapb"), b"NOPE and then some bytes of nothing in particular").unwrap();
    assert_eq!(code(&sap(&with_tiny(&["train", "--data", "junk.sapb"]), d)), 3);
    std::fs::write(d.join("junk.json"), "{").unwrap();
    assert_eq!(code(&sap(&["eval", "--model", "junk.json"], d)), 3);
}
