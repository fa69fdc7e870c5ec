use std::path::Path;
use std::process::Command;

fn stgn(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_stgn"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    std::fs::write(
        &path,
        "# small run\nusers = 16\nitems = 16\ncommunities = 4\nevents = 600\n\
         d_memory = 8\nd_time = 4\nd_emb = 8\nbatch_size = 50\nepochs = 1\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn gen_synth_writes_a_readable_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let (ok, stdout, stderr) = stgn(&[
        "gen-synth",
        "--users",
        "8",
        "--items",
        "8",
        "--communities",
        "2",
        "--events",
        "50",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("50 events"));
    let stream = stgn::ingest::parse_jodie_csv(&out).unwrap();
    assert_eq!(stream.len(), 50);
    assert_eq!(stream.d_edge, 2);
}

#[test]
fn train_then_eval_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let (ok, stdout, stderr) = stgn(&[
        "train",
        "--config",
        &cfg,
        "--backend",
        "brute_force",
        "--alpha",
        "0.2",
        "--log-staleness",
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    assert!(ok, "{stderr}");
    assert!(stdout.starts_with("epoch=1 mean_loss="), "{stdout}");
    assert!(
        stderr
            .lines()
            .any(|l| l.starts_with("batch=") && l.contains("threshold=")),
        "{stderr}"
    );

    let (ok, stdout, stderr) =
        stgn(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--scope", "trans"]);
    assert!(ok, "{stderr}");
    assert!(
        stdout.contains("model=Brute-force quantile=0.8 scope=transductive"),
        "{stdout}"
    );
}

#[test]
fn ablate_prints_one_row_per_quantile_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let csv = dir.path().join("t.csv");
    let args = [
        "ablate",
        "--config",
        &cfg,
        "--quantiles",
        "0.975,0.8,0.7",
        "--csv",
        csv.to_str().unwrap(),
    ];
    let (ok, first, stderr) = stgn(&args);
    assert!(ok, "{stderr}");
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0]
        .split_whitespace()
        .eq(["model", "quantile", "AUC", "precision"]));
    for (line, q) in lines[1..].iter().zip(["0.975", "0.8", "0.7"]) {
        let cells: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cells[..2], ["Ball-Tree", q]);
    }
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 4);
    let (_, second, _) = stgn(&args);
    assert_eq!(first, second);
    assert_eq!(table, std::fs::read_to_string(&csv).unwrap());
}

#[test]
fn bad_input_reports_error() {
    let (ok, _, stderr) = stgn(&["eval", "--ckpt", "/nonexistent/file"]);
    assert!(!ok);
    assert!(stderr.starts_with("error:"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "nonsense = 1\n").unwrap();
    let (ok, _, stderr) = stgn(&[
        "train",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        "/tmp/x",
    ]);
    assert!(!ok);
    assert!(stderr.contains("line 1"), "{stderr}");
}
