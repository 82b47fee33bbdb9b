use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tensor-factor");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn estimate_recovers_zero_noise_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("zero_noise");
    let truth = format!(
        "{},{}",
        s(&fx.join("truth_mode1.csv")),
        s(&fx.join("truth_mode2.csv"))
    );
    for method in ["topup", "tipup"] {
        for extra in [&[][..], &["--iterate"][..]] {
            let mut args = vec![
                "estimate",
                "--input",
                s(&fx.join("series.csv")).to_owned().leak(),
                "--ranks",
                "2,1",
                "--method",
                method,
                "--truth",
                &truth,
                "--out",
                s(dir.path()),
            ];
            args.extend_from_slice(extra);
            ok(&args);
            let (header, rows) = csv_rows(&dir.path().join("loss.csv"));
            assert_eq!(header, ["mode", "loss"]);
            for r in rows {
                let loss: f64 = r[1].parse().unwrap();
                assert!(loss < 1e-8, "{method} {extra:?} mode {}: {loss}", r[0]);
            }
        }
    }
    let basis = tensor_factor::io::load_matrix(&dir.path().join("loadings_mode1.csv")).unwrap();
    assert_eq!(basis.shape(), (6, 2));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert_eq!(manifest["config"]["ranks"], serde_json::json!([2, 1]));
}

#[test]
fn select_ranks_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("zero_noise").join("series.csv");
    ok(&["select-ranks", "--input", s(&input), "--out", s(dir.path())]);
    let (_, rows) = csv_rows(&dir.path().join("ranks.csv"));
    let ranks: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(ranks, ["2", "1"]);
}

#[test]
fn generate_reproduces_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture("zero_noise");
    ok(&[
        "generate",
        "--config",
        s(&fx.join("model.toml")),
        "--out",
        s(dir.path()),
    ]);
    for f in ["series.csv", "truth_mode1.csv", "truth_mode2.csv"] {
        assert_eq!(
            fs::read(dir.path().join(f)).unwrap(),
            fs::read(fx.join(f)).unwrap(),
            "{f}"
        );
    }
}

const GRID: &str = r#"
lens = [16, 32, 64, 128]
dims = [[3, 3], [4, 4]]
lambdas = [1.0, 2.0, 4.0]
ranks = [1, 1]
ar_coeffs = [0.6]
noise_offdiag = 0.2
replicates = 3
seed = 42
"#;

#[test]
fn simulate_then_ratefit() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    fs::write(&config, GRID).unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&config), "--out", s(&sim)]);
    let (header, rows) = csv_rows(&sim.join("replicates.csv"));
    assert_eq!(header[..3], ["cell", "replicate", "seed"]);
    // 24 cells, 3 replicates, 2 methods, 2 modes
    assert_eq!(rows.len(), 24 * 3 * 2 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["max_iter"], 50);

    let fit = dir.path().join("fit");
    ok(&[
        "ratefit",
        "--summary",
        s(&sim.join("summary.csv")),
        "--out",
        s(&fit),
    ]);
    let (header, rows) = csv_rows(&fit.join("coefficients.csv"));
    let names: Vec<String> = (1..=10).map(|i| format!("c{i}")).collect();
    assert_eq!(header[1..11], names[..]);
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["topup", "tipup"]);
    for r in &rows {
        for v in &r[1..11] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    let (header, rows) = csv_rows(&fit.join("surface.csv"));
    assert_eq!(header, ["method", "x", "y", "z", "count"]);
    assert!(!rows.is_empty());
}

#[test]
fn simulate_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    fs::write(&config, GRID.replace("replicates = 3", "replicates = 2")).unwrap();
    let mut tables = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        ok(&[
            "--threads",
            threads,
            "simulate",
            "--config",
            s(&config),
            "--out",
            s(&out),
        ]);
        tables.push((
            fs::read(out.join("replicates.csv")).unwrap(),
            fs::read(out.join("summary.csv")).unwrap(),
        ));
    }
    assert!(tables[0] == tables[1]);
}

#[test]
fn rotate_scaled_truncated_display() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("l.csv");
    // already simple structure, so varimax leaves it in place
    fs::write(&input, "0.6,0\n0.3,0\n0.1,0\n0,0.5\n0,0.5\n").unwrap();
    let out = ok(&[
        "rotate",
        "--loadings",
        s(&input),
        "--normalize",
        "--scale",
        "30",
        "--truncate",
        "--out",
        s(dir.path()),
    ]);
    let display = fs::read_to_string(dir.path().join("display.csv")).unwrap();
    assert_eq!(display, "18,0\n9,0\n3,0\n0,15\n0,15\n");
    let shown = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        shown
            .lines()
            .next()
            .unwrap()
            .split_whitespace()
            .collect::<Vec<_>>(),
        ["18", "0"]
    );

    ok(&[
        "rotate",
        "--loadings",
        s(&input),
        "--percent",
        "--out",
        s(dir.path()),
    ]);
    let display = fs::read_to_string(dir.path().join("display.csv")).unwrap();
    assert_eq!(display, "60,0\n30,0\n10,0\n0,50\n0,50\n");
}

#[test]
fn report_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("zero_noise").join("series.csv");
    ok(&[
        "report",
        "--input",
        s(&input),
        "--ranks",
        "2,1",
        "--h0",
        "2",
        "--signal",
        "--out",
        s(dir.path()),
    ]);
    let (header, rows) = csv_rows(&dir.path().join("report.csv"));
    assert_eq!(header[0], "mode");
    assert_eq!(rows.len(), 2);
    let (_, ac) = csv_rows(&dir.path().join("autocov.csv"));
    assert_eq!(ac.len(), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let input = fixture("zero_noise").join("series.csv");
    let code = |o: Output| o.status.code().unwrap();

    // usage: clap errors, bad combinations, guardrail
    assert_eq!(code(run(&["estimate", "--input", s(&input)])), 2);
    assert_eq!(
        code(run(&["rotate", "--loadings", "x.csv", "--truncate"])),
        2
    );
    assert_eq!(
        code(run(&[
            "estimate",
            "--input",
            s(&input),
            "--ranks",
            "1,1",
            "--method",
            "up",
            "--iterate",
            "--out",
            d
        ])),
        2
    );
    assert_eq!(
        code(run(&[
            "estimate",
            "--input",
            s(&input),
            "--ranks",
            "9,1",
            "--out",
            d
        ])),
        2
    );
    let big = dir.path().join("big.toml");
    fs::write(
        &big,
        GRID.replace("lens = [16, 32, 64, 128]", "lens = [65536]"),
    )
    .unwrap();
    assert_eq!(code(run(&["simulate", "--config", s(&big), "--out", d])), 2);

    // data: index beyond the declared shape
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "# order=1 dims=2\n1,1,5.0\n1,3,7.0\n").unwrap();
    let out = run(&["estimate", "--input", s(&bad), "--ranks", "1", "--out", d]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3"));

    // numeric: non-finite data
    let nan = dir.path().join("nan.csv");
    let mut text = String::from("# order=1 dims=2\n1,1,NaN\n");
    for t in 2..=8 {
        text += &format!("{t},1,{t}.0\n{t},2,1.5\n");
    }
    fs::write(&nan, text).unwrap();
    assert_eq!(
        code(run(&[
            "estimate",
            "--input",
            s(&nan),
            "--ranks",
            "1",
            "--out",
            d
        ])),
        4
    );
}
