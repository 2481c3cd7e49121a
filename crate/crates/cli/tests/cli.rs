use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rdlocal::simdgp::{gen_fuzzy, gen_sharp, write_csv, FuzzyDgp, SharpDgp};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rdlocal"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn text(o: &Output) -> (String, String) {
    (
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

fn sharp_csv(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let s = gen_sharp(&SharpDgp {
        n,
        effect: 1.0,
        seed,
        ..SharpDgp::default()
    })
    .unwrap();
    let p = dir.join(format!("sharp_{n}_{seed}.csv"));
    write_csv(&s, std::fs::File::create(&p).unwrap()).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn randinf_exhaustive_runs_without_seed() {
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 400, 1);
    let out = d.path().join("r.json");
    let o = run(&[
        "randinf",
        "--input",
        input.to_str().unwrap(),
        "--wl",
        "-0.04",
        "--wr",
        "0.04",
        "--out-json",
        out.to_str().unwrap(),
    ]);
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stderr}");
    assert!(stdout.contains("Finite-sample p-value"));
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["command"], "randinf");
    assert_eq!(v["result"]["fisher"]["method"], "exhaustive");
}

#[test]
fn simulated_paths_require_a_seed() {
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 400, 2);
    let base = ["randinf", "--input", input.to_str().unwrap(), "--wl", "-0.2", "--wr", "0.2"];
    let o = run(&base);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).1.contains("--seed"));
    let mut with_seed = base.to_vec();
    with_seed.extend(["--seed", "7", "--nsims", "200"]);
    assert_eq!(run(&with_seed).status.code(), Some(0));
}

#[test]
fn json_is_identical_across_thread_counts() {
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 500, 3);
    let mut files = Vec::new();
    for threads in ["1", "8"] {
        let out = d.path().join(format!("t{threads}.json"));
        let o = run(&[
            "randinf",
            "--input",
            input.to_str().unwrap(),
            "--wl",
            "-0.2",
            "--wr",
            "0.2",
            "--seed",
            "50",
            "--nsims",
            "2000",
            "--ci-grid",
            "0:2:0.25",
            "--threads",
            threads,
            "--out-json",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
        files.push(std::fs::read(out).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn empty_input_is_an_analysis_error() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("empty.csv");
    std::fs::write(&p, "score,outcome\n").unwrap();
    let o = run(&["randinf", "--input", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).1.contains("no data rows"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["randinf", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["nosuchcommand"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 100, 4);
    let i = input.to_str().unwrap();
    assert_eq!(run(&["randinf", "--input", i, "--wl", "-0.1"]).status.code(), Some(2));
    assert_eq!(run(&["randinf", "--input", i, "--statistic", "median"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn winselect_reports_balance_only() {
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 600, 5);
    let out = d.path().join("w.json");
    let plot = d.path().join("w.csv");
    let o = run(&[
        "winselect",
        "--input",
        input.to_str().unwrap(),
        "--covariates",
        "z_score,z_noise",
        "--wobs",
        "5",
        "--nwindows",
        "8",
        "--seed",
        "1",
        "--nsims",
        "300",
        "--out-json",
        out.to_str().unwrap(),
        "--plot-out",
        plot.to_str().unwrap(),
    ]);
    let (stdout, stderr) = text(&o);
    assert_eq!(o.status.code(), Some(0), "{stderr}");
    for word in ["estimate", "effect", "outcome"] {
        assert!(!stdout.to_lowercase().contains(word), "winselect printed `{word}`:\n{stdout}");
    }
    let v = json(&out);
    assert_eq!(v["result"]["rows"].as_array().unwrap().len(), 8);
    assert!(v["result"]["rows"][0].get("estimate").is_none());
    assert_eq!(std::fs::read_to_string(plot).unwrap().lines().count(), 9);
}

#[test]
fn winselect_needs_no_outcome_column() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("cov.csv");
    let mut t = String::from("score,z\n");
    for i in 0..40 {
        t.push_str(&format!("{},{}\n", -2.0 + i as f64 * 0.1 + 0.05, (i * 7) % 5));
    }
    std::fs::write(&p, t).unwrap();
    let o = run(&[
        "winselect",
        "--input",
        p.to_str().unwrap(),
        "--covariates",
        "z",
        "--obsmin",
        "3",
        "--nwindows",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
}

#[test]
fn density_reproduces_binomial_p() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("d.csv");
    let mut t = String::from("score\n");
    for i in 0..16 {
        t.push_str(&format!("{}\n", -0.5 + i as f64 * 0.01));
    }
    for i in 0..25 {
        t.push_str(&format!("{}\n", 0.1 + i as f64 * 0.01));
    }
    std::fs::write(&p, t).unwrap();
    let out = d.path().join("d.json");
    let o = run(&[
        "density",
        "--input",
        p.to_str().unwrap(),
        "--wl",
        "-1",
        "--wr",
        "1",
        "--out-json",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    let pv = json(&out)["result"]["p_value"].as_f64().unwrap();
    assert!((pv - 0.211).abs() < 0.001);
    assert!(text(&o).0.contains("p-value 0.211"));
}

#[test]
fn fuzzy_modes() {
    let d = TempDir::new().unwrap();
    let s = gen_fuzzy(&FuzzyDgp {
        base: SharpDgp {
            n: 300,
            effect: 2.0,
            seed: 8,
            ..SharpDgp::default()
        },
        take_up_below: 0.0,
        take_up_above: 0.6,
    })
    .unwrap();
    let p = d.path().join("f.csv");
    write_csv(&s, std::fs::File::create(&p).unwrap()).unwrap();
    let out = d.path().join("f.json");
    let i = p.to_str().unwrap();
    let o = run(&[
        "fuzzy",
        "--input",
        i,
        "--treatment-received",
        "treatment",
        "--wl",
        "-0.2",
        "--wr",
        "0.2",
        "--tsls",
        "--itt",
        "--first-stage",
        "--seed",
        "3",
        "--nsims",
        "200",
        "--out-json",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    let v = json(&out);
    let r = &v["result"];
    let ratio = r["tsls"]["itt"].as_f64().unwrap() / r["tsls"]["first_stage"].as_f64().unwrap();
    assert!((r["tsls"]["ratio"].as_f64().unwrap() - ratio).abs() < 1e-12);
    assert_eq!(r["tsls"]["compliance_type"], "one_sided");
    assert!(r["itt"]["estimate"].is_number());
    assert_eq!(run(&["fuzzy", "--input", i]).status.code(), Some(2));
}

#[test]
fn multi_cutoff_pooling() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("mc.csv");
    let mut t = String::from("score,outcome,cut\n");
    for (c, eff) in [(0.0, 1.0), (10.0, 3.0)] {
        for i in 0..40 {
            let x = c - 1.0 + (i as f64 + 0.5) / 20.0;
            let y = (i % 4) as f64 * 0.1 + if x >= c { eff } else { 0.0 };
            t.push_str(&format!("{x},{y},{c}\n"));
        }
    }
    std::fs::write(&p, t).unwrap();
    let out = d.path().join("mc.json");
    let csv = d.path().join("mc_rows.csv");
    let o = run(&[
        "mc",
        "--input",
        p.to_str().unwrap(),
        "--cutoff-col",
        "cut",
        "--h",
        "0.5",
        "--pooled",
        "--compare",
        "0,10",
        "--seed",
        "2",
        "--nsims",
        "200",
        "--out-json",
        out.to_str().unwrap(),
        "--out-csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    let v = json(&out);
    let w: f64 = v["result"]["pooled"]["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["weight"].as_f64().unwrap())
        .sum();
    assert!((w - 1.0).abs() < 1e-12);
    assert!(v["result"]["comparison"]["p_value"].as_f64().unwrap() < 0.01);
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 3);
}

#[test]
fn multi_score_distances() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("ms.csv");
    let mut t = String::from("x1,x2,outcome\n");
    for i in 0..20 {
        for j in 0..20 {
            let (a, b) = (-1.0 + i as f64 * 0.1 + 0.05, -1.0 + j as f64 * 0.1 + 0.05);
            let y = if a >= 0.0 && b >= 0.0 { 1.0 } else { 0.0 } + ((i + j) % 3) as f64 * 0.01;
            t.push_str(&format!("{a},{b},{y}\n"));
        }
    }
    std::fs::write(&p, t).unwrap();
    let out = d.path().join("ms.json");
    let o = run(&[
        "ms",
        "--input",
        p.to_str().unwrap(),
        "--map",
        "x1=score",
        "--score2",
        "x2",
        "--assign-at",
        "0,0",
        "--point",
        "0,0.5",
        "--point",
        "0.5,0",
        "--engine",
        "lr",
        "--h",
        "0.3",
        "--grid-radius",
        "0.3",
        "--seed",
        "1",
        "--nsims",
        "200",
        "--out-json",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    let v = json(&out);
    let pts = v["result"]["points"].as_array().unwrap();
    assert_eq!(pts.len(), 2);
    for r in pts {
        assert!((r["result"]["estimate"].as_f64().unwrap() - 1.0).abs() < 0.05);
    }
    assert_eq!(v["result"]["grid"].as_array().unwrap().len(), 2);
}

#[test]
fn falsify_and_plot() {
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 400, 9);
    let i = input.to_str().unwrap();
    let out = d.path().join("fa.json");
    let o = run(&[
        "falsify",
        "--input",
        i,
        "--map",
        "z_noise=covariate",
        "--wl",
        "-0.2",
        "--wr",
        "0.2",
        "--balance",
        "--placebos",
        "-0.6,0.6",
        "--sensitivity",
        "0.1,0.05",
        "--seed",
        "4",
        "--nsims",
        "200",
        "--out-json",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    let v = json(&out);
    assert_eq!(v["result"]["placebos"].as_array().unwrap().len(), 2);
    assert_eq!(v["result"]["sensitivity"].as_array().unwrap().len(), 2);
    assert_eq!(run(&["falsify", "--input", i]).status.code(), Some(2));

    let svg = d.path().join("p.svg");
    let csv = d.path().join("p.csv");
    let o = run(&[
        "plot",
        "--input",
        i,
        "--bins",
        "10,12",
        "--poly",
        "3",
        "--svg-out",
        svg.to_str().unwrap(),
        "--out-csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
    assert_eq!(std::fs::read_to_string(csv).unwrap().lines().count(), 1 + 22);
}

#[test]
fn local_polynomial_subcommand() {
    let d = TempDir::new().unwrap();
    let input = sharp_csv(d.path(), 400, 10);
    let out = d.path().join("lp.json");
    let o = run(&[
        "lp",
        "--input",
        input.to_str().unwrap(),
        "--h",
        "0.5",
        "--out-json",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o).1);
    assert!(json(&out)["result"]["estimate"].is_number());
}
