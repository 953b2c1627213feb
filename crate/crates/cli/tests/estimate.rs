mod common;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use common::{arg, mpd, stderr, stdout};
use mpd_core::estimators::SolverOptions;
use mpd_core::simulation::{generate_rows, OutcomeForm, SyntheticRow};
use mpd_core::{estimate, LossModel, TuningMode, WeightedDesign};

const CONFIG: &str = r#"
alpha = 0.1

[schema]
common = ["y", "z_cov"]
expensive = ["z_trt"]
proxies = ["z_trt_proxy"]

[loss]
kind = "linear"
response = "y"
covariates = ["z_cov", "z_trt"]
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Parsed `coordinate,name,estimate,variance,std_error,lower,upper` rows.
fn parse_output(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "coordinate,name,estimate,variance,std_error,lower,upper");
    lines
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != 1).map(|(_, v)| v.parse().unwrap()).collect())
        .collect()
}

fn data_csv(rows: &[SyntheticRow], labelled: &[bool], proxy_is_truth: bool) -> String {
    let mut text = String::from("id,y,z_cov,z_trt,z_trt_proxy\n");
    for (i, (r, l)) in rows.iter().zip(labelled).enumerate() {
        let trt = if *l { r.z_trt.to_string() } else { String::new() };
        let proxy = if proxy_is_truth { r.z_trt } else { r.z_trt_proxy };
        writeln!(text, "{},{},{},{},{}", 100 + i, r.y, r.z_cov, trt, proxy).unwrap();
    }
    text
}

#[test]
fn single_uniform_wave_trace_matches_direct_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let rows = generate_rows(3000, 5, OutcomeForm::Literal);
    let pi = 0.15;
    let u: Vec<f64> = (0..rows.len()).map(|i| (i as f64 * 0.618_033_988_749_894_8).fract()).collect();
    let labelled: Vec<bool> = u.iter().map(|v| *v <= pi).collect();

    let config = write(dir.path(), "est.toml", CONFIG);
    let data = write(dir.path(), "data.csv", &data_csv(&rows, &labelled, false));
    let mut trace = String::from("id,wave,pi,u,indicator\n");
    let mut weights = String::from("id,weight\n");
    for (i, (&ui, &l)) in u.iter().zip(&labelled).enumerate() {
        writeln!(trace, "{},1,{pi},{ui},{}", 100 + i, u8::from(l)).unwrap();
        if l {
            writeln!(weights, "{},{}", 100 + i, 1.0 / pi).unwrap();
        }
    }
    let trace = write(dir.path(), "trace.csv", &trace);
    let weights = write(dir.path(), "weights.csv", &weights);

    let from_trace = mpd(&["estimate", "--config", arg(&config), "--data", arg(&data), "--trace", arg(&trace)]);
    assert!(from_trace.status.success(), "{}", stderr(&from_trace));
    let from_weights = mpd(&["estimate", "--config", arg(&config), "--data", arg(&data), "--weights", arg(&weights)]);
    assert!(from_weights.status.success(), "{}", stderr(&from_weights));
    assert_eq!(stdout(&from_trace), stdout(&from_weights));

    let mut design = WeightedDesign {
        n: rows.len(),
        labelled_full: Vec::new(),
        labelled_proxy: Vec::new(),
        weights: Vec::new(),
        all_proxy: rows.iter().map(|r| vec![r.y, r.z_cov, r.z_trt_proxy]).collect(),
    };
    for (r, &l) in rows.iter().zip(&labelled) {
        if l {
            design.labelled_full.push(vec![r.y, r.z_cov, r.z_trt]);
            design.labelled_proxy.push(vec![r.y, r.z_cov, r.z_trt_proxy]);
            design.weights.push(1.0 / pi);
        }
    }
    let loss = LossModel::linear(0, vec![1, 2], true, 3).unwrap();
    let direct = estimate(&loss, &design, &TuningMode::Optimal, None, 0.1, &SolverOptions::default()).unwrap();
    let printed = parse_output(&stdout(&from_trace));
    assert_eq!(printed.len(), 3);
    for (j, row) in printed.iter().enumerate() {
        let ci = &direct.intervals[j];
        let expected = [j as f64, ci.estimate, ci.variance, (ci.variance / 3000.0).sqrt(), ci.lower, ci.upper];
        for (got, want) in row.iter().zip(expected) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "coordinate {j}: {got} vs {want}");
        }
    }
}

/// Least squares of y on (1, z_cov, z_trt) by Cramer's rule on the normal
/// equations.
fn ols(rows: &[SyntheticRow]) -> [f64; 3] {
    let mut g = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for row in rows {
        let x = [1.0, row.z_cov, row.z_trt];
        for a in 0..3 {
            r[a] += x[a] * row.y;
            for b in 0..3 {
                g[a][b] += x[a] * x[b];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&g);
    std::array::from_fn(|c| {
        let mut m = g;
        for a in 0..3 {
            m[a][c] = r[a];
        }
        det(&m) / d
    })
}

#[test]
fn fully_labelled_exact_proxy_gives_classical_fit() {
    let dir = tempfile::tempdir().unwrap();
    let rows = generate_rows(800, 9, OutcomeForm::Literal);
    let labelled = vec![true; rows.len()];
    let config = write(dir.path(), "est.toml", CONFIG);
    let data = write(dir.path(), "data.csv", &data_csv(&rows, &labelled, true));
    let mut weights = String::from("id,weight\n");
    for i in 0..rows.len() {
        writeln!(weights, "{},1", 100 + i).unwrap();
    }
    let weights = write(dir.path(), "w.csv", &weights);
    let out = mpd(&["estimate", "--config", arg(&config), "--data", arg(&data), "--weights", arg(&weights)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let classical = ols(&rows);
    for (j, row) in parse_output(&stdout(&out)).iter().enumerate() {
        assert!((row[1] - classical[j]).abs() <= 1e-8, "coordinate {j}: {} vs {}", row[1], classical[j]);
    }
}

#[test]
fn labelled_row_without_expensive_value_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let rows = generate_rows(200, 2, OutcomeForm::Literal);
    let labelled: Vec<bool> = (0..rows.len()).map(|i| i % 4 == 0).collect();
    let config = write(dir.path(), "est.toml", CONFIG);
    let data = write(dir.path(), "data.csv", &data_csv(&rows, &labelled, false));
    let mut weights = String::from("id,weight\n");
    for i in (0..rows.len()).filter(|i| i % 4 == 0) {
        writeln!(weights, "{},4", 100 + i).unwrap();
    }
    // Row 7 (id 106) has no z_trt value.
    weights.push_str("106,4\n");
    let weights = write(dir.path(), "w.csv", &weights);
    let out = mpd(&["estimate", "--config", arg(&config), "--data", arg(&data), "--weights", arg(&weights)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("row 7"), "{}", stderr(&out));
}

#[test]
fn trace_indicator_must_match_draw() {
    let dir = tempfile::tempdir().unwrap();
    let rows = generate_rows(50, 4, OutcomeForm::Literal);
    let config = write(dir.path(), "est.toml", CONFIG);
    let data = write(dir.path(), "data.csv", &data_csv(&rows, &[true; 50], false));
    let mut trace = String::from("id,wave,pi,u,indicator\n");
    for i in 0..50 {
        writeln!(trace, "{},1,0.5,0.25,1", 100 + i).unwrap();
    }
    trace = trace.replacen("100,1,0.5,0.25,1", "100,1,0.5,0.75,1", 1);
    let trace = write(dir.path(), "t.csv", &trace);
    let out = mpd(&["estimate", "--config", arg(&config), "--data", arg(&data), "--trace", arg(&trace)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("row 1"), "{}", stderr(&out));
}

#[test]
fn weights_and_trace_are_exclusive() {
    let out = mpd(&["estimate", "--config", "c", "--data", "d", "--weights", "w", "--trace", "t"]);
    assert_eq!(out.status.code(), Some(2));
}
