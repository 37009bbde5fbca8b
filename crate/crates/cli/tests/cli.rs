mod common;

use std::fs;
use std::path::Path;

use common::{compare_texts, golden_dir, run_cli};
use frobenius_cli::leafcsv::read_leaf;

fn golden(name: &str) -> String {
    golden_dir().join(name).to_string_lossy().into_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

/// Drop lines whose value is pure roundoff (residuals of an exact critical point).
fn without_keys(text: &str, keys: &[&str]) -> String {
    text.lines()
        .filter(|l| !keys.iter().any(|k| l.starts_with(&format!("{k} = "))))
        .collect::<Vec<_>>()
        .join("\n")
}

fn problem(dir: &tempfile::TempDir, name: &str, body: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn circle_leaf_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("leaf.csv");
    let (code, out, err) = run_cli(&["leaf", "--input", &golden("circle_leaf.problem"), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    compare_texts(&read(golden("circle_leaf.report")), &out, 1e-9).unwrap();
    compare_texts(&read(golden("circle_leaf.csv")), &read(&csv), 1e-9).unwrap();
    assert!(out.contains("level_ok = true"));
}

#[test]
fn diag_perturbation_matches_golden() {
    let (code, out, err) = run_cli(&["perturb", "--input", &golden("diag_geninv.problem")]);
    assert_eq!(code, 0, "{err}");
    compare_texts(&read(golden("diag_geninv.report")), &out, 1e-9).unwrap();
    for c in ["i", "ii", "iii", "iv", "v", "vi", "vii"] {
        assert!(out.contains(&format!("condition_{c} = true\n")), "condition {c}");
    }
}

#[test]
fn rankchart_and_critcheck_match_golden() {
    let (code, out, _) = run_cli(&["rankchart", "--input", &golden("diag_rankchart.problem")]);
    assert_eq!(code, 0);
    compare_texts(&read(golden("diag_rankchart.report")), &out, 1e-9).unwrap();

    let (code, out, _) = run_cli(&["critcheck", "--input", &golden("eckart_young.problem")]);
    assert_eq!(code, 0);
    let noise = ["residual", "residual_ratio"];
    compare_texts(&without_keys(&read(golden("eckart_young.report")), &noise), &without_keys(&out, &noise), 1e-9).unwrap();
    assert!(out.contains("critical = true"));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &str); 5] = [
        ("geninv", "diag_geninv.problem"),
        ("perturb", "diag_geninv.problem"),
        ("leaf", "sphere_leaf.problem"),
        ("rankchart", "diag_rankchart.problem"),
        ("critcheck", "eckart_young.problem"),
    ];
    for (cmd, file) in cases {
        let runs: Vec<(String, String)> = (0..2)
            .map(|i| {
                let csv = dir.path().join(format!("{cmd}{i}.csv"));
                let mut args = vec![cmd, "--input", file, "--seed", "42"];
                let input = golden(file);
                args[2] = &input;
                let csv_s = csv.to_string_lossy().into_owned();
                if cmd == "leaf" {
                    args.extend(["--csv", &csv_s]);
                }
                let (code, out, err) = run_cli(&args);
                assert_eq!(code, 0, "{cmd}: {err}");
                (out, if cmd == "leaf" { read(&csv) } else { String::new() })
            })
            .collect();
        assert_eq!(runs[0], runs[1], "{cmd} is not deterministic");
    }
}

#[test]
fn parallel_leaf_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let input = golden("sphere_leaf.problem");
    assert_eq!(run_cli(&["leaf", "--input", &input, "--csv", a.to_str().unwrap()]).0, 0);
    assert_eq!(run_cli(&["leaf", "--input", &input, "--csv", b.to_str().unwrap(), "--parallel"]).0, 0);
    assert_eq!(read(a), read(b));
}

#[test]
fn malformed_matrix_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(&dir, "bad.problem", "version = v1\nkind = geninv\n\n[matrix A]\n2 2\n1 0\n0 x\n");
    let (code, out, err) = run_cli(&["geninv", "--input", &p]);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(err.contains("bad.problem:7"), "{err}");
}

#[test]
fn short_matrix_and_unknown_keys_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let short = problem(&dir, "short.problem", "version = v1\nkind = geninv\n[matrix A]\n3 2\n1 0\n0 1\n");
    assert_eq!(run_cli(&["geninv", "--input", &short]).0, 2);
    let unknown = problem(&dir, "unknown.problem", "version = v1\nkind = leaf\n[params]\nfamliy = circle\n");
    let (code, _, err) = run_cli(&["leaf", "--input", &unknown]);
    assert_eq!(code, 2, "{err}");
    assert_eq!(run_cli(&["leaf", "--input", &golden("diag_geninv.problem")]).0, 2);
    assert_eq!(run_cli(&["geninv", "--input", "/nonexistent.problem"]).0, 2);
    assert_eq!(run_cli(&["geninv"]).0, 2);
}

#[test]
fn identity_is_its_own_inverse() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(&dir, "id.problem", "version = v1\nkind = geninv\n[matrix A]\n3 3\n1 0 0\n0 1 0\n0 0 1\n");
    let (code, out, _) = run_cli(&["geninv", "--input", &p]);
    assert_eq!(code, 0);
    assert!(out.contains("rank = 3\n"));
    let block = out.split("[matrix A_plus]\n").nth(1).unwrap();
    let rows: Vec<Vec<f64>> =
        block.lines().skip(1).take(3).map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect()).collect();
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn divergent_leaf_writes_a_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        &dir,
        "blowup.problem",
        "version = v1\nkind = leaf\n[params]\nfamily = polynomial\nbase = 0 0\nextent = 100\nstep = 0.5\nnodes = 4\n[polynomial]\n1 0 1\n-1 200 0\n",
    );
    let csv = dir.path().join("leaf.csv");
    let (code, out, err) = run_cli(&["leaf", "--input", &p, "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(out.contains("status = partial"));
    let text = read(&csv);
    assert!(text.starts_with("# status=partial\n"));
    let back = read_leaf(text.as_bytes()).unwrap();
    assert!(!back.leaf.complete);
}

#[test]
fn csv_round_trips() {
    let csv = read(golden("circle_leaf.csv"));
    let back = read_leaf(csv.as_bytes()).unwrap();
    assert!(back.leaf.complete);
    assert_eq!(back.leaf.len(), 21);
    let mut again = Vec::new();
    frobenius_cli::leafcsv::write_leaf(&mut again, &back.leaf, &back.level_residuals).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), csv);
}

#[test]
fn flat_polynomial_gives_a_constant_leaf() {
    // f(x, y, z) = z: every leaf is a horizontal plane, so psi never moves.
    let dir = tempfile::tempdir().unwrap();
    let p = problem(
        &dir,
        "plane.problem",
        "version = v1\nkind = leaf\n[params]\nfamily = polynomial\nbase = 0.3 -0.2 0.7\nextent = 0.5\nnodes = 3\n[polynomial]\n1 0 0 1\n",
    );
    let csv = dir.path().join("leaf.csv");
    let (code, _, err) = run_cli(&["leaf", "--input", &p, "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let back = read_leaf(read(&csv).as_bytes()).unwrap();
    assert_eq!(back.leaf.len(), 49);
    let psi0 = back.leaf.psi[0][0];
    assert!(back.leaf.psi.iter().all(|p| (p[0] - psi0).abs() <= 1e-14));
    assert!(back.level_residuals.iter().all(|r| *r <= 1e-14));
}

#[test]
fn sphere_leaf_stays_on_the_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("leaf.csv");
    let (code, out, _) = run_cli(&["leaf", "--input", &golden("sphere_leaf.problem"), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("level_ok = true"));
    let back = read_leaf(read(&csv).as_bytes()).unwrap();
    assert!(back.level_residuals.iter().all(|r| *r <= 1e-8));
    for i in 0..back.leaf.len() {
        assert!((back.leaf.point(i).norm() - 1.0).abs() <= 1e-8);
    }
}

#[test]
fn command_line_overrides_the_file() {
    let input = golden("circle_leaf.problem");
    let (code, out, _) = run_cli(&["leaf", "--input", &input, "--step", "0.01", "--extent", "0.5"]);
    assert_eq!(code, 0);
    assert!(out.contains("step = 1.0000000000000000e-2\n"));
    assert!(out.contains("extent = 5.0000000000000000e-1\n"));
}
