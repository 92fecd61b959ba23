use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpgd_cli::{execute, parse_config, Command as Cmd};

const SMALL: &str = "problem.n_r = 6\nproblem.n_theta = 16\nproblem.rays_per_angle = 8\nsolver.iters = 40\n";

fn gpgd(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpgd"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    (header, lines.map(|l| l.split(',').map(String::from).collect()).collect())
}

#[test]
fn run_writes_traces_and_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = gpgd(&["run"], &write_config(tmp.path(), SMALL), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["certificate.txt", "group_pgd.csv", "pgd.csv"]);

    let (header, rows) = csv_rows(&std::fs::read_to_string(out.join("pgd.csv")).unwrap());
    assert_eq!(header, ["iter", "rmsd", "rmsd_normalized", "objective"]);
    assert_eq!(rows.len(), 41);
    let (header, rows) = csv_rows(&std::fs::read_to_string(out.join("group_pgd.csv")).unwrap());
    assert_eq!(header, ["iter", "rmsd", "rmsd_normalized", "objective", "bound", "action_index"]);
    // 17 significant digits
    let mantissa = rows[3][1].split('e').next().unwrap();
    assert_eq!(mantissa.replace('.', "").trim_start_matches('-').len(), 17);
    for r in &rows {
        assert!(r[1].parse::<f64>().unwrap() <= r[4].parse::<f64>().unwrap() * 3.0);
    }
}

#[test]
fn certify_reports_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = gpgd(&["certify"], &write_config(tmp.path(), &format!("{SMALL}subset.radius = 2\n")), &out);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("eps_Gstar = 0.0000000000000000e0"), "{text}");
    assert!(text.contains("mu_Gstar.exactness = exact"));

    let o = gpgd(&["certify"], &write_config(tmp.path(), &format!("{SMALL}subset.radius = 0\n")), &out);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("mu_Gstar = 0.0000000000000000e0"), "{text}");
    assert!(text.contains("alpha_Gstar = 1.0000000000000000e0"));
    assert!(text.contains("bound vacuous"));
}

#[test]
fn certify_matches_dense_recomputation() {
    let config = parse_config(SMALL, "small").unwrap();
    let p = gpgd::bench::build_problem(&config.problem).unwrap();
    let subset = p.geometry.subset(p.geometry.coverage_radius());
    let stack = gpgd::certificate::symmetric_stack(&p.a, &subset).unwrap();
    let mu = gpgd::linop::gram_dense(&stack).unwrap().symmetric_eigenvalues().unwrap()[0];
    let l = *gpgd::linop::gram_dense(&p.a).unwrap().symmetric_eigenvalues().unwrap().last().unwrap();
    let printed = execute(Cmd::Certify, &config).unwrap().stdout;
    let alpha: f64 = printed
        .lines()
        .find_map(|l| l.strip_prefix("alpha_Gstar = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(alpha < 1.0);
    assert!((alpha - (1.0 - mu / l).sqrt()).abs() <= 1e-9);
}

#[test]
fn compare_columns_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let text = format!("{SMALL}solver.seeds = 20\n");
    let o = gpgd(&["compare"], &write_config(tmp.path(), &text.replace("solver.iters = 40", "solver.iters = 60")), &out);
    assert!(o.status.success());
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.starts_with("iterations to rmsd <= "), "{summary}");
    let (header, rows) = csv_rows(&std::fs::read_to_string(out.join("compare.csv")).unwrap());
    assert_eq!(header, ["iter", "pgd_mean_rmsd", "group_mean_rmsd", "bound"]);
    let slack = 1.0 + 2.0 / 20f64.sqrt();
    for r in &rows {
        let group: f64 = r[2].parse().unwrap();
        let bound: f64 = r[3].parse().unwrap();
        assert!(group <= bound * slack, "{r:?}");
    }

    let zero = parse_config(&format!("{SMALL}solver.iters = 0\n").replace("solver.iters = 40\n", ""), "z").unwrap();
    let outputs = execute(Cmd::Compare, &zero).unwrap();
    let (_, rows) = csv_rows(&outputs.files[0].1);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1], rows[0][2]);
    assert_eq!(rows[0][1], rows[0][3]);
}

#[test]
fn textured_radius_two_beats_pgd() {
    let text = "problem.n_r = 8\nproblem.n_theta = 32\nproblem.rays_per_angle = 10\nproblem.phantom = textured\n\
                problem.phantom.seed = 2\nsubset.radius = 2\nsolver.iters = 300\nsolver.seeds = 5\n";
    let config = parse_config(text, "t").unwrap();
    let stdout = execute(Cmd::Run, &config).unwrap().stdout;
    let values: Vec<f64> = stdout
        .trim()
        .split(" = ")
        .skip(1)
        .map(|s| s.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(values[1] < values[0], "{stdout}");
}

#[test]
fn phantom_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = gpgd(&["phantom"], &write_config(tmp.path(), SMALL), &out);
    assert!(o.status.success());
    let pgm = std::fs::read_to_string(out.join("phantom.pgm")).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("16 6"));
    assert_eq!(lines.next(), Some("255"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let values: Vec<&str> = row.split(' ').collect();
        assert_eq!(values.len(), 16);
        assert!(values.iter().all(|v| *v == values[0]), "ring rows are constant in angle");
    }

    let config = parse_config(SMALL, "s").unwrap();
    let source = config.problem.phantom().unwrap();
    let csv = std::fs::read_to_string(out.join("phantom.csv")).unwrap();
    let parsed: Vec<f64> = csv.lines().flat_map(|l| l.split(',')).map(|v| v.parse().unwrap()).collect();
    assert_eq!(parsed.len(), source.len());
    assert!(parsed.iter().zip(&source).all(|(a, b)| (a - b).abs() <= 1e-15));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let o = gpgd(&["run"], &write_config(tmp.path(), "problem.n_r = 6\nproblem.bogus = 1\n"), &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exp.cfg:2:"));
    assert!(!out.exists(), "nothing is written on failure");

    let big = "problem.n_r = 64\nproblem.n_theta = 128\nproblem.rays_per_angle = 2\n";
    let o = gpgd(&["certify"], &write_config(tmp.path(), big), &out);
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists());

    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = gpgd(&["phantom"], &write_config(tmp.path(), SMALL), &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(5));

    let o = gpgd(&["run"], &tmp.path().join("missing.cfg"), &out);
    assert_eq!(o.status.code(), Some(1));
}
