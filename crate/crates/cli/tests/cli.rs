use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hodgegrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hodgegrid"))
        .args(args)
        .env("HODGEGRID_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn records(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

const PROTEIN: &str = "\
ATOM      1  N   GLY A   1       0.000   0.000   0.000  1.00  0.00           N
ATOM      2  CA  GLY A   1       1.450   0.000   0.000  1.00  0.00           C
ATOM      3  O   GLY A   1       2.100   1.000   0.000  1.00  0.00           O
";

const LIGAND: &str = "2\nligand\nC 1.0 3.0 0.5\nCl 2.2 3.8 0.5\n";

fn write_complex(dir: &Path, id: &str) {
    let d = dir.join(id);
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join(format!("{id}_protein.pdb")), PROTEIN).unwrap();
    fs::write(d.join(format!("{id}_ligand.xyz")), LIGAND).unwrap();
}

#[test]
fn ball_spectrum_reports_one_component() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ball.jsonl");
    let o = hodgegrid(&[
        "spectrum",
        "--shape",
        "ball",
        "--radius",
        "1",
        "--spacing",
        "0.125",
        "--kind",
        "big",
        "--bc",
        "normal",
        "--k",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&fs::read_to_string(&out).unwrap());
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["kernel_dim"], 1);
    assert_eq!(recs[0]["degree"], 3);
    assert_eq!(recs[0]["nonzero_eigenvalues"].as_array().unwrap().len(), 5);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ball.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "spectrum");
    assert_eq!(manifest["threads"], 1);
}

#[test]
fn spectrum_without_degree_covers_all_four() {
    let o = hodgegrid(&[
        "spectrum",
        "--shape",
        "torus",
        "--resolution",
        "17",
        "--bc",
        "tangential",
        "--eigs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kernels: Vec<u64> = records(&stdout(&o))
        .iter()
        .map(|r| r["kernel_dim"].as_u64().unwrap())
        .collect();
    assert_eq!(kernels, [1, 1, 0, 0]);
}

#[test]
fn filtration_writes_one_row_per_isovalue() {
    let o = hodgegrid(&[
        "filtration",
        "--shape",
        "ball",
        "--resolution",
        "13",
        "--isovalues",
        "-0.5:0.25:4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "isovalue,beta0,beta1,beta2,lambda_t,lambda_c,lambda_n");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("1")));
}

#[test]
fn persist_covers_every_pair() {
    let o = hodgegrid(&[
        "persist",
        "--shape",
        "ball",
        "--resolution",
        "11",
        "--isovalues",
        "-0.3,0,0.2",
        "--degrees",
        "0,3",
        "--eigs",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&stdout(&o));
    // (l, p) pairs: 3 + 2 + 1, two degrees each.
    assert_eq!(recs.len(), 12);
    assert!(recs.iter().filter(|r| r["degree"] == 3).all(|r| r["kernel_dim"] == 1));
}

#[test]
fn featurize_single_complex_has_full_width() {
    let dir = tempfile::tempdir().unwrap();
    write_complex(dir.path(), "x1");
    let out = dir.path().join("features.csv");
    let p = dir.path().join("x1/x1_protein.pdb");
    let l = dir.path().join("x1/x1_ligand.xyz");
    let o = hodgegrid(&[
        "featurize",
        "--protein",
        p.to_str().unwrap(),
        "--ligand",
        l.to_str().unwrap(),
        "--k",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 2161);
    assert!(lines[1].starts_with("x1,"));
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("features.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["details"]["row_length"], 2160);
    assert_eq!(manifest["details"]["complexes"][0]["protein"]["report"]["atoms"], 3);
}

#[test]
fn featurize_dataset_with_labels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_complex(&data, "b2");
    write_complex(&data, "a1");
    let labels = dir.path().join("affinity.csv");
    fs::write(&labels, "id,label\na1,6.5\nb2,-1.25\nzz,0\n").unwrap();
    let out = dir.path().join("rows.csv");
    let o = hodgegrid(&[
        "featurize",
        "--dataset",
        data.to_str().unwrap(),
        "--k",
        "1",
        "--labels",
        labels.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ids: Vec<String> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    assert_eq!(ids, ["a1", "b2"]);
    assert_eq!(
        fs::read_to_string(dir.path().join("rows.labels.csv")).unwrap(),
        "id,label\na1,6.5\nb2,-1.25\n"
    );
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = hodgegrid(&["spectrum", "--shape", "ball", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hodgegrid(&["spectrum", "--shape", "ball", "--edge", "3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = hodgegrid(&["filtration", "--shape", "ball", "--isovalues", "1:0:x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_file_error_naming_the_path() {
    let o = hodgegrid(&[
        "featurize",
        "--protein",
        "/nonexistent/p.pdb",
        "--ligand",
        "/nonexistent/l.mol2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/p.pdb"), "{}", stderr(&o));
}

#[test]
fn validate_subset_passes() {
    let o = hodgegrid(&["validate", "--only", "nilpotency,molecules"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 2);
    assert_eq!(hodgegrid(&["validate", "--only", "nope"]).status.code(), Some(2));
}
