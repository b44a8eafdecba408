use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn vextrap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vextrap"))
        .current_dir(dir)
        .env_remove("VEXTRAP_OUTPUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("T.mtx"), "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 0.5\n2 2 0.25\n").unwrap();
    fs::write(p.join("d.vec"), "0.5\n0.75\n").unwrap();
    fs::write(p.join("seq.txt"), "0 0 0\n1 0 0\n2 1 0\n").unwrap();
    fs::write(p.join("w.txt"), "1\n2\n0.5\n").unwrap();
    dir
}

#[test]
fn accelerate_linear_writes_one_record_per_stage() {
    let dir = workspace();
    let p = dir.path();
    fs::write(
        p.join("T4.mtx"),
        "%%MatrixMarket matrix coordinate real general\n4 4 5\n1 1 0.5\n2 2 0.25\n3 3 -0.3\n4 4 0.1\n2 1 0.2\n",
    )
    .unwrap();
    fs::write(p.join("d4.vec"), "1 1 1 1\n").unwrap();
    let o = vextrap(
        p,
        &["accelerate", "--linear", "T4.mtx", "d4.vec", "--x0", "zero", "--iters", "10", "--k-max", "3", "--methods", "both"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("history.json")).unwrap()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), 4);
    assert_eq!(json["format"], "vextrap-history");
    let csv = fs::read_to_string(p.join("history.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,phi_mpe,phi_rre"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn accelerate_weighted_sequence_and_stagnation_row() {
    let dir = workspace();
    let o = vextrap(dir.path(), &["accelerate", "--sequence", "seq.txt", "--k-max", "1", "--weight", "identity"]);
    assert_eq!(o.status.code(), Some(0));
    let row = stdout(&o).lines().find(|l| l.trim_start().starts_with("1 ")).unwrap().to_string();
    assert!(row.contains(" - "), "{row}");
    assert!(row.contains("(stagnated)"), "{row}");

    // any diagonal weight keeps e_0 and e_1 orthogonal, so MPE still fails
    let o = vextrap(dir.path(), &["accelerate", "--sequence", "seq.txt", "--weight", "diag:w.txt", "--k-max", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("(stagnated)"));

    // a dense weight coupling them does not
    fs::write(
        dir.path().join("m.mtx"),
        "%%MatrixMarket matrix coordinate real symmetric\n3 3 4\n1 1 2\n2 1 1\n2 2 2\n3 3 1\n",
    )
    .unwrap();
    let o = vextrap(dir.path(), &["accelerate", "--sequence", "seq.txt", "--weight", "dense:m.mtx", "--k-max", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!stdout(&o).contains("(stagnated)"));
}

#[test]
fn accelerate_is_byte_deterministic() {
    let dir = workspace();
    let args = ["accelerate", "--linear", "T.mtx", "d.vec", "--k-max", "2", "--format", "json"];
    let mut outputs = Vec::new();
    for name in ["a.json", "b.json"] {
        let mut a = args.to_vec();
        a.extend(["--output", name]);
        assert_eq!(vextrap(dir.path(), &a).status.code(), Some(0));
        outputs.push(fs::read(dir.path().join(name)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn output_dir_from_environment() {
    let dir = workspace();
    let out = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_vextrap"))
        .current_dir(dir.path())
        .env("VEXTRAP_OUTPUT_DIR", &out)
        .args(["accelerate", "--sequence", "seq.txt", "--k-max", "1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("history.json").exists());
}

#[test]
fn error_exit_codes() {
    let dir = workspace();
    let p = dir.path();
    assert_eq!(vextrap(p, &["accelerate", "--sequence", "missing.txt"]).status.code(), Some(2));
    fs::write(p.join("bad.txt"), "0 0\n1 x\n").unwrap();
    let o = vextrap(p, &["accelerate", "--sequence", "bad.txt", "--k-max", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.txt:2:3"), "{}", stderr(&o));
    // four iterates cannot feed k_max = 4
    let o = vextrap(p, &["accelerate", "--sequence", "seq.txt", "--k-max", "4"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("extrapolation"));
    fs::write(p.join("d3.vec"), "1 2 3\n").unwrap();
    let o = vextrap(p, &["accelerate", "--linear", "T.mtx", "d3.vec"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(vextrap(p, &["accelerate"]).status.code(), Some(2));
    assert_eq!(vextrap(p, &["accelerate", "--sequence", "seq.txt", "--tau-exist", "-1"]).status.code(), Some(2));
}

#[test]
fn verify_relations_exit_codes() {
    let dir = workspace();
    let p = dir.path();
    let o = vextrap(p, &["verify-relations", "--linear", "T.mtx", "d.vec", "--k-max", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("relations.json")).unwrap()).unwrap();
    assert!(report["entries"][1]["phi_coupling"].as_f64().unwrap() < 1e-9);

    let o = vextrap(p, &["verify-relations", "--sequence", "seq.txt", "--k-max", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("n/a"));
}

#[test]
fn corrupted_history_fails_phi_coupling() {
    let dir = workspace();
    let p = dir.path();
    let o = vextrap(p, &["accelerate", "--linear", "T.mtx", "d.vec", "--k-max", "1", "--output", "h.json"]);
    assert_eq!(o.status.code(), Some(0));
    let o = vextrap(p, &["verify-relations", "--history", "h.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("h.json")).unwrap()).unwrap();
    let phi = json["records"][1]["phi_rre"].as_f64().unwrap();
    json["records"][1]["phi_rre"] = serde_json::json!(phi * 0.9);
    fs::write(p.join("bad.json"), serde_json::to_string_pretty(&json).unwrap()).unwrap();
    let o = vextrap(p, &["verify-relations", "--history", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("phi_coupling at k = 1"), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL: worst"));
}

#[test]
fn krylov_compare_codes() {
    let dir = workspace();
    let p = dir.path();
    let o = vextrap(p, &["krylov-compare", "--linear", "T.mtx", "d.vec", "--k-max", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(vextrap(p, &["krylov-compare", "--nonlinear", "cosine", "--dim", "3"]).status.code(), Some(4));
    assert_eq!(vextrap(p, &["krylov-compare", "--sequence", "seq.txt"]).status.code(), Some(4));
}

#[test]
fn krylov_compare_random_sparse() {
    use rand::{Rng, SeedableRng};
    let dir = workspace();
    let p = dir.path();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(30);
    let n = 30;
    let mut entries = Vec::new();
    for i in 1..=n {
        entries.push(format!("{i} {i} {}", rng.random_range(-0.5..0.5)));
        for _ in 0..2 {
            let j = rng.random_range(1..=n);
            if j != i {
                entries.push(format!("{i} {j} {}", rng.random_range(-0.2..0.2)));
            }
        }
    }
    let mtx = format!("%%MatrixMarket matrix coordinate real general\n{n} {n} {}\n{}\n", entries.len(), entries.join("\n"));
    fs::write(p.join("S.mtx"), mtx).unwrap();
    let d: Vec<String> = (0..n).map(|i| format!("{}", 1.0 + 0.1 * i as f64)).collect();
    fs::write(p.join("s.vec"), d.join("\n")).unwrap();
    let o = vextrap(p, &["krylov-compare", "--linear", "S.mtx", "s.vec", "--k-max", "6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn qr_subcommand() {
    let dir = workspace();
    let p = dir.path();
    fs::write(p.join("A.mtx"), "%%MatrixMarket matrix array real general\n3 2\n1\n2\n2\n0\n1\n1\n").unwrap();
    let o = vextrap(p, &["qr", "A.mtx", "--check", "--weight", "diag:w.txt"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Q*MQ deviation"));
    let q = fs::read_to_string(p.join("Q.mtx")).unwrap();
    assert!(q.starts_with("%%MatrixMarket matrix array real general\n3 2\n"));
    assert!(p.join("R.mtx").exists());

    fs::write(p.join("D.mtx"), "%%MatrixMarket matrix array real general\n3 2\n1\n2\n3\n2\n4\n6\n").unwrap();
    let o = vextrap(p, &["qr", "D.mtx", "--method", "gs"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).contains("detected k0 = 1"));
}
