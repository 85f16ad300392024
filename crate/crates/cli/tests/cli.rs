use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scalelab"));
    c.env_remove("SCALELAB_DATA_DIR")
        .env("SOURCE_DATE_EPOCH", "1700000000");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing in {text}"))
        .trim()
        .parse()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

const SYNTHETIC_TRAIN: &str = r#"
dataset = "synthetic"
alpha = 1.0
eta = 0.1
optimizer = "gd"
steps = 500
seed = 3
hidden = 100
record_every = 50
"#;

#[test]
fn calibrate_relu_limit() {
    let o = run(&["calibrate", "--beta", "1e6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!((value(&stdout(&o), "gain_quadrature") - std::f64::consts::SQRT_2).abs() < 1e-5);
}

#[test]
fn calibrate_monte_carlo_agrees() {
    let o = run(&["calibrate", "--beta", "5", "--samples", "10000000", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(value(&text, "relative_gap") < 1e-3);
    let q = value(&text, "gain_quadrature");
    let mc = value(&text, "gain_monte_carlo");
    assert!((q - mc).abs() / q < 1e-3);
}

#[test]
fn calibrate_rejects_bad_beta() {
    for beta in ["0", "-2", "nan"] {
        let o = run(&["calibrate", "--beta", beta]);
        assert_eq!(o.status.code(), Some(2), "beta {beta}");
    }
    assert_eq!(
        run(&["calibrate", "--beta", "5", "--samples", "10"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn train_fits_separable_synthetic_set() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.toml", SYNTHETIC_TRAIN);
    let out = tmp.path().join("out");
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: toml::Table = fs::read_to_string(out.join("report.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(report["train_accuracy"].as_float(), Some(1.0));
    assert_eq!(report["diverged"].as_bool(), Some(false));
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["command"].as_str(), Some("train"));
    assert_eq!(manifest["timestamp_unix"].as_integer(), Some(1_700_000_000));
    let listed = manifest["artifacts"].as_array().unwrap()[0].as_table().unwrap();
    let digest = listed["sha256"].as_str().unwrap();
    let bytes = fs::read(out.join("report.toml")).unwrap();
    let actual = {
        use sha2_free::hex_sha256;
        hex_sha256(&bytes)
    };
    assert_eq!(digest, actual);
}

/// Tiny independent SHA-256 so the manifest checksum is checked without the
/// binary's own code path.
mod sha2_free {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
        0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
        0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
        0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
        0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
    ];

    pub fn hex_sha256(data: &[u8]) -> String {
        let mut h: [u32; 8] = [
            0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
        ];
        let mut msg = data.to_vec();
        msg.push(0x80);
        while msg.len() % 64 != 56 {
            msg.push(0);
        }
        msg.extend_from_slice(&((data.len() as u64) * 8).to_be_bytes());
        for block in msg.chunks(64) {
            let mut w = [0u32; 64];
            for i in 0..16 {
                w[i] = u32::from_be_bytes(block[4 * i..4 * i + 4].try_into().unwrap());
            }
            for i in 16..64 {
                let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
                let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
                w[i] = w[i - 16].wrapping_add(s0).wrapping_add(w[i - 7]).wrapping_add(s1);
            }
            let mut v = h;
            for i in 0..64 {
                let s1 = v[4].rotate_right(6) ^ v[4].rotate_right(11) ^ v[4].rotate_right(25);
                let ch = (v[4] & v[5]) ^ (!v[4] & v[6]);
                let t1 = v[7]
                    .wrapping_add(s1)
                    .wrapping_add(ch)
                    .wrapping_add(K[i])
                    .wrapping_add(w[i]);
                let s0 = v[0].rotate_right(2) ^ v[0].rotate_right(13) ^ v[0].rotate_right(22);
                let maj = (v[0] & v[1]) ^ (v[0] & v[2]) ^ (v[1] & v[2]);
                let t2 = s0.wrapping_add(maj);
                v = [
                    t1.wrapping_add(t2),
                    v[0],
                    v[1],
                    v[2],
                    v[3].wrapping_add(t1),
                    v[4],
                    v[5],
                    v[6],
                ];
            }
            for (a, b) in h.iter_mut().zip(v) {
                *a = a.wrapping_add(b);
            }
        }
        h.iter().map(|x| format!("{x:08x}")).collect()
    }

    #[test]
    fn known_vector() {
        assert_eq!(
            hex_sha256(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

#[test]
fn modified_rmsprop_at_unit_alpha_reports_like_rmsprop() {
    let tmp = TempDir::new().unwrap();
    let mut reports = Vec::new();
    for opt in ["rmsprop", "modified_rmsprop"] {
        let cfg = write(
            tmp.path(),
            &format!("{opt}.toml"),
            &SYNTHETIC_TRAIN
                .replace("\"gd\"", &format!("\"{opt}\""))
                .replace("eta = 0.1", "eta = 0.001")
                .replace("steps = 500", "steps = 100"),
        );
        let out = tmp.path().join(opt);
        let o = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(fs::read(out.join("report.toml")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_dataset_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        "dataset = \"mnist\"\ndataset_dir = \"nowhere/mnist\"\nalpha = 1.0\neta = 0.1\noptimizer = \"gd\"\nsteps = 1\nseed = 0\nhidden = 4\n",
    );
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere/mnist"), "{}", stderr(&o));

    let o = run(&[
        "train",
        "--config",
        tmp.path().join("absent.toml").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.toml"));
}

#[test]
fn unknown_keys_are_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        &format!("{SYNTHETIC_TRAIN}lerning_rate = 0.1\n"),
    );
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lerning_rate"), "{}", stderr(&o));

    let cfg = write(
        tmp.path(),
        "sweep_in_train.toml",
        &format!("{SYNTHETIC_TRAIN}log10_etas = [0.0]\n"),
    );
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mnist_run_checks_checksums_and_leaves_data_untouched() {
    let data = mnist_dir();
    let files: Vec<PathBuf> = fs::read_dir(&data).unwrap().map(|e| e.unwrap().path()).collect();
    let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();

    let tmp = TempDir::new().unwrap();
    let base = "dataset = \"mnist\"\nsubsample = 50\nalpha = 1.0\neta = 1.0\noptimizer = \"gd\"\nsteps = 2\nseed = 0\nhidden = 4\n";
    let cfg = write(tmp.path(), "run.toml", base);
    let out = tmp.path().join("o");
    // the directory comes from the environment when neither flag nor config names it
    let o = bin()
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .env("SCALELAB_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: toml::Table = fs::read_to_string(out.join("manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let listed = manifest["dataset_files"].as_array().unwrap();
    assert_eq!(listed.len(), 4);
    let sums: Vec<String> = listed
        .iter()
        .map(|f| f.as_table().unwrap()["sha256"].as_str().unwrap().to_string())
        .collect();
    for (entry, sum) in listed.iter().zip(&sums) {
        let path = entry.as_table().unwrap()["path"].as_str().unwrap();
        assert_eq!(&sha2_free::hex_sha256(&fs::read(path).unwrap()), sum);
    }

    let pinned = format!("{base}dataset_sha256 = {:?}\n", sums);
    let cfg = write(tmp.path(), "pinned.toml", &pinned);
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dataset-dir",
        data.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut wrong = sums.clone();
    wrong[2] = "0".repeat(64);
    let cfg = write(
        tmp.path(),
        "wrong.toml",
        &format!("{base}dataset_sha256 = {:?}\n", wrong),
    );
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dataset-dir",
        data.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checksum mismatch"), "{}", stderr(&o));

    let after: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn relative_dataset_dir_resolves_against_config() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir(&data).unwrap();
    for f in fs::read_dir(mnist_dir()).unwrap() {
        let f = f.unwrap();
        fs::copy(f.path(), data.join(f.file_name())).unwrap();
    }
    let cfgdir = tmp.path().join("configs");
    fs::create_dir(&cfgdir).unwrap();
    let cfg = write(
        &cfgdir,
        "run.toml",
        "dataset = \"mnist\"\ndataset_dir = \"../data\"\nsubsample = 20\nalpha = 1.0\neta = 1.0\noptimizer = \"gd\"\nsteps = 1\nseed = 0\nhidden = 3\n",
    );
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

const SWEEP: &str = r#"
dataset = "synthetic"
synthetic_n = 30
synthetic_eval_n = 30
optimizer = "gd"
steps = 20
seed = 3
hidden = 8
log10_etas = [-1.0, 1.0, 4.0]
log10_alphas = [-2.0, 0.0, 2.0]
"#;

fn pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let header_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(2)
        .unwrap()
        .0;
    let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
    let parts: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(parts[0], "P5");
    assert_eq!(parts[3], "255");
    (
        parts[1].parse().unwrap(),
        parts[2].parse().unwrap(),
        bytes[header_end + 1..].to_vec(),
    )
}

#[test]
fn sweep_writes_grid_heatmaps_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "sweep.toml", SWEEP);
    let outs = [tmp.path().join("a"), tmp.path().join("b")];
    for (out, threads) in outs.iter().zip(["1", "2"]) {
        let o = run(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(!out.join("grid.partial.csv").exists());
    }
    let csv = fs::read_to_string(outs[0].join("grid.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(
        lines[0],
        "log10_eta,log10_alpha,optimizer,train_acc,eval_acc,consistency,diverged,frozen,final_loss,steps_completed"
    );
    for name in ["grid.csv", "eval_acc.pgm", "consistency.pgm", "metadata.toml"] {
        assert_eq!(
            fs::read(outs[0].join(name)).unwrap(),
            fs::read(outs[1].join(name)).unwrap(),
            "{name}"
        );
    }

    // large η at small α diverges: row 7 is (η index 2, α index 0)
    let cells: Vec<Vec<&str>> = lines[1..].iter().map(|l| l.split(',').collect()).collect();
    assert_eq!(cells[6][6], "true");
    let (w, h, pixels) = pgm(&outs[0].join("eval_acc.pgm"));
    assert_eq!((w, h, pixels.len()), (3, 3, 9));
    // top row is the largest η; that row's first pixel is the diverged cell
    assert_eq!(pixels[0], 255);
    for (k, cell) in cells.iter().enumerate() {
        let (i, j) = (k / 3, k % 3);
        let pixel = pixels[(2 - i) * 3 + j];
        if cell[6] == "true" {
            assert_eq!(pixel, 255);
        } else {
            let acc: f64 = cell[4].parse().unwrap();
            assert_eq!(pixel, (acc * 254.0).round() as u8);
        }
    }
    let (w, h, _) = pgm(&outs[0].join("consistency.pgm"));
    assert_eq!((w, h), (3, 3));
    let meta = fs::read_to_string(outs[0].join("metadata.toml")).unwrap();
    assert!(meta.contains("shade_mapping") && meta.contains("divergence_rule"));
}

#[test]
fn sweep_rejects_per_cell_keys_and_empty_lattice() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "a.toml", &format!("{SWEEP}alpha = 2.0\n"));
    assert_eq!(
        run(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
    let cfg = write(tmp.path(), "b.toml", &SWEEP.replace("[-1.0, 1.0, 4.0]", "[]"));
    assert_eq!(
        run(&["sweep", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn gradcheck_passes_fails_and_refuses() {
    let o = run(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(value(&stdout(&o), "max_relative_error") < 1e-6);

    assert_eq!(run(&["gradcheck", "--corrupt-gradient"]).status.code(), Some(1));

    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "big.toml", "input = 100\nhidden = 50\nclasses = 3\n");
    assert_eq!(
        run(&["gradcheck", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}

fn grid_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut s = String::from(
        "log10_eta,log10_alpha,optimizer,train_acc,eval_acc,consistency,diverged,frozen,final_loss,steps_completed\n",
    );
    for (e, a, acc) in rows {
        s.push_str(&format!("{e},{a},gd,{acc},{acc},0.9,false,false,0.1,10\n"));
    }
    s
}

#[test]
fn report_slope_slice_and_errors() {
    let tmp = TempDir::new().unwrap();
    let mut rows = Vec::new();
    for e in -2i32..=2 {
        for a in -2i32..=2 {
            let acc = 1.0 / (1.0 + f64::from((e - a).abs()));
            rows.push((f64::from(e), f64::from(a), acc));
        }
    }
    let grid = write(tmp.path(), "grid.csv", &grid_csv(&rows));
    let o = run(&["report", grid.to_str().unwrap(), "--eta", "-1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!((value(&text, "ridge_slope") - 1.0).abs() < 1e-12);
    let slice: Vec<&str> = text
        .lines()
        .skip_while(|l| !l.starts_with("log10_alpha,eval_acc"))
        .skip(1)
        .collect();
    assert_eq!(slice.len(), 5);
    assert!(slice.iter().all(|l| l.split(',').count() == 6));

    let single: Vec<(f64, f64, f64)> = (0..4).map(|e| (f64::from(e), 0.0, 0.5)).collect();
    let grid = write(tmp.path(), "single.csv", &grid_csv(&single));
    let o = run(&["report", grid.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("insufficient"), "{}", stderr(&o));

    let bad = grid_csv(&rows).replacen("0.5,0.5", "0.5,zero", 1);
    let grid = write(tmp.path(), "bad.csv", &bad);
    let o = run(&["report", grid.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("row ") && err.contains("eval_acc"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn malformed_configs_fail_cleanly(text in "[a-z_ =\\[\\]0-9.\"\n-]{0,60}") {
        let tmp = TempDir::new().unwrap();
        let cfg = write(tmp.path(), "c.toml", &text);
        let out = tmp.path().join("o");
        for cmd in ["train", "sweep"] {
            let o = run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            let code = o.status.code();
            prop_assert!(code == Some(1) || code == Some(2), "{cmd} exited {code:?}: {}", stderr(&o));
        }
    }

    #[test]
    fn malformed_grids_fail_cleanly(text in "[a-z_,0-9.\n-]{0,80}") {
        let tmp = TempDir::new().unwrap();
        let grid = write(tmp.path(), "g.csv", &text);
        let code = run(&["report", grid.to_str().unwrap()]).status.code();
        prop_assert!(code == Some(1) || code == Some(2), "exited {code:?}");
    }
}
