use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn beamtrack(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamtrack"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env_remove("BEAMTRACK_THREADS")
        .output()
        .expect("spawn beamtrack")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines
        .next()
        .unwrap()
        .split(',')
        .position(|h| h == name)
        .unwrap();
    lines
        .map(|l| l.split(',').nth(idx).unwrap().to_string())
        .collect()
}

#[test]
fn build_lut_has_one_row_per_sigma_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = beamtrack(dir.path(), &["build-lut"]);
    ok(&out);
    let first = fs::read(dir.path().join("lut.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data[0], "sigma_p,separation_bins,class_i,class_j");
    assert_eq!(data.len(), 6);
    assert!(dir.path().join("build-lut.manifest.json").exists());

    ok(&beamtrack(dir.path(), &["build-lut"]));
    assert_eq!(fs::read(dir.path().join("lut.csv")).unwrap(), first);
}

#[test]
fn malformed_config_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"schema_version": 1, "trials": "lots"}"#);
    let out = beamtrack(dir.path(), &["build-lut", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trials"), "{err}");
    assert!(!dir.path().join("lut.csv").exists());

    let cfg = write_config(dir.path(), r#"{"sigma_pp": 0.1}"#);
    let out = beamtrack(dir.path(), &["track", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_pp"));

    let cfg = write_config(dir.path(), r#"{"horizon": 0}"#);
    let out = beamtrack(dir.path(), &["track", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizon"));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_beamtrack"))
        .args(["build-lut", "--out-dir"])
        .arg(dir.path())
        .env("BEAMTRACK_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn track_all_schemes_share_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    ok(&beamtrack(
        dir.path(),
        &[
            "track",
            "--scheme",
            "all",
            "--horizon",
            "100",
            "--snr-db",
            "10",
        ],
    ));
    let files = [
        "trace_proposed.csv",
        "trace_beam_cycling_32.csv",
        "trace_fixed_pair_5.csv",
    ];
    let texts: Vec<String> = files
        .iter()
        .map(|f| fs::read_to_string(dir.path().join(f)).unwrap())
        .collect();
    for t in &texts {
        assert_eq!(t.lines().count(), 101);
        assert_eq!(
            t.lines().next().unwrap(),
            "t,true_aod,est_aod,abs_err,oow_flag,beam_i,beam_j"
        );
    }
    let truth = column(&texts[0], "true_aod");
    assert_eq!(truth, column(&texts[1], "true_aod"));
    assert_eq!(truth, column(&texts[2], "true_aod"));
    let manifest = fs::read_to_string(dir.path().join("track.manifest.json")).unwrap();
    for f in files {
        assert!(manifest.contains(f));
    }
}

#[test]
fn seed_changes_data_not_schema() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&beamtrack(
        a.path(),
        &["track", "--scheme", "proposed", "--horizon", "20"],
    ));
    ok(&beamtrack(
        b.path(),
        &[
            "track",
            "--scheme",
            "proposed",
            "--horizon",
            "20",
            "--seed",
            "99",
        ],
    ));
    let ta = fs::read_to_string(a.path().join("trace_proposed.csv")).unwrap();
    let tb = fs::read_to_string(b.path().join("trace_proposed.csv")).unwrap();
    assert_eq!(ta.lines().next(), tb.lines().next());
    assert_eq!(ta.lines().count(), tb.lines().count());
    assert_ne!(ta, tb);
}

#[test]
fn mse_sweep_rows_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "mse-sweep",
        "--trials",
        "20",
        "--horizon",
        "20",
        "--snr-db",
        "0,5,10,15,20",
    ];
    ok(&beamtrack(dir.path(), &args));
    let first = fs::read_to_string(dir.path().join("mse_report.csv")).unwrap();
    assert_eq!(first.lines().count(), 16);
    let schemes = column(&first, "scheme");
    let beams = column(&first, "beams_per_cycle");
    for (s, b) in schemes.iter().zip(&beams) {
        match s.as_str() {
            "proposed" | "fixed_pair_5" => assert_eq!(b, "2"),
            "beam_cycling_32" => assert_eq!(b, "32"),
            other => panic!("unexpected scheme {other}"),
        }
    }
    ok(&beamtrack(dir.path(), &args));
    assert_eq!(
        fs::read_to_string(dir.path().join("mse_report.csv")).unwrap(),
        first
    );
}

fn curve(dir: &Path, json: &str) -> Vec<(f64, Option<f64>)> {
    let cfg = write_config(dir, json);
    let out = beamtrack(dir, &["crlb-curve", "--config", &cfg]);
    ok(&out);
    let path = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .find(|l| l.contains("crlb_curve_"))
        .unwrap()
        .to_string();
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (t, c) = l.split_once(',').unwrap();
            (t.parse().unwrap(), c.parse().ok())
        })
        .collect()
}

#[test]
fn crlb_curve_symmetry_and_noise_scaling() {
    let dir = tempfile::tempdir().unwrap();
    // full-aperture beams two bins either side of 0
    let base = curve(
        dir.path(),
        r#"{"crlb_curve": {"beam_i": 94, "beam_j": 98, "noise_var": 0.05, "points": 1536}}"#,
    );
    let doubled = curve(
        dir.path(),
        r#"{"crlb_curve": {"beam_i": 94, "beam_j": 98, "noise_var": 0.1, "points": 1536}}"#,
    );
    assert_eq!(base.len(), 1536);
    for k in 1..1536 {
        let (t, v) = base[k];
        let (tm, vm) = base[1536 - k];
        assert!((t + tm).abs() < 1e-12);
        match (v, vm) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9 * a.max(b), "{t}: {a} vs {b}"),
            (None, None) => {}
            _ => panic!("asymmetric deficit at {t}"),
        }
        match (v, doubled[k].1) {
            (Some(a), Some(b)) => assert!((b / a - 2.0).abs() < 1e-9),
            (None, None) => {}
            _ => panic!("deficit changed with noise at {t}"),
        }
    }
}

#[test]
fn crlb_curve_minimum_lies_between_the_optimal_beams() {
    let dir = tempfile::tempdir().unwrap();
    let points = curve(dir.path(), r#"{"sigma_p": 0.05}"#);
    let (theta_min, _) = points
        .iter()
        .filter_map(|&(t, c)| c.map(|c| (t, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let lut = {
        ok(&beamtrack(dir.path(), &["build-lut"]));
        fs::read_to_string(dir.path().join("lut.csv")).unwrap()
    };
    let sep: f64 = lut
        .lines()
        .find(|l| l.starts_with("0.05,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let bin = 2.0 / 192.0;
    let lo = -(sep / 2.0).floor() * bin;
    let hi = lo + sep * bin;
    assert!(
        (lo - 1e-12..=hi + 1e-12).contains(&theta_min),
        "minimum at {theta_min}, beams at {lo} and {hi}"
    );
}
