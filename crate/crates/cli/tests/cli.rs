use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn spgravity(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spgravity")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn generate(dir: &Path) {
    let out = spgravity(&["generate", "--n", "6", "--years", "3", "--seed", "5", "--out", &s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_writes_a_loadable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    for f in ["panel.csv", "distances.csv", "schema.toml", "generator.toml", "run.toml"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let est = tmp.path().join("est");
    let out = spgravity(&["estimate", "--with-dist", "--data", &s(&data), "--out", &s(&est)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let coefficients = fs::read_to_string(est.join("coefficients.csv")).unwrap();
    assert!(coefficients.lines().any(|l| l.starts_with("dist,")));
    assert!(fs::read_to_string(est.join("report.txt")).unwrap().contains("Moran"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "countries = 4\nyears = 2\nseed = 9\n").unwrap();
    let data = tmp.path().join("data");
    let out = spgravity(&["generate", "--config", &s(&cfg), "--years", "3", "--out", &s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(data.join("panel.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 4 * 3 * 3);
    let record = fs::read_to_string(data.join("run.toml")).unwrap();
    assert!(record.contains("seed = 9") && record.contains("years = 3"));
}

#[test]
fn exit_codes_follow_the_error_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spgravity(&["generate", "--rho", "1.2", "--out", &s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: InvalidConfig: "));

    let data = tmp.path().join("data");
    generate(&data);
    let out = spgravity(&["validate", "--B", "0", "--data", &s(&data), "--out", &s(&tmp.path().join("v"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InvalidB"));

    let out = spgravity(&["estimate", "--data", &s(&tmp.path().join("missing")), "--out", &s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(3));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "sed = 1\n").unwrap();
    assert_eq!(spgravity(&["generate", "--config", &s(&bad)]).status.code(), Some(2));
    assert_eq!(spgravity(&["estimate", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn compare_rounds_on_request() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let tmp = tempfile::tempdir().unwrap();
    let out = spgravity(&[
        "compare",
        "--without",
        &s(&fixtures.join("table1_without.csv")),
        "--with",
        &s(&fixtures.join("table1_with.csv")),
        "--decimals",
        "2",
        "--out",
        &s(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(tmp.path().join("table1.txt")).unwrap();
    assert!(table.contains("1.30 (0.03)***"), "{table}");
    assert!(tmp.path().join("comparison.csv").exists());
}

#[test]
fn mrt_solve_clears_markets() {
    let tmp = tempfile::tempdir().unwrap();
    let world = tmp.path().join("world");
    fs::create_dir_all(&world).unwrap();
    fs::write(world.join("sizes.csv"), "country,output,expenditure\nA,1.0,1.2\nB,2.0,1.8\nC,1.5,1.5\n").unwrap();
    fs::write(world.join("costs.csv"), "origin,dest,cost\nA,B,2\nA,C,3\nB,A,2\nB,C,1.5\nC,A,3\nC,B,1.5\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = spgravity(&["mrt-solve", "--world", &s(&world), "--out", &s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(out_dir.join("flows.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let (o, v) = (headers.iter().position(|h| h == "origin").unwrap(), headers.len() - 1);
    let mut sums = [0.0; 3];
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let k = ["A", "B", "C"].iter().position(|c| *c == &rec[o]).unwrap();
        sums[k] += rec[v].parse::<f64>().unwrap();
    }
    for (got, want) in sums.iter().zip([1.0, 2.0, 1.5]) {
        assert!((got / want - 1.0).abs() < 1e-6, "{sums:?}");
    }
}
