mod common;

use std::fmt::Write as _;
use std::fs;

use common::toy_panel;
use nalgebra::DMatrix;
use spgravity::panel::*;
use spgravity::Error;

const CSV: &str = "origin,dest,year,flow,gdp_o,gdp_d,contig,dist
AAA,BBB,2001,1.5,1.0,2.0,1,6.2
BBB,AAA,2001,0.5,2.0,1.0,1,6.2
AAA,CCC,2001,2.5,1.0,3.0,0,7.0
CCC,AAA,2001,1.0,3.0,1.0,0,7.0
BBB,CCC,2001,0.7,2.0,3.0,0,6.8
CCC,BBB,2001,0.9,3.0,2.0,0,6.8
";

fn schema() -> CovariateSchema {
    CovariateSchema::from_toml_str("gdp_o = \"origin:size\"\ngdp_d = \"dest:size\"\ncontig = \"dyadic:cost\"\n").unwrap()
}

fn opts<'a>() -> LoadOptions<'a> {
    LoadOptions { distance_file: None, log_levels: false, diagonal: DiagonalPolicy::Reject }
}

#[test]
fn loads_a_small_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    fs::write(&path, CSV).unwrap();
    let ds: PanelDataset<f64> = load_panel(&path, &schema(), &opts()).unwrap();
    assert_eq!(ds.n(), 3);
    assert_eq!(ds.index().codes(), ["AAA", "BBB", "CCC"]);
    assert_eq!(ds.years(), [2001]);
    assert_eq!(ds.flow(2, 1, 0), 0.9);
    assert_eq!(ds.origin_value(0, 2, 0), 3.0);
    assert_eq!(ds.dest_value(1, 1, 0), 2.0);
    assert!((ds.log_distance()[(0, 2)] - 7.0).abs() < 1e-12);
    assert!((ds.distance_km()[(1, 2)] - 6.8f64.exp()).abs() < 1e-9);
    assert_eq!(ds.response(), vec![1.5, 2.5, 0.5, 0.7, 1.0, 0.9]);
}

#[test]
fn missing_cells_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    let text: String = CSV.lines().filter(|l| !l.starts_with("BBB,CCC")).map(|l| format!("{l}\n")).collect();
    fs::write(&path, text).unwrap();
    match load_panel::<f64>(&path, &schema(), &opts()) {
        Err(Error::UnbalancedPanel { missing }) => assert_eq!(missing, vec![("BBB".to_string(), "CCC".to_string(), 2001)]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    assert!(matches!(load_panel::<f64>(&path, &schema(), &opts()), Err(Error::MissingFile(_))));

    fs::write(&path, CSV.replace(",contig,", ",border,")).unwrap();
    assert!(matches!(load_panel::<f64>(&path, &schema(), &opts()), Err(Error::MissingColumn(c)) if c == "contig"));

    let dup = format!("{CSV}AAA,BBB,2001,1.5,1.0,2.0,1,6.2\n");
    fs::write(&path, dup).unwrap();
    assert!(matches!(load_panel::<f64>(&path, &schema(), &opts()), Err(Error::DuplicateObservation(..))));

    fs::write(&path, CSV.replace("CCC,AAA,2001,1.0,3.0,1.0", "CCC,AAA,2001,1.0,3.5,1.0")).unwrap();
    assert!(matches!(load_panel::<f64>(&path, &schema(), &opts()), Err(Error::RoleViolation { name, .. }) if name == "gdp_o"));

    fs::write(&path, CSV.replace("2001,0.5", "2001,-0.5")).unwrap();
    let log = LoadOptions { log_levels: true, ..opts() };
    assert!(matches!(load_panel::<f64>(&path, &schema(), &log), Err(Error::InvalidValue { column, .. }) if column == "flow"));
}

#[test]
fn distances_from_a_companion_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("panel.csv");
    let dpath = dir.path().join("dist.csv");
    let text: String = CSV.lines().map(|l| format!("{}\n", l.rsplit_once(',').unwrap().0)).collect();
    fs::write(&path, text).unwrap();
    fs::write(&dpath, "origin,dest,dist_km\nAAA,BBB,500\nAAA,CCC,1100\nCCC,BBB,900\n").unwrap();
    let o = LoadOptions { distance_file: Some(&dpath), ..opts() };
    let ds: PanelDataset<f64> = load_panel(&path, &schema(), &o).unwrap();
    assert_eq!(ds.distance_km()[(1, 2)], 900.0);
    assert_eq!(ds.distance_km()[(2, 1)], 900.0);
    assert!(matches!(load_panel::<f64>(&path, &schema(), &opts()), Err(Error::MissingColumn(c)) if c == "dist"));
    fs::write(&dpath, "origin,dest,dist_km\nAAA,BBB,500\nAAA,CCC,0\nCCC,BBB,900\n").unwrap();
    assert!(matches!(load_panel::<f64>(&path, &schema(), &o), Err(Error::NonPositiveDistance(..))));
}

#[test]
fn write_then_load_round_trips() {
    let ds = toy_panel(1, 4, 3);
    let dir = tempfile::tempdir().unwrap();
    let (p, d) = (dir.path().join("p.csv"), dir.path().join("d.csv"));
    write_panel(&ds, &p).unwrap();
    write_distances(&ds, &d).unwrap();
    let o = LoadOptions { distance_file: Some(&d), ..opts() };
    let back: PanelDataset<f64> = load_panel(&p, ds.schema(), &o).unwrap();
    assert_eq!(back.response(), ds.response());
    for c in 0..ds.schema().len() {
        assert_eq!(back.covariate_column(c), ds.covariate_column(c));
    }
    assert!((back.distance_km() - ds.distance_km()).abs().max() < 1e-9);
}

#[test]
fn smallest_panel() {
    let schema = CovariateSchema::new(vec![]).unwrap();
    let obs = vec![
        Observation { origin: 0, dest: 1, year: 1990, flow: 1.0, covariates: vec![] },
        Observation { origin: 1, dest: 0, year: 1990, flow: 2.0, covariates: vec![] },
    ];
    let d = DMatrix::from_row_slice(2, 2, &[0.0, 10.0, 10.0, 0.0]);
    let ds = PanelDataset::from_observations(CountryIndex::synthetic(2).unwrap(), vec![1990], schema, obs, d, DiagonalPolicy::Reject).unwrap();
    assert_eq!(ds.n_pairs(), 2);
    assert_eq!(ds.n_estimation_rows(), 2);
    assert_eq!(ds.response(), vec![1.0, 2.0]);
}

#[test]
fn full_grid_with_diagonal() {
    let (n, years) = (32, 22);
    let mut text = String::from("origin,dest,year,flow,dist\n");
    for t in 0..years {
        for i in 0..n {
            for j in 0..n {
                let dist = if i == j { 0.0 } else { 5.0 + (i + j) as f64 / 10.0 };
                writeln!(text, "C{i:02},C{j:02},{},{},{dist}", 1970 + t, (i * j + t) as f64 / 7.0).unwrap();
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    fs::write(&path, text).unwrap();
    let schema = CovariateSchema::new(vec![]).unwrap();
    let keep = LoadOptions { diagonal: DiagonalPolicy::Flag, ..opts() };
    let ds: PanelDataset<f64> = load_panel(&path, &schema, &keep).unwrap();
    assert_eq!(ds.n_stored_rows(), 22528);
    assert_eq!(ds.n_diagonal_rows(), 32 * 22);
    assert_eq!(ds.n_estimation_rows(), 32 * 31 * 22);
    assert_eq!(ds.diagonal_flow(3, 2), Some(11.0 / 7.0));
    assert!(matches!(load_panel::<f64>(&path, &schema, &opts()), Err(Error::InvalidValue { .. })));
}

#[test]
fn design_rows_and_dummy_orthogonality() {
    let ds = toy_panel(2, 5, 3);
    let spec = ModelSpec::without_distance(&ds);
    let design = build_design(&ds, &spec, None).unwrap();
    assert_eq!(design.n_obs(), 5 * 4 * 3);
    assert_eq!(design.absorbed, ["contig"]);
    for f in &design.factors {
        assert_eq!(f.groups.len(), design.n_obs());
        let mut counts = vec![0usize; f.n_groups];
        f.groups.iter().for_each(|&g| counts[g] += 1);
        // balanced: every level has the same number of rows
        assert!(counts.iter().all(|&c| c == counts[0] && c > 0));
    }
    // pair and time dummies: every pair meets every year exactly once
    let pair = design.factors.iter().find(|f| f.kind == FactorKind::Pair).unwrap();
    let time = design.factors.iter().find(|f| f.kind == FactorKind::Time).unwrap();
    let mut cross = vec![0usize; pair.n_groups * time.n_groups];
    for r in 0..design.n_obs() {
        cross[pair.groups[r] * time.n_groups + time.groups[r]] += 1;
    }
    assert!(cross.iter().all(|&c| c == 1));
    assert_eq!(design.absorbed_dof(), 20 + 3 - 1);
}

#[test]
fn pair_positions_round_trip() {
    for n in 2..9 {
        for p in 0..n * (n - 1) {
            let (i, j) = pair_at(n, p);
            assert_ne!(i, j);
            assert_eq!(pair_position(n, i, j), p);
        }
    }
}

#[test]
fn schema_round_trips_through_toml() {
    let s = schema();
    assert_eq!(CovariateSchema::from_toml_str(&s.to_toml_string()).unwrap(), s);
    assert!(CovariateSchema::from_toml_str("x = \"dyadic_time:size\"\n").is_err());
}
