use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use spgravity::estimator::{compare_tables, render_table1, write_fit, CoefficientTable, Comparison};
use spgravity::inference::{DistanceLoading, ValidationPipeline};
use spgravity::panel::{load_panel, write_distances, write_panel, CountryIndex, DiagonalPolicy, LoadOptions};
use spgravity::spatial::{inverse_distance_weights, lm_spatial_lag_test, morans_i, FlowWeight};
use spgravity::structural::{predict_flows, MrtSolver};
use spgravity::{fit_fe, fit_sar_ivgmm, generate_synthetic, CovariateSchema, Error, GravityFit, ModelSpec, PanelDataset, Result, StructuralWorld};

use crate::config::{LoadingPolicy, RunConfig};

/// Creates the output directory and records the resolved run parameters in
/// `run.toml`. The thread cap is left out because results do not depend on it.
fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    let recorded = RunConfig { threads: 0, ..cfg.clone() };
    fs::write(cfg.out.join("run.toml"), recorded.to_toml_string())?;
    Ok(&cfg.out)
}

fn load_data(cfg: &RunConfig) -> Result<PanelDataset<f64>> {
    let dir = &cfg.data;
    let panel = dir.join("panel.csv");
    if !panel.exists() {
        return Err(Error::MissingFile(panel.display().to_string()));
    }
    let schema = CovariateSchema::load(&dir.join("schema.toml"))?;
    let distances = dir.join("distances.csv");
    let opts = LoadOptions {
        distance_file: distances.exists().then_some(distances.as_path()),
        log_levels: cfg.log_levels,
        diagonal: DiagonalPolicy::Flag,
    };
    load_panel(&panel, &schema, &opts)
}

fn model_spec(cfg: &RunConfig, ds: &PanelDataset<f64>, with_dist: bool) -> ModelSpec {
    let mut spec = if with_dist { ModelSpec::with_distance(ds) } else { ModelSpec::without_distance(ds) };
    if cfg.sar {
        spec = spec.spatial(cfg.weight_spec());
    }
    spec.instrument_order = cfg.instrument_order;
    spec
}

fn fit_model(cfg: &RunConfig, ds: &PanelDataset<f64>, spec: &ModelSpec) -> Result<GravityFit<f64>> {
    spec.validate()?;
    if spec.spatial {
        let fw = FlowWeight::from_spec(ds, &cfg.weight_spec())?;
        fit_sar_ivgmm(ds, spec, &fw, spec.instrument_order)
    } else {
        fit_fe(ds, spec)
    }
}

pub fn generate(cfg: &RunConfig) -> Result<()> {
    let gen = cfg.generator();
    gen.validate()?;
    let panel = generate_synthetic::<f64>(&gen)?;
    let dir = out_dir(cfg)?;
    let ds = &panel.dataset;
    write_panel(ds, &dir.join("panel.csv"))?;
    write_distances(ds, &dir.join("distances.csv"))?;
    fs::write(dir.join("schema.toml"), ds.schema().to_toml_string())?;
    panel.truth.write_sidecars(ds.index(), ds.years(), dir)?;
    fs::write(dir.join("generator.toml"), toml::to_string(&gen).map_err(|e| Error::Parse(e.to_string()))?)?;
    println!("generated {} countries x {} years: {} estimation rows", ds.n(), ds.n_years(), ds.n_estimation_rows());
    Ok(())
}

pub fn weights(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let w = inverse_distance_weights(ds.distance_km(), cfg.normalization)?;
    let dir = out_dir(cfg)?;
    let index = ds.index();
    let mut out = csv::Writer::from_path(dir.join("weights.csv"))?;
    out.write_record(["origin", "dest", "weight"])?;
    for i in 0..index.n() {
        for j in (0..index.n()).filter(|&j| j != i) {
            out.write_record([index.code(i), index.code(j), &w.get(i, j).to_string()])?;
        }
    }
    out.flush()?;
    let sums: Vec<f64> = (0..w.n()).map(|i| w.values().row(i).sum()).collect();
    let (lo, hi) = sums.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    println!("weights over {} countries, {:?} normalization, row sums in [{lo:.6}, {hi:.6}]", w.n(), cfg.normalization);
    Ok(())
}

fn diagnostics(cfg: &RunConfig, ds: &PanelDataset<f64>, spec: &ModelSpec, fit: &GravityFit<f64>) -> Result<String> {
    let fw = FlowWeight::from_spec(ds, &cfg.weight_spec())?;
    let moran = morans_i(&fw.panel(ds.n_years()), &fit.residuals)?;
    let mut text = String::new();
    writeln!(text, "Residual diagnostics ({:?} weights, {:?} lag)", cfg.normalization, cfg.lag_mode).unwrap();
    writeln!(
        text,
        "  Moran's I        {:.6}  (expected {:.6}, z {:.4}, p {:.4})",
        moran.statistic, moran.expected, moran.z, moran.p_value
    )
    .unwrap();
    if !spec.spatial {
        let lm = lm_spatial_lag_test(ds, spec, fit, &fw)?;
        writeln!(text, "  LM spatial lag   {:.4}  (p {:.4})", lm.statistic, lm.p_value).unwrap();
    }
    Ok(text)
}

fn coefficient_text(fit: &GravityFit<f64>) -> String {
    let mut text = String::new();
    let table = CoefficientTable::from_fit(fit).rounded(6);
    let width = table.rows.iter().map(|r| r.name.chars().count()).max().unwrap_or(0).max(8);
    writeln!(text, "{:<width$}  {:>12}  {:>12}", "variable", "estimate", "se").unwrap();
    for r in &table.rows {
        let est = if r.estimate.is_empty() { "absorbed" } else { &r.estimate };
        let line = format!("{:<width$}  {:>12}  {:>12} {}", r.name, est, r.se, r.stars);
        writeln!(text, "{}", line.trim_end()).unwrap();
    }
    writeln!(text, "observations {}  R^2 {:.6}  within R^2 {:.6}", fit.n_obs, fit.r_squared, fit.within_r_squared).unwrap();
    if let Some(f) = fit.first_stage_f {
        writeln!(text, "first-stage F {f:.3}").unwrap();
    }
    text
}

pub fn estimate(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let spec = model_spec(cfg, &ds, cfg.with_dist);
    let fit = fit_model(cfg, &ds, &spec)?;
    let dir = out_dir(cfg)?;
    write_fit(&fit, ds.index(), ds.years(), dir)?;
    let mut report = coefficient_text(&fit);
    report.push('\n');
    report.push_str(&diagnostics(cfg, &ds, &spec, &fit)?);
    fs::write(dir.join("report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

fn coefficient_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("coefficients.csv")
    } else {
        path.to_path_buf()
    }
}

pub fn compare(cfg: &RunConfig) -> Result<()> {
    let mut without = CoefficientTable::read_csv(&coefficient_file(&cfg.without))?;
    let mut with = CoefficientTable::read_csv(&coefficient_file(&cfg.with))?;
    if let Some(d) = cfg.decimals {
        without = without.rounded(d);
        with = with.rounded(d);
    }
    let cmp = compare_tables(&without, &with);
    let dir = out_dir(cfg)?;
    let text = render_table1(&cmp);
    fs::write(dir.join("table1.txt"), &text)?;
    write_comparison(&cmp, &dir.join("comparison.csv"))?;
    print!("{text}");
    Ok(())
}

fn write_comparison(cmp: &Comparison, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "without", "without_se", "with", "with_se", "delta", "sign_agrees"])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in &cmp.rows {
        w.write_record([
            r.name.clone(),
            opt(r.without.as_ref().map(|c| c.estimate.clone())),
            opt(r.without.as_ref().map(|c| c.se.clone())),
            opt(r.with.as_ref().map(|c| c.estimate.clone())),
            opt(r.with.as_ref().map(|c| c.se.clone())),
            opt(r.delta().map(|d| d.to_string())),
            opt(r.sign_agrees().map(|s| s.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let ds = load_data(cfg)?;
    let loading = match cfg.distance_loading {
        LoadingPolicy::Unit => DistanceLoading::Unit,
        LoadingPolicy::Estimated => DistanceLoading::from_fit(&fit_model(cfg, &ds, &model_spec(cfg, &ds, true))?)?,
    };
    let vcfg = cfg.validation(loading);
    vcfg.validate()?;
    let spec = model_spec(cfg, &ds, false);
    spec.validate()?;
    let pipe = ValidationPipeline::new(&ds, &spec, &vcfg)?;
    let (report, draws) = pipe.report()?;
    let dir = out_dir(cfg)?;
    let text = report.to_text();
    fs::write(dir.join("validation.txt"), &text)?;
    report.write_csv(&dir.join("validation.csv"))?;
    if cfg.save_draws {
        draws.write_csv(ds.index(), dir)?;
    }
    print!("{text}");
    Ok(())
}

fn read_world(cfg: &RunConfig) -> Result<(CountryIndex, StructuralWorld<f64>)> {
    let open = |name: &str| -> Result<csv::Reader<fs::File>> {
        let path = cfg.world.join(name);
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
    };
    let number = |raw: &str, column: &str| -> Result<f64> {
        raw.parse().map_err(|_| Error::InvalidValue { column: column.into(), reason: format!("cannot parse `{raw}`") })
    };
    let column = |headers: &csv::StringRecord, name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()))
    };

    let mut sizes = open("sizes.csv")?;
    let headers = sizes.headers()?.clone();
    let (c_country, c_x, c_e) = (column(&headers, "country")?, column(&headers, "output")?, column(&headers, "expenditure")?);
    let (mut codes, mut output, mut expenditure) = (Vec::new(), Vec::new(), Vec::new());
    for rec in sizes.records() {
        let rec = rec?;
        codes.push(rec[c_country].to_string());
        output.push(number(&rec[c_x], "output")?);
        expenditure.push(number(&rec[c_e], "expenditure")?);
    }
    let index = CountryIndex::new(codes)?;
    let n = index.n();

    let mut costs_file = open("costs.csv")?;
    let headers = costs_file.headers()?.clone();
    let (c_o, c_d, c_t) = (column(&headers, "origin")?, column(&headers, "dest")?, column(&headers, "cost")?);
    let diagonal = cfg.domestic.diagonal_cost::<f64>();
    let mut costs = DMatrix::from_fn(n, n, |i, j| if i == j { diagonal } else { f64::NAN });
    for rec in costs_file.records() {
        let rec = rec?;
        let find = |code: &str| index.position(code).ok_or_else(|| Error::InvalidValue { column: "origin/dest".into(), reason: format!("unknown country `{code}`") });
        let (i, j) = (find(&rec[c_o])?, find(&rec[c_d])?);
        costs[(i, j)] = number(&rec[c_t], "cost")?;
    }
    if let Some(k) = costs.iter().position(|c| c.is_nan()) {
        let (i, j) = (k % n, k / n);
        return Err(Error::InvalidValue { column: "cost".into(), reason: format!("no cost for ({}, {})", index.code(i), index.code(j)) });
    }
    Ok((index, StructuralWorld::new(cfg.sigma, costs, expenditure, output)?))
}

pub fn mrt_solve(cfg: &RunConfig) -> Result<()> {
    let (index, world) = read_world(cfg)?;
    let mrt = MrtSolver::default().solve(&world)?;
    let flows = predict_flows(&world, &mrt)?;
    let dir = out_dir(cfg)?;
    let mut w = csv::Writer::from_path(dir.join("mrt.csv"))?;
    w.write_record(["country", "Pi", "P"])?;
    for i in 0..index.n() {
        w.write_record([index.code(i), &mrt.pi[i].to_string(), &mrt.p[i].to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("flows.csv"))?;
    w.write_record(["origin", "dest", "flow"])?;
    for i in 0..index.n() {
        for j in 0..index.n() {
            if flows[(i, j)] > 0.0 {
                w.write_record([index.code(i), index.code(j), &flows[(i, j)].to_string()])?;
            }
        }
    }
    w.flush()?;
    println!("resistance terms for {} countries: {} iterations, residual {:.3e}", index.n(), mrt.iterations, mrt.residual);
    Ok(())
}
