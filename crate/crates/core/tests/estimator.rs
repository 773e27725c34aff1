mod common;

use common::{sup_diff, toy_panel};
use rand::seq::SliceRandom;
use spgravity::estimator::*;
use spgravity::oracle::dummy_ols;
use spgravity::panel::{DiagonalPolicy, DyadicPolicy, FactorKind, ModelSpec, PanelDataset};
use spgravity::rng::{substream, Stream};
use spgravity::spatial::{FlowWeight, WeightSpec};
use spgravity::structural::{generate_synthetic, GeneratorConfig};
use spgravity::Error;

fn check_against_dummies(ds: &PanelDataset<f64>, spec: &ModelSpec) {
    let fit = fit_fe(ds, spec).unwrap();
    let y = ds.response();
    let ols = dummy_ols(ds, spec, &y);
    for (name, b) in ols.names.iter().zip(&ols.beta) {
        let est = fit.beta(name).unwrap_or_else(|| panic!("{name} missing"));
        assert!((est - b).abs() < 1e-9, "{name}: {est} vs {b}");
    }
    assert!(sup_diff(&fit.residuals, &ols.residuals) < 1e-9);
    if let Some(theta) = ols.pair_effects {
        assert!(sup_diff(&fit.pair_effects().unwrap(), &theta) < 1e-9);
        assert!(sup_diff(fit.time_effects().unwrap(), ols.time_effects.as_ref().unwrap()) < 1e-9);
    }
}

#[test]
fn within_transform_equals_dummy_least_squares() {
    for n in 3..=6 {
        for years in 2..=4 {
            let ds = toy_panel(n as u64 * 10 + years as u64, n, years);
            check_against_dummies(&ds, &ModelSpec::without_distance(&ds));
            // three countries leave a single dyadic degree of freedom beside the country effects
            if n > 3 {
                check_against_dummies(&ds, &ModelSpec::with_distance(&ds));
            }
        }
    }
}

#[test]
fn synthetic_panels_match_dummy_least_squares() {
    for (n, years) in [(6, 2), (6, 3), (6, 4)] {
        let cfg = GeneratorConfig { countries: n, years, seed: n as u64, ..GeneratorConfig::default() };
        let ds = generate_synthetic::<f64>(&cfg).unwrap().dataset;
        check_against_dummies(&ds, &ModelSpec::without_distance(&ds));
        check_against_dummies(&ds, &ModelSpec::with_distance(&ds));
    }
}

#[test]
fn fitted_plus_residual_reconstructs_the_response() {
    let ds = toy_panel(3, 5, 3);
    for spec in [ModelSpec::without_distance(&ds), ModelSpec::with_distance(&ds)] {
        let fit = fit_fe(&ds, &spec).unwrap();
        let y = ds.response();
        for r in 0..y.len() {
            assert!((fit.fitted[r] + fit.residuals[r] - y[r]).abs() < 1e-10);
        }
    }
}

#[test]
fn residuals_are_orthogonal_to_regressors() {
    let ds = toy_panel(4, 5, 4);
    let spec = ModelSpec::without_distance(&ds);
    let fit = fit_fe(&ds, &spec).unwrap();
    let n_obs = fit.residuals.len() as f64;
    for c in ["gdp_o", "gdp_d", "tariff"] {
        let col = ds.covariate_column(ds.schema().position(c).unwrap());
        let dot: f64 = col.iter().zip(&fit.residuals).map(|(x, e)| x * e).sum();
        assert!(dot.abs() / n_obs < 1e-8, "{c}");
    }
}

#[test]
fn observation_order_does_not_matter() {
    let ds = toy_panel(5, 5, 3);
    let mut obs: Vec<_> = ds.observations().collect();
    obs.shuffle(&mut substream(5, Stream::Permutation, 0));
    let shuffled = PanelDataset::from_observations(
        ds.index().clone(),
        ds.years().to_vec(),
        ds.schema().clone(),
        obs,
        ds.distance_km().clone(),
        DiagonalPolicy::Reject,
    )
    .unwrap();
    let spec = ModelSpec::without_distance(&ds);
    let (a, b) = (fit_fe(&ds, &spec).unwrap(), fit_fe(&shuffled, &spec).unwrap());
    for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((x.estimate - y.estimate).abs() < 1e-12);
        assert!((x.se - y.se).abs() < 1e-12);
    }
    assert!(sup_diff(&a.pair_effects().unwrap(), &b.pair_effects().unwrap()) < 1e-12);
}

#[test]
fn pair_constant_regressor_is_refused_or_absorbed() {
    let ds = toy_panel(6, 4, 3);
    let mut spec = ModelSpec::without_distance(&ds);
    spec.dyadic_policy = DyadicPolicy::Error;
    match fit_fe(&ds, &spec) {
        Err(Error::CollinearDummySpec(names)) => assert_eq!(names, ["contig"]),
        other => panic!("unexpected {other:?}"),
    }
    spec.dyadic_policy = DyadicPolicy::Absorb;
    let fit = fit_fe(&ds, &spec).unwrap();
    assert!(fit.beta("contig").is_none());
    assert!(fit.absorbed.iter().any(|a| a == "contig"));
}

#[test]
fn unknown_regressor_is_reported() {
    let ds = toy_panel(7, 4, 2);
    let mut spec = ModelSpec::without_distance(&ds);
    spec.regressors.push("gravity".into());
    assert!(matches!(fit_fe(&ds, &spec), Err(Error::UnknownRegressor(_))));
}

#[test]
fn comparing_a_table_with_itself_gives_zero_deltas() {
    let ds = toy_panel(8, 5, 3);
    let table = CoefficientTable::from_fit(&fit_fe(&ds, &ModelSpec::without_distance(&ds)).unwrap());
    let cmp = compare_tables(&table, &table);
    let deltas: Vec<f64> = cmp.rows.iter().filter_map(|r| r.delta()).collect();
    assert_eq!(deltas.len(), table.rows.iter().filter(|r| r.value().is_some()).count());
    assert!(deltas.iter().all(|&d| d == 0.0));
}

#[test]
fn with_and_without_distance_fits_compare() {
    let ds = toy_panel(9, 5, 3);
    let with = fit_fe(&ds, &ModelSpec::with_distance(&ds)).unwrap();
    let without = fit_fe(&ds, &ModelSpec::without_distance(&ds)).unwrap();
    let cmp = compare_specs(&with, &without).unwrap();
    let dist = cmp.rows.iter().find(|r| r.name == "dist").unwrap();
    assert!(dist.without.is_none() && dist.with.is_some());
    assert!(matches!(compare_specs(&without, &with), Err(Error::IncomparableSpecs(_))));
    let text = render_table1(&cmp);
    assert!(text.starts_with("VARIABLE"));
    assert!(text.ends_with("* In brackets the standard error\n"));
}

#[test]
fn absorbed_effects_are_reported() {
    let ds = toy_panel(10, 4, 3);
    let fit = fit_fe(&ds, &ModelSpec::without_distance(&ds)).unwrap();
    assert_eq!(fit.effect(FactorKind::Pair).unwrap().len(), 12);
    let tfe = fit.time_effects().unwrap();
    assert!(tfe.iter().sum::<f64>().abs() < 1e-12);
}

#[test]
fn sar_fit_recovers_a_strong_spatial_lag() {
    let cfg = GeneratorConfig { countries: 10, years: 5, rho: 0.3, noise_sd: 0.02, seed: 4, ..GeneratorConfig::default() };
    let panel = generate_synthetic::<f64>(&cfg).unwrap();
    let ws = WeightSpec::default();
    let spec = ModelSpec::without_distance(&panel.dataset).spatial(ws);
    let fw = FlowWeight::from_spec(&panel.dataset, &ws).unwrap();
    let fit = fit_sar_ivgmm(&panel.dataset, &spec, &fw, 1).unwrap();
    let rho = fit.rho.as_ref().unwrap();
    assert!((rho.estimate - 0.3).abs() < 4.0 * rho.se, "{} ({})", rho.estimate, rho.se);
    assert!(fit.first_stage_f.unwrap() > 0.0);
    assert!(matches!(fit_sar_ivgmm(&panel.dataset, &spec, &fw, 3), Err(Error::InvalidSpec(_))));
}

#[test]
fn iv_with_exogenous_copy_is_least_squares() {
    // lag of a regressor treated as exogenous: instrument set contains it
    let ds = toy_panel(11, 5, 3);
    let ws = WeightSpec::default();
    let mut spec = ModelSpec::without_distance(&ds).spatial(ws);
    spec.spatial = false;
    spec.regressors.push("W:gdp_o".into());
    let fit = fit_fe(&ds, &spec).unwrap();
    let ols = dummy_ols(&ds, &spec, &ds.response());
    for (name, b) in ols.names.iter().zip(&ols.beta) {
        assert!((fit.beta(name).unwrap() - b).abs() < 1e-10, "{name}");
    }
}
