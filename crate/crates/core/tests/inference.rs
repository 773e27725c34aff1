mod common;

use common::sup_diff;
use rand::Rng;
use rand_distr::StandardNormal;
use spgravity::inference::*;
use spgravity::oracle::pipeline_residuals;
use spgravity::panel::{pair_at, ModelSpec, PanelShape};
use spgravity::rng::{substream, Stream};
use spgravity::structural::{generate_synthetic, DomesticTrade, MrtMode, SyntheticPanel};
use spgravity::{Error, GeneratorConfig};

fn panel(n: usize, years: usize, noise_sd: f64, seed: u64) -> SyntheticPanel<f64> {
    let cfg = GeneratorConfig { countries: n, years, noise_sd, seed, ..GeneratorConfig::default() };
    generate_synthetic(&cfg).unwrap()
}

fn config(replications: usize) -> ValidationConfig {
    ValidationConfig { replications, ..ValidationConfig::default() }
}

fn spread(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    hi - lo
}

#[test]
fn zero_noise_panel_has_zero_structural_residuals() {
    let p = panel(8, 4, 0.0, 3);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let ev = pipe.evaluate_observed().unwrap();
    assert!(ev.residuals.r.iter().all(|r| r.abs() <= 1e-6), "{:?}", ev.residuals.r);
    assert!(ev.anova().unwrap().r2 >= 1.0 - 1e-8);
}

#[test]
fn estimated_sizes_match_the_truth_up_to_a_constant() {
    let p = panel(7, 4, 0.0, 5);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let ev = pipe.evaluate_observed().unwrap();
    let c = &ev.components;
    let dx: Vec<f64> = (0..4).flat_map(|t| (0..7).map(move |i| (t, i))).map(|(t, i)| c.origin_size_at(i, t) - p.truth.output[t][i].ln()).collect();
    assert!(spread(&dx) < 1e-8, "{}", spread(&dx));
    // expenditures are normalized year by year
    for t in 0..4 {
        let de: Vec<f64> = (0..7).map(|j| c.dest_size_at(j, t) - p.truth.expenditure[t][j].ln()).collect();
        assert!(spread(&de) < 1e-8, "{}", spread(&de));
    }
}

#[test]
fn empirical_resistance_matches_the_truth_up_to_a_constant() {
    let p = panel(6, 3, 0.0, 8);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let ev = pipe.evaluate_observed().unwrap();
    let n = 6;
    let cost = ev.components.total_cost();
    let mut d = Vec::new();
    for t in 0..3 {
        let truth = &p.truth.mrt[t];
        for q in 0..n * (n - 1) {
            let (i, j) = pair_at(n, q);
            // resistance terms are identified only relative to the cost level they deflate
            let est = cost[q] - ev.mrt.log_pi[t * n + i] - ev.mrt.log_p[t * n + j];
            d.push(est - p.truth.log_cost[t * n * (n - 1) + q] + truth.pi[i].ln() + truth.p[j].ln());
        }
    }
    assert!(spread(&d) < 1e-7, "{}", spread(&d));
}

fn flat_components(n: usize, years: usize, cost: impl Fn(usize, usize) -> f64, size: impl Fn(usize) -> f64) -> StructuralComponents<f64> {
    let shape = PanelShape { n, years };
    StructuralComponents {
        shape,
        sigma: 4.0,
        origin_size: (0..n * years).map(|k| size(k % n)).collect(),
        dest_size: (0..n * years).map(|k| size((k + 1) % n)).collect(),
        cost: (0..shape.pairs()).map(|q| {
            let (i, j) = pair_at(n, q);
            cost(i, j)
        }).collect(),
        distance: vec![0.0; shape.pairs()],
        provenance: Vec::new(),
    }
}

#[test]
fn frictionless_symmetric_world_has_unit_resistance() {
    let c = flat_components(4, 2, |_, _| 0.0, |_| 0.0);
    let options = MrtOptions { domestic: DomesticTrade::Frictionless, ..MrtOptions::default() };
    let mrt = solve_empirical_mrt(&c, &options).unwrap();
    assert_eq!(mrt.cost_shift, 0.0);
    assert!(mrt.log_pi.iter().chain(&mrt.log_p).all(|v| v.abs() < 1e-10));
}

#[test]
fn time_constant_panel_pools_like_single_years() {
    let c = flat_components(5, 3, |i, j| 0.5 + 0.1 * (i + 2 * j) as f64, |i| (i as f64 * 0.9).sin());
    let pooled = solve_empirical_mrt(&c, &MrtOptions::default()).unwrap();
    let per_year = solve_empirical_mrt(&c, &MrtOptions { mode: MrtMode::PerYear, ..MrtOptions::default() }).unwrap();
    assert!(sup_diff(&pooled.log_pi, &per_year.log_pi) < 1e-9);
    assert!(sup_diff(&pooled.log_p, &per_year.log_p) < 1e-9);
    assert!((pooled.level_offset - per_year.level_offset).abs() < 1e-12);
}

#[test]
fn zero_noise_bootstrap_is_degenerate() {
    let p = panel(5, 3, 0.0, 2);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let (report, draws) = pipe.report().unwrap();
    assert_eq!(report.replications, 199);
    for rep in &draws.replications {
        assert!(sup_diff(&rep.r, &draws.base.residuals.r) < 1e-9);
    }
    assert_eq!(report.t_stat, 0.0);
    assert_eq!(report.p_value, 1.0);
    assert_eq!(report.decision, Decision::DistanceRemovable);
}

#[test]
fn anova_recovers_the_noise_share() {
    let n = 60;
    let mut rng = substream(21, Stream::Generate, 0);
    let structural: Vec<f64> = (0..n * (n - 1)).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let noise_sd = (1.0f64 / 9.0).sqrt();
    let theta: Vec<f64> = structural.iter().map(|s| s + 2.5 + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let table = anova_r2(&theta, &structural).unwrap();
    assert!((table.r2 - 0.9).abs() < 0.01, "{}", table.r2);
    let total = table.var_structural + table.var_residual + table.covariance;
    assert!((total - table.var_theta).abs() < 1e-10);
}

#[test]
fn replications_match_a_hand_stepped_pipeline() {
    let p = panel(6, 2, 0.05, 6);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let base = pipe.evaluate_observed().unwrap();
    let observed = pipeline_residuals(&p.dataset, &spec, &p.dataset.response(), 4.0);
    assert!(sup_diff(&base.residuals.r, &observed) < 1e-8);
    for b in 0..2 {
        let (y, idx) = pipe.resample(&base, b);
        let scale = (base.fit.n_obs as f64 / base.fit.dof() as f64).sqrt();
        for (r, &k) in idx.iter().enumerate() {
            assert!((y[r] - base.fit.fitted[r] - scale * base.fit.residuals[k]).abs() < 1e-12);
        }
        let rep = pipe.replicate(&base, b).unwrap();
        let expected = pipeline_residuals(&p.dataset, &spec, &y, 4.0);
        assert!(sup_diff(&rep.r, &expected) < 1e-8, "replication {b}");
    }
}

#[test]
fn bootstrap_mean_is_centred_on_the_observed_mean() {
    let p = panel(8, 4, 0.05, 12);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let (report, draws) = pipe.report().unwrap();
    let observed = draws.base.residuals.mean();
    assert!((report.grand_mean - observed).abs() <= 2.0 * report.se, "{} vs {observed} (se {})", report.grand_mean, report.se);
}

#[test]
fn thread_count_does_not_change_the_draws() {
    let p = panel(6, 3, 0.05, 4);
    let spec = ModelSpec::without_distance(&p.dataset);
    let pipe = ValidationPipeline::new(&p.dataset, &spec, &config(199)).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| pipe.run().unwrap())
    };
    let (a, b) = (run(1), run(8));
    assert_eq!(a.replications, b.replications);
    let bits = |d: &BootstrapDraws<f64>| d.means().iter().map(|m| m.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn configuration_errors() {
    let p = panel(5, 3, 0.05, 1);
    let ds = &p.dataset;
    let without = ModelSpec::without_distance(ds);
    assert!(matches!(ValidationPipeline::new(ds, &ModelSpec::with_distance(ds), &config(199)), Err(Error::SpecMismatch(_))));
    assert!(matches!(ValidationPipeline::new(ds, &without, &config(10)), Err(Error::InvalidB(10, 199))));
    let mut partial = without.clone();
    partial.regressors.retain(|r| r != "gdp_o");
    let pipe = ValidationPipeline::new(ds, &partial, &config(199)).unwrap();
    assert!(matches!(pipe.evaluate_observed(), Err(Error::MissingCovariate(c)) if c == "gdp_o"));
    let fit = spgravity::fit_fe(ds, &without).unwrap();
    assert!(matches!(DistanceLoading::from_fit(&fit), Err(Error::MissingCovariate(c)) if c == "dist"));
}
