//! Acceptance studies, one report line per criterion. Runs as a plain
//! binary so the criteria execute one at a time and their timings are
//! meaningful; the process fails if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use volcontagion::contagion::{
    fit_crisis_contagion, fit_static_contagion, fit_static_contagion_with, CovarianceKind, CrisisWindow,
    CrisisWindows, VolBasis, CALM_NAME,
};
use volcontagion::diagnostics::{anscombe_kurtosis, dagostino_skewness};
use volcontagion::esv::{esv_filter, esv_filter_with, grid_search, EsvFilterOptions, EsvParams, GridSpec, MeanTreatment};
use volcontagion::factors::{build_factor_panel, orthogonalize_full, FactorFit, FactorPanel};
use volcontagion::garch::{garch_filter, garch_fit, GarchFitOptions, GarchParams};
use volcontagion::ingest::{align, load_french_daily, load_series, AlignPolicy, CsvFormat, LoadOptions, RawSeries, SeriesKind};
use volcontagion::pipeline::{run_pipeline, PipelineConfig, VolModel, STAGE1_FILES, STAGE2_FILES};
use volcontagion::simulate::{grid_filter_oracle, sim_esv, sim_garch, sim_joint_panel, Cholesky2, GammaRegime, JointPanel, JointSimConfig};
use volcontagion::{MeanModel, MeanModelSpec};

enum Outcome {
    Pass,
    Fail,
    Skip,
}

struct Report {
    id: u8,
    title: &'static str,
    outcome: Outcome,
    detail: String,
    elapsed: Duration,
    budget: Option<Duration>,
}

impl Report {
    fn line(&self) -> String {
        let status = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skip => "SKIP",
        };
        let budget = self
            .budget
            .map(|b| format!(" / budget {}s", b.as_secs()))
            .unwrap_or_default();
        format!(
            "criterion {} [{status}] {}: {} ({:.1}s{budget})",
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(
    id: u8,
    title: &'static str,
    budget: Option<u64>,
    study: impl FnOnce() -> (Outcome, String),
) -> Report {
    let start = Instant::now();
    let (mut outcome, mut detail) = study();
    let elapsed = start.elapsed();
    let budget = budget.map(Duration::from_secs);
    if let (Outcome::Pass, Some(b)) = (&outcome, budget) {
        if elapsed > b {
            outcome = Outcome::Fail;
            detail.push_str("; over the time budget");
        }
    }
    let report = Report {
        id,
        title,
        outcome,
        detail,
        elapsed,
        budget,
    };
    println!("{}", report.line());
    report
}

fn verdict(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn reference_esv() -> EsvParams {
    EsvParams {
        sigma0: 0.05,
        phi: 0.95,
        tau2: 0.01,
        nu: 2.0,
    }
}

fn oracle_gap(nu: f64) -> f64 {
    let spec = MeanModelSpec::new(MeanModel::M1a);
    let params = EsvParams { nu, ..reference_esv() };
    let alpha = (0.05, -0.05);
    let mut total = 0.0;
    for seed in 0..10u64 {
        let path = sim_esv(&params, &spec, alpha, 200, 1000 + seed).expect("simulation");
        let mut opts = EsvFilterOptions::new(10_000, seed);
        opts.mean = MeanTreatment::Fixed {
            alpha0: alpha.0,
            alpha1: alpha.1,
        };
        let pf = esv_filter_with(&path.returns, &params, &spec, &opts).expect("particle filter");
        let exact = grid_filter_oracle(&path.returns, &params, &spec, alpha, 2000).expect("grid filter");
        total += (pf.loglik - exact).abs();
    }
    total / 10.0
}

fn criterion_1() -> (Outcome, String) {
    let heavy = oracle_gap(2.0);
    let gaussian = oracle_gap(f64::INFINITY);
    (
        verdict(heavy < 0.5 && gaussian < 0.5),
        format!("mean |particle - grid| loglik {heavy:.3} nats (nu=2), {gaussian:.3} nats (nu=inf); limit 0.5"),
    )
}

fn criterion_2() -> (Outcome, String) {
    let spec = MeanModelSpec::new(MeanModel::M3);
    let truth = reference_esv();
    let grid = GridSpec {
        sigma0_values: vec![0.025, 0.05, 0.1, 0.2],
        phi_values: vec![0.9, 0.95, 0.975, 0.9875],
        tau2_values: vec![0.005, 0.01, 0.02, 0.04],
    };
    let truth_idx = grid.indices_of(&truth).expect("truth on grid");
    let mut hits = 0;
    let mut exact = 0;
    for seed in 0..20u64 {
        let path = sim_esv(&truth, &spec, (0.04, 0.0), 4000, 500 + seed).expect("simulation");
        let r = grid_search(&path.returns, &grid, &spec, 2.0, 500, seed).expect("grid search");
        let idx = grid.indices_of(&r.best).expect("selected point on grid");
        if idx.iter().zip(&truth_idx).all(|(a, b)| a.abs_diff(*b) <= 1) {
            hits += 1;
        }
        if idx == truth_idx {
            exact += 1;
        }
    }
    (
        verdict(hits >= 16),
        format!("{hits}/20 seeds within one grid step in every coordinate ({exact} exact); need 16"),
    )
}

fn criterion_3() -> (Outcome, String) {
    let spec = MeanModelSpec::new(MeanModel::M1a);
    let truth = GarchParams {
        zeta0: 0.02,
        zeta1: 0.03,
        zeta2: 0.08,
        zeta3: 0.9,
        alpha0: 0.03,
        alpha1: 0.02,
    };
    let truth_values = [truth.zeta0, truth.zeta1, truth.zeta2, truth.zeta3, truth.alpha0, truth.alpha1];
    let (mut covered, mut pairs, mut ll_ok) = (0, 0, 0);
    for seed in 0..20u64 {
        let path = sim_garch(&truth, &spec, 20_000, 300 + seed).expect("simulation");
        let fit = garch_fit(&path.returns, &spec, None, &GarchFitOptions::default()).expect("garch fit");
        let se = fit.std_errors.as_ref().expect("standard errors");
        for (j, name) in fit.names.iter().enumerate() {
            let k = GarchParams::NAMES.iter().position(|n| n == name).expect("known name");
            pairs += 1;
            if (fit.estimates[j] - truth_values[k]).abs() <= 3.0 * se[j] {
                covered += 1;
            }
        }
        let at_truth = garch_filter(&path.returns, &truth, &spec, fit.sigma2_init).expect("filter").loglik;
        if fit.output.loglik >= at_truth {
            ll_ok += 1;
        }
    }
    let share = covered as f64 / pairs as f64;
    (
        verdict(share >= 0.95 && ll_ok == 20),
        format!(
            "{covered}/{pairs} (seed, parameter) pairs within 3 se ({:.1}%); loglik at MLE >= truth in {ll_ok}/20 seeds",
            100.0 * share
        ),
    )
}

fn criterion_4() -> (Outcome, String) {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let (mut skew_rej, mut kurt_rej) = (0, 0);
    for seed in 0..1000u64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        if dagostino_skewness(&x).expect("skew test").p_value < 0.05 {
            skew_rej += 1;
        }
        if anscombe_kurtosis(&x).expect("kurtosis test").p_value < 0.05 {
            kurt_rej += 1;
        }
    }
    let ok = |r: i32| (25..=75).contains(&r);
    (
        verdict(ok(skew_rej) && ok(kurt_rej)),
        format!(
            "empirical size skewness {:.1}%, kurtosis {:.1}%; band [2.5%, 7.5%]",
            skew_rej as f64 / 10.0,
            kurt_rej as f64 / 10.0
        ),
    )
}

const N_COUNTRIES: usize = 40;
const WINDOW: (usize, usize) = (1000, 1041);

fn joint_config(seed: u64) -> JointSimConfig {
    let base_b = [[0.13, 0.9], [0.2, 0.8], [0.12, 0.82], [0.13, 0.88], [0.02, 1.0]];
    let base_gamma = [[0.44, -0.18], [0.14, -0.14], [-0.29, -0.13], [-0.24, 0.16], [0.0, 0.2]];
    JointSimConfig {
        esv_us: reference_esv(),
        esv_eu: reference_esv(),
        chol: Cholesky2 {
            l11: 1.0,
            l21: 0.5,
            l22: 0.8,
        },
        factor_mean: [0.03, 0.02],
        countries: (0..N_COUNTRIES).map(|i| format!("C{i:02}")).collect(),
        b: (0..N_COUNTRIES).map(|i| base_b[i % 5]).collect(),
        gamma: (0..N_COUNTRIES).map(|i| base_gamma[i % 5]).collect(),
        alpha: vec![0.0; N_COUNTRIES],
        idio_sd: vec![0.5; N_COUNTRIES],
        regimes: Vec::new(),
        t: 2000,
        seed,
        start_date: NaiveDate::from_ymd_opt(2005, 1, 3).expect("valid date"),
    }
}

/// Factor panel from particle-filtered shocks at the true parameters.
fn filtered_factors(panel: &JointPanel, cfg: &JointSimConfig, seed: u64) -> FactorPanel {
    let spec = MeanModelSpec::new(MeanModel::M3);
    let dates = &panel.countries.dates;
    let fits: Vec<FactorFit> = [("US", cfg.esv_us), ("EU", cfg.esv_eu)]
        .iter()
        .enumerate()
        .map(|(k, (col, params))| {
            let x = panel.factors.column(col).expect("factor column").to_vec();
            let out = esv_filter(&x, params, &spec, 2000, 2 * seed + k as u64).expect("factor filter");
            FactorFit::new(dates.clone(), x, out).expect("fit")
        })
        .collect();
    build_factor_panel(&fits[0], &fits[1], dates).expect("factor panel")
}

/// Factor panel from the simulated (unobservable) innovations.
fn true_factors(panel: &JointPanel) -> FactorPanel {
    let o = orthogonalize_full(&panel.eta[1], &panel.eta[0]).expect("orthogonalization");
    FactorPanel {
        dates: panel.countries.dates.clone(),
        x_us: panel.factor_innovations[0].clone(),
        x_eu: panel.factor_innovations[1].clone(),
        delta_us: panel.eta[0].clone(),
        delta_eu: o.residuals,
        eta_eu: panel.eta[1].clone(),
        orth_intercept: o.intercept,
        orth_slope: o.slope,
    }
}

struct RecoveryStats {
    covered: usize,
    entries: usize,
    ratio_num: f64,
    ratio_den: f64,
    size_rejections: usize,
    power_rejections: usize,
    tests: usize,
}

impl RecoveryStats {
    fn summary(&self) -> String {
        format!(
            "gamma within 3 se {}/{} ({:.1}%), estimate/truth slope {:.2}, F size {:.1}%, power {:.1}%",
            self.covered,
            self.entries,
            100.0 * self.covered as f64 / self.entries as f64,
            self.ratio_num / self.ratio_den,
            100.0 * self.size_rejections as f64 / self.tests as f64,
            100.0 * self.power_rejections as f64 / self.tests as f64
        )
    }

    fn passes(&self) -> bool {
        let size = self.size_rejections as f64 / self.tests as f64;
        self.covered as f64 >= 0.9 * self.entries as f64
            && (0.025..=0.075).contains(&size)
            && self.power_rejections as f64 >= 0.95 * self.tests as f64
    }
}

fn recovery_study(use_true_shocks: bool) -> RecoveryStats {
    let mut stats = RecoveryStats {
        covered: 0,
        entries: 0,
        ratio_num: 0.0,
        ratio_den: 0.0,
        size_rejections: 0,
        power_rejections: 0,
        tests: 0,
    };
    let window_name = "gamma_eu_w";
    for seed in 0..20u64 {
        let cfg = joint_config(7000 + seed);
        let panel = sim_joint_panel(&cfg).expect("joint simulation");
        let factors = if use_true_shocks {
            true_factors(&panel)
        } else {
            filtered_factors(&panel, &cfg, seed)
        };
        let dates = &panel.countries.dates;
        let windows = CrisisWindows {
            windows: vec![CrisisWindow {
                label: "w".to_string(),
                start: dates[WINDOW.0],
                end: dates[WINDOW.1],
            }],
        };
        let truth = cfg.true_loadings();
        let mut shifted = Vec::with_capacity(N_COUNTRIES);
        for (i, name) in cfg.countries.iter().enumerate() {
            let y = panel.countries.column(name).expect("country");
            if i < 5 {
                let fit = fit_static_contagion(y, &factors).expect("static fit");
                for (coef, value) in [("gamma_us", truth[i].gamma_us), ("gamma_eu", truth[i].gamma_eu)] {
                    let est = fit.coefficient(coef).expect("coefficient");
                    stats.entries += 1;
                    if (est - value).abs() <= 3.0 * fit.std_error(coef).expect("se") {
                        stats.covered += 1;
                    }
                    stats.ratio_num += est * value;
                    stats.ratio_den += value * value;
                }
            }
            let crisis = fit_crisis_contagion(y, &factors, &windows).expect("crisis fit");
            stats.tests += 1;
            if crisis.p_value < 0.05 {
                stats.size_rejections += 1;
            }
            let f = &crisis.fit;
            let (w, c) = (f.index_of(window_name).expect("window"), f.index_of(CALM_NAME).expect("calm"));
            let v = &f.covariance;
            let se_contrast = (v[(w, w)] + v[(c, c)] - 2.0 * v[(w, c)]).sqrt();
            shifted.push(cfg.gamma[i][1] + 4.0 * se_contrast * cfg.chol.l22);
        }
        let mut alt = cfg.clone();
        alt.regimes = vec![GammaRegime {
            start: WINDOW.0,
            end: WINDOW.1,
            gamma2: shifted,
        }];
        let alt_panel = sim_joint_panel(&alt).expect("joint simulation");
        assert_eq!(alt_panel.factors, panel.factors, "regimes must not change the factor paths");
        for name in &alt.countries {
            let y = alt_panel.countries.column(name).expect("country");
            if fit_crisis_contagion(y, &factors, &windows).expect("crisis fit").p_value < 0.05 {
                stats.power_rejections += 1;
            }
        }
    }
    stats
}

fn criterion_5() -> (Outcome, String) {
    let filtered = recovery_study(false);
    let oracle = recovery_study(true);
    (
        verdict(filtered.passes()),
        format!(
            "filtered shocks: {}; [reference with true shocks: {}]",
            filtered.summary(),
            oracle.summary()
        ),
    )
}

fn criterion_6() -> (Outcome, String) {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let cfg = joint_config(8000 + seed);
        let panel = sim_joint_panel(&cfg).expect("joint simulation");
        let factors = filtered_factors(&panel, &cfg, seed);
        for name in cfg.countries.iter().take(5) {
            let y = panel.countries.column(name).expect("country");
            let a = fit_static_contagion_with(y, &factors, VolBasis::Orthogonal, CovarianceKind::Classical).expect("fit");
            let b = fit_static_contagion_with(y, &factors, VolBasis::Raw, CovarianceKind::Classical).expect("fit");
            for (p, q) in a.fitted.iter().zip(&b.fitted) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    (verdict(worst <= 1e-8), format!("max |fitted difference| raw vs orthogonal {worst:.2e}; limit 1e-8"))
}

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).map(PathBuf::from).filter(|p| p.is_file())
}

fn criterion_7() -> (Outcome, String) {
    let (Some(french), Some(vgk)) = (env_path("VOLCONTAGION_FRENCH"), env_path("VOLCONTAGION_VGK")) else {
        return (
            Outcome::Skip,
            "set VOLCONTAGION_FRENCH (French daily factor CSV) and VOLCONTAGION_VGK (wide CSV with a VGK column) to run"
                .to_string(),
        );
    };
    let run = || -> volcontagion::Result<(bool, String)> {
        let series = load_french_daily(&french)?;
        let mkt = series
            .iter()
            .find(|s| s.kind == SeriesKind::Return && s.ticker == "Mkt-RF")
            .ok_or_else(|| volcontagion::Error::InvalidConfig(vec!["no Mkt-RF column".to_string()]))?;
        let (from, to) = (
            NaiveDate::from_ymd_opt(1963, 7, 1).expect("date"),
            NaiveDate::from_ymd_opt(2010, 10, 31).expect("date"),
        );
        let keep: Vec<usize> = (0..mkt.dates.len()).filter(|&i| mkt.dates[i] >= from && mkt.dates[i] <= to).collect();
        let x: Vec<f64> = keep.iter().map(|&i| mkt.values[i]).collect();
        let spec = MeanModelSpec::new(MeanModel::M1a);
        let garch = garch_fit(&x, &spec, None, &GarchFitOptions::default())?;
        let a0 = 100.0 * garch.params.alpha0;
        let ll = garch.output.loglik;
        let particles = std::env::var("VOLCONTAGION_PARTICLES")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(2000);
        let r = grid_search(&x, &GridSpec::default(), &spec, 2.0, particles, 42)?;
        let t = |name: &str| {
            r.output
                .mean_estimates
                .iter()
                .find(|e| e.name == name)
                .and_then(|e| e.t_stat())
                .unwrap_or(f64::NAN)
        };
        let (t0, t1) = (t("alpha0"), t("alpha1"));
        let gap = r.output.loglik - ll;
        let vgk_series = load_series(
            &vgk,
            CsvFormat::Wide,
            &LoadOptions {
                rf_column: None,
                price_columns: Vec::new(),
                columns: Some(vec!["VGK".to_string()]),
            },
        )?;
        let aligned = align(
            &[
                RawSeries::new("US".to_string(), SeriesKind::Return, mkt.dates.clone(), mkt.values.clone())?,
                vgk_series[0].clone(),
            ],
            AlignPolicy::Intersect,
        )?;
        let pass = (a0 - 3.0).abs() <= 0.5 && (ll + 14029.97).abs() <= 15.0 && t0 > 1.96 && t1 < -1.96 && gap > 500.0;
        Ok((
            pass,
            format!(
                "GARCH alpha0x100 {a0:.2}, loglik {ll:.2}; ESV t(alpha0) {t0:.2}, t(alpha1) {t1:.2}, loglik gap {gap:.1}; VGK overlap {} days",
                aligned.dates.len()
            ),
        ))
    };
    match run() {
        Ok((pass, detail)) => (verdict(pass), detail),
        Err(e) => (Outcome::Fail, format!("error: {e}")),
    }
}

fn write_demo_inputs(dir: &Path) -> PathBuf {
    let mut cfg = joint_config(99);
    cfg.countries.truncate(4);
    cfg.b.truncate(4);
    cfg.gamma.truncate(4);
    cfg.alpha.truncate(4);
    cfg.idio_sd.truncate(4);
    cfg.t = 600;
    cfg.start_date = NaiveDate::from_ymd_opt(2010, 1, 4).expect("date");
    let panel = sim_joint_panel(&cfg).expect("joint simulation");
    let mut text = String::from("date,US,EU");
    for c in &cfg.countries {
        text.push(',');
        text.push_str(c);
    }
    text.push('\n');
    for (t, d) in panel.countries.dates.iter().enumerate() {
        text.push_str(&d.to_string());
        for col in ["US", "EU"] {
            text.push_str(&format!(",{}", panel.factors.column(col).expect("factor")[t]));
        }
        for c in &cfg.countries {
            text.push_str(&format!(",{}", panel.countries.column(c).expect("country")[t]));
        }
        text.push('\n');
    }
    let data = dir.join("panel_in.csv");
    std::fs::write(&data, text).expect("write data");
    let config = dir.join("pipeline.cfg");
    std::fs::write(
        &config,
        "[data]\nreturns = panel_in.csv\nus_column = US\neu_column = EU\n\
         [model]\nus_vol = esv\neu_vol = esv\nus_mean = 3\neu_mean = 3\nparticles = 300\nseed = 17\ncompare = garch:3\n\
         [grid]\nsigma0 = 0.05, 0.1\nphi = 0.95\ntau2 = 0.01\n\
         [windows]\nmay = 2010-05-03, 2010-05-28\naug = 2011-08-01, 2011-08-31\n\
         [output]\ndir = out\n",
    )
    .expect("write config");
    config
}

fn read_all(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).expect("artifact")).collect()
}

fn criterion_8() -> (Outcome, String) {
    let tmp = tempfile::tempdir().expect("temp dir");
    let config = write_demo_inputs(tmp.path());
    let mut cfg = PipelineConfig::load(&config).expect("config");
    assert_eq!(cfg.us_vol, VolModel::Esv);
    let files: Vec<&str> = STAGE1_FILES.iter().chain(STAGE2_FILES.iter()).copied().chain(["manifest.json"]).collect();
    let first_dir = cfg.out_dir.clone();
    let first = run_pipeline(&cfg, 1).expect("first run");
    let first_bytes = read_all(&first_dir, &files);
    cfg.out_dir = tmp.path().join("out2");
    let second = run_pipeline(&cfg, 1).expect("second run");
    let second_bytes = read_all(&cfg.out_dir, &files);
    let identical = first == second && first_bytes == second_bytes;
    for f in STAGE2_FILES {
        std::fs::remove_file(cfg.out_dir.join(f)).expect("remove stage-2 output");
    }
    run_pipeline(&cfg, 2).expect("stage-2 rerun");
    let isolated = read_all(&cfg.out_dir, &files) == second_bytes;
    (
        verdict(identical && isolated),
        format!(
            "{} artifacts byte-identical across runs: {identical}; stage-2 rerun from cached stage-1 identical: {isolated}",
            files.len()
        ),
    )
}

fn main() {
    let only: Option<u8> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let selected = |id: u8| only.is_none_or(|o| o == id);
    let mut reports = Vec::new();
    let studies: Vec<(u8, &'static str, Option<u64>, fn() -> (Outcome, String))> = vec![
        (1, "filter-oracle equivalence", Some(120), criterion_1),
        (2, "grid-search recovery", Some(600), criterion_2),
        (3, "GARCH MLE recovery", Some(300), criterion_3),
        (4, "diagnostics calibration", Some(60), criterion_4),
        (5, "contagion recovery", Some(600), criterion_5),
        (6, "reparameterization invariance", None, criterion_6),
        (7, "real-data replication (data-dependent)", None, criterion_7),
        (8, "determinism", None, criterion_8),
    ];
    for (id, title, budget, study) in studies {
        if selected(id) {
            reports.push(timed(id, title, budget, study));
        }
    }
    let failed: Vec<u8> = reports
        .iter()
        .filter(|r| matches!(r.outcome, Outcome::Fail))
        .map(|r| r.id)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all run criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
