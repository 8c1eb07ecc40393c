//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use favar_core::analysis::{bootstrap_bands, fevd, median_target_select, BootstrapOptions};
use favar_core::factors::{estimate_factors, select_num_factors};
use favar_core::identify::{identify_tax_shock, IdentifyOptions, Sign, SignRestrictionSpec, DEFAULT_PENALTY_SLOPE};
use favar_core::narrative::granger_exogeneity_test;
use favar_core::panel::{standardize_and_balance, BalancePolicy, Quarter, TimeSeriesPanel};
use favar_core::smoothing::{fit_local_linear_trend, lr_test};
use favar_core::synthetic::panel_from_matrix;
use favar_core::synthetic::{normal, normal_matrix, rng, simulate_factor_panel, simulate_var, FactorPanelSpec};
use favar_core::var::{fit_var, VarModel};
use nalgebra::{DMatrix, DVector};

type Check = fn() -> Result<String, String>;

fn main() -> ExitCode {
    let checks: [(&str, Check); 12] = [
        ("LR arithmetic", lr_arithmetic),
        ("HP equivalence", hp_equivalence),
        ("factor recovery", factor_recovery),
        ("IC ordering", ic_ordering),
        ("sign-identification validity", sign_validity),
        ("shock recovery", shock_recovery),
        ("FEVD completeness", fevd_completeness),
        ("bootstrap coverage", bootstrap_coverage),
        ("Granger size", granger_size),
        ("Median-Target selection", median_target),
        ("determinism", determinism),
        ("schema reproduction", schema_reproduction),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{what} took {elapsed:?}, limit {limit:?}"))
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("y{i}")).collect()
}

fn standardized(x: &DMatrix<f64>) -> TimeSeriesPanel {
    let raw = panel_from_matrix(x, Quarter::new(1960, 1).unwrap()).unwrap();
    standardize_and_balance(&raw, BalancePolicy::DropSeries).unwrap().0
}

fn lr_arithmetic() -> Result<String, String> {
    let start = Instant::now();
    let r = lr_test(-0.687, -1.351, 240).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if (r.stat - 318.72).abs() > 1e-10 {
        return Err(format!("statistic {} (expected 318.72)", r.stat));
    }
    within(elapsed, Duration::from_millis(1), "lr_test")?;
    Ok(format!("statistic {} in {elapsed:?}", r.stat))
}

/// Dense solve of `(I + λ D'D) τ = y`.
fn dense_hp(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let mut d = DMatrix::zeros(n - 2, n);
    for i in 0..n - 2 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -2.0;
        d[(i, i + 2)] = 1.0;
    }
    let a = DMatrix::identity(n, n) + d.transpose() * d * lambda;
    let tau = a
        .cholesky()
        .expect("HP system is positive definite")
        .solve(&DVector::from_column_slice(y));
    tau.iter().copied().collect()
}

fn hp_equivalence() -> Result<String, String> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut g = rng(9000 + seed);
        let mut level = 0.0;
        let y: Vec<f64> = (0..240)
            .map(|_| {
                level += normal(&mut g);
                level
            })
            .collect();
        let fit = fit_local_linear_trend(&y, true).map_err(|e| e.to_string())?;
        let hp = dense_hp(&y, 1600.0);
        let scale = hp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = fit.trend.iter().zip(&hp).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / scale);
    }
    within(start.elapsed(), Duration::from_secs(5), "50 series")?;
    if worst < 1e-6 {
        Ok(format!("max relative error {worst:.2e} over 50 series"))
    } else {
        Err(format!("max relative error {worst:.2e}"))
    }
}

/// tr(F'P F) / tr(F'F), P the projection on the centered estimate.
fn trace_r2(truth: &DMatrix<f64>, estimate: &DMatrix<f64>) -> f64 {
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        c
    };
    let f = center(truth);
    let g = center(estimate);
    let coef = (g.transpose() * &g).lu().solve(&(g.transpose() * &f)).unwrap();
    (f.transpose() * (&g * coef)).trace() / (f.transpose() * &f).trace()
}

fn recovery_spec() -> FactorPanelSpec {
    FactorPanelSpec {
        unit_common_variance: true,
        ..FactorPanelSpec::ar1(100, 240, 3, 0.5, 0.5)
    }
}

fn factor_recovery() -> Result<String, String> {
    let start = Instant::now();
    let mut hits = 0;
    let mut min_r2 = f64::INFINITY;
    for seed in 0..50 {
        let sim = simulate_factor_panel(&recovery_spec(), 5000 + seed);
        let panel = standardized(&sim.x);
        let ic = select_num_factors(&panel, 8).map_err(|e| e.to_string())?;
        hits += usize::from(ic.r_hat_icr2 == 3);
        let model = estimate_factors(&panel, 3).map_err(|e| e.to_string())?;
        min_r2 = min_r2.min(trace_r2(&sim.factors, &model.factors));
    }
    within(start.elapsed(), Duration::from_secs(120), "50 panels")?;
    let detail = format!("ICR2 = 3 in {hits}/50 seeds, minimum trace R2 {min_r2:.4}");
    if hits >= 45 && min_r2 > 0.95 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ic_ordering() -> Result<String, String> {
    let mut panels = 0;
    let shapes = [
        (100, 240, 3, 0.5),
        (40, 120, 2, 1.0),
        (20, 60, 1, 2.0),
        (150, 80, 4, 0.3),
    ];
    for (k, &(n, t, r, noise)) in shapes.iter().enumerate() {
        for seed in 0..10 {
            for unit in [false, true] {
                let spec = FactorPanelSpec {
                    unit_common_variance: unit,
                    ..FactorPanelSpec::ar1(n, t, r, noise, 0.5)
                };
                let sim = simulate_factor_panel(&spec, 100 * k as u64 + seed);
                let ic = select_num_factors(&standardized(&sim.x), 8).map_err(|e| e.to_string())?;
                if ic.r_hat_icr2 > ic.r_hat_icr1 {
                    return Err(format!(
                        "N={n}, T={t}, seed {seed}: ICR2 {} > ICR1 {}",
                        ic.r_hat_icr2, ic.r_hat_icr1
                    ));
                }
                panels += 1;
            }
        }
    }
    Ok(format!("ICR2 <= ICR1 on {panels} panels"))
}

/// VAR(1) whose coefficient matrix rotates responses by `theta` each period.
fn rotating_model(theta: f64) -> VarModel {
    let (s, c) = theta.sin_cos();
    let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * 0.9;
    VarModel::from_parts(ids(2), DVector::zeros(2), vec![a], DMatrix::identity(2, 2)).unwrap()
}

/// Structural responses recomputed from the VAR coefficients.
fn responses(model: &VarModel, alpha: &DVector<f64>, horizon: usize) -> Vec<DVector<f64>> {
    let a = &model.coeffs[0];
    let mut out = vec![alpha.clone()];
    for h in 1..=horizon {
        out.push(a * &out[h - 1]);
    }
    out
}

fn sign_validity() -> Result<String, String> {
    let m = rotating_model(0.2);
    let k = 3;
    let spec = SignRestrictionSpec::new(vec![Sign::Negative, Sign::Positive], k, 0, DEFAULT_PENALTY_SLOPE)
        .map_err(|e| e.to_string())?;
    let opts = IdentifyOptions {
        n_target: 1000,
        seed: 2024,
        horizon: 8,
        ..Default::default()
    };
    let set = identify_tax_shock(&m, &spec, &opts).map_err(|e| e.to_string())?;
    if set.accepted.len() != 1000 {
        return Err(format!("only {} draws accepted", set.accepted.len()));
    }
    let mut checked = 0;
    for d in &set.accepted {
        for (h, r) in responses(&m, &d.impulse.alpha, k).iter().enumerate() {
            if !(r[0] < 0.0 && r[1] > 0.0) {
                return Err(format!("draw {} violates the signs at h = {h}: {r:?}", d.index));
            }
            checked += 2;
        }
    }
    Ok(format!(
        "1000 of 1000 draws valid ({checked} restricted responses checked)"
    ))
}

fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn shock_recovery() -> Result<String, String> {
    // The responses rotate by θ per quarter, so a (+, −) pattern holding for
    // h = 0..4 confines the impact angle to (−90°, −4θ); the true shock sits
    // in the middle of that cone and the other shock is orthogonal to it.
    let start = Instant::now();
    let theta = 17.5f64.to_radians();
    let truth_angle = (-80.0f64).to_radians();
    let truth = [truth_angle.cos(), truth_angle.sin()];
    let b = DMatrix::from_row_slice(2, 2, &[truth[0], -truth[1], truth[1], truth[0]]);
    let (s, c) = theta.sin_cos();
    let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]) * 0.9;
    let spec = SignRestrictionSpec::new(vec![Sign::Positive, Sign::Negative], 4, 1, DEFAULT_PENALTY_SLOPE)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let y = simulate_var(
            &DVector::zeros(2),
            std::slice::from_ref(&a),
            &b,
            500,
            100,
            &mut rng(300 + seed),
        );
        let m = fit_var(&y, 1, ids(2)).map_err(|e| e.to_string())?;
        let opts = IdentifyOptions {
            n_target: 500,
            seed,
            horizon: 4,
            ..Default::default()
        };
        let set = identify_tax_shock(&m, &spec, &opts).map_err(|e| e.to_string())?;
        let med: Vec<f64> = (0..2)
            .map(|j| median(set.accepted.iter().map(|d| d.impulse.alpha[j]).collect()))
            .collect();
        worst = worst.max(angle_deg(&med, &truth));
    }
    within(start.elapsed(), Duration::from_secs(60), "20 seeds")?;
    if worst < 20.0 {
        Ok(format!("largest angular error {worst:.2} degrees over 20 seeds"))
    } else {
        Err(format!("largest angular error {worst:.2} degrees"))
    }
}

fn random_stable_model(n: usize, p: usize, seed: u64) -> VarModel {
    let mut g = rng(seed);
    loop {
        let coeffs: Vec<DMatrix<f64>> = (0..p).map(|_| normal_matrix(n, n, &mut g) * (0.5 / n as f64)).collect();
        let b = normal_matrix(n, n, &mut g);
        let sigma = &b * b.transpose() + DMatrix::identity(n, n) * 0.05;
        let m = VarModel::from_parts(ids(n), DVector::zeros(n), coeffs, sigma).unwrap();
        if m.is_stable() {
            return m;
        }
    }
}

fn fevd_completeness() -> Result<String, String> {
    let horizons: Vec<usize> = (1..=24).collect();
    let mut worst = 0.0f64;
    let mut models = 0;
    for (n, p) in [(2, 1), (3, 2), (5, 4), (8, 2)] {
        for seed in 0..10 {
            let m = random_stable_model(n, p, 40 * n as u64 + seed);
            let mut total = DMatrix::zeros(horizons.len(), n);
            for j in 0..n {
                total += fevd(&m, &m.chol.column(j).into_owned(), &horizons)
                    .map_err(|e| e.to_string())?
                    .shares;
            }
            worst = total.iter().fold(worst, |w, s| w.max((s - 100.0).abs()));
            models += 1;
        }
    }
    if worst <= 1e-6 {
        Ok(format!("largest deviation from 100 is {worst:.2e} over {models} VARs"))
    } else {
        Err(format!("largest deviation from 100 is {worst:.2e}"))
    }
}

fn bootstrap_coverage() -> Result<String, String> {
    let start = Instant::now();
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.4]);
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let chol = sigma.clone().cholesky().unwrap().l();
    let horizon = 8;
    // True responses to the first Cholesky shock, oriented as a cut.
    let truth = VarModel::from_parts(ids(2), DVector::zeros(2), vec![a.clone()], sigma).unwrap();
    let truth_irf = responses(&truth, &(-chol.column(0).into_owned()), horizon);
    let q = DVector::from_vec(vec![1.0, 0.0]);
    let spec = SignRestrictionSpec::vacuous(2, 0).map_err(|e| e.to_string())?;
    let (mut covered, mut cells) = (0usize, 0usize);
    for trial in 0..200 {
        let y = simulate_var(
            &DVector::zeros(2),
            std::slice::from_ref(&a),
            &chol,
            240,
            100,
            &mut rng(7000 + trial),
        );
        let m = fit_var(&y, 1, ids(2)).map_err(|e| e.to_string())?;
        let opts = BootstrapOptions {
            replications: 200,
            level: 0.9,
            seed: trial,
            horizon,
            ..Default::default()
        };
        let bands = bootstrap_bands(&y, &m, &q, &spec, &IdentifyOptions::default(), &opts)
            .map_err(|e| e.to_string())?
            .bands;
        for (h, r) in truth_irf.iter().enumerate() {
            for j in 0..2 {
                cells += 1;
                covered += usize::from(bands.lower[(h, j)] <= r[j] && r[j] <= bands.upper[(h, j)]);
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(600), "200 trials")?;
    let rate = covered as f64 / cells as f64;
    let detail = format!("pointwise coverage {:.1}% over 200 trials", 100.0 * rate);
    if (0.83..=0.97).contains(&rate) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn granger_size() -> Result<String, String> {
    let mut rejections = 0;
    for seed in 0..500 {
        let x = normal_matrix(240, 2, &mut rng(20_000 + seed));
        let tax: Vec<f64> = x.column(0).iter().copied().collect();
        let pred: Vec<f64> = x.column(1).iter().copied().collect();
        let r = granger_exogeneity_test(&tax, &pred, "x", 4).map_err(|e| e.to_string())?;
        rejections += usize::from(r.p_value < 0.05);
    }
    let rate = rejections as f64 / 500.0;
    let detail = format!("rejection rate {:.1}% over 500 seeds", 100.0 * rate);
    if (0.02..=0.08).contains(&rate) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Standardized squared distance of every draw to the pointwise median.
fn mt_gaps(draws: &[DMatrix<f64>]) -> Vec<f64> {
    let (rows, cols) = draws[0].shape();
    let mut gaps = vec![0.0; draws.len()];
    for i in 0..rows {
        for j in 0..cols {
            let cell: Vec<f64> = draws.iter().map(|d| d[(i, j)]).collect();
            let mean = cell.iter().sum::<f64>() / cell.len() as f64;
            let var = cell.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cell.len() - 1) as f64;
            if var == 0.0 {
                continue;
            }
            let med = median(cell.clone());
            for (g, v) in gaps.iter_mut().zip(&cell) {
                *g += (v - med).powi(2) / var;
            }
        }
    }
    gaps
}

fn median_target() -> Result<String, String> {
    let mut g = rng(77);
    for trial in 0..20 {
        let draws: Vec<DMatrix<f64>> = (0..50 + trial).map(|_| normal_matrix(21, 4, &mut g)).collect();
        let mt = median_target_select(&draws).map_err(|e| e.to_string())?;
        let gaps = mt_gaps(&draws);
        let best = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        if (mt.gap - best).abs() > 1e-9 * best.max(1.0) || (gaps[mt.selected_draw] - best).abs() > 1e-9 * best {
            return Err(format!(
                "trial {trial}: selected gap {} but the minimum is {best}",
                mt.gap
            ));
        }
    }
    // An odd cloud split evenly above and below a draw that is the median
    // in every cell.
    let mut draws = vec![DMatrix::from_element(6, 3, 0.25)];
    for k in 0..40 {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        draws.push(normal_matrix(6, 3, &mut g).abs() * sign + DMatrix::from_element(6, 3, 0.25 + 0.01 * sign));
    }
    let mt = median_target_select(&draws).map_err(|e| e.to_string())?;
    if mt.selected_draw != 0 || mt.gap != 0.0 {
        return Err(format!(
            "median draw not selected: draw {} with gap {}",
            mt.selected_draw, mt.gap
        ));
    }
    Ok("exact minimum in 20 clouds; the median draw has gap 0".into())
}

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join("config.toml")
}

fn run_all(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_favar"))
        .arg("run-all")
        .arg("--config")
        .arg(fixture_config())
        .arg("--output-dir")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!(
            "run-all failed: {}",
            String::from_utf8_lossy(&status.stderr).trim()
        ))
    }
}

fn read_dir(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_all(&a)?;
    run_all(&b)?;
    let (fa, fb) = (read_dir(&a)?, read_dir(&b)?);
    if fa.keys().ne(fb.keys()) {
        return Err("the runs wrote different file sets".into());
    }
    // Wall-clock timings are the one output that legitimately varies.
    let timing = favar_cli::manifest::TIMINGS_FILE;
    let differing: Vec<&String> = fa
        .iter()
        .filter(|(k, v)| *k != timing && fb[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    if differing.is_empty() {
        Ok(format!(
            "{} files byte-identical across two runs (timings file excluded)",
            fa.len() - 1
        ))
    } else {
        Err(format!("files differ: {differing:?}"))
    }
}

fn header(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let head = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok((head, rows))
}

fn expect_table(dir: &Path, file: &str, columns: &[&str], first_column: &[String]) -> Result<(), String> {
    let (head, rows) = header(&dir.join(file))?;
    if head != columns {
        return Err(format!("{file}: columns {head:?}, expected {columns:?}"));
    }
    let keys: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
    if keys != first_column {
        return Err(format!("{file}: rows {keys:?}, expected {first_column:?}"));
    }
    if let Some(bad) = rows.iter().flatten().find(|c| c.is_empty()) {
        return Err(format!("{file}: empty cell {bad:?}"));
    }
    Ok(())
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn schema_reproduction() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("run");
    run_all(&out)?;
    let series = strings(&[
        "GDP", "PCE", "INV", "UNEMP", "DPI", "CPI", "IP", "EMP", "GOV", "FFR", "SP500", "HOURS",
    ]);
    let table_vars = strings(&["GDP", "PCE", "INV", "GOV", "IP", "UNEMP", "EMP", "CPI"]);
    let fevd_cols = ["variable", "h1", "h5", "h10", "h15", "h20"];

    // Granger causality tests.
    let granger_cols = [
        "variable",
        "Federal PIT",
        "Narrative PIT",
        "Federal CIT",
        "Narrative CIT",
    ];
    expect_table(&out, "granger_table.csv", &granger_cols, &series)?;
    // Importance of principal components.
    let pcs: Vec<String> = (1..=10).map(|k| format!("PC{k}")).collect();
    expect_table(
        &out,
        "pc_importance.csv",
        &["component", "std_dev", "eigenvalue", "proportion", "cumulative"],
        &pcs,
    )?;
    // Trend-cycle estimates and LR tests.
    let factor_rows = strings(&["F1", "F1", "F2", "F2"]);
    let smooth_cols = [
        "factor",
        "model",
        "sigma_cycle",
        "sigma_omega",
        "sigma_omega_se",
        "q",
        "loglik",
    ];
    let (head, rows) = header(&out.join("smoothing_summary.csv"))?;
    let keys: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
    if head != smooth_cols || keys != factor_rows {
        return Err(format!("smoothing_summary.csv: columns {head:?}, rows {keys:?}"));
    }
    expect_table(
        &out,
        "lr_test.csv",
        &["factor", "stat", "dof", "p_value"],
        &strings(&["F1", "F2"]),
    )?;
    // Cumulative responses: every table variable for both shocks at h = 4, 12.
    let (head, rows) = header(&out.join("cumulative_irf.csv"))?;
    if head != ["variable", "shock", "horizon", "value"] {
        return Err(format!("cumulative_irf.csv: columns {head:?}"));
    }
    for v in &table_vars {
        for shock in ["PIT", "CIT"] {
            for h in ["4", "12"] {
                if !rows
                    .iter()
                    .any(|r| &r[0] == v && r[1] == shock && r[2] == h && !r[3].is_empty())
                {
                    return Err(format!("cumulative_irf.csv: missing {v} / {shock} / h={h}"));
                }
            }
        }
    }
    // Variance decompositions: the table variables appear in both shocks.
    for file in ["fevd_pit.csv", "fevd_cit.csv"] {
        let (head, rows) = header(&out.join(file))?;
        if head != fevd_cols {
            return Err(format!("{file}: columns {head:?}"));
        }
        for v in &table_vars {
            let row = rows
                .iter()
                .find(|r| &r[0] == v)
                .ok_or(format!("{file}: no row for {v}"))?;
            for cell in &row[1..] {
                let share: f64 = cell.parse().map_err(|_| format!("{file}: {v} share {cell:?}"))?;
                if !(0.0..=100.0).contains(&share) {
                    return Err(format!("{file}: {v} share {share} outside [0, 100]"));
                }
            }
        }
    }
    // Model reliability for 1..8 factors.
    let counts: Vec<String> = (1..=8).map(|k| k.to_string()).collect();
    expect_table(
        &out,
        "reliability.csv",
        &["factors", "pit_rmse", "pit_explained", "cit_rmse", "cit_explained"],
        &counts,
    )?;

    let report = std::fs::read_to_string(out.join("report.md")).map_err(|e| e.to_string())?;
    let sections = [
        "## Granger causality tests",
        "## Importance of principal components",
        "## Trend-cycle model estimates",
        "## Cumulative responses",
        "## Forecast error variance decomposition: PIT shock",
        "## Forecast error variance decomposition: CIT shock",
        "## Model reliability",
    ];
    for s in sections {
        if !report.contains(s) {
            return Err(format!("report lacks the section {s:?}"));
        }
    }
    for v in &table_vars {
        if !report.contains(&format!("| {v} |")) {
            return Err(format!("report has no row for {v}"));
        }
    }
    if report.contains("Not available") {
        return Err("report marks a table as not available".into());
    }
    Ok(format!("{} tables and {} report sections match", 10, sections.len()))
}
