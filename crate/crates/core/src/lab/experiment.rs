//! Experiment runners and their CSV tables.
//!
//! Each cell of an experiment (a volatility level, a maturity, a parameter
//! draw) gets its own seed derived from the plan seed and the cell index, so
//! results do not depend on how cells are scheduled.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::plan::{ErrorSpace, ExperimentKind, ExperimentPlan, ModelFamily};
use super::{estimate_skew_fd, invert, mix_seed, IvPoint, LabError, SkewEstimate};
use crate::analytic::{bs_vega, implied_vol, BsQuote};
use crate::asymptotics::{atm_level, atm_skew_closed, price_proxy, proxy_iv, proxy_slope, SkewSource};
use crate::mc::McEstimate;
use crate::mc::{price_asian, price_asian_strikes, McConfig};
use crate::model::{MarketSetup, ModelSpec};
use crate::paths::{fill_normals, GaussianDriver, JointGaussianSampler, TimeGrid};
use crate::stats::{fit_line, summary};

/// A rectangular result with one header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        self.write_records(&mut w).expect("writing to memory cannot fail");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LabError> {
        let err = |e: &dyn std::fmt::Display| LabError::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
        self.write_records(&mut w).map_err(|e| err(&e))?;
        w.flush().map_err(|e| err(&e))
    }

    fn write_records<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Ten significant digits, as written to every CSV.
pub fn num(x: f64) -> String {
    format!("{x:.9e}")
}

fn status<T>(r: &Result<T, LabError>) -> String {
    match r {
        Ok(_) => "ok".into(),
        Err(e) => e.to_string(),
    }
}

#[derive(Debug)]
pub struct LevelRow {
    pub sigma0: f64,
    pub theory_level: f64,
    pub price: f64,
    pub price_stderr: f64,
    pub point: Result<IvPoint, LabError>,
}

pub fn level_sweep(plan: &ExperimentPlan) -> Result<Vec<LevelRow>, LabError> {
    let market = plan.market.setup()?.with_strike(plan.market.s0);
    let base = plan.model.spec();
    let cfg = plan.mc_config();
    Ok(plan
        .sweep
        .sigma0
        .par_iter()
        .enumerate()
        .map(|(i, &sigma0)| {
            let model = base.with_sigma0(sigma0);
            let cell = McConfig {
                seed: mix_seed(plan.seed, i as u64),
                ..cfg
            };
            let (price, price_stderr, point) = match price_asian(&model, &market, &cell) {
                Ok(e) => (
                    e.mean,
                    e.stderr,
                    invert(e.mean, e.stderr, &market, market.atm_log_strike()),
                ),
                Err(e) => (f64::NAN, f64::NAN, Err(e.into())),
            };
            LevelRow {
                sigma0,
                theory_level: atm_level(sigma0),
                price,
                price_stderr,
                point,
            }
        })
        .collect())
}

#[derive(Debug)]
pub struct SkewRow {
    /// `sigma0` in a volatility sweep, the maturity in a maturity sweep.
    pub x: f64,
    pub maturity: f64,
    /// `T^(1/2 - H)` for rough models, 1 otherwise.
    pub scale: f64,
    /// Slope of the linear smile at this maturity.
    pub theory_skew: f64,
    /// Short-maturity limit (scaled for rough models).
    pub theory_limit: f64,
    pub estimate: Result<SkewEstimate, LabError>,
}

impl SkewRow {
    pub fn skew(&self) -> f64 {
        self.estimate.as_ref().map_or(f64::NAN, |e| e.slope)
    }
}

fn skew_row(x: f64, model: &ModelSpec, market: &MarketSetup, cfg: &McConfig, dk: f64) -> Result<SkewRow, LabError> {
    let t = market.maturity;
    let h = model.hurst();
    Ok(SkewRow {
        x,
        maturity: t,
        scale: if h < 0.5 { t.powf(0.5 - h) } else { 1.0 },
        theory_skew: proxy_slope(model, market, SkewSource::GeneralAtT)?,
        theory_limit: atm_skew_closed(model, market).skew,
        estimate: estimate_skew_fd(model, market, cfg, dk),
    })
}

pub fn skew_sweep(plan: &ExperimentPlan) -> Result<Vec<SkewRow>, LabError> {
    let market = plan.market.setup()?.with_strike(plan.market.s0);
    let base = plan.model.spec();
    let cfg = plan.mc_config();
    plan.sweep
        .sigma0
        .par_iter()
        .enumerate()
        .map(|(i, &sigma0)| {
            let cell = McConfig {
                seed: mix_seed(plan.seed, i as u64),
                ..cfg
            };
            skew_row(sigma0, &base.with_sigma0(sigma0), &market, &cell, plan.sweep.dk)
        })
        .collect()
}

pub fn skew_vs_maturity(plan: &ExperimentPlan) -> Result<Vec<SkewRow>, LabError> {
    let market = plan.market.setup()?.with_strike(plan.market.s0);
    let model = plan.model.spec();
    let cfg = plan.mc_config();
    plan.sweep
        .maturities
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let cell = McConfig {
                seed: mix_seed(plan.seed, i as u64),
                ..cfg
            };
            skew_row(t, &model, &market.with_maturity(t), &cell, plan.sweep.dk)
        })
        .collect()
}

/// Least-squares fit of the skew against `T^(H - 1/2)` (rough) or `T`.
fn maturity_fit(rows: &[SkewRow], hurst: f64) -> Option<(f64, f64)> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.skew().is_finite())
        .map(|r| {
            let reg = if hurst < 0.5 {
                r.maturity.powf(hurst - 0.5)
            } else {
                r.maturity
            };
            (reg, r.skew())
        })
        .unzip();
    fit_line(&x, &y)
}

/// Error statistics of one `(maturity, strike)` cell, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyCell {
    pub maturity: f64,
    pub strike: f64,
    pub median_error: f64,
    pub q90_error: f64,
    pub max_error: f64,
    /// Median of `100 * CI half-width / MC value`, in the plan's error space.
    pub median_mc_accuracy: f64,
    pub n_valid: usize,
    pub n_flagged: usize,
}

fn sample_model(plan: &ExperimentPlan, rng: &mut ChaCha8Rng) -> (ModelSpec, f64) {
    let p = &plan.proxy;
    let mut draw = |r: [f64; 2]| {
        if r[0] < r[1] {
            rng.random_range(r[0]..r[1])
        } else {
            r[0]
        }
    };
    let sigma0 = draw(p.sigma0_range);
    let vv = draw(p.vol_of_vol_range);
    let rho = draw(p.rho_range);
    let model = match plan.model.family {
        ModelFamily::FBergomi => ModelSpec::FractionalBergomi {
            sigma0,
            vov: vv,
            hurst: plan.model.hurst,
        },
        _ => ModelSpec::Sabr { sigma0, alpha: vv },
    };
    (model, rho)
}

/// Relative error of the proxy against Monte Carlo, and the MC accuracy, per strike;
/// `None` where the MC value is unusable (non-positive price, failed inversion).
type CellSamples = Vec<Option<(f64, f64)>>;

fn proxy_sample(
    model: &ModelSpec,
    market: &MarketSetup,
    e: &McEstimate,
    k: f64,
    plan: &ExperimentPlan,
) -> Result<Option<(f64, f64)>, LabError> {
    let source = plan.proxy.skew_source;
    let rel = |proxy: f64, mc: f64, half_width: f64| {
        (proxy.is_finite() && mc > 0.0).then(|| (100.0 * (proxy - mc).abs() / mc, 100.0 * half_width / mc))
    };
    match plan.proxy.error_space {
        ErrorSpace::Price => Ok(rel(price_proxy(model, market, k, source)?, e.mean, e.half_width())),
        ErrorSpace::Iv => {
            let x = market.atm_log_strike();
            let t = market.maturity;
            let Ok(iv) = implied_vol(e.mean, x, k, t) else {
                return Ok(None);
            };
            let vega = bs_vega(&BsQuote::new(x, k, t, iv));
            Ok(rel(proxy_iv(model, market, k, source)?, iv, e.half_width() / vega))
        }
    }
}

pub fn proxy_error_table(plan: &ExperimentPlan) -> Result<Vec<ProxyCell>, LabError> {
    plan.validate()?;
    let p = &plan.proxy;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(plan.seed, u64::MAX));
    let draws: Vec<(ModelSpec, f64)> = (0..p.samples).map(|_| sample_model(plan, &mut rng)).collect();
    let n_mat = p.maturities.len();
    let cfg = plan.mc_config();

    let jobs: Vec<(usize, usize)> = (0..p.samples).flat_map(|s| (0..n_mat).map(move |t| (s, t))).collect();
    let results: Vec<Result<CellSamples, LabError>> = jobs
        .par_iter()
        .map(|&(s, ti)| {
            let (model, rho) = &draws[s];
            let market = MarketSetup::new(p.s0, p.s0, p.maturities[ti], *rho)?;
            let cell = McConfig {
                seed: mix_seed(plan.seed, (s * n_mat + ti) as u64),
                ..cfg
            };
            let strip = price_asian_strikes(model, &market, &p.strikes, &cell)?;
            strip
                .estimates
                .iter()
                .zip(&p.strikes)
                .map(|(e, &k)| proxy_sample(model, &market, e, k.ln(), plan))
                .collect()
        })
        .collect();

    let mut per_cell: Vec<Vec<Option<(f64, f64)>>> = vec![Vec::with_capacity(p.samples); n_mat * p.strikes.len()];
    for (&(_, ti), res) in jobs.iter().zip(results) {
        let row = match res {
            Ok(row) => row,
            Err(_) => vec![None; p.strikes.len()],
        };
        for (ki, v) in row.into_iter().enumerate() {
            per_cell[ti * p.strikes.len() + ki].push(v);
        }
    }

    let mut cells = Vec::with_capacity(per_cell.len());
    for (idx, samples) in per_cell.iter().enumerate() {
        let (ti, ki) = (idx / p.strikes.len(), idx % p.strikes.len());
        let errors: Vec<f64> = samples.iter().flatten().map(|v| v.0).collect();
        let accuracy: Vec<f64> = samples.iter().flatten().map(|v| v.1).collect();
        let (median, q90, max) = summary(&errors, 0.9).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        let acc = summary(&accuracy, 0.5).map_or(f64::NAN, |s| s.0);
        cells.push(ProxyCell {
            maturity: p.maturities[ti],
            strike: p.strikes[ki],
            median_error: median,
            q90_error: q90,
            max_error: max,
            median_mc_accuracy: acc,
            n_valid: errors.len(),
            n_flagged: samples.len() - errors.len(),
        });
    }
    Ok(cells)
}

/// Sample versus analytic covariance of one `(W', Z)` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CovResidual {
    pub hurst: f64,
    pub row: usize,
    pub col: usize,
    pub row_label: String,
    pub col_label: String,
    pub analytic: f64,
    pub sample: f64,
    pub stderr: f64,
}

impl CovResidual {
    pub fn z_score(&self) -> f64 {
        if self.stderr > 0.0 {
            (self.sample - self.analytic) / self.stderr
        } else {
            0.0
        }
    }
}

/// Draws `samples` joint vectors and compares `E[X_i X_j]` with the analytic covariance.
pub fn fbm_covariance_check(
    grid: &TimeGrid,
    hurst: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<CovResidual>, LabError> {
    let sampler = JointGaussianSampler::new(grid, hurst)?;
    let m = grid.steps();
    let d = 2 * m;
    let mut rng = GaussianDriver::new(seed, 0).rng();
    let mut normals = vec![0.0; d];
    let mut w = vec![0.0; m + 1];
    let mut z = vec![0.0; m + 1];
    let mut x = vec![0.0; d];
    let n_pairs = d * (d + 1) / 2;
    let mut sum = vec![0.0; n_pairs];
    let mut sum_sq = vec![0.0; n_pairs];
    for _ in 0..samples {
        fill_normals(&mut rng, &mut normals);
        sampler.sample_into(&normals, 1.0, &mut w, &mut z);
        x[..m].copy_from_slice(&w[1..]);
        x[m..].copy_from_slice(&z[1..]);
        let mut idx = 0;
        for i in 0..d {
            for j in 0..=i {
                let p = x[i] * x[j];
                sum[idx] += p;
                sum_sq[idx] += p * p;
                idx += 1;
            }
        }
    }
    let label = |i: usize| {
        if i < m {
            format!("w_{}", i + 1)
        } else {
            format!("z_{}", i - m + 1)
        }
    };
    let n = samples as f64;
    let cov = sampler.covariance();
    let mut out = Vec::with_capacity(n_pairs);
    let mut idx = 0;
    for i in 0..d {
        for j in 0..=i {
            let mean = sum[idx] / n;
            let var = ((sum_sq[idx] - n * mean * mean) / (n - 1.0)).max(0.0);
            out.push(CovResidual {
                hurst,
                row: i,
                col: j,
                row_label: label(i),
                col_label: label(j),
                analytic: cov[(i, j)],
                sample: mean,
                stderr: (var / n).sqrt(),
            });
            idx += 1;
        }
    }
    Ok(out)
}

/// Builds the CSV table of a plan without writing it.
pub fn experiment_table(plan: &ExperimentPlan) -> Result<Table, LabError> {
    plan.validate()?;
    match plan.kind {
        ExperimentKind::LevelSweep => {
            let mut t = Table::new(&[
                "sigma0",
                "iv",
                "iv_stderr",
                "theory_level",
                "price",
                "price_stderr",
                "status",
            ]);
            for r in level_sweep(plan)? {
                let (iv, se) = r.point.as_ref().map_or((f64::NAN, f64::NAN), |p| (p.iv, p.iv_stderr));
                t.push(vec![
                    num(r.sigma0),
                    num(iv),
                    num(se),
                    num(r.theory_level),
                    num(r.price),
                    num(r.price_stderr),
                    status(&r.point),
                ]);
            }
            Ok(t)
        }
        ExperimentKind::SkewSweep => {
            let mut t = Table::new(&[
                "sigma0",
                "maturity",
                "skew",
                "skew_stderr",
                "scaled_skew",
                "theory_skew",
                "theory_scaled_skew",
                "theory_limit",
                "status",
            ]);
            for r in skew_sweep(plan)? {
                t.push(skew_cells(&r, true));
            }
            Ok(t)
        }
        ExperimentKind::SkewVsT => {
            let rows = skew_vs_maturity(plan)?;
            let (a, b) = maturity_fit(&rows, plan.model.spec().hurst()).unwrap_or((f64::NAN, f64::NAN));
            let mut t = Table::new(&[
                "maturity",
                "skew",
                "skew_stderr",
                "scaled_skew",
                "theory_skew",
                "theory_scaled_skew",
                "theory_limit",
                "status",
                "fit_intercept",
                "fit_slope",
            ]);
            for r in &rows {
                let mut cells = skew_cells(r, false);
                cells.push(num(a));
                cells.push(num(b));
                t.push(cells);
            }
            Ok(t)
        }
        ExperimentKind::ProxyErrorTable => {
            let mut t = Table::new(&[
                "maturity",
                "strike",
                "median_error_pct",
                "q90_error_pct",
                "max_error_pct",
                "median_mc_accuracy_pct",
                "n_valid",
                "n_flagged",
            ]);
            for c in proxy_error_table(plan)? {
                t.push(vec![
                    num(c.maturity),
                    num(c.strike),
                    num(c.median_error),
                    num(c.q90_error),
                    num(c.max_error),
                    num(c.median_mc_accuracy),
                    c.n_valid.to_string(),
                    c.n_flagged.to_string(),
                ]);
            }
            Ok(t)
        }
        ExperimentKind::FbmCheck => {
            let mut t = Table::new(&[
                "hurst",
                "row",
                "col",
                "row_label",
                "col_label",
                "analytic",
                "sample",
                "stderr",
                "z_score",
            ]);
            let grid = TimeGrid::new(plan.fbm.maturity, plan.fbm.steps)?;
            for (i, &h) in plan.fbm.hurst.iter().enumerate() {
                for r in fbm_covariance_check(&grid, h, plan.fbm.samples, mix_seed(plan.seed, i as u64))? {
                    t.push(vec![
                        num(r.hurst),
                        r.row.to_string(),
                        r.col.to_string(),
                        r.row_label.clone(),
                        r.col_label.clone(),
                        num(r.analytic),
                        num(r.sample),
                        num(r.stderr),
                        num(r.z_score()),
                    ]);
                }
            }
            Ok(t)
        }
    }
}

fn skew_cells(r: &SkewRow, with_maturity: bool) -> Vec<String> {
    let (skew, se) = r
        .estimate
        .as_ref()
        .map_or((f64::NAN, f64::NAN), |e| (e.slope, e.stderr));
    let mut cells = vec![num(r.x)];
    if with_maturity {
        cells.push(num(r.maturity));
    }
    cells.extend([
        num(skew),
        num(se),
        num(r.scale * skew),
        num(r.theory_skew),
        num(r.scale * r.theory_skew),
        num(r.theory_limit),
        status(&r.estimate),
    ]);
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub path: PathBuf,
    pub rows: usize,
    /// Rows whose status is not `ok`.
    pub flagged: usize,
}

/// Runs the plan and writes its CSV to `plan.output`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport, LabError> {
    let path = plan
        .output
        .clone()
        .ok_or_else(|| LabError::Plan("no output path given".into()))?;
    let table = experiment_table(plan)?;
    table.write_csv(&path)?;
    let flagged = match table.column("status") {
        Some(c) => table.rows.iter().filter(|r| r[c] != "ok").count(),
        None => 0,
    };
    Ok(ExperimentReport {
        path,
        rows: table.rows.len(),
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(kind: ExperimentKind) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(kind);
        p.mc.n_paths = 2000;
        p.mc.steps = 10;
        p
    }

    #[test]
    fn level_sweep_has_one_row_per_level() {
        let mut p = small_plan(ExperimentKind::LevelSweep);
        p.mc.estimator = crate::mc::Estimator::CvAntithetic;
        let t = experiment_table(&p).unwrap();
        assert_eq!(t.rows.len(), 14);
        assert_eq!(&t.header[..4], &["sigma0", "iv", "iv_stderr", "theory_level"]);
        for (row, sigma) in t.rows.iter().zip(&p.sweep.sigma0) {
            assert_eq!(row[3], num(atm_level(*sigma)));
            assert_eq!(row[6], "ok");
        }
        assert_eq!(num(0.1), "1.000000000e-1");
    }

    #[test]
    fn failing_cells_are_flagged_not_fatal() {
        let mut p = small_plan(ExperimentKind::LevelSweep);
        p.sweep.sigma0 = vec![0.3, 1e-9];
        let t = experiment_table(&p).unwrap();
        assert_eq!(t.rows[0][6], "ok");
        assert_ne!(t.rows[1][6], "ok");
        assert_eq!(t.rows[1][1], "NaN");
        // the message survives csv quoting
        let text = t.to_csv_string();
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn maturity_sweep_carries_fit_columns() {
        let mut p = small_plan(ExperimentKind::SkewVsT);
        p.model.family = ModelFamily::FBergomi;
        p.sweep.maturities = vec![0.001, 0.004, 0.016];
        let t = experiment_table(&p).unwrap();
        assert_eq!(t.header[0], "maturity");
        assert_eq!(t.header.len(), 10);
        assert!(t.rows.iter().all(|r| r.len() == 10));
        let a = t.column("fit_intercept").unwrap();
        assert!(t.rows.iter().all(|r| r[a] == t.rows[0][a]));
    }

    #[test]
    fn proxy_table_shape() {
        let mut p = small_plan(ExperimentKind::ProxyErrorTable);
        p.model.family = ModelFamily::Sabr;
        p.proxy.samples = 3;
        p.proxy.maturities = vec![0.01, 0.1];
        let cells = proxy_error_table(&p).unwrap();
        assert_eq!(cells.len(), 16);
        assert!(cells.iter().all(|c| c.n_valid + c.n_flagged == 3));
        let atm = cells.iter().find(|c| c.maturity == 0.01 && c.strike == 100.0).unwrap();
        assert!(atm.median_error.is_finite() && atm.median_error >= 0.0);
    }

    #[test]
    fn price_space_errors_are_small_in_the_money() {
        let mut p = small_plan(ExperimentKind::ProxyErrorTable);
        p.model.family = ModelFamily::Sabr;
        p.proxy.samples = 3;
        p.proxy.maturities = vec![0.01];
        p.proxy.strikes = vec![90.0];
        let iv = proxy_error_table(&p).unwrap()[0];
        p.proxy.error_space = ErrorSpace::Price;
        let price = proxy_error_table(&p).unwrap()[0];
        // Intrinsic value dominates a deep in-the-money price, never its implied volatility.
        assert_eq!(price.n_flagged, 0);
        assert!(price.max_error < 0.1, "{price:?}");
        assert!(
            iv.n_valid == 0 || iv.median_error > price.median_error,
            "{iv:?} {price:?}"
        );
    }

    #[test]
    fn fbm_residuals_cover_the_lower_triangle() {
        let grid = TimeGrid::new(1.0, 3).unwrap();
        let r = fbm_covariance_check(&grid, 0.4, 20_000, 5).unwrap();
        assert_eq!(r.len(), 21);
        assert!(r.iter().all(|c| c.z_score().abs() < 6.0), "{r:?}");
        assert_eq!(r[0].row_label, "w_1");
        assert_eq!(r[20].row_label, "z_3");
    }

    #[test]
    fn identical_plans_write_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = small_plan(ExperimentKind::SkewSweep);
        p.sweep.sigma0 = vec![0.2, 0.5];
        let mut bytes = Vec::new();
        for name in ["a.csv", "b.csv"] {
            p.output = Some(dir.path().join(name));
            let rep = run_experiment(&p).unwrap();
            assert_eq!(rep.rows, 2);
            bytes.push(std::fs::read(&rep.path).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        p.output = Some(dir.path().join("missing/dir/x.csv"));
        assert!(matches!(run_experiment(&p), Err(LabError::Output { .. })));
    }
}
