//! Command-line front end: single computations and TOML-driven experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asian_vol::asymptotics::{atm_skew_closed, atm_skew_general, proxy_slope, SkewMode, SkewSource};
use asian_vol::lab::{
    estimate_atm_iv, estimate_skew_fd, experiment_table, num, ExperimentKind, ExperimentPlan, LabError, ModelFamily,
    Table,
};
use asian_vol::mc::{price_asian, CvMode, Estimator};
use asian_vol::model::{skew_kernel, spot_vol};
use asian_vol::paths::AveragingRule;

#[derive(Parser)]
#[command(
    name = "asian-vol",
    version,
    about = "Asian option implied volatility: Monte Carlo and short-maturity asymptotics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo price of the arithmetic Asian call.
    Price(Shared),
    /// At-the-money implied volatility from a Monte Carlo price.
    Iv(Shared),
    /// Finite-difference ATM skew from Monte Carlo prices.
    Skew {
        #[command(flatten)]
        shared: Shared,
        /// Relative strike bump.
        #[arg(long, default_value_t = asian_vol::lab::DEFAULT_DK)]
        dk: f64,
    },
    /// Closed-form and quadrature ATM level and skew.
    Asymptotics(Shared),
    /// Run an experiment plan; flags override keys of the plan.
    Experiment {
        plan: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
    /// Sample versus analytic covariance of the (W', Z) generator.
    FbmCheck(Shared),
}

#[derive(Args, Default)]
struct Shared {
    #[arg(long, value_parser = parse_with::<ModelFamily>)]
    model: Option<ModelFamily>,
    #[arg(long)]
    s0: Option<f64>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    maturity: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    vov: Option<f64>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long = "cev-nu")]
    cev_nu: Option<f64>,
    #[arg(long = "cev-beta")]
    cev_beta: Option<f64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_with::<Estimator>)]
    estimator: Option<Estimator>,
    #[arg(long = "cv-mode", value_parser = parse_with::<CvMode>)]
    cv_mode: Option<CvMode>,
    #[arg(long, value_parser = parse_with::<AveragingRule>)]
    averaging: Option<AveragingRule>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_with<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

impl Shared {
    fn apply(&self, plan: &mut ExperimentPlan) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src {
                    plan.$($dst)+ = v;
                }
            };
        }
        set!(model => model.family);
        set!(s0 => market.s0);
        set!(maturity => market.maturity);
        set!(rho => market.rho);
        set!(sigma0 => model.sigma0);
        set!(alpha => model.alpha);
        set!(vov => model.vov);
        set!(hurst => model.hurst);
        set!(cev_nu => model.cev_nu);
        set!(cev_beta => model.cev_beta);
        set!(paths => mc.n_paths);
        set!(steps => mc.steps);
        set!(seed => seed);
        set!(estimator => mc.estimator);
        set!(cv_mode => mc.cv_mode);
        set!(averaging => mc.averaging);
        if self.strike.is_some() {
            plan.market.strike = self.strike;
        }
        if self.out.is_some() {
            plan.output = self.out.clone();
        }
        if plan.kind == ExperimentKind::FbmCheck {
            set!(steps => fbm.steps);
            set!(paths => fbm.samples);
            set!(maturity => fbm.maturity);
            if let Some(h) = self.hurst {
                plan.fbm.hurst = vec![h];
            }
        }
    }

    fn plan(&self, kind: ExperimentKind) -> ExperimentPlan {
        let mut plan = ExperimentPlan::new(kind);
        self.apply(&mut plan);
        plan
    }
}

fn emit(table: &Table, out: Option<&PathBuf>) -> Result<(), LabError> {
    match out {
        Some(path) => {
            table.write_csv(path)?;
            eprintln!("wrote {} rows to {}", table.rows.len(), path.display());
            Ok(())
        }
        None => {
            print!("{}", table.to_csv_string());
            Ok(())
        }
    }
}

fn context(plan: &ExperimentPlan) -> Vec<String> {
    let m = &plan.market;
    vec![
        plan.model.spec().name().to_string(),
        num(m.s0),
        num(m.strike.unwrap_or(m.s0)),
        num(m.maturity),
        num(m.rho),
    ]
}

const CONTEXT: [&str; 5] = ["model", "s0", "strike", "maturity", "rho"];

fn header(extra: &[&'static str]) -> Vec<&'static str> {
    CONTEXT.iter().chain(extra).copied().collect()
}

fn run(cli: Cli) -> Result<(), LabError> {
    match cli.command {
        Command::Price(shared) => {
            let plan = shared.plan(ExperimentKind::LevelSweep);
            let (model, market) = (plan.model.spec(), plan.market.setup()?);
            let cfg = plan.mc_config();
            let e = price_asian(&model, &market, &cfg)?;
            let mut t = Table::new(&header(&[
                "estimator",
                "n_paths",
                "steps",
                "seed",
                "price",
                "stderr",
                "ci_low",
                "ci_high",
                "control_coefficient",
            ]));
            let mut row = context(&plan);
            row.extend([
                cfg.estimator.as_str().to_string(),
                cfg.n_paths.to_string(),
                cfg.steps.to_string(),
                cfg.seed.to_string(),
                num(e.mean),
                num(e.stderr),
                num(e.ci95.0),
                num(e.ci95.1),
                num(e.control_coefficient.unwrap_or(f64::NAN)),
            ]);
            t.push(row);
            emit(&t, shared.out.as_ref())
        }
        Command::Iv(shared) => {
            let plan = shared.plan(ExperimentKind::LevelSweep);
            let (model, market) = (plan.model.spec(), plan.market.setup()?);
            let p = estimate_atm_iv(&model, &market, &plan.mc_config())?;
            let theory = atm_skew_closed(&model, &market).level;
            let mut t = Table::new(&header(&["log_strike", "iv", "iv_stderr", "theory_level"]));
            let mut row = context(&plan);
            row.extend([num(p.log_strike), num(p.iv), num(p.iv_stderr), num(theory)]);
            t.push(row);
            emit(&t, shared.out.as_ref())
        }
        Command::Skew { shared, dk } => {
            let plan = shared.plan(ExperimentKind::SkewSweep);
            let (model, market) = (plan.model.spec(), plan.market.setup()?.with_strike(plan.market.s0));
            let s = estimate_skew_fd(&model, &market, &plan.mc_config(), dk)?;
            let theory = proxy_slope(&model, &market, SkewSource::GeneralAtT)?;
            let mut t = Table::new(&header(&[
                "dk",
                "skew",
                "skew_stderr",
                "iv_lower",
                "iv_upper",
                "theory_skew",
            ]));
            let mut row = context(&plan);
            row.extend([
                num(dk),
                num(s.slope),
                num(s.stderr),
                num(s.lower.iv),
                num(s.upper.iv),
                num(theory),
            ]);
            t.push(row);
            emit(&t, shared.out.as_ref())
        }
        Command::Asymptotics(shared) => {
            let plan = shared.plan(ExperimentKind::SkewSweep);
            let (model, market) = (plan.model.spec(), plan.market.setup()?);
            model.validate(&market)?;
            let closed = atm_skew_closed(&model, &market);
            let sigma0 = spot_vol(&model, &market);
            let rho = if plan.model.family == ModelFamily::LocalVolCev {
                1.0
            } else {
                market.rho
            };
            let kernel = skew_kernel(&model, &market);
            let general =
                |mode| atm_skew_general(sigma0, rho, &kernel, market.maturity, mode).map_or(f64::NAN, |q| q.skew);
            let mut t = Table::new(&header(&[
                "level",
                "skew_closed",
                "scaled",
                "scaling_exponent",
                "skew_general_finite",
                "skew_general_limit",
                "skew_at_maturity",
            ]));
            let mut row = context(&plan);
            row.extend([
                num(closed.level),
                num(closed.skew),
                closed.scaled.to_string(),
                num(closed.scaling_exponent),
                num(general(SkewMode::Finite)),
                num(general(SkewMode::Limit)),
                num(proxy_slope(&model, &market, SkewSource::GeneralAtT)?),
            ]);
            t.push(row);
            emit(&t, shared.out.as_ref())
        }
        Command::Experiment { plan, shared } => {
            let mut plan = ExperimentPlan::load(&plan)?;
            shared.apply(&mut plan);
            let table = experiment_table(&plan)?;
            emit(&table, plan.output.as_ref())
        }
        Command::FbmCheck(shared) => {
            let plan = shared.plan(ExperimentKind::FbmCheck);
            let table = experiment_table(&plan)?;
            emit(&table, plan.output.as_ref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
