//! Subcommand surface and drivers.
//!
//! Every subcommand writes a `bundle.json` under `--out` plus flat CSV
//! exports for plotting, and prints a short summary to stdout. Numeric work
//! happens in the library; this module only moves data between disk and it.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gcpairs::causality::{pairwise_causality_matrix, ProjectionPair, StatsContext};
use gcpairs::covariance::{CondLimit, EstimationWindow, LagCovSet};
use gcpairs::gradient::{combined_gradient, GradientMethod};
use gcpairs::optimizer::{decompose, Decomposition, OptimizerConfig};
use gcpairs::series::MultiSeries;
use gcpairs::simulator::{run_benchmark, BenchmarkConfig, MeanSem};
use gcpairs::stats::surrogate_test;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bundle::{write_table, Provenance, ResultBundle};
use crate::error::{CliError, Result};
use crate::io::{load_csv, preprocess, PreprocessSpec};

#[derive(Debug, Parser)]
#[command(
    name = "gcpairs",
    version,
    about = "Blind identification of driving/driven component pairs in multivariate time series"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the synthetic mixing benchmark and summarize recovery quality.
    Simulate(SimulateArgs),
    /// Extract driving/driven component pairs from a CSV dataset.
    Decompose(DecomposeArgs),
    /// Score every ordered channel pair of a CSV dataset.
    CausalityMatrix(CausalityMatrixArgs),
    /// Test the leading pair against phase-randomized surrogates.
    SurrogateTest(SurrogateTestArgs),
    /// Compare analytic score gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Decompose(args) => run_decompose(args),
        Command::CausalityMatrix(args) => run_causality_matrix(args),
        Command::SurrogateTest(args) => run_surrogate_test(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    }
}

fn parse_cond_limit(s: &str) -> std::result::Result<CondLimit, String> {
    if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        return Ok(CondLimit::INFINITE);
    }
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    CondLimit::new(v).map_err(|e| e.to_string())
}

fn cond_limit_label(c: CondLimit) -> String {
    if c.is_infinite() {
        "inf".into()
    } else {
        c.value().to_string()
    }
}

/// Flags shared by the dataset-analyzing subcommands.
#[derive(Debug, Args)]
pub struct AnalysisFlags {
    /// Input CSV: header row of channel labels, one row per time sample.
    #[arg(long)]
    pub input: PathBuf,
    /// Model order of the lagged predictors, in samples.
    #[arg(long, default_value_t = 3)]
    pub lags: usize,
    /// Driving/driven pairs to extract.
    #[arg(long, default_value_t = 1)]
    pub pairs: usize,
    /// Condition-number cap for the covariance matrices: "inf" or a number
    /// greater than 1.
    #[arg(long, value_parser = parse_cond_limit, default_value = "inf")]
    pub cond_limit: CondLimit,
    /// Independent random restarts per pair; the best final score wins.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// Master seed; all random draws derive from it deterministically.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Rescale every channel to zero mean and unit variance first.
    #[arg(long)]
    pub standardize: bool,
    /// Regress the cross-channel mean waveform out of every channel.
    #[arg(long)]
    pub remove_global_trend: bool,
    /// Keep the first sample of every block of this length.
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
    /// Directory for bundle.json and the CSV exports.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl AnalysisFlags {
    fn preprocess_spec(&self) -> PreprocessSpec {
        PreprocessSpec {
            standardize: self.standardize,
            remove_global_trend: self.remove_global_trend,
            downsample_factor: self.downsample,
            ..Default::default()
        }
    }

    fn load(&self) -> Result<MultiSeries<f64>> {
        let spec = self.preprocess_spec();
        preprocess(&load_csv(&self.input, &spec)?, &spec)
    }

    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_lag: self.lags,
            pairs: self.pairs,
            cond_limit: self.cond_limit,
            restarts: self.restarts,
            seed: self.seed,
            ..OptimizerConfig::default()
        }
    }

    fn echo(&self) -> AnalysisEcho {
        AnalysisEcho {
            input: self.input.display().to_string(),
            lags: self.lags,
            pairs: self.pairs,
            cond_limit: cond_limit_label(self.cond_limit),
            restarts: self.restarts,
            seed: self.seed,
            preprocess: self.preprocess_spec(),
        }
    }
}

#[derive(Debug, Serialize)]
struct AnalysisEcho {
    input: String,
    lags: usize,
    pairs: usize,
    cond_limit: String,
    restarts: usize,
    seed: u64,
    preprocess: PreprocessSpec,
}

#[derive(Debug, Serialize)]
struct MeanSemOut {
    mean: f64,
    sem: f64,
}

impl From<MeanSem> for MeanSemOut {
    fn from(m: MeanSem) -> Self {
        Self { mean: m.mean, sem: m.sem }
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Independent realizations to simulate and analyze.
    #[arg(long, default_value_t = 100)]
    pub realizations: usize,
    /// Samples per realization, after the burn-in is discarded.
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    /// Master seed; realization k derives its own streams from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for bundle.json and realizations.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SimulateEcho {
    realizations: usize,
    samples: usize,
    channels: usize,
    burn_in: usize,
    lags: usize,
    pairs: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct SimulateResults {
    analyzed: usize,
    failures: usize,
    strength_first_link: MeanSemOut,
    strength_second_link: MeanSemOut,
    max_pairwise_observed: MeanSemOut,
    mixing_r2: MeanSemOut,
    component_r2: Vec<MeanSemOut>,
    converged_first: usize,
    converged_second: usize,
    exports: Vec<String>,
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let cfg = BenchmarkConfig {
        realizations: args.realizations,
        samples: args.samples,
        seed: args.seed,
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark::<f64>(&cfg)?;

    let header: Vec<String> = [
        "realization",
        "strength_first",
        "strength_second",
        "max_pairwise",
        "mixing_r2",
        "r2_first_driving",
        "r2_first_driven",
        "r2_second_driving",
        "r2_second_driven",
        "outer_iters_first",
        "outer_iters_second",
        "converged_first",
        "converged_second",
    ]
    .map(str::to_owned)
    .into();
    let rows: Vec<Vec<String>> = report
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| {
            vec![
                i.to_string(),
                o.g_first.to_string(),
                o.g_second.to_string(),
                o.max_pairwise_g.to_string(),
                o.mixing_r2.to_string(),
                o.component_r2[0].to_string(),
                o.component_r2[1].to_string(),
                o.component_r2[2].to_string(),
                o.component_r2[3].to_string(),
                o.outer_iterations[0].to_string(),
                o.outer_iterations[1].to_string(),
                o.converged[0].to_string(),
                o.converged[1].to_string(),
            ]
        })
        .collect();
    write_table(&args.out.join("realizations.csv"), &header, &rows)?;

    let results = SimulateResults {
        analyzed: report.outcomes.len(),
        failures: report.failures,
        strength_first_link: report.g_first.into(),
        strength_second_link: report.g_second.into(),
        max_pairwise_observed: report.max_pairwise_g.into(),
        mixing_r2: report.mixing_r2.into(),
        component_r2: report.component_r2.iter().map(|m| MeanSemOut::from(*m)).collect(),
        converged_first: report.outcomes.iter().filter(|o| o.converged[0]).count(),
        converged_second: report.outcomes.iter().filter(|o| o.converged[1]).count(),
        exports: vec!["realizations.csv".into()],
    };
    let echo = SimulateEcho {
        realizations: args.realizations,
        samples: args.samples,
        channels: cfg.channels,
        burn_in: cfg.burn_in,
        lags: cfg.optimizer.max_lag,
        pairs: cfg.optimizer.pairs,
        seed: args.seed,
    };

    println!(
        "analyzed {} of {} realizations ({} failed)",
        results.analyzed, args.realizations, report.failures
    );
    println!("strength first link  {:.4} ± {:.4}", report.g_first.mean, report.g_first.sem);
    println!("strength second link {:.4} ± {:.4}", report.g_second.mean, report.g_second.sem);
    println!(
        "max pairwise observed {:.4} ± {:.4}",
        report.max_pairwise_g.mean, report.max_pairwise_g.sem
    );
    println!("mixing recovery r²   {:.4} ± {:.4}", report.mixing_r2.mean, report.mixing_r2.sem);

    let bundle = ResultBundle::new("simulate", echo, Provenance::new(Some(args.seed)), results);
    let path = bundle.write(&args.out)?;
    println!("bundle: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// decompose

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub analysis: AnalysisFlags,
}

#[derive(Debug, Serialize)]
struct PairSummary {
    index: usize,
    strength: f64,
    strength_raw: f64,
    strength_reversed: f64,
    residual_full: f64,
    residual_reduced: f64,
    driven_variance: f64,
    outer_iterations: usize,
    converged: bool,
    evaluations: usize,
    pinv_fallback: bool,
}

#[derive(Debug, Serialize)]
struct DecomposeResults {
    channels: usize,
    samples: usize,
    pairs_requested: usize,
    pairs_extracted: usize,
    truncated: bool,
    pairs: Vec<PairSummary>,
    exports: Vec<String>,
}

fn pair_summaries(dec: &Decomposition<f64>) -> Vec<PairSummary> {
    dec.pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairSummary {
            index: i + 1,
            strength: p.stats.g,
            strength_raw: p.stats.g_raw,
            strength_reversed: p.reversed.g,
            residual_full: p.stats.phi_f,
            residual_reduced: p.stats.phi_r,
            driven_variance: p.stats.sigma_z2,
            outer_iterations: p.trace.outer_iterations,
            converged: p.trace.converged,
            evaluations: p.trace.evaluations,
            pinv_fallback: p.stats.pinv_fallback,
        })
        .collect()
}

/// Writes components.csv (sample rows), filters.csv and patterns.csv
/// (channel rows) for all extracted pairs.
fn export_pairs(dec: &Decomposition<f64>, labels: &[String], out: &PathBuf) -> Result<Vec<String>> {
    let mut names = Vec::new();

    let mut comp_header = Vec::new();
    for i in 1..=dec.pairs.len() {
        comp_header.push(format!("pair{i}_driving"));
        comp_header.push(format!("pair{i}_driven"));
    }
    let comp_rows: Vec<Vec<String>> = (0..dec.samples)
        .map(|k| {
            dec.pairs
                .iter()
                .flat_map(|p| [p.driving[k].to_string(), p.driven[k].to_string()])
                .collect()
        })
        .collect();
    write_table(&out.join("components.csv"), &comp_header, &comp_rows)?;
    names.push("components.csv".into());

    let mut chan_header = vec!["channel".to_owned()];
    chan_header.extend(comp_header.iter().cloned());
    let weight_rows: Vec<Vec<String>> = (0..dec.channels)
        .map(|ch| {
            let mut row = vec![labels[ch].clone()];
            for p in &dec.pairs {
                row.push(p.pair.w[ch].to_string());
                row.push(p.pair.v[ch].to_string());
            }
            row
        })
        .collect();
    write_table(&out.join("filters.csv"), &chan_header, &weight_rows)?;
    names.push("filters.csv".into());

    let pattern_rows: Vec<Vec<String>> = (0..dec.channels)
        .map(|ch| {
            let mut row = vec![labels[ch].clone()];
            for p in &dec.pairs {
                row.push(p.pattern_driving[ch].to_string());
                row.push(p.pattern_driven[ch].to_string());
            }
            row
        })
        .collect();
    write_table(&out.join("patterns.csv"), &chan_header, &pattern_rows)?;
    names.push("patterns.csv".into());

    Ok(names)
}

fn run_decompose(args: DecomposeArgs) -> Result<()> {
    let flags = &args.analysis;
    let x = flags.load()?;
    let dec = decompose(&x, &flags.optimizer())?;

    let exports = export_pairs(&dec, x.labels(), &flags.out)?;
    for s in pair_summaries(&dec) {
        println!(
            "pair {}: strength {:.4} (reversed {:.4}), {} outer iterations, {}",
            s.index,
            s.strength,
            s.strength_reversed,
            s.outer_iterations,
            if s.converged { "converged" } else { "hit the iteration cap" }
        );
    }
    if dec.truncated() {
        eprintln!(
            "note: residual data lost rank after {} of {} pairs",
            dec.pairs.len(),
            dec.requested_pairs
        );
    }

    let results = DecomposeResults {
        channels: dec.channels,
        samples: dec.samples,
        pairs_requested: dec.requested_pairs,
        pairs_extracted: dec.pairs.len(),
        truncated: dec.truncated(),
        pairs: pair_summaries(&dec),
        exports,
    };
    let provenance = Provenance::new(Some(flags.seed)).with_input(&flags.input)?;
    let bundle = ResultBundle::new("decompose", flags.echo(), provenance, results);
    let path = bundle.write(&flags.out)?;
    println!("bundle: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// causality-matrix

#[derive(Debug, Args)]
pub struct CausalityMatrixArgs {
    /// Input CSV: header row of channel labels, one row per time sample.
    #[arg(long)]
    pub input: PathBuf,
    /// Model order of the lagged predictors, in samples.
    #[arg(long, default_value_t = 3)]
    pub lags: usize,
    /// Directory for bundle.json and matrix.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct MatrixEcho {
    input: String,
    lags: usize,
}

#[derive(Debug, Serialize)]
struct MatrixResults {
    labels: Vec<String>,
    /// Row drives column.
    matrix: Vec<Vec<f64>>,
    strongest: StrongestLink,
    exports: Vec<String>,
}

#[derive(Debug, Serialize)]
struct StrongestLink {
    driving: String,
    driven: String,
    strength: f64,
}

fn run_causality_matrix(args: CausalityMatrixArgs) -> Result<()> {
    let x = load_csv(&args.input, &PreprocessSpec::default())?;
    let m = pairwise_causality_matrix(&x, args.lags, EstimationWindow::Trailing)?;
    let d = x.channels();

    let (mut bi, mut bj) = (0, 1);
    for i in 0..d {
        for j in 0..d {
            if m[(i, j)] > m[(bi, bj)] {
                (bi, bj) = (i, j);
            }
        }
    }

    let mut header = vec!["driving".to_owned()];
    header.extend(x.labels().iter().cloned());
    let rows: Vec<Vec<String>> = (0..d)
        .map(|i| {
            let mut row = vec![x.labels()[i].clone()];
            row.extend((0..d).map(|j| m[(i, j)].to_string()));
            row
        })
        .collect();
    write_table(&args.out.join("matrix.csv"), &header, &rows)?;

    let results = MatrixResults {
        labels: x.labels().to_vec(),
        matrix: (0..d).map(|i| (0..d).map(|j| m[(i, j)]).collect()).collect(),
        strongest: StrongestLink {
            driving: x.labels()[bi].clone(),
            driven: x.labels()[bj].clone(),
            strength: m[(bi, bj)],
        },
        exports: vec!["matrix.csv".into()],
    };
    println!(
        "strongest link: {} → {} with strength {:.4}",
        results.strongest.driving, results.strongest.driven, results.strongest.strength
    );

    let echo = MatrixEcho { input: args.input.display().to_string(), lags: args.lags };
    let provenance = Provenance::new(None).with_input(&args.input)?;
    let bundle = ResultBundle::new("causality-matrix", echo, provenance, results);
    let path = bundle.write(&args.out)?;
    println!("bundle: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// surrogate-test

#[derive(Debug, Args)]
pub struct SurrogateTestArgs {
    #[command(flatten)]
    pub analysis: AnalysisFlags,
    /// Phase-randomized surrogates to draw. More surrogates sharpen the
    /// smallest reportable p-value, 1/(n+1).
    #[arg(long, default_value_t = 99)]
    pub n_surrogates: usize,
}

#[derive(Debug, Serialize)]
struct SurrogateEcho {
    #[serde(flatten)]
    analysis: AnalysisEcho,
    n_surrogates: usize,
}

#[derive(Debug, Serialize)]
struct SurrogateResults {
    observed_strength: f64,
    p_value: f64,
    surrogates_completed: usize,
    surrogates_failed: usize,
    null_mean: f64,
    null_max: f64,
    exports: Vec<String>,
}

fn run_surrogate_test(args: SurrogateTestArgs) -> Result<()> {
    let flags = &args.analysis;
    let x = flags.load()?;
    // The statistic concerns the leading pair only; the library re-runs the
    // same single-pair search on every surrogate regardless of --pairs.
    let test = surrogate_test(&x, args.n_surrogates, flags.seed, &flags.optimizer())?;

    let rows: Vec<Vec<String>> = test.null.iter().map(|g| vec![g.to_string()]).collect();
    write_table(&flags.out.join("null_strengths.csv"), &["strength".to_owned()], &rows)?;

    let n = test.null.len();
    let results = SurrogateResults {
        observed_strength: test.observed,
        p_value: test.p_value,
        surrogates_completed: n,
        surrogates_failed: test.failures,
        null_mean: test.null.iter().sum::<f64>() / n.max(1) as f64,
        null_max: test.null.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        exports: vec!["null_strengths.csv".into()],
    };
    println!(
        "observed strength {:.4}, p = {:.4} ({} surrogates, {} failed)",
        results.observed_strength, results.p_value, n, test.failures
    );

    let echo = SurrogateEcho { analysis: flags.echo(), n_surrogates: args.n_surrogates };
    let provenance = Provenance::new(Some(flags.seed)).with_input(&flags.input)?;
    let bundle = ResultBundle::new("surrogate-test", echo, provenance, results);
    let path = bundle.write(&flags.out)?;
    println!("bundle: {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Largest channel count tried; each trial samples 2..=dims.
    #[arg(long, default_value_t = 4)]
    pub dims: usize,
    /// Largest model order tried; each trial samples 1..=lags.
    #[arg(long, default_value_t = 3)]
    pub lags: usize,
    /// Random instances to check.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Largest acceptable relative L2 difference between analytic and
    /// finite-difference gradients.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    /// Master seed for instance generation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for bundle.json and trials.csv.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct GradcheckEcho {
    dims: usize,
    lags: usize,
    trials: usize,
    tolerance: f64,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct GradcheckResults {
    trials: usize,
    worst_relative_error: f64,
    tolerance: f64,
    passed: bool,
    exports: Vec<String>,
}

/// Mildly autocorrelated, cross-coupled noise: enough temporal structure to
/// exercise every lag block without risking ill-conditioning.
fn gradcheck_instance(d: usize, t: usize, rng: &mut ChaCha12Rng) -> Result<MultiSeries<f64>> {
    let ar: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.7..0.7)).collect();
    let mut data = DMatrix::zeros(d, t);
    for k in 0..t {
        for ch in 0..d {
            let prev = if k > 0 { data[(ch, k - 1)] } else { 0.0 };
            let cross = if ch > 0 && k > 0 { 0.3 * data[(ch - 1, k - 1)] } else { 0.0 };
            data[(ch, k)] = ar[ch] * prev + cross + rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(MultiSeries::from_data(data)?.centered())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut worst = 0.0f64;
    let mut rows = Vec::with_capacity(args.trials);
    for trial in 0..args.trials {
        let mut rng = ChaCha12Rng::seed_from_u64(
            args.seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let d = rng.gen_range(2..=args.dims.max(2));
        let l = rng.gen_range(1..=args.lags.max(1));
        let t = 240 + rng.gen_range(0..240);
        let x = gradcheck_instance(d, t, &mut rng)?;
        let cov = LagCovSet::estimate(&x, l, CondLimit::INFINITE, EstimationWindow::Trailing)?;
        let fwd = StatsContext::forward(&cov);
        let rev = StatsContext::reversed(&cov);

        let w = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let pair = ProjectionPair::new(w, v)?.unit();

        let analytic = combined_gradient(&pair, &fwd, &rev, GradientMethod::Analytic)?;
        let numeric =
            combined_gradient(&pair, &fwd, &rev, GradientMethod::FiniteDifference { step: 1e-6 })?;
        let diff = ((&analytic.grad_w - &numeric.grad_w).norm_squared()
            + (&analytic.grad_v - &numeric.grad_v).norm_squared())
        .sqrt();
        let base =
            (numeric.grad_w.norm_squared() + numeric.grad_v.norm_squared()).sqrt().max(1e-12);
        let rel = diff / base;
        worst = worst.max(rel);
        rows.push(vec![trial.to_string(), d.to_string(), l.to_string(), rel.to_string()]);
    }

    let header: Vec<String> =
        ["trial", "channels", "lags", "relative_error"].map(str::to_owned).into();
    write_table(&args.out.join("trials.csv"), &header, &rows)?;

    let passed = worst <= args.tolerance;
    let results = GradcheckResults {
        trials: args.trials,
        worst_relative_error: worst,
        tolerance: args.tolerance,
        passed,
        exports: vec!["trials.csv".into()],
    };
    println!(
        "worst relative error {worst:.3e} over {} trials (tolerance {:.1e})",
        args.trials, args.tolerance
    );
    let echo = GradcheckEcho {
        dims: args.dims,
        lags: args.lags,
        trials: args.trials,
        tolerance: args.tolerance,
        seed: args.seed,
    };
    let bundle = ResultBundle::new("gradcheck", echo, Provenance::new(Some(args.seed)), results);
    let path = bundle.write(&args.out)?;
    println!("bundle: {}", path.display());

    if passed {
        Ok(())
    } else {
        Err(CliError::GradcheckFailed { worst, tolerance: args.tolerance })
    }
}
