//! The four subcommands as library functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dspa::deconv::{build_problem, rescale, simulate_observations, DeconvProblem, DeconvSpec};
use dspa::linops::{gaussian_kernel, Conv2DOperator};
use dspa::sampler::{
    first_difference, resume_path, run_distributed, run_inproc, run_serial, run_worker,
    AggregationOrder, ChainOptions, ChainState, GatherMode, HaloStrategy, Init, Observer, Problem,
    Recorder, RunReport, Snapshot,
};
use dspa::stats::{snr, ssim, ChainSummary, Metrics, Welford};
use dspa::transport::{tcp_loopback_endpoints, Endpoint, TcpBackend};
use serde::Serialize;

use crate::config::{ExperimentConfig, MapDensity, Transport};
use crate::error::{CliError, CliResult};
use crate::io::{read_f64, read_image, write_atomic, write_f64, write_pgm, Image};

const SUMMARY_FILE: &str = "summary.ckpt";

/// Blur and prior settings for an image of the given size.
pub fn deconv_spec(cfg: &ExperimentConfig, height: usize, width: usize) -> CliResult<DeconvSpec> {
    let m = &cfg.model;
    let (kernel, krows, kcols) = match &m.kernel_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Conv2DOperator::parse_kernel(&text)?
        }
        None => (
            gaussian_kernel(m.kernel_size, m.kernel_size),
            m.kernel_size,
            m.kernel_size,
        ),
    };
    Ok(DeconvSpec {
        height,
        width,
        kernel,
        krows,
        kcols,
        kappa: m.kappa,
        alpha2: m.alpha2,
        beta2: m.beta2,
        grid_rows: cfg.parallel.grid_rows,
        grid_cols: cfg.parallel.grid_cols,
        gamma: m.gamma,
        eta: m.eta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub truth: Image,
    pub observations: Image,
}

/// Rescales the truth image, blurs it and draws Poisson counts; writes
/// `truth` and `observations` arrays and previews to the output directory.
pub fn gen_data(cfg: &ExperimentConfig) -> CliResult<GeneratedData> {
    let src = cfg
        .data
        .truth
        .as_ref()
        .ok_or_else(|| CliError::Config("data.truth is required for gen-data".into()))?;
    let img = read_image(src)?;
    let truth = Image::new(
        img.height,
        img.width,
        rescale(&img.data, cfg.data.max_intensity)?,
    )?;
    let spec = deconv_spec(cfg, img.height, img.width)?;
    let y = simulate_observations(&spec.conv()?, &truth.data, cfg.data.seed)?;
    let observations = Image::new(img.height, img.width, y)?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_f64(&out.join("truth.f64"), &truth, Some(&cfg.hash))?;
    write_pgm(&out.join("truth.pgm"), &truth)?;
    write_f64(
        &out.join("observations.f64"),
        &observations,
        Some(&cfg.hash),
    )?;
    write_pgm(&out.join("observations.pgm"), &observations)?;
    Ok(GeneratedData {
        truth,
        observations,
    })
}

/// Problem and decomposition for the configured observations.
pub fn load_problem(cfg: &ExperimentConfig) -> CliResult<(DeconvProblem, Image)> {
    let y = read_f64(&cfg.observations_path())?;
    let spec = deconv_spec(cfg, y.height, y.width)?;
    let mut built = build_problem(&spec, y.data.clone())?;
    if cfg.sampler.zero_init {
        built.problem.init = Init::Zero;
    }
    Ok((built, y))
}

fn chain_options(cfg: &ExperimentConfig, built: &DeconvProblem) -> ChainOptions {
    ChainOptions {
        iterations: cfg.sampler.iterations,
        seed: cfg.sampler.seed,
        divergence_threshold: cfg.sampler.divergence_threshold,
        gather: match cfg.sampler.map_density {
            MapDensity::Target => GatherMode::Sample,
            MapDensity::Augmented => GatherMode::Full,
        },
        halo: if cfg.parallel.grid_halo {
            built.halo_strategy()
        } else {
            HaloStrategy::Generic
        },
        config_hash: cfg.hash_u64(),
        ..ChainOptions::default()
    }
}

/// Feeds gathered states into the chain summary and persists it next to
/// the worker snapshots.
struct SummaryObserver<'a> {
    problem: &'a Problem,
    density: MapDensity,
    summary: ChainSummary,
    checkpoint_dir: Option<PathBuf>,
}

impl Observer for SummaryObserver<'_> {
    fn observe(&mut self, iteration: u64, state: &ChainState, seconds: f64) -> dspa::Result<()> {
        let potential = match self.density {
            MapDensity::Target => self.problem.potential_from(&state.x, &state.v),
            MapDensity::Augmented => self.problem.augmented_potential(state),
        };
        self.summary.update(iteration + 1, &state.x, potential)?;
        self.summary.record_time(seconds);
        if (iteration + 1) % 500 == 0 {
            log::info!("iteration {} potential {potential:.6e}", iteration + 1);
        }
        Ok(())
    }

    fn checkpoint(&mut self, t: u64) -> dspa::Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            let path = dir.join(SUMMARY_FILE);
            write_atomic(&path, &self.summary.to_bytes())
                .map_err(|e| dspa::Error::Io(std::io::Error::other(e.to_string())))?;
            log::info!("checkpoint at t = {t}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsFile {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub iterations: u64,
    pub burn_in: u64,
    pub samples_in_buffer: usize,
    pub config_hash: String,
}

/// Runs the configured chain. Returns `None` on TCP ranks other than 0,
/// which write nothing.
pub fn run(
    cfg: &ExperimentConfig,
    rank: Option<usize>,
    resume: bool,
) -> CliResult<Option<MetricsFile>> {
    let s = &cfg.sampler;
    if s.iterations <= s.burn_in {
        return Err(dspa::Error::EmptyBuffer.into());
    }
    let (built, y) = load_problem(cfg)?;
    let mut options = chain_options(cfg, &built);
    let workers = built.decomposition.num_workers();
    let ckpt = cfg.checkpoint_dir();
    if s.checkpoint_every > 0 {
        fs::create_dir_all(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
        options.checkpoint_every = s.checkpoint_every;
        options.checkpoint_dir = Some(ckpt.clone());
    }
    let is_root = cfg.parallel.transport != Transport::Tcp || rank == Some(0);
    let mut summary = ChainSummary::new(y.data.len(), s.burn_in, s.thinning)?;
    if resume {
        options.resume_from = Some(ckpt.clone());
        if is_root {
            summary = load_summary(&ckpt, cfg, workers)?;
        }
    }
    let mut observer = SummaryObserver {
        problem: &built.problem,
        density: s.map_density,
        summary,
        checkpoint_dir: (s.checkpoint_every > 0).then(|| ckpt.clone()),
    };
    let started = Instant::now();
    let report: RunReport = match cfg.parallel.transport {
        Transport::Serial => run_serial(
            &built.problem,
            &built.decomposition,
            &options,
            &mut observer,
        )?,
        Transport::InProc => run_inproc(
            &built.problem,
            &built.decomposition,
            &options,
            &mut observer,
        )?,
        Transport::Tcp => {
            let rank = rank.ok_or_else(|| CliError::Config("tcp transport needs --rank".into()))?;
            if rank >= workers {
                return Err(CliError::Config(format!(
                    "rank {rank} outside {workers} workers"
                )));
            }
            let timeout = Duration::from_secs_f64(cfg.parallel.timeout_s);
            let backend = TcpBackend::connect(rank, &cfg.parallel.hosts, timeout)?;
            let mut ep = Endpoint::new(Box::new(backend)).with_timeout(timeout);
            let obs: Option<&mut dyn Observer> = if rank == 0 { Some(&mut observer) } else { None };
            run_worker(&built.problem, &built.decomposition, &mut ep, &options, obs)?
        }
    };
    let runtime = started.elapsed().as_secs_f64();
    log::info!("{} iterations in {runtime:.2} s", report.iterations);
    if !is_root {
        return Ok(None);
    }
    write_outputs(cfg, &observer.summary, y.height, y.width, runtime).map(Some)
}

fn load_summary(dir: &Path, cfg: &ExperimentConfig, workers: usize) -> CliResult<ChainSummary> {
    let path = dir.join(SUMMARY_FILE);
    let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let summary = ChainSummary::from_bytes(&bytes)?;
    let k = if cfg.parallel.transport == Transport::Serial {
        1
    } else {
        workers
    };
    let t = Snapshot::read(&resume_path(dir, k, 0))?.t;
    if summary.potentials().len() as u64 != t {
        return Err(CliError::Format(format!(
            "summary holds {} samples but the snapshots are at t = {t}",
            summary.potentials().len()
        )));
    }
    Ok(summary)
}

fn write_outputs(
    cfg: &ExperimentConfig,
    summary: &ChainSummary,
    h: usize,
    w: usize,
    runtime: f64,
) -> CliResult<MetricsFile> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let hash = Some(cfg.hash.as_str());
    let (lo, hi) = summary.credibility_interval()?;
    let mmse = Image::new(h, w, summary.mmse().to_vec())?;
    let map = Image::new(
        h,
        w,
        summary.map().ok_or(dspa::Error::EmptyBuffer)?.0.to_vec(),
    )?;
    let width = Image::new(h, w, lo.iter().zip(&hi).map(|(a, b)| b - a).collect())?;
    write_f64(&out.join("mmse.f64"), &mmse, hash)?;
    write_pgm(&out.join("mmse.pgm"), &mmse)?;
    write_f64(&out.join("map.f64"), &map, hash)?;
    write_pgm(&out.join("map.pgm"), &map)?;
    write_f64(&out.join("ci_low.f64"), &Image::new(h, w, lo)?, hash)?;
    write_f64(&out.join("ci_high.f64"), &Image::new(h, w, hi)?, hash)?;
    write_pgm(&out.join("ci_width.pgm"), &width)?;

    let trace_path = out.join("trace.csv");
    let mut trace = csv::Writer::from_path(&trace_path)?;
    trace.write_record(["t", "potential"])?;
    for (t, p) in summary.potentials() {
        trace.write_record([t.to_string(), format!("{p:e}")])?;
    }
    trace.flush().map_err(|e| CliError::io(&trace_path, e))?;

    let reference = cfg.reference_path();
    let truth = if reference.exists() {
        Some(read_f64(&reference)?)
    } else {
        None
    };
    let truth = truth.filter(|t| t.height == h && t.width == w);
    let quality = |est: &[f64]| -> CliResult<(Option<f64>, Option<f64>)> {
        match &truth {
            None => Ok((None, None)),
            Some(t) => {
                let lo = t.data.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = t.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s = if h >= 11 && w >= 11 {
                    Some(ssim(&t.data, est, h, w, hi - lo)?)
                } else {
                    None
                };
                Ok((Some(snr(&t.data, est)?), s))
            }
        }
    };
    let (snr_mmse, ssim_mmse) = quality(&mmse.data)?;
    let (snr_map, ssim_map) = quality(&map.data)?;
    let (mean, std) = summary.time_stats();
    let file = MetricsFile {
        metrics: Metrics {
            snr_mmse,
            snr_map,
            ssim_mmse,
            ssim_map,
            time_per_iter_mean_s: mean,
            time_per_iter_std_s: std,
            runtime_s: runtime,
        },
        iterations: cfg.sampler.iterations,
        burn_in: cfg.sampler.burn_in,
        samples_in_buffer: summary.buffered(),
        config_hash: cfg.hash.clone(),
    };
    write_atomic(
        &out.join("metrics.json"),
        serde_json::to_string_pretty(&file)?.as_bytes(),
    )?;
    Ok(file)
}

/// Most square `rows x cols` factorization of `k` with `rows <= cols`.
pub fn grid_shape(k: usize) -> (usize, usize) {
    let rows = (1..=k)
        .take_while(|r| r * r <= k)
        .filter(|r| k % r == 0)
        .last()
        .unwrap_or(1);
    (rows, k / rows)
}

/// First mismatch against a recorded trajectory.
struct Comparer<'a> {
    expected: &'a Recorder,
    mismatch: Option<(u64, String, usize)>,
    seen: u64,
}

impl Observer for Comparer<'_> {
    fn initial(&mut self, state: &ChainState) -> dspa::Result<()> {
        if let Some(e) = &self.expected.initial {
            if let (None, Some((var, idx))) = (&self.mismatch, first_difference(state, e)) {
                self.mismatch = Some((0, format!("initial {var}"), idx));
            }
        }
        Ok(())
    }

    fn observe(&mut self, iteration: u64, state: &ChainState, _: f64) -> dspa::Result<()> {
        self.seen += 1;
        if self.mismatch.is_none() {
            let diff = match self.expected.states.get(iteration as usize) {
                None => Some(("missing".to_string(), 0)),
                Some(e) => first_difference(state, e),
            };
            self.mismatch = diff.map(|(var, idx)| (iteration, var, idx));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub workers: usize,
    pub transport: String,
    /// `(iteration, variable, index)` of the first differing value.
    pub mismatch: Option<(u64, String, usize)>,
}

impl std::fmt::Display for OracleResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.mismatch {
            None => write!(f, "K={} {}: PASS", self.workers, self.transport),
            Some((t, var, idx)) => write!(
                f,
                "K={} {}: FAIL at t={t} {var}[{idx}]",
                self.workers, self.transport
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleOptions {
    pub iterations: u64,
    pub tcp: bool,
    /// Runs the distributed chains with the reversed aggregation order.
    pub reversed: bool,
}

/// Compares serial and distributed trajectories, iteration by iteration.
/// `t` in the report is the zero-based iteration that produced the state.
pub fn oracle_check(
    cfg: &ExperimentConfig,
    workers: &[usize],
    o: OracleOptions,
) -> CliResult<Vec<OracleResult>> {
    let y = read_f64(&cfg.observations_path())?;
    let mut results = Vec::new();
    for &k in workers {
        let (rows, cols) = grid_shape(k);
        let spec = deconv_spec(cfg, y.height, y.width)?.with_grid(rows, cols);
        let mut built = build_problem(&spec, y.data.clone())?;
        if cfg.sampler.zero_init {
            built.problem.init = Init::Zero;
        }
        let mut options = chain_options(cfg, &built);
        options.iterations = o.iterations;
        options.gather = GatherMode::Full;
        let mut serial = Recorder::default();
        run_serial(&built.problem, &built.decomposition, &options, &mut serial)?;
        if o.reversed {
            options.aggregation = AggregationOrder::Reversed;
        }
        let mut transports = vec![("inproc", false)];
        if o.tcp {
            transports.push(("tcp", true));
        }
        for (name, tcp) in transports {
            let mut cmp = Comparer {
                expected: &serial,
                mismatch: None,
                seen: 0,
            };
            if tcp {
                let eps =
                    tcp_loopback_endpoints(k, Duration::from_secs_f64(cfg.parallel.timeout_s))?;
                run_distributed(
                    &built.problem,
                    &built.decomposition,
                    &options,
                    eps,
                    &mut cmp,
                )?;
            } else {
                run_inproc(&built.problem, &built.decomposition, &options, &mut cmp)?;
            }
            if cmp.mismatch.is_none() && cmp.seen != o.iterations {
                cmp.mismatch = Some((cmp.seen, "missing".into(), 0));
            }
            results.push(OracleResult {
                workers: k,
                transport: name.into(),
                mismatch: cmp.mismatch,
            });
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    #[serde(rename = "K")]
    pub workers: usize,
    pub time_per_iter_mean: f64,
    pub time_per_iter_std: f64,
    pub speedup: f64,
}

/// Fixed-length in-process runs per worker count; speedups are relative to
/// one worker, which is always measured.
pub fn bench(
    cfg: &ExperimentConfig,
    workers: &[usize],
    iterations: u64,
) -> CliResult<Vec<BenchRow>> {
    let y = read_f64(&cfg.observations_path())?;
    let mut ks = vec![1];
    ks.extend(workers.iter().copied().filter(|&k| k != 1));
    let mut rows: Vec<BenchRow> = Vec::new();
    for k in ks {
        let (r, c) = grid_shape(k);
        let spec = deconv_spec(cfg, y.height, y.width)?.with_grid(r, c);
        let built = build_problem(&spec, y.data.clone())?;
        let mut options = chain_options(cfg, &built);
        options.iterations = iterations;
        options.gather = GatherMode::None;
        let report = run_inproc(
            &built.problem,
            &built.decomposition,
            &options,
            &mut dspa::sampler::NullObserver,
        )?;
        let mut w = Welford::default();
        report.iter_seconds.iter().for_each(|&s| w.push(s));
        let speedup = rows
            .first()
            .map_or(1.0, |base| base.time_per_iter_mean / w.mean);
        log::info!("K={k}: {:.3} ms/iteration", w.mean * 1e3);
        rows.push(BenchRow {
            workers: k,
            time_per_iter_mean: w.mean,
            time_per_iter_std: w.std(),
            speedup,
        });
    }
    Ok(rows
        .into_iter()
        .filter(|r| r.workers == 1 || workers.contains(&r.workers))
        .collect())
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_shape(1), (1, 1));
        assert_eq!(grid_shape(2), (1, 2));
        assert_eq!(grid_shape(4), (2, 2));
        assert_eq!(grid_shape(6), (2, 3));
        assert_eq!(grid_shape(7), (1, 7));
        assert_eq!(grid_shape(16), (4, 4));
    }
}
