//! Experiment configuration: flat `key = value` lines under `[section]`
//! headers. Relative paths resolve against the config file's directory.
//!
//! ```text
//! [data]
//! truth = house.pgm          ; gen-data input (PGM, PNG or .f64)
//! max_intensity = 30
//! seed = 1                   ; Poisson observation noise
//! observations = obs.f64     ; default <output.dir>/observations.f64
//! reference = truth.f64      ; default <output.dir>/truth.f64 when present
//!
//! [model]
//! kernel_size = 3            ; normalized Gaussian, sigma = size / 6
//! kernel_file = k.txt        ; overrides kernel_size
//! kappa = 1
//! alpha1_sq = 1
//! alpha2_sq = 1
//! beta1_sq = 1
//! beta2_sq = 1
//! gamma = ...                ; default 0.99 of the bound
//! eta1 = ...
//! eta2 = ...
//!
//! [sampler]
//! iterations = 5000
//! burn_in = 2000
//! thinning = 3
//! seed = 1
//! map_density = target       ; or augmented
//! init = backprojected       ; or zero
//! divergence_threshold = 1e12
//! checkpoint_every = 0
//!
//! [parallel]
//! transport = serial         ; serial | inproc | tcp
//! grid_rows = 1
//! grid_cols = 1
//! halo = grid                ; or generic
//! hosts = 127.0.0.1:7000, 127.0.0.1:7001
//! timeout_s = 30
//!
//! [output]
//! dir = out
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "data",
        &[
            "truth",
            "max_intensity",
            "seed",
            "observations",
            "reference",
        ],
    ),
    (
        "model",
        &[
            "kernel_size",
            "kernel_file",
            "kappa",
            "alpha1_sq",
            "alpha2_sq",
            "beta1_sq",
            "beta2_sq",
            "gamma",
            "eta1",
            "eta2",
        ],
    ),
    (
        "sampler",
        &[
            "iterations",
            "burn_in",
            "thinning",
            "seed",
            "map_density",
            "init",
            "divergence_threshold",
            "checkpoint_every",
        ],
    ),
    (
        "parallel",
        &[
            "transport",
            "grid_rows",
            "grid_cols",
            "halo",
            "hosts",
            "timeout_s",
        ],
    ),
    ("output", &["dir"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    Serial,
    InProc,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDensity {
    /// Negative log posterior of `x` alone.
    Target,
    /// Negative log of the augmented density in `(x, z, u)`.
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub truth: Option<PathBuf>,
    pub max_intensity: f64,
    pub seed: u64,
    pub observations: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kernel_size: usize,
    pub kernel_file: Option<PathBuf>,
    pub kappa: f64,
    pub alpha2: [f64; 2],
    pub beta2: [f64; 2],
    pub gamma: Option<f64>,
    pub eta: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub seed: u64,
    pub map_density: MapDensity,
    pub zero_init: bool,
    pub divergence_threshold: f64,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelConfig {
    pub transport: Transport,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub grid_halo: bool,
    pub hosts: Vec<SocketAddr>,
    pub timeout_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub parallel: ParallelConfig,
    pub output_dir: PathBuf,
    /// Hex SHA-256 of the normalized settings.
    pub hash: String,
}

/// Parsed `section.key -> value` pairs with typed accessors.
struct Values {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Values {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|e| CliError::Config(format!("{key} = {s:?}: {e}"))),
        }
    }

    fn optional<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|s| {
                s.parse()
                    .map_err(|e| CliError::Config(format!("{key} = {s:?}: {e}")))
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|s| self.base.join(s))
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> CliResult<T> {
        let s = self.raw(key).unwrap_or(options[0].0);
        options
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(s))
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!(
                    "{key} = {s:?}: expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("key {k:?} outside any section")));
                }
                continue;
            };
            let known = SCHEMA
                .iter()
                .find(|(s, _)| *s == section)
                .ok_or_else(|| CliError::Config(format!("unknown section [{section}]")))?
                .1;
            for (k, v) in props.iter() {
                if !known.contains(&k) {
                    return Err(CliError::Config(format!(
                        "unknown key {k:?} in [{section}]"
                    )));
                }
                map.insert(format!("{section}.{k}"), v.trim().to_string());
            }
        }
        let mut hasher = Sha256::new();
        for (k, v) in &map {
            hasher.update(format!("{k}={v}\n"));
        }
        let hash: String = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let v = Values {
            map,
            base: base.to_path_buf(),
        };
        let hosts = match v.raw("parallel.hosts") {
            None => Vec::new(),
            Some(s) => s
                .split(',')
                .map(|h| {
                    h.trim()
                        .parse()
                        .map_err(|e| CliError::Config(format!("host {h:?}: {e}")))
                })
                .collect::<CliResult<_>>()?,
        };
        let cfg = Self {
            data: DataConfig {
                truth: v.path("data.truth"),
                max_intensity: v.parse("data.max_intensity", 30.0)?,
                seed: v.parse("data.seed", 1)?,
                observations: v.path("data.observations"),
                reference: v.path("data.reference"),
            },
            model: ModelConfig {
                kernel_size: v.parse("model.kernel_size", 3)?,
                kernel_file: v.path("model.kernel_file"),
                kappa: v.parse("model.kappa", 1.0)?,
                alpha2: [
                    v.parse("model.alpha1_sq", 1.0)?,
                    v.parse("model.alpha2_sq", 1.0)?,
                ],
                beta2: [
                    v.parse("model.beta1_sq", 1.0)?,
                    v.parse("model.beta2_sq", 1.0)?,
                ],
                gamma: v.optional("model.gamma")?,
                eta: [v.optional("model.eta1")?, v.optional("model.eta2")?],
            },
            sampler: SamplerConfig {
                iterations: v.parse("sampler.iterations", 5000)?,
                burn_in: v.parse("sampler.burn_in", 2000)?,
                thinning: v.parse("sampler.thinning", 3)?,
                seed: v.parse("sampler.seed", 1)?,
                map_density: v.choice(
                    "sampler.map_density",
                    &[
                        ("target", MapDensity::Target),
                        ("augmented", MapDensity::Augmented),
                    ],
                )?,
                zero_init: v.choice("sampler.init", &[("backprojected", false), ("zero", true)])?,
                divergence_threshold: v.parse("sampler.divergence_threshold", 1e12)?,
                checkpoint_every: v.parse("sampler.checkpoint_every", 0)?,
            },
            parallel: ParallelConfig {
                transport: v.choice(
                    "parallel.transport",
                    &[
                        ("serial", Transport::Serial),
                        ("inproc", Transport::InProc),
                        ("tcp", Transport::Tcp),
                    ],
                )?,
                grid_rows: v.parse("parallel.grid_rows", 1)?,
                grid_cols: v.parse("parallel.grid_cols", 1)?,
                grid_halo: v.choice("parallel.halo", &[("grid", true), ("generic", false)])?,
                hosts,
                timeout_s: v.parse("parallel.timeout_s", 30.0)?,
            },
            output_dir: v.path("output.dir").unwrap_or_else(|| base.join("out")),
            hash,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        let fail = |m: &str| Err(CliError::Config(m.into()));
        if self.sampler.thinning == 0 {
            return fail("sampler.thinning must be at least 1");
        }
        if self.model.kernel_size % 2 == 0 {
            return fail("model.kernel_size must be odd");
        }
        if self.parallel.grid_rows == 0 || self.parallel.grid_cols == 0 {
            return fail("parallel.grid_rows and grid_cols must be positive");
        }
        if !(self.data.max_intensity > 0.0) {
            return fail("data.max_intensity must be positive");
        }
        if self.parallel.transport == Transport::Tcp
            && self.parallel.hosts.len() != self.num_workers()
        {
            return Err(CliError::Config(format!(
                "tcp transport needs {} hosts, got {}",
                self.num_workers(),
                self.parallel.hosts.len()
            )));
        }
        if !(self.parallel.timeout_s > 0.0) {
            return fail("parallel.timeout_s must be positive");
        }
        Ok(())
    }

    pub fn num_workers(&self) -> usize {
        self.parallel.grid_rows * self.parallel.grid_cols
    }

    /// First 8 bytes of the hash, used for the worker roll call.
    pub fn hash_u64(&self) -> u64 {
        u64::from_str_radix(&self.hash[..16], 16).expect("hex digest")
    }

    pub fn observations_path(&self) -> PathBuf {
        self.data
            .observations
            .clone()
            .unwrap_or_else(|| self.output_dir.join("observations.f64"))
    }

    pub fn reference_path(&self) -> PathBuf {
        self.data
            .reference
            .clone()
            .unwrap_or_else(|| self.output_dir.join("truth.f64"))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoints")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = ExperimentConfig::parse(
            "[sampler]\niterations = 10\nburn_in = 4\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(c.sampler.iterations, 10);
        assert_eq!(c.sampler.thinning, 3);
        assert_eq!(c.model.kernel_size, 3);
        assert_eq!(c.parallel.transport, Transport::Serial);
        assert_eq!(c.output_dir, Path::new("/cfg/out"));
        assert_eq!(
            c.observations_path(),
            Path::new("/cfg/out/observations.f64")
        );
        let c = ExperimentConfig::parse(
            "[parallel]\ntransport = tcp\ngrid_cols = 2\nhosts = 127.0.0.1:7000, 127.0.0.1:7001\n[data]\ntruth = a.pgm\n",
            Path::new("rel"),
        )
        .unwrap();
        assert_eq!(c.parallel.hosts.len(), 2);
        assert_eq!(c.data.truth, Some(PathBuf::from("rel/a.pgm")));
    }

    #[test]
    fn hash_ignores_layout_but_not_values() {
        let a = ExperimentConfig::parse("[model]\nkappa = 1\n\n[sampler]\nseed=2\n", Path::new(""))
            .unwrap();
        let b = ExperimentConfig::parse("[sampler]\nseed = 2\n[model]\nkappa=1", Path::new(""))
            .unwrap();
        let c = ExperimentConfig::parse("[sampler]\nseed = 3\n[model]\nkappa=1", Path::new(""))
            .unwrap();
        assert_eq!(a.hash, b.hash);
        assert_ne!(a.hash, c.hash);
        assert_eq!(a.hash.len(), 64);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[sampler]\niteratons = 3\n",
            "[samplr]\n",
            "[sampler]\nthinning = 0\n",
            "[sampler]\nmap_density = mode\n",
            "[model]\nkappa = one\n",
            "[parallel]\ntransport = tcp\ngrid_rows = 2\nhosts = 127.0.0.1:1\n",
            "iterations = 3\n",
        ] {
            let err = ExperimentConfig::parse(text, Path::new("")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }
}
