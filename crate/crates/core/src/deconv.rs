//! Poisson image deconvolution with a total-variation prior and a
//! nonnegativity constraint, split over a 2D grid of image tiles.
//!
//! Operator 1 is the blur with the Poisson likelihood, operator 2 the
//! discrete gradient with the weighted l2,1 norm.

use crate::error::{Error, Result};
use crate::hypergraph::grid_partition_2d;
use crate::kernels::{sample_poisson, AxdaParams, NoiseSource};
use crate::linops::{gaussian_kernel, Conv2DOperator, Grad2DOperator, LinearOperator};
use crate::sampler::{Coupling, Decomposition, HaloStrategy, Init, PriorF, Problem, SmoothH, Term};
use crate::transport::GridGeometry;

/// Power iterations used for the operator norm bounds.
const NORM_ITERS: usize = 100;

/// Fraction of each step bound used when no step is given.
pub const DEFAULT_STEP_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct DeconvSpec {
    pub height: usize,
    pub width: usize,
    /// Row-major kernel of size `krows x kcols`.
    pub kernel: Vec<f64>,
    pub krows: usize,
    pub kcols: usize,
    pub kappa: f64,
    pub alpha2: [f64; 2],
    pub beta2: [f64; 2],
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Explicit `gamma`; `DEFAULT_STEP_FRACTION` of the bound otherwise.
    pub gamma: Option<f64>,
    pub eta: [Option<f64>; 2],
}

impl DeconvSpec {
    /// Normalized `l x l` Gaussian blur, unit parameters, one worker.
    pub fn new(height: usize, width: usize, l: usize) -> Self {
        Self {
            height,
            width,
            kernel: gaussian_kernel(l, l),
            krows: l,
            kcols: l,
            kappa: 1.0,
            alpha2: [1.0; 2],
            beta2: [1.0; 2],
            grid_rows: 1,
            grid_cols: 1,
            gamma: None,
            eta: [None; 2],
        }
    }

    pub fn with_grid(mut self, rows: usize, cols: usize) -> Self {
        self.grid_rows = rows;
        self.grid_cols = cols;
        self
    }

    pub fn num_workers(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        let scales = self.alpha2.iter().chain(&self.beta2);
        if scales
            .chain([&self.kappa])
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::InvalidParameter(
                "kappa and coupling scales must be positive".into(),
            ));
        }
        let sum: f64 = self.kernel.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "kernel sums to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn conv(&self) -> Result<Conv2DOperator> {
        Conv2DOperator::new(
            self.height,
            self.width,
            self.kernel.clone(),
            self.krows,
            self.kcols,
        )
    }

    pub fn grad(&self) -> Grad2DOperator {
        Grad2DOperator::new(self.height, self.width)
    }
}

/// Upper bounds `(gamma_max, [eta_1_max, eta_2_max])` on the step sizes.
pub fn step_bounds(spec: &DeconvSpec) -> Result<(f64, [f64; 2])> {
    let norms = [
        spec.conv()?.operator_norm_sq(NORM_ITERS),
        spec.grad().operator_norm_sq(NORM_ITERS),
    ];
    let gamma_max = 1.0 / (norms[0] / spec.alpha2[0] + norms[1] / spec.alpha2[1]);
    Ok((gamma_max, [1.0 / spec.alpha2[0], 1.0 / spec.alpha2[1]]))
}

/// Everything needed to run the chain on one dataset.
#[derive(Debug, Clone)]
pub struct DeconvProblem {
    pub problem: Problem,
    pub decomposition: Decomposition,
    pub geometry: GridGeometry,
}

impl DeconvProblem {
    /// Grid halo exchange for `x`, one strip per axis.
    pub fn halo_strategy(&self) -> HaloStrategy {
        HaloStrategy::Grid(self.geometry)
    }
}

/// Builds the two-operator problem for observations `y` and its tile
/// decomposition. Hyperedge `m` of either operator belongs to the owner of
/// pixel `m`.
pub fn build_problem(spec: &DeconvSpec, y: Vec<f64>) -> Result<DeconvProblem> {
    spec.validate()?;
    let conv = spec.conv()?;
    let (h1, h2) = conv.half_widths();
    let geometry = GridGeometry::new(
        spec.height,
        spec.width,
        spec.grid_rows,
        spec.grid_cols,
        h1.max(1),
        h2.max(1),
    )?;
    let (gamma_max, eta_max) = step_bounds(spec)?;
    let params = AxdaParams {
        alpha2: spec.alpha2.to_vec(),
        beta2: spec.beta2.to_vec(),
        gamma: spec.gamma.unwrap_or(DEFAULT_STEP_FRACTION * gamma_max),
        eta: (0..2)
            .map(|i| spec.eta[i].unwrap_or(DEFAULT_STEP_FRACTION * eta_max[i]))
            .collect(),
        kappa: spec.kappa,
        lambda_h: 0.0,
    };
    let problem = Problem {
        terms: vec![
            Term {
                op: conv.to_block_sparse()?,
                g: Coupling::Poisson { y },
            },
            Term {
                op: spec.grad().to_block_sparse()?,
                g: Coupling::GroupL21 { weight: spec.kappa },
            },
        ],
        f: PriorF::NonNegative,
        h: SmoothH::None,
        params,
        init: Init::BackProjected,
    };
    problem.validate()?;
    let owner = grid_partition_2d(spec.height, spec.width, spec.grid_rows, spec.grid_cols)?;
    let decomposition = Decomposition::new(
        &problem,
        spec.num_workers(),
        &owner,
        &[owner.clone(), owner.clone()],
    )?;
    if h1 >= 1 && h2 >= 1 {
        check_halo_subset(&decomposition)?;
    }
    Ok(DeconvProblem {
        problem,
        decomposition,
        geometry,
    })
}

/// Every vertex a worker receives for the gradient is also received for the blur.
fn check_halo_subset(d: &Decomposition) -> Result<()> {
    let (blur, grad) = (&d.partitions[0], &d.partitions[1]);
    for k in 0..blur.num_workers {
        for (&from, verts) in &grad.worker(k).halo {
            let wide = blur.halo(k, from);
            if let Some(&n) = verts.iter().find(|n| wide.binary_search(n).is_err()) {
                return Err(Error::InvalidStructure(format!(
                    "gradient halo vertex {n} of worker {k} from {from} is not in the blur halo"
                )));
            }
        }
    }
    Ok(())
}

/// Scales `truth` so its maximum is exactly `max_intensity`.
pub fn rescale(truth: &[f64], max_intensity: f64) -> Result<Vec<f64>> {
    let m = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if truth.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter(
            "image must be finite and nonnegative".into(),
        ));
    }
    if m <= 0.0 {
        return Ok(vec![0.0; truth.len()]);
    }
    Ok(truth.iter().map(|v| v / m * max_intensity).collect())
}

/// Poisson counts with means `conv(truth)`.
pub fn simulate_observations(conv: &Conv2DOperator, truth: &[f64], seed: u64) -> Result<Vec<f64>> {
    let means = conv.apply(truth)?;
    let noise = NoiseSource::new(seed);
    Ok(means
        .iter()
        .enumerate()
        .map(|(m, &mu)| sample_poisson(mu, &noise, m as u64) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{run_inproc, run_serial, ChainOptions, GatherMode, Recorder};

    fn disk(h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|p| {
                let (r, c) = (
                    (p / w) as f64 - h as f64 / 2.0,
                    (p % w) as f64 - w as f64 / 3.0,
                );
                if r * r + c * c < (h * w) as f64 / 10.0 {
                    1.0
                } else {
                    0.2
                }
            })
            .collect()
    }

    fn dataset(spec: &DeconvSpec, seed: u64) -> Vec<f64> {
        let truth = rescale(&disk(spec.height, spec.width), 30.0).unwrap();
        simulate_observations(&spec.conv().unwrap(), &truth, seed).unwrap()
    }

    #[test]
    fn step_bound_examples() {
        let spec = DeconvSpec::new(32, 32, 3);
        let (g, eta) = step_bounds(&spec).unwrap();
        assert!((g - 1.0 / 9.0).abs() < 1e-12, "{g}");
        assert_eq!(eta, [1.0, 1.0]);
        let mut spec = spec;
        spec.alpha2 = [4.0, 4.0];
        let (g, eta) = step_bounds(&spec).unwrap();
        assert!((g - 4.0 / 9.0).abs() < 1e-12);
        assert_eq!(eta, [0.25, 0.25]);
    }

    #[test]
    fn halo_widths_on_a_two_by_two_grid() {
        let spec = DeconvSpec::new(64, 64, 7).with_grid(2, 2);
        let d = build_problem(&spec, dataset(&spec, 1))
            .unwrap()
            .decomposition;
        let (blur, grad) = (&d.partitions[0], &d.partitions[1]);
        // worker 0 is the top-left tile
        assert_eq!(blur.halo(0, 1).len(), 3 * 32);
        assert_eq!(blur.halo(0, 2).len(), 3 * 32);
        assert_eq!(blur.halo(0, 3).len(), 3 * 3);
        assert!(blur
            .halo(0, 1)
            .iter()
            .all(|&n| (32..35).contains(&(n % 64)) && n / 64 < 32));
        assert_eq!(grad.halo(0, 1).len(), 32);
        assert_eq!(grad.halo(0, 2).len(), 32);
        assert!(grad.halo(0, 3).is_empty());
        assert!(grad.halo(0, 1).iter().all(|&n| n % 64 == 32));
    }

    #[test]
    fn single_worker_has_no_communication() {
        let spec = DeconvSpec::new(16, 16, 3);
        let d = build_problem(&spec, dataset(&spec, 1))
            .unwrap()
            .decomposition;
        for p in &d.partitions {
            assert!(p.worker(0).halo.is_empty() && p.worker(0).send_to.is_empty());
        }
    }

    #[test]
    fn side_by_side_halos_have_one_column() {
        let spec = DeconvSpec::new(256, 256, 3).with_grid(1, 2);
        let d = build_problem(&spec, vec![1.0; 256 * 256])
            .unwrap()
            .decomposition;
        assert_eq!(d.partitions[0].halo(0, 1).len(), 256);
        assert_eq!(d.partitions[0].halo(1, 0).len(), 256);
        assert_eq!(d.partitions[1].halo(0, 1).len(), 256);
    }

    #[test]
    fn tiles_thinner_than_the_kernel_are_rejected() {
        let spec = DeconvSpec::new(16, 16, 7).with_grid(1, 8);
        assert!(matches!(
            build_problem(&spec, vec![0.0; 256]),
            Err(Error::TileTooSmall { .. })
        ));
    }

    #[test]
    fn rescaling_hits_the_maximum_exactly() {
        let x = rescale(&[0.1, 0.7, 0.3, 0.7], 30.0).unwrap();
        assert_eq!(x.iter().copied().fold(0.0, f64::max), 30.0);
        assert_eq!(rescale(&[0.0; 3], 30.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn observations_are_seeded() {
        let spec = DeconvSpec::new(16, 16, 3);
        assert_eq!(dataset(&spec, 5), dataset(&spec, 5));
        assert_ne!(dataset(&spec, 5), dataset(&spec, 6));
        let y = simulate_observations(&spec.conv().unwrap(), &[0.0; 256], 5).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_chain_matches_serial_and_stays_nonnegative() {
        let spec = DeconvSpec::new(24, 24, 3);
        let y = dataset(&spec, 3);
        let single = build_problem(&spec, y.clone()).unwrap();
        let opts = ChainOptions {
            iterations: 6,
            seed: 9,
            gather: GatherMode::Full,
            ..ChainOptions::default()
        };
        let mut serial = Recorder::default();
        run_serial(&single.problem, &single.decomposition, &opts, &mut serial).unwrap();
        let grid = build_problem(&spec.clone().with_grid(2, 3), y).unwrap();
        let gopts = ChainOptions {
            halo: grid.halo_strategy(),
            ..opts.clone()
        };
        let mut dist = Recorder::default();
        run_inproc(&grid.problem, &grid.decomposition, &gopts, &mut dist).unwrap();
        let mut reference = Recorder::default();
        run_serial(&grid.problem, &grid.decomposition, &opts, &mut reference).unwrap();
        assert_eq!(dist.states, reference.states);
        for s in serial.states.iter().chain(&dist.states) {
            assert!(s.x.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn noiseless_sweeps_match_hand_composition() {
        use crate::kernels::{prox_group_l21, prox_nonneg, prox_poisson};
        let spec = DeconvSpec::new(16, 16, 3);
        let y = dataset(&spec, 4);
        let built = build_problem(&spec, y.clone()).unwrap();
        let prm = &built.problem.params;
        let opts = ChainOptions {
            iterations: 2,
            gather: GatherMode::Full,
            zero_noise: true,
            ..ChainOptions::default()
        };
        let mut rec = Recorder::default();
        run_serial(&built.problem, &built.decomposition, &opts, &mut rec).unwrap();

        let (conv, grad) = (spec.conv().unwrap(), spec.grad());
        let mut x: Vec<f64> = conv
            .apply_adjoint(&y)
            .unwrap()
            .into_iter()
            .map(prox_nonneg)
            .collect();
        let mut v = [conv.apply(&x).unwrap(), grad.apply(&x).unwrap()];
        let mut z = v.clone();
        let mut u = [vec![0.0; 256], vec![0.0; 512]];
        for state in &rec.states {
            let dual = |i: usize| -> Vec<f64> {
                (0..v[i].len())
                    .map(|m| (v[i][m] - z[i][m] + u[i][m]) / prm.alpha2[i])
                    .collect()
            };
            let a = conv.apply_adjoint(&dual(0)).unwrap();
            let b = grad.apply_adjoint(&dual(1)).unwrap();
            for j in 0..256 {
                x[j] = prox_nonneg(x[j] - prm.gamma * (a[j] + b[j]));
            }
            v = [conv.apply(&x).unwrap(), grad.apply(&x).unwrap()];
            for i in 0..2 {
                for m in 0..z[i].len() {
                    z[i][m] -= prm.eta[i] / prm.alpha2[i] * (z[i][m] - v[i][m] - u[i][m]);
                }
            }
            for m in 0..256 {
                z[0][m] = prox_poisson(z[0][m], y[m], prm.eta[0]);
            }
            for pair in z[1].chunks_mut(2) {
                prox_group_l21(pair, prm.eta[1] * spec.kappa);
            }
            for i in 0..2 {
                let c = prm.beta2[i] / (prm.alpha2[i] + prm.beta2[i]);
                u[i] = z[i].iter().zip(&v[i]).map(|(a, b)| c * (a - b)).collect();
            }
            let close = |a: &[f64], b: &[f64]| {
                a.iter()
                    .zip(b)
                    .all(|(p, q)| (p - q).abs() <= 1e-10 * (1.0 + q.abs()))
            };
            assert!(close(&state.x, &x));
            for i in 0..2 {
                assert!(
                    close(&state.z[i], &z[i])
                        && close(&state.u[i], &u[i])
                        && close(&state.v[i], &v[i])
                );
            }
        }
        // the second sweep moves x away from the back-projection
        assert_ne!(rec.states[1].x, rec.states[0].x);
    }
}
