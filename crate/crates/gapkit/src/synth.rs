//! Synthetic datasets.

use gapkit_core::linalg::cholesky;
use gapkit_core::timeseries::Ar1StudentParams;
use gapkit_core::{DMatrix, SeedSpec};
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::config::DatasetSpec;
use crate::error::{config, CliResult};

fn normals(rows: usize, cols: usize, rng: &mut gapkit_core::GapRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| Distribution::<f64>::sample(&StandardNormal, rng))
}

/// The complete `p x n` ground truth for one replicate.
pub fn generate(spec: &DatasetSpec, seed: SeedSpec) -> CliResult<DMatrix<f64>> {
    let mut rng = seed.rng();
    Ok(match spec {
        DatasetSpec::Gaussian { p, n, rho } => {
            let sigma = DMatrix::from_fn(*p, *p, |i, j| rho.powi(i.abs_diff(j) as i32));
            let l = cholesky(&sigma).ok_or_else(|| config("gaussian covariance is not positive definite"))?;
            l.l() * normals(*p, *n, &mut rng)
        }
        DatasetSpec::LowRank { p, n, rank, noise } => {
            let u = normals(*p, *rank, &mut rng);
            let v = normals(*rank, *n, &mut rng);
            let mut x = u * v / (*rank as f64).sqrt();
            if *noise > 0.0 {
                x += normals(*p, *n, &mut rng) * *noise;
            }
            x
        }
        DatasetSpec::Ar1t { n, mu, a, sigma, nu } => {
            let params = Ar1StudentParams::new(*mu, *a, *sigma, *nu)?;
            let gamma = Gamma::new(0.5 * nu, 2.0 / nu).map_err(|e| config(e.to_string()))?;
            let mut x = DMatrix::zeros(1, *n);
            x[0] = if a.abs() < 1.0 { mu / (1.0 - a) } else { 0.0 };
            for t in 1..*n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let tau: f64 = gamma.sample(&mut rng);
                x[t] = params.mu + params.a * x[t - 1] + params.sigma * z / tau.max(f64::MIN_POSITIVE).sqrt();
            }
            x
        }
        DatasetSpec::Csv { path } => {
            let table = crate::io::read_table(path)?;
            if table.data.count_missing() > 0 {
                return Err(config(format!("dataset file {} must be complete", path.display())));
            }
            table.data.filled_with(0.0)
        }
    })
}
