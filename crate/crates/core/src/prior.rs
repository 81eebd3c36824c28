//! Gaussian prior with exponential covariance and its truncated
//! Karhunen–Loève parametrization.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense covariance C_ij = δ·exp(−‖x_i − x_j‖/λ) over a node set.
#[derive(Debug, Clone)]
pub struct PriorCovariance {
    pub nodes: Vec<[f64; 2]>,
    pub delta: f64,
    pub lambda: f64,
    pub matrix: DMatrix<f64>,
}

pub fn build_covariance(nodes: &[[f64; 2]], delta: f64, lambda: f64) -> Result<PriorCovariance> {
    if !(delta > 0.0) || !(lambda > 0.0) {
        return Err(Error::invalid(format!(
            "covariance amplitude and correlation length must be positive (got {delta}, {lambda})"
        )));
    }
    let n = nodes.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        let d = ((nodes[i][0] - nodes[j][0]).powi(2) + (nodes[i][1] - nodes[j][1]).powi(2)).sqrt();
        delta * (-d / lambda).exp()
    });
    Ok(PriorCovariance {
        nodes: nodes.to_vec(),
        delta,
        lambda,
        matrix,
    })
}

/// Leading eigenpairs of a prior covariance plus the prior mean field.
#[derive(Debug, Clone)]
pub struct KLBasis {
    /// Retained eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Retained eigenvectors as columns (N_h × M).
    pub modes: DMatrix<f64>,
    /// Full spectrum, descending.
    pub spectrum: Vec<f64>,
    pub mean: DVector<f64>,
}

/// Dense symmetric eigendecomposition truncated to `m` modes. Each
/// eigenvector's largest-magnitude entry is made positive.
pub fn kl_decompose(cov: &PriorCovariance, m: usize, mean: DVector<f64>) -> Result<KLBasis> {
    let n = cov.matrix.nrows();
    if m > n {
        return Err(Error::invalid(format!(
            "cannot retain {m} modes from a {n}-node covariance"
        )));
    }
    if mean.len() != n {
        return Err(Error::DimensionMismatch {
            what: "prior mean",
            expected: n,
            found: mean.len(),
        });
    }
    let eig = cov.matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut modes = DMatrix::zeros(n, m);
    for (c, &k) in order.iter().take(m).enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v.neg_mut();
        }
        modes.set_column(c, &v);
    }
    Ok(KLBasis {
        eigenvalues: spectrum[..m].iter().map(|&l| l.max(0.0)).collect(),
        modes,
        spectrum,
        mean,
    })
}

impl KLBasis {
    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.modes.nrows()
    }

    /// Columns √λ_m ψ_m.
    pub fn scaled_modes(&self) -> DMatrix<f64> {
        let mut s = self.modes.clone();
        for (c, l) in self.eigenvalues.iter().enumerate() {
            s.column_mut(c).scale_mut(l.sqrt());
        }
        s
    }

    /// max_i (Σ_m λ_m ψ_m(x_i)²)^{1/2}.
    pub fn pointwise_std_max(&self) -> f64 {
        (0..self.num_nodes())
            .map(|i| {
                self.eigenvalues
                    .iter()
                    .enumerate()
                    .map(|(m, l)| l * self.modes[(i, m)].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["m", "lambda"])?;
        for (m, l) in self.eigenvalues.iter().enumerate() {
            out.write_record(&[(m + 1).to_string(), format!("{l:e}")])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// σ = σ₀ + Σ √λ_m u_m ψ_m at the nodes.
pub fn kl_expand(basis: &KLBasis, u: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != basis.truncation() {
        return Err(Error::DimensionMismatch {
            what: "KL coefficients",
            expected: basis.truncation(),
            found: u.len(),
        });
    }
    let scaled = DVector::from_iterator(
        u.len(),
        u.iter().zip(&basis.eigenvalues).map(|(c, l)| c * l.sqrt()),
    );
    Ok(&basis.mean + &basis.modes * scaled)
}

/// `count` i.i.d. standard normal vectors in ℝ^m.
pub fn sample_prior_coefficients<R: Rng + ?Sized>(rng: &mut R, m: usize, count: usize) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_fn(m, |_, _| rng.sample(StandardNormal)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{min_eigenvalue, spectral_norm};
    use crate::mesh::build_structured_mesh;
    use crate::rng::{SeedStream, StreamTag};

    fn grid(n: usize) -> Vec<[f64; 2]> {
        build_structured_mesh(n).unwrap().nodes().to_vec()
    }

    #[test]
    fn covariance_entries() {
        let c = build_covariance(&[[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]], 0.05, 0.5).unwrap();
        assert_eq!(c.matrix[(0, 2)], 0.05);
        assert!((c.matrix[(0, 1)] - 0.05 * (-(2f64.sqrt()) / 0.5).exp()).abs() < 1e-16);
        let c = build_covariance(&grid(3), 0.05, 1e-9).unwrap();
        let off = c.matrix.clone() - DMatrix::identity(16, 16) * 0.05;
        assert!(off.abs().max() == 0.0);
        assert!(build_covariance(&grid(1), 0.0, 1.0).is_err());
    }

    #[test]
    fn covariance_is_psd_with_constant_diagonal() {
        let c = build_covariance(&grid(6), 0.05, 0.5).unwrap();
        assert!((0..49).all(|i| c.matrix[(i, i)] == 0.05));
        assert_eq!(c.matrix, c.matrix.transpose());
        assert!(min_eigenvalue(&c.matrix) >= -1e-8 * 0.05);
    }

    #[test]
    fn decomposition_properties() {
        let c = build_covariance(&grid(5), 0.05, 0.5).unwrap();
        let n = 36;
        let full = kl_decompose(&c, n, DVector::zeros(n)).unwrap();
        assert!(full.spectrum.windows(2).all(|w| w[0] >= w[1]));
        let trace: f64 = full.spectrum.iter().sum();
        assert!((trace - n as f64 * 0.05).abs() < 1e-10);
        let gram = full.modes.transpose() * &full.modes;
        assert!((gram - DMatrix::identity(n, n)).abs().max() < 1e-8);
        let s = full.scaled_modes();
        assert!((&s * s.transpose() - &c.matrix).abs().max() < 1e-6);
        for m in 0..n {
            let v = full.modes.column(m);
            let r = &c.matrix * v - v * full.spectrum[m];
            assert!(r.norm() <= 1e-8 * full.spectrum[0]);
        }
        let m = 10;
        let trunc = kl_decompose(&c, m, DVector::zeros(n)).unwrap();
        let ts = trunc.scaled_modes();
        let err = spectral_norm(&(&c.matrix - &ts * ts.transpose()));
        assert!((err - full.spectrum[m]).abs() < 1e-10);
        assert!(kl_decompose(&c, n + 1, DVector::zeros(n)).is_err());
    }

    #[test]
    fn scaled_identity_spectrum() {
        let c = build_covariance(&grid(2), 0.05, 1e-9).unwrap();
        let b = kl_decompose(&c, 9, DVector::zeros(9)).unwrap();
        assert!(b.spectrum.iter().all(|l| (l - 0.05).abs() < 1e-15));
    }

    #[test]
    fn expansion_is_affine() {
        let c = build_covariance(&grid(4), 0.05, 0.5).unwrap();
        let mean = DVector::from_element(25, 0.3);
        let b = kl_decompose(&c, 5, mean.clone()).unwrap();
        assert_eq!(kl_expand(&b, &DVector::zeros(5)).unwrap(), mean);
        let mut e1 = DVector::zeros(5);
        e1[0] = 1.0;
        let s = kl_expand(&b, &e1).unwrap();
        let expected = &mean + b.modes.column(0) * b.eigenvalues[0].sqrt();
        assert!((s - expected).abs().max() < 1e-15);
        assert!(kl_expand(&b, &DVector::zeros(4)).is_err());
        // Sign convention.
        for m in 0..5 {
            let col = b.modes.column(m);
            let pivot = col.iter().fold(0.0f64, |a, &x| if x.abs() > a.abs() { x } else { a });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = SeedStream::new(7, StreamTag::InitialEnsemble);
        assert!(sample_prior_coefficients(&mut s.rng(&[]), 3, 0).is_empty());
        let a = sample_prior_coefficients(&mut s.rng(&[]), 4, 10);
        let b = sample_prior_coefficients(&mut s.rng(&[]), 4, 10);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_mean_is_centred() {
        let n = 100_000;
        let s = SeedStream::new(11, StreamTag::Study);
        let draws = sample_prior_coefficients(&mut s.rng(&[]), 3, n);
        let mean = draws.iter().fold(DVector::zeros(3), |a, d| a + d) / n as f64;
        assert!(mean.iter().all(|m| m.abs() < 4.0 / (n as f64).sqrt()));
    }

    #[test]
    fn expanded_samples_reproduce_covariance() {
        let nodes = grid(1);
        let c = build_covariance(&nodes, 0.05, 0.5).unwrap();
        let b = kl_decompose(&c, 4, DVector::zeros(4)).unwrap();
        let count = 100_000;
        let s = SeedStream::new(3, StreamTag::Study);
        let mut acc = DMatrix::zeros(4, 4);
        for u in sample_prior_coefficients(&mut s.rng(&[]), 4, count) {
            let f = kl_expand(&b, &u).unwrap();
            acc += &f * f.transpose();
        }
        acc /= count as f64;
        let tol = 3.0 / (count as f64).sqrt() * 0.05;
        assert!((acc - &c.matrix).abs().max() <= tol);
    }
}
