//! PCA down to the intermediate width.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Axis};

use crate::autograd::Mat;
use crate::error::{Error, Result};
use crate::tensor_io::TensorFile;

/// Components whose variance falls below this fraction of the total are
/// reported as zero-variance.
const ZERO_VARIANCE_REL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `d_m × d_token`, orthonormal rows, decreasing explained variance.
    pub components: Mat,
    pub explained_variance: Array1<f64>,
    /// Index of the first component with (numerically) zero variance, if any.
    pub zero_variance_from: Option<usize>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    /// `(X - mean) · componentsᵀ`.
    pub fn transform(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("pca expects {} columns, got {}", self.input_dim(), x.ncols())));
        }
        let centered = x - &self.mean.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.components.t()))
    }

    /// Maps reduced rows back to the input space.
    pub fn inverse_transform(&self, z: &Mat) -> Result<Mat> {
        if z.ncols() != self.output_dim() {
            return Err(Error::Shape(format!("pca inverse expects {} columns, got {}", self.output_dim(), z.ncols())));
        }
        Ok(z.dot(&self.components) + &self.mean.view().insert_axis(Axis(0)))
    }

    pub fn write_to(&self, f: &mut TensorFile) {
        f.push_vec("mean", self.mean.as_slice().expect("contiguous mean"));
        f.push_mat("components", &self.components);
        f.push_vec("explained_variance", self.explained_variance.as_slice().expect("contiguous variance"));
    }

    pub fn read_from(f: &TensorFile) -> Result<Self> {
        let mean = Array1::from(f.vec("mean")?);
        let components = f.mat("components")?;
        let explained_variance = Array1::from(f.vec("explained_variance")?);
        if components.ncols() != mean.len() || components.nrows() != explained_variance.len() {
            return Err(Error::Format("pca tensors have inconsistent shapes".into()));
        }
        let total: f64 = explained_variance.sum();
        let zero_variance_from = explained_variance.iter().position(|&v| v <= ZERO_VARIANCE_REL * total.max(f64::MIN_POSITIVE));
        Ok(Self { mean, components, explained_variance, zero_variance_from })
    }
}

/// Flips `v` so its largest-magnitude coordinate is positive (first index wins ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits `d_m` principal axes of the rows of `x` from the unbiased covariance.
pub fn pca_fit(x: &Mat, d_m: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Config(format!("pca needs at least 2 rows, got {n}")));
    }
    if d_m == 0 || d_m > (n - 1).min(d) {
        return Err(Error::Config(format!("pca target width {d_m} outside [1, {}]", (n - 1).min(d))));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Mat::zeros((d_m, d));
    let mut explained = Array1::zeros(d_m);
    for (row, &idx) in order.iter().take(d_m).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        fix_sign(&mut v);
        components.row_mut(row).assign(&Array1::from(v));
        explained[row] = eig.eigenvalues[idx].max(0.0);
    }
    let total: f64 = cov.diag().sum();
    let zero_variance_from = explained.iter().position(|&v| v <= ZERO_VARIANCE_REL * total.max(f64::MIN_POSITIVE));
    if let Some(i) = zero_variance_from {
        log::warn!("pca: input is rank-deficient, components from {i} carry no variance");
    }
    Ok(PcaModel { mean, components, explained_variance: explained, zero_variance_from })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Anisotropic scales so eigenvalues are well separated.
        Mat::from_shape_fn((n, d), |(_, c)| rng.random_range(-1.0..1.0) * (c as f64 + 1.0))
    }

    fn distances(m: &Mat) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..m.nrows() {
            for j in i + 1..m.nrows() {
                out.push((&m.row(i) - &m.row(j)).mapv(|v| v * v).sum().sqrt());
            }
        }
        out
    }

    #[test]
    fn two_point_example() {
        let x = array![[0.0, 0.0], [2.0, 0.0]];
        let m = pca_fit(&x, 1).unwrap();
        assert_eq!(m.mean, array![1.0, 0.0]);
        assert!((m.components[[0, 0]] - 1.0).abs() < 1e-12 && m.components[[0, 1]].abs() < 1e-12);
        assert!((m.explained_variance[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_axis_data() {
        let x = array![[0.0, 1.0, 0.0], [0.0, 3.0, 0.0], [0.0, -2.0, 0.0], [0.0, 5.0, 0.0]];
        let m = pca_fit(&x, 1).unwrap();
        assert!((m.components[[0, 1]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_sorted_and_bounded() {
        let x = random(40, 6, 1);
        let m = pca_fit(&x, 5).unwrap();
        let gram = m.components.dot(&m.components.t());
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).into_iter().all(|w| w[0] >= w[1] && w[1] >= 0.0));
        let centered = &x - &m.mean.view().insert_axis(Axis(0));
        let total = centered.mapv(|v| v * v).sum() / (x.nrows() as f64 - 1.0);
        assert!(m.explained_variance.sum() <= total + 1e-8);
        let z = m.transform(&x).unwrap();
        for (zr, cr) in z.rows().into_iter().zip(centered.rows()) {
            assert!(zr.dot(&zr).sqrt() <= cr.dot(&cr).sqrt() + 1e-8);
        }
    }

    #[test]
    fn full_rank_reconstruction() {
        let x = random(10, 4, 2);
        let m = pca_fit(&x, 4).unwrap();
        let back = m.inverse_transform(&m.transform(&x).unwrap()).unwrap();
        assert!((&back - &x).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn mean_row_maps_to_zero_and_transform_is_pure() {
        let x = random(12, 3, 3);
        let m = pca_fit(&x, 2).unwrap();
        let mean_row = m.mean.clone().insert_axis(Axis(0));
        assert!(m.transform(&mean_row).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(m.transform(&x).unwrap(), m.transform(&x).unwrap());
        assert!(m.transform(&Mat::zeros((1, 5))).is_err());
    }

    #[test]
    fn rotation_preserves_pairwise_distances() {
        let x = random(15, 3, 4);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let xr = x.dot(&rot);
        let a = pca_fit(&x, 3).unwrap().transform(&x).unwrap();
        let b = pca_fit(&xr, 3).unwrap().transform(&xr).unwrap();
        for (u, v) in distances(&a).iter().zip(distances(&b)) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let x = random(20, 5, 5);
        let a = pca_fit(&x, 3).unwrap();
        let b = pca_fit(&x, 3).unwrap();
        assert_eq!(a, b);
        for row in a.components.rows() {
            let max = row.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    #[test]
    fn range_checks_and_rank_deficiency() {
        let x = random(3, 4, 6);
        assert!(pca_fit(&x, 3).is_err());
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&random(1, 4, 7), 1).is_err());
        let flat = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let m = pca_fit(&flat, 2).unwrap();
        assert_eq!(m.zero_variance_from, Some(1));
    }
}
