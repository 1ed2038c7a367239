//! PCA embedding that keeps the additive split `x_h = x_l + x_r` intact.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::io::{read_tensor, write_tensor};
use crate::tensor::Tensor;
use crate::wavelet::ResolutionTriple;

/// Affine projection `x -> C((x - mean) / scale)` with orthonormal rows in `C`.
///
/// `scale` is the optional per-feature standardization divisor; keeping it
/// apart from `components` leaves `C Cᵀ = I` exact.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    pub scale: Option<DVector<f64>>,
    /// `d x s`, one component per row.
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

/// Fits the top `d` principal components of the rows of `data`.
pub fn pca_fit(data: &DMatrix<f64>, d: usize) -> Result<PcaModel> {
    fit(data, d, false)
}

/// Like [`pca_fit`] after standardizing every feature to unit variance over `data`.
pub fn pca_fit_standardized(data: &DMatrix<f64>, d: usize) -> Result<PcaModel> {
    fit(data, d, true)
}

fn fit(data: &DMatrix<f64>, d: usize, standardize: bool) -> Result<PcaModel> {
    let (n, s) = data.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("pca needs at least 2 rows, got {n}")));
    }
    if d == 0 || d > (n - 1).min(s) {
        return Err(Error::InvalidArgument(format!(
            "d = {d} outside 1..={} for a {n}x{s} matrix",
            (n - 1).min(s)
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pca input".into()));
    }
    let mean = data.row_mean().transpose();
    let mut xc = data.clone();
    for mut row in xc.row_iter_mut() {
        row -= mean.transpose();
    }
    let scale = if standardize {
        let sd = DVector::from_iterator(
            s,
            xc.column_iter().map(|c| {
                let v = (c.norm_squared() / (n - 1) as f64).sqrt();
                if v > 1e-12 { v } else { 1.0 }
            }),
        );
        for (j, mut col) in xc.column_iter_mut().enumerate() {
            col /= sd[j];
        }
        Some(sd)
    } else {
        None
    };
    let denom = (n - 1) as f64;
    let (values, vectors) = if n - 1 < s {
        // Gram trick: eigenvectors of Xc Xcᵀ map to those of Xcᵀ Xc
        let gram = &xc * xc.transpose() / denom;
        let (vals, u) = sorted_eigen(gram, d);
        let mut v = xc.transpose() * u;
        for (j, mut col) in v.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            } else {
                return Err(Error::Singular(format!("component {j} has zero variance")));
            }
        }
        (vals, v)
    } else {
        let cov = xc.transpose() * &xc / denom;
        sorted_eigen(cov, d)
    };
    let mut components = vectors.transpose();
    for mut row in components.row_iter_mut() {
        let pivot = row.iter().fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.neg_mut();
        }
    }
    Ok(PcaModel {
        mean,
        scale,
        components,
        explained_variance: values.into_iter().map(|v| v.max(0.0)).collect(),
    })
}

/// Top `d` eigenpairs in non-increasing eigenvalue order (ties by index).
fn sorted_eigen(m: DMatrix<f64>, d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(d);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let cols: Vec<_> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    (values, DMatrix::from_columns(&cols))
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.nrows()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    fn scaled(&self, x: DVector<f64>) -> DVector<f64> {
        match &self.scale {
            Some(s) => x.component_div(s),
            None => x,
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let centred = DVector::from_column_slice(x) - &self.mean;
        Ok((&self.components * self.scaled(centred)).as_slice().to_vec())
    }

    /// Linear part only, so `project(x_l + x_r) = project(x_l) + project_residual(x_r)`.
    pub fn project_residual(&self, x_r: &[f64]) -> Result<Vec<f64>> {
        self.check(x_r)?;
        let v = self.scaled(DVector::from_column_slice(x_r));
        Ok((&self.components * v).as_slice().to_vec())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (d, s) = self.components.shape();
        write_tensor(&Tensor::vector(self.mean.as_slice().to_vec())?, &dir.join("mean.mrt1"))?;
        // row-major on disk
        let rows: Vec<f64> = self.components.transpose().as_slice().to_vec();
        write_tensor(&Tensor::new(vec![d, s], rows)?, &dir.join("components.mrt1"))?;
        write_tensor(
            &Tensor::vector(self.explained_variance.clone())?,
            &dir.join("explained_variance.mrt1"),
        )?;
        if let Some(sc) = &self.scale {
            write_tensor(&Tensor::vector(sc.as_slice().to_vec())?, &dir.join("scale.mrt1"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mean = read_tensor(&dir.join("mean.mrt1"))?;
        let comps = read_tensor(&dir.join("components.mrt1"))?;
        let ev = read_tensor(&dir.join("explained_variance.mrt1"))?;
        let scale_path = dir.join("scale.mrt1");
        let scale = if scale_path.exists() {
            Some(DVector::from_vec(read_tensor(&scale_path)?.into_data()))
        } else {
            None
        };
        if comps.rank() != 2 || comps.shape()[1] != mean.len() || comps.shape()[0] != ev.len() {
            return Err(Error::Shape("inconsistent pca model files".into()));
        }
        if scale.as_ref().is_some_and(|s| s.len() != mean.len()) {
            return Err(Error::Shape("scale length differs from mean".into()));
        }
        let (d, s) = (comps.shape()[0], comps.shape()[1]);
        Ok(PcaModel {
            mean: DVector::from_vec(mean.into_data()),
            scale,
            components: DMatrix::from_row_slice(d, s, comps.data()),
            explained_variance: ev.into_data(),
        })
    }
}

/// A resolution triple expressed in PCA coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTriple {
    pub x_h: Vec<f64>,
    pub x_l: Vec<f64>,
    pub x_r: Vec<f64>,
    pub levels_removed: usize,
}

impl ProjectedTriple {
    pub fn new(x_h: Vec<f64>, x_l: Vec<f64>, x_r: Vec<f64>, levels_removed: usize) -> Result<Self> {
        if x_h.len() != x_l.len() || x_l.len() != x_r.len() {
            return Err(Error::Shape("triple components differ in length".into()));
        }
        Ok(ProjectedTriple { x_h, x_l, x_r, levels_removed })
    }

    pub fn dim(&self) -> usize {
        self.x_h.len()
    }
}

impl PcaModel {
    /// Projects `x_h` and `x_l` affinely and `x_r` linearly.
    pub fn project_triple(&self, t: &ResolutionTriple) -> Result<ProjectedTriple> {
        let x_h = self.project(t.x_h.data())?;
        let x_l = if t.levels_removed == 0 { x_h.clone() } else { self.project(t.x_l.data())? };
        let x_r = if t.levels_removed == 0 {
            vec![0.0; x_h.len()]
        } else {
            self.project_residual(t.x_r.data())?
        };
        ProjectedTriple::new(x_h, x_l, x_r, t.levels_removed)
    }
}

/// Stacks equally sized tensors as the rows of a matrix.
pub fn rows_matrix(xs: &[Tensor]) -> Result<DMatrix<f64>> {
    let s = xs.first().map(Tensor::len).ok_or_else(|| Error::InvalidArgument("no rows".into()))?;
    if xs.iter().any(|t| t.len() != s) {
        return Err(Error::Shape("rows differ in length".into()));
    }
    Ok(DMatrix::from_row_iterator(xs.len(), s, xs.iter().flat_map(|t| t.data().iter().copied())))
}
