//! Language-feature compression with incremental PCA.
//!
//! Features are projected onto the leading `N_c` principal directions of a
//! training corpus; relevancy against a task embedding is the cosine
//! similarity after lifting back to the full feature dimension.

mod io;

pub use io::{
    decode_rows, encode_rows, read_basis, read_corpus, write_basis, write_corpus, CORPUS_MAGIC,
    CORPUS_VERSION,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch has only zero vectors; covariance is degenerate")]
    Degenerate,
    #[error("basis has not been fitted")]
    Unfitted,
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("non-finite feature value")]
    NonFinite,
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error(transparent)]
    Format(#[from] crate::binio::FormatError),
}

/// Full-dimensional language feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(DVector<f64>);

/// Feature after projection onto the PCA subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFeature(DVector<f64>);

macro_rules! vector_newtype {
    ($t:ident) => {
        impl $t {
            pub fn new(values: Vec<f64>) -> Result<Self, CodecError> {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(CodecError::NonFinite);
                }
                Ok(Self(DVector::from_vec(values)))
            }

            pub fn zeros(len: usize) -> Self {
                Self(DVector::zeros(len))
            }

            pub fn from_vector(v: DVector<f64>) -> Self {
                Self(v)
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()
            }

            pub fn vector(&self) -> &DVector<f64> {
                &self.0
            }

            pub fn norm(&self) -> f64 {
                self.0.norm()
            }

            pub fn scaled(&self, s: f64) -> Self {
                Self(&self.0 * s)
            }
        }
    };
}

vector_newtype!(FeatureVector);
vector_newtype!(CompressedFeature);

/// Either representation accepted by [`PcaBasis::relevancy`].
#[derive(Debug, Clone, Copy)]
pub enum FeatureRef<'a> {
    Full(&'a FeatureVector),
    Compressed(&'a CompressedFeature),
}

/// Preprocessing applied to every input before fitting and projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Rescale nonzero inputs to unit L2 norm.
    #[default]
    Unit,
    None,
}

/// Cosine similarity; errors on a zero-norm argument.
pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64, CodecError> {
    if a.len() != b.len() {
        return Err(CodecError::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(CodecError::ZeroNorm);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Incremental PCA state: running mean, `N_c × N_f` orthonormal component
/// rows, and the singular values needed to fold in the next mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    mean: DVector<f64>,
    components: DMatrix<f64>,
    singular_values: DVector<f64>,
    samples_seen: u64,
    normalization: Normalization,
}

impl PcaBasis {
    pub fn new(
        n_features: usize,
        n_components: usize,
        normalization: Normalization,
    ) -> Result<Self, CodecError> {
        if n_components == 0 || n_components > n_features {
            return Err(CodecError::InvalidBasis(format!(
                "need 0 < N_c <= N_f, got N_c={n_components}, N_f={n_features}"
            )));
        }
        Ok(Self {
            mean: DVector::zeros(n_features),
            components: DMatrix::zeros(n_components, n_features),
            singular_values: DVector::zeros(n_components),
            samples_seen: 0,
            normalization,
        })
    }

    /// Builds a fitted basis from explicit parts. Rows of `components` must be
    /// orthonormal within 1e-6.
    pub fn from_parts(
        mean: DVector<f64>,
        components: DMatrix<f64>,
        singular_values: DVector<f64>,
        samples_seen: u64,
        normalization: Normalization,
    ) -> Result<Self, CodecError> {
        let (n_c, n_f) = components.shape();
        if mean.len() != n_f {
            return Err(CodecError::Dimension {
                expected: n_f,
                got: mean.len(),
            });
        }
        if singular_values.len() != n_c {
            return Err(CodecError::Dimension {
                expected: n_c,
                got: singular_values.len(),
            });
        }
        if n_c == 0 || n_c > n_f {
            return Err(CodecError::InvalidBasis("need 0 < N_c <= N_f".into()));
        }
        let basis = Self {
            mean,
            components,
            singular_values,
            samples_seen,
            normalization,
        };
        let err = basis.orthonormality_error();
        if err > 1e-6 {
            return Err(CodecError::InvalidBasis(format!(
                "component rows are not orthonormal (max Gram deviation {err:e})"
            )));
        }
        Ok(basis)
    }

    pub fn n_features(&self) -> usize {
        self.components.ncols()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn is_fitted(&self) -> bool {
        self.samples_seen > 0
    }

    /// Per-component variance of the data seen so far.
    pub fn explained_variance(&self) -> DVector<f64> {
        let denom = (self.samples_seen.max(2) - 1) as f64;
        self.singular_values.map(|s| s * s / denom)
    }

    /// Largest absolute deviation of the component Gram matrix from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = &self.components * self.components.transpose();
        let n = gram.nrows();
        (gram - DMatrix::<f64>::identity(n, n)).amax()
    }

    fn preprocess(&self, v: &DVector<f64>) -> DVector<f64> {
        match self.normalization {
            Normalization::Unit => {
                let n = v.norm();
                if n > 0.0 {
                    v / n
                } else {
                    v.clone()
                }
            }
            Normalization::None => v.clone(),
        }
    }

    fn check_dim(&self, len: usize) -> Result<(), CodecError> {
        if len != self.n_features() {
            return Err(CodecError::Dimension {
                expected: self.n_features(),
                got: len,
            });
        }
        Ok(())
    }

    /// Folds one mini-batch into the basis and returns the updated value.
    ///
    /// The previous subspace is summarized by `diag(S)·V`, stacked with the
    /// centered batch and a mean-correction row, and re-factored with a
    /// truncated SVD.
    pub fn fit_incremental(&self, batch: &[FeatureVector]) -> Result<PcaBasis, CodecError> {
        if batch.is_empty() {
            return Err(CodecError::EmptyBatch);
        }
        for f in batch {
            self.check_dim(f.len())?;
        }
        if batch.iter().all(|f| f.norm() == 0.0) {
            return Err(CodecError::Degenerate);
        }
        let n_f = self.n_features();
        let n_c = self.n_components();
        let m = batch.len();
        let rows: Vec<DVector<f64>> = batch.iter().map(|f| self.preprocess(&f.0)).collect();

        let mut batch_mean = DVector::zeros(n_f);
        for r in &rows {
            batch_mean += r;
        }
        batch_mean /= m as f64;

        let n_old = self.samples_seen as f64;
        let n_total = n_old + m as f64;
        let new_mean = (&self.mean * n_old + &batch_mean * m as f64) / n_total;

        let prior_rows = if self.samples_seen > 0 { n_c + 1 } else { 0 };
        let n_rows = (prior_rows + m).max(n_c);
        let mut aug = DMatrix::<f64>::zeros(n_rows, n_f);
        let mut next = 0;
        if self.samples_seen > 0 {
            for k in 0..n_c {
                let row = self.components.row(k) * self.singular_values[k];
                aug.set_row(next, &row);
                next += 1;
            }
            let correction =
                (&self.mean - &batch_mean) * ((n_old * m as f64) / n_total).sqrt();
            aug.set_row(next, &correction.transpose());
            next += 1;
        }
        for r in &rows {
            aug.set_row(next, &(r - &batch_mean).transpose());
            next += 1;
        }

        let svd = aug.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| CodecError::InvalidBasis("SVD did not produce V".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .unwrap()
                .then(a.cmp(&b))
        });

        let mut components = DMatrix::zeros(n_c, n_f);
        let mut singular_values = DVector::zeros(n_c);
        for (k, &src) in order.iter().take(n_c).enumerate() {
            let mut row = v_t.row(src).clone_owned();
            // Sign convention: largest-magnitude entry positive.
            let imax = row.iamax_full().1;
            if row[(0, imax)] < 0.0 {
                row = -row;
            }
            components.set_row(k, &row);
            singular_values[k] = svd.singular_values[src];
        }

        Ok(PcaBasis {
            mean: new_mean,
            components,
            singular_values,
            samples_seen: self.samples_seen + m as u64,
            normalization: self.normalization,
        })
    }

    /// Fits over a whole corpus in mini-batches of `batch_size`.
    pub fn fit_batches(
        &self,
        data: &[FeatureVector],
        batch_size: usize,
    ) -> Result<PcaBasis, CodecError> {
        let batch_size = batch_size.max(self.n_components());
        let mut basis = self.clone();
        for chunk in data.chunks(batch_size) {
            basis = basis.fit_incremental(chunk)?;
        }
        Ok(basis)
    }

    /// `components · (f − mean)` after input normalization.
    pub fn project(&self, f: &FeatureVector) -> Result<CompressedFeature, CodecError> {
        if !self.is_fitted() {
            return Err(CodecError::Unfitted);
        }
        self.check_dim(f.len())?;
        let centered = self.preprocess(&f.0) - &self.mean;
        Ok(CompressedFeature(&self.components * centered))
    }

    /// `mean + componentsᵀ · c`.
    pub fn lift(&self, c: &CompressedFeature) -> Result<FeatureVector, CodecError> {
        if !self.is_fitted() {
            return Err(CodecError::Unfitted);
        }
        if c.len() != self.n_components() {
            return Err(CodecError::Dimension {
                expected: self.n_components(),
                got: c.len(),
            });
        }
        Ok(FeatureVector(&self.mean + self.components.tr_mul(&c.0)))
    }

    /// Cosine similarity between a map feature and a task embedding.
    /// Compressed features are lifted to the full dimension first.
    pub fn relevancy(&self, a: FeatureRef<'_>, task: &FeatureVector) -> Result<f64, CodecError> {
        self.check_dim(task.len())?;
        match a {
            FeatureRef::Full(f) => cosine(&f.0, &task.0),
            FeatureRef::Compressed(c) => cosine(&self.lift(c)?.0, &task.0),
        }
    }
}

/// Precomputed task terms for evaluating `relevancy` on many compressed
/// features without lifting each one.
///
/// With `x = mean + Cᵀc` and unit task `t`:
/// `x·t = mean·t + c·(Ct)` and `‖x‖² = ‖mean‖² + 2c·(C mean) + ‖c‖²`.
#[derive(Debug, Clone)]
pub struct RelevancyKernel {
    mean_dot_task: f64,
    comp_task: DVector<f64>,
    comp_mean: DVector<f64>,
    mean_sq: f64,
}

impl RelevancyKernel {
    pub fn new(basis: &PcaBasis, task: &FeatureVector) -> Result<Self, CodecError> {
        if !basis.is_fitted() {
            return Err(CodecError::Unfitted);
        }
        basis.check_dim(task.len())?;
        let n = task.norm();
        if n == 0.0 {
            return Err(CodecError::ZeroNorm);
        }
        let t = &task.0 / n;
        Ok(Self {
            mean_dot_task: basis.mean.dot(&t),
            comp_task: &basis.components * &t,
            comp_mean: &basis.components * &basis.mean,
            mean_sq: basis.mean.norm_squared(),
        })
    }

    /// Cosine between the lifted feature and the task; `None` when the
    /// lifted feature is zero.
    pub fn eval(&self, c: &[f64]) -> Option<f64> {
        let mut dot = self.mean_dot_task;
        let mut sq = self.mean_sq;
        for (i, &ci) in c.iter().enumerate() {
            dot += ci * self.comp_task[i];
            sq += ci * (2.0 * self.comp_mean[i] + ci);
        }
        (sq > 0.0).then(|| (dot / sq.sqrt()).clamp(-1.0, 1.0))
    }
}

/// Cosine similarity computed directly in the compressed space; used for
/// clustering where lifting every pair would be wasteful.
pub fn compressed_cosine(a: &CompressedFeature, b: &CompressedFeature) -> Result<f64, CodecError> {
    cosine(&a.0, &b.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_orthonormal(rng: &mut ChaCha8Rng, k: usize, d: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        m.qr().q().transpose()
    }

    #[test]
    fn unfitted_basis_rejects_projection() {
        let b = PcaBasis::new(8, 2, Normalization::None).unwrap();
        let f = FeatureVector::zeros(8);
        assert!(matches!(b.project(&f), Err(CodecError::Unfitted)));
        assert!(matches!(
            b.lift(&CompressedFeature::zeros(2)),
            Err(CodecError::Unfitted)
        ));
    }

    #[test]
    fn zero_batch_is_degenerate() {
        let b = PcaBasis::new(4, 2, Normalization::Unit).unwrap();
        let batch = vec![FeatureVector::zeros(4); 5];
        assert!(matches!(b.fit_incremental(&batch), Err(CodecError::Degenerate)));
        assert!(matches!(b.fit_incremental(&[]), Err(CodecError::EmptyBatch)));
    }

    #[test]
    fn dimension_mismatch() {
        let b = PcaBasis::new(4, 2, Normalization::None).unwrap();
        let batch = vec![FeatureVector::new(vec![1.0, 2.0, 3.0]).unwrap()];
        assert!(matches!(
            b.fit_incremental(&batch),
            Err(CodecError::Dimension { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn repeated_vector_has_zero_variance() {
        let v = FeatureVector::new(vec![0.5, -1.0, 2.0, 0.25, 3.0]).unwrap();
        let b = PcaBasis::new(5, 3, Normalization::None)
            .unwrap()
            .fit_incremental(&vec![v.clone(); 7])
            .unwrap();
        assert!((b.mean() - v.vector()).amax() < 1e-12);
        assert!(b.singular_values().amax() < 1e-12);
        assert!(b.orthonormality_error() < 1e-9);
        assert_eq!(b.samples_seen(), 7);
    }

    #[test]
    fn projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let comps = random_orthonormal(&mut rng, 4, 10);
        let mean = DVector::from_fn(10, |i, _| i as f64 * 0.1);
        let b = PcaBasis::from_parts(
            mean.clone(),
            comps.clone(),
            DVector::from_element(4, 1.0),
            10,
            Normalization::None,
        )
        .unwrap();

        let at_mean = b.project(&FeatureVector(mean.clone())).unwrap();
        assert!(at_mean.vector().amax() < 1e-12);

        let f = FeatureVector(&mean + comps.row(0).transpose());
        let c = b.project(&f).unwrap();
        let mut e1 = DVector::zeros(4);
        e1[0] = 1.0;
        assert!((c.vector() - e1).amax() < 1e-12);

        assert!((b.lift(&CompressedFeature::zeros(4)).unwrap().vector() - &mean).amax() < 1e-15);

        let c = CompressedFeature::new(vec![0.3, -2.0, 1.5, 0.0]).unwrap();
        let back = b.project(&b.lift(&c).unwrap()).unwrap();
        assert!((back.vector() - c.vector()).amax() < 1e-9);
    }

    #[test]
    fn relevancy_signs_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let comps = random_orthonormal(&mut rng, 3, 6);
        let b = PcaBasis::from_parts(
            DVector::zeros(6),
            comps.clone(),
            DVector::from_element(3, 1.0),
            1,
            Normalization::None,
        )
        .unwrap();
        let task = FeatureVector(comps.row(1).transpose() * 2.0 + comps.row(2).transpose());
        let c = b.project(&task).unwrap();
        let r = b.relevancy(FeatureRef::Compressed(&c), &task).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let neg = c.scaled(-1.0);
        let r = b.relevancy(FeatureRef::Compressed(&neg), &task).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
        let zero = FeatureVector::zeros(6);
        assert!(matches!(
            b.relevancy(FeatureRef::Full(&task), &zero),
            Err(CodecError::ZeroNorm)
        ));
    }

    #[test]
    fn from_parts_rejects_non_orthonormal() {
        let comps = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let r = PcaBasis::from_parts(
            DVector::zeros(3),
            comps,
            DVector::zeros(2),
            1,
            Normalization::None,
        );
        assert!(matches!(r, Err(CodecError::InvalidBasis(_))));
    }

    #[test]
    fn kernel_matches_lifted_relevancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let comps = random_orthonormal(&mut rng, 4, 16);
        let mean = DVector::from_fn(16, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = PcaBasis::from_parts(mean, comps, DVector::zeros(4), 10, Normalization::None).unwrap();
        let task = FeatureVector(DVector::from_fn(16, |_, _| rng.sample::<f64, _>(StandardNormal)));
        let k = RelevancyKernel::new(&b, &task).unwrap();
        for _ in 0..20 {
            let c = CompressedFeature(DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal)));
            let want = b.relevancy(FeatureRef::Compressed(&c), &task).unwrap();
            assert!((k.eval(c.as_slice()).unwrap() - want).abs() < 1e-12);
        }
    }
}
