//! Ensemble measurement update.
//!
//! Members are matrix columns: `X` is `state_dim × E`, `HX` and `Y` are
//! `obs_dim × E`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal regularization added to the innovation covariance.
pub const COV_EPSILON: f64 = 1e-6;

pub fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.column_mean()
}

/// Subtracts the ensemble mean from every member.
pub fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.column_mean();
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

/// Per-dimension ensemble standard deviation (unbiased).
pub fn spread(m: &DMatrix<f64>) -> DVector<f64> {
    let e = m.ncols();
    if e < 2 {
        return DVector::zeros(m.nrows());
    }
    let c = center(m);
    DVector::from_fn(m.nrows(), |i, _| {
        (c.row(i).norm_squared() / (e as f64 - 1.0)).sqrt()
    })
}

/// Observation-space anomalies `HA`.
pub fn observe(hx: &DMatrix<f64>) -> DMatrix<f64> {
    center(hx)
}

/// `S = HA·HAᵀ/(E−1) + diag(r) + εI`.
pub fn innovation_cov(ha: &DMatrix<f64>, noise_diag: &DVector<f64>) -> Result<DMatrix<f64>> {
    let e = ha.ncols();
    if e < 2 {
        return Err(Error::ShapeMismatch {
            context: "ensemble size",
            expected: 2,
            got: e,
        });
    }
    if noise_diag.len() != ha.nrows() {
        return Err(Error::ShapeMismatch {
            context: "noise diagonal",
            expected: ha.nrows(),
            got: noise_diag.len(),
        });
    }
    let mut s = ha * ha.transpose() / (e as f64 - 1.0);
    for i in 0..s.nrows() {
        s[(i, i)] += noise_diag[i] + COV_EPSILON;
    }
    Ok(s)
}

/// Intermediate quantities of one update, kept for diagnostics and for
/// differentiating through the update.
pub struct UpdateTerms {
    pub posterior: DMatrix<f64>,
    pub anomalies: DMatrix<f64>,
    pub obs_anomalies: DMatrix<f64>,
    pub innovation: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

impl UpdateTerms {
    /// `S⁻¹·b` through the stored factorization.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Condition number estimate from the Cholesky diagonal.
    pub fn cond_estimate(&self) -> f64 {
        let l = self.chol.l_dirty();
        let d = l.diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v.abs()), hi.max(v.abs()))
        });
        (hi / lo).powi(2)
    }
}

/// `K = A·HAᵀ·S⁻¹/(E−1)` and `X = X̃ + K·(Y − HX̃)`.
pub fn kalman_update(
    x_pred: &DMatrix<f64>,
    ha: &DMatrix<f64>,
    hx: &DMatrix<f64>,
    y: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<UpdateTerms> {
    let e = x_pred.ncols();
    for (m, ctx) in [(ha, "observation anomalies"), (hx, "projected members"), (y, "sensor samples")] {
        if m.ncols() != e {
            return Err(Error::ShapeMismatch {
                context: ctx,
                expected: e,
                got: m.ncols(),
            });
        }
    }
    if s.shape() != (hx.nrows(), hx.nrows()) || y.nrows() != hx.nrows() {
        return Err(Error::ShapeMismatch {
            context: "innovation covariance",
            expected: hx.nrows(),
            got: s.nrows(),
        });
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::SolveFailure);
    }
    let chol = Cholesky::new(s.clone()).ok_or(Error::SolveFailure)?;
    let a = center(x_pred);
    // S is symmetric, so K = (S⁻¹·HA·Aᵀ)ᵀ/(E−1).
    let gain = chol.solve(&(ha * a.transpose())).transpose() / (e as f64 - 1.0);
    let innovation = y - hx;
    let posterior = x_pred + &gain * &innovation;
    if !posterior.iter().all(|v| v.is_finite()) {
        return Err(Error::SolveFailure);
    }
    Ok(UpdateTerms {
        posterior,
        anomalies: a,
        obs_anomalies: ha.clone(),
        innovation,
        gain,
        cov: s.clone(),
        chol,
    })
}

/// Full measurement update from predicted members, their projections,
/// sensor samples, and the measurement-noise diagonal.
pub fn update(
    x_pred: &DMatrix<f64>,
    hx: &DMatrix<f64>,
    y: &DMatrix<f64>,
    noise_diag: &DVector<f64>,
) -> Result<UpdateTerms> {
    let ha = observe(hx);
    let s = innovation_cov(&ha, noise_diag)?;
    kalman_update(x_pred, &ha, hx, y, &s)
}
