#![allow(dead_code)]

use iroco_core::datamodel::{layout, PoseState, OBS_DIM, STATE_DIM};
use iroco_core::denkf::EnsembleModels;
use iroco_core::Result;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Deterministic stand-in: the sensor reads the forearm orientation and
/// heading straight from the newest raw frame with the upper arm at rest,
/// and the transition scatters the newest members so widely that the update
/// hands the posterior to the sensor.
pub struct Readout;

impl EnsembleModels for Readout {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn obs_dim(&self) -> usize {
        STATE_DIM
    }

    fn raw_dim(&self) -> usize {
        OBS_DIM
    }

    fn window(&self) -> usize {
        2
    }

    fn predict(&self, history: &[&DMatrix<f64>], rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let last = history.last().unwrap();
        Ok(DMatrix::from_fn(last.nrows(), last.ncols(), |i, j| {
            let g: f64 = StandardNormal.sample(rng);
            last[(i, j)] + 1e3 * g
        }))
    }

    fn sensor(&self, raw_window: &DVector<f64>, members: usize, _rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let raw = raw_window.rows(OBS_DIM, OBS_DIM);
        let mut x = DVector::from_column_slice(&PoseState::default().to_array());
        x.rows_mut(layout::Q_L.start, 6).copy_from(&raw.rows(1, 6));
        x.rows_mut(layout::Q_H.start, 2).copy_from(&raw.rows(20, 2));
        Ok(DMatrix::from_fn(STATE_DIM, members, |i, _| x[i]))
    }

    fn observe(&self, members: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(members.clone())
    }

    fn noise_diag(&self, _sensor_mean: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_element(STATE_DIM, 1e-12))
    }
}
