//! Dormand–Prince 5(4) stepping for the autonomous linear system `ẏ = L y`,
//! so the stage times are not needed.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::operator::CMatrix;

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Clone, Copy, Debug)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Steps shorter than this fraction of `max(1, |t|)` abort the run.
    pub min_step: f64,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-14, min_step: 1e-13 }
    }
}

/// Integrates `ẏ = L y` from `times[0]` and returns `y` at every entry of
/// `times`. `dim` is the operator dimension used to reshape the last good
/// state on step underflow.
pub fn integrate(l: &CMatrix, y0: &DVector<Complex64>, times: &[f64], dim: usize, opts: &AdaptiveOptions) -> Result<Vec<DVector<Complex64>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut y = y0.clone();
    let mut t = times[0];
    out.push(y.clone());
    let scale = l.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
    let mut h = 0.01 / scale;
    let mut k: Vec<DVector<Complex64>> = vec![DVector::zeros(y.len()); 7];
    for &target in &times[1..] {
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step < opts.min_step * t.abs().max(1.0) && !last {
                return Err(Error::StepUnderflow {
                    time: t,
                    last_state: Box::new(CMatrix::from_column_slice(dim, dim, y.as_slice())),
                });
            }
            k[0] = l * &y;
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    if A[s][j] != 0.0 {
                        ys.axpy(Complex64::new(step * A[s][j], 0.0), kj, Complex64::new(1.0, 0.0));
                    }
                }
                k[s] = l * ys;
            }
            let mut y5 = y.clone();
            let mut err = DVector::<Complex64>::zeros(y.len());
            for s in 0..7 {
                y5.axpy(Complex64::new(step * B5[s], 0.0), &k[s], Complex64::new(1.0, 0.0));
                err.axpy(Complex64::new(step * (B5[s] - B4[s]), 0.0), &k[s], Complex64::new(1.0, 0.0));
            }
            let mut norm = 0.0;
            for i in 0..y.len() {
                let sc = opts.atol + opts.rtol * y[i].norm().max(y5[i].norm());
                norm += (err[i].norm() / sc).powi(2);
            }
            let norm = (norm / y.len() as f64).sqrt();
            if norm <= 1.0 {
                t = if last { target } else { t + step };
                y = y5;
            }
            let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
            let next = step * factor;
            if norm <= 1.0 && last {
                // keep the step length that was in use before clipping to the grid
                h = h.max(next);
            } else {
                h = next;
                if norm > 1.0 && h < opts.min_step * t.abs().max(1.0) {
                    return Err(Error::StepUnderflow {
                        time: t,
                        last_state: Box::new(CMatrix::from_column_slice(dim, dim, y.as_slice())),
                    });
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
