//! Central finite-difference verification of analytic gradients.

use std::ops::Range;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative error, so coordinates whose true
/// gradient is zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }
}

/// Relative error `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// `blocks` names index ranges of the parameter vector; a report line is
/// produced for each.
pub fn gradient_check<F>(
    params: &[f64],
    analytic: &[f64],
    blocks: &[(String, Range<usize>)],
    h: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut work = params.to_vec();
    let blocks = blocks
        .iter()
        .map(|(name, range)| {
            let mut worst = (0.0, range.start);
            for i in range.clone() {
                let orig = work[i];
                work[i] = orig + h;
                let up = loss(&work);
                work[i] = orig - h;
                let down = loss(&work);
                work[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let err = relative_error(analytic[i], numeric);
                if err > worst.0 {
                    worst = (err, i);
                }
            }
            BlockReport {
                name: name.clone(),
                max_rel_err: worst.0,
                worst_index: worst.1,
            }
        })
        .collect();
    GradCheckReport { blocks }
}
