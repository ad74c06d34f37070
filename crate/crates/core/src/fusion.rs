//! Prediction-level blending `lambda * P_v + (1 - lambda) * P_s` and the
//! validation sweep over lambda.

use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix};
use crate::zeroshot::{LambdaEstimate, LambdaMethod, ProbabilityMatrix, Source};

/// Number of points in the validation sweep.
pub const SWEEP_POINTS: usize = 20;

/// `SWEEP_POINTS` evenly spaced values from 0 to 1 inclusive (step 1/19).
pub fn lambda_grid() -> [f64; SWEEP_POINTS] {
    let mut grid = [0.0; SWEEP_POINTS];
    for (i, g) in grid.iter_mut().enumerate() {
        *g = i as f64 / (SWEEP_POINTS - 1) as f64;
    }
    grid
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub probs: ProbabilityMatrix,
    pub lambda: LambdaEstimate,
    /// Sources of the zero-shot and adapter inputs, in that order.
    pub components: (Source, Source),
}

fn blend(pv: &Matrix<f64>, ps: &Matrix<f64>, lambda: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(pv.rows(), pv.cols());
    for ((o, &v), &s) in out.as_mut_slice().iter_mut().zip(pv.as_slice()).zip(ps.as_slice()) {
        *o = lambda * v + (1.0 - lambda) * s;
    }
    out
}

/// Blends two prediction matrices with a weight chosen elsewhere.
pub fn fuse_with(pv: &ProbabilityMatrix, ps: &ProbabilityMatrix, lambda: LambdaEstimate) -> Result<FusionResult> {
    if pv.probs().shape() != ps.probs().shape() {
        return Err(Error::shape(
            "fuse_predictions",
            format!("{:?}", pv.probs().shape()),
            format!("{:?}", ps.probs().shape()),
        ));
    }
    if !(0.0..=1.0).contains(&lambda.value) {
        return Err(Error::LambdaOutOfRange(lambda.value));
    }
    let probs = blend(pv.probs(), ps.probs(), lambda.value);
    Ok(FusionResult {
        probs: ProbabilityMatrix::from_parts_unchecked(probs, Source::Fused, pv.temperature_used()),
        lambda,
        components: (pv.source(), ps.source()),
    })
}

/// Blends with a fixed weight.
pub fn fuse_predictions(pv: &ProbabilityMatrix, ps: &ProbabilityMatrix, lambda: f64) -> Result<FusionResult> {
    fuse_with(pv, ps, LambdaEstimate::fixed(lambda)?)
}

/// Which grid point wins when several share the best validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Favor the adapter side.
    #[default]
    Smallest,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub correct: usize,
    pub total: usize,
}

impl SweepPoint {
    pub fn top1(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best: LambdaEstimate,
    pub table: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,val_top1\n");
        for p in &self.table {
            out.push_str(&format!("{},{}\n", p.lambda, p.top1()));
        }
        out
    }
}

/// Picks lambda on the grid by validation top-1.
pub fn sweep_lambda(
    pv_val: &ProbabilityMatrix,
    ps_val: &ProbabilityMatrix,
    val_labels: &[usize],
    tie_break: TieBreak,
) -> Result<SweepResult> {
    if val_labels.is_empty() {
        return Err(Error::EmptyInput("validation set"));
    }
    if pv_val.num_items() != val_labels.len() || ps_val.num_items() != val_labels.len() {
        return Err(Error::shape(
            "sweep_lambda",
            format!("{} validation rows", val_labels.len()),
            format!("{} / {}", pv_val.num_items(), ps_val.num_items()),
        ));
    }
    if pv_val.probs().shape() != ps_val.probs().shape() {
        return Err(Error::shape(
            "sweep_lambda",
            format!("{:?}", pv_val.probs().shape()),
            format!("{:?}", ps_val.probs().shape()),
        ));
    }
    let table: Vec<SweepPoint> = lambda_grid()
        .iter()
        .map(|&lambda| {
            let fused = blend(pv_val.probs(), ps_val.probs(), lambda);
            let correct = fused
                .row_iter()
                .zip(val_labels)
                .filter(|(row, &label)| argmax(row) == label)
                .count();
            SweepPoint {
                lambda,
                correct,
                total: val_labels.len(),
            }
        })
        .collect();

    let mut best = 0;
    for (i, p) in table.iter().enumerate().skip(1) {
        let better = match tie_break {
            TieBreak::Smallest => p.correct > table[best].correct,
            TieBreak::Largest => p.correct >= table[best].correct,
        };
        if better {
            best = i;
        }
    }
    Ok(SweepResult {
        best: LambdaEstimate {
            value: table[best].lambda,
            num_items: val_labels.len(),
            method: LambdaMethod::ValidationSweep,
        },
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(rows: &[&[f64]], source: Source) -> ProbabilityMatrix {
        ProbabilityMatrix::new(Matrix::from_rows(rows).unwrap(), source).unwrap()
    }

    #[test]
    fn endpoints_are_bitwise() {
        let pv = pm(&[&[0.7, 0.2, 0.1], &[0.1, 0.1, 0.8]], Source::ZeroShot);
        let ps = pm(&[&[0.3, 0.3, 0.4], &[0.6, 0.3, 0.1]], Source::Adapter);
        assert_eq!(fuse_predictions(&pv, &ps, 1.0).unwrap().probs.probs(), pv.probs());
        assert_eq!(fuse_predictions(&pv, &ps, 0.0).unwrap().probs.probs(), ps.probs());
    }

    #[test]
    fn hand_cases() {
        let pv = pm(&[&[0.8, 0.2]], Source::ZeroShot);
        let ps = pm(&[&[0.2, 0.8]], Source::Adapter);
        let half = fuse_predictions(&pv, &ps, 0.5).unwrap();
        assert_eq!(half.probs.probs().get(0, 0), half.probs.probs().get(0, 1));
        assert!((half.probs.probs().get(0, 0) - 0.5).abs() < 1e-15);

        let pv = pm(&[&[0.6, 0.4]], Source::ZeroShot);
        let r = fuse_predictions(&pv, &ps, 0.25).unwrap();
        assert!((r.probs.probs().get(0, 0) - 0.3).abs() < 1e-15);
        assert!((r.probs.probs().get(0, 1) - 0.7).abs() < 1e-15);
        assert_eq!(r.lambda.method, LambdaMethod::Fixed);
        assert_eq!(r.components, (Source::ZeroShot, Source::Adapter));
        assert_eq!(r.probs.source(), Source::Fused);
    }

    #[test]
    fn invalid_fusions() {
        let a = pm(&[&[0.5, 0.5]], Source::ZeroShot);
        let b = pm(&[&[0.5, 0.5], &[1.0, 0.0]], Source::Adapter);
        assert!(matches!(fuse_predictions(&a, &b, 0.5), Err(Error::Shape { .. })));
        assert!(matches!(fuse_predictions(&a, &a, 1.2), Err(Error::LambdaOutOfRange(_))));
        assert!(matches!(
            fuse_predictions(&a, &a, -0.1),
            Err(Error::LambdaOutOfRange(_))
        ));
    }

    #[test]
    fn grid_shape() {
        let g = lambda_grid();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[19], 1.0);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 19.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_picks_smallest_best_point() {
        let pv = pm(&[&[0.9, 0.1], &[0.2, 0.8], &[0.7, 0.3]], Source::ZeroShot);
        let ps = pm(&[&[0.1, 0.9], &[0.9, 0.1], &[0.05, 0.95]], Source::Adapter);
        let r = sweep_lambda(&pv, &ps, &[0, 1, 0], TieBreak::Smallest).unwrap();
        // row 2 needs 0.65 * lambda > 0.45, first met at 14/19
        assert_eq!(r.best.value, 14.0 / 19.0);
        assert_eq!(r.table[13].correct, 2);
        assert_eq!(r.table[19].correct, 3);
        assert_eq!(r.table[0].correct, 0);
        assert_eq!(r.best.method, LambdaMethod::ValidationSweep);
    }

    #[test]
    fn identical_inputs_tie_to_zero() {
        let p = pm(&[&[0.6, 0.4], &[0.3, 0.7]], Source::ZeroShot);
        let r = sweep_lambda(&p, &p, &[0, 0], TieBreak::Smallest).unwrap();
        assert!(r.table.iter().all(|t| t.correct == 1));
        assert_eq!(r.best.value, 0.0);
        let r = sweep_lambda(&p, &p, &[0, 0], TieBreak::Largest).unwrap();
        assert_eq!(r.best.value, 1.0);
    }

    #[test]
    fn sweep_errors_and_csv() {
        let p = pm(&[&[0.6, 0.4]], Source::ZeroShot);
        assert!(matches!(
            sweep_lambda(&p, &p, &[], TieBreak::Smallest),
            Err(Error::EmptyInput(_))
        ));
        let csv = sweep_lambda(&p, &p, &[0], TieBreak::Smallest).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "lambda,val_top1");
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[1], "0,1");
        assert_eq!(lines[20], "1,1");
    }
}
