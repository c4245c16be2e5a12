//! Central finite-difference comparison of analytic gradients.
//!
//! Everything runs in `f64`. A coordinate whose `±h` evaluations take a
//! different discrete path through the graph (ReLU mask, max-pool winner,
//! Chamfer nearest neighbor) than the base point sits next to a kink and
//! is reported as skipped instead of compared.

use super::{DiffError, Graph, NodeId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel: 1e-4,
            abs: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= self.abs || diff <= self.rel * analytic.abs().max(numeric.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_abs_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.checked > 0
    }
}

/// Evaluates `f` on fresh graphs where `inputs` are bound as parameter
/// leaves, and compares `backward` against central differences for every
/// coordinate of every input.
pub fn check<F>(inputs: &[Tensor<f64>], tol: Tolerance, f: F) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(f64, u64), DiffError> {
        let mut g = Graph::with_decision_tracking();
        let ids = values
            .iter()
            .map(|t| g.param(t.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = f(&mut g, &ids)?;
        Ok((g.value(loss).item(), g.fingerprint()))
    };

    let mut g = Graph::with_decision_tracking();
    let ids = inputs
        .iter()
        .map(|t| g.param(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut g, &ids)?;
    let base_fp = g.fingerprint();
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, id) in ids.iter().enumerate() {
        let analytic = grads
            .get(*id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for c in 0..inputs[i].len() {
            let orig = inputs[i].data()[c];
            work[i].data_mut()[c] = orig + tol.step;
            let (fp, fp_plus) = eval(&work)?;
            work[i].data_mut()[c] = orig - tol.step;
            let (fm, fp_minus) = eval(&work)?;
            work[i].data_mut()[c] = orig;
            if fp_plus != base_fp || fp_minus != base_fp {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * tol.step);
            let a = analytic.data()[c];
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            if !tol.accepts(a, numeric) {
                report.mismatches.push(Mismatch {
                    input: i,
                    coord: c,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::matrix(2, 2, &[0.5, -1.0, 2.0, 0.25]).unwrap();
        let r = check(&[x], Tolerance::default(), |g, ids| {
            let c = g.chamfer(ids[0], ids[0])?;
            let s = g.sum(ids[0])?;
            g.add(c, s)
        })
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn kink_coordinates_are_skipped() {
        let x = Tensor::new(&[3], vec![1e-4, 0.5, -0.5]).unwrap();
        let r = check(&[x], Tolerance::default(), |g, ids| {
            let r = g.relu(ids[0])?;
            g.sum(r)
        })
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 2);
        assert!(r.passed());
    }

    #[test]
    fn tolerance_is_relative_or_absolute() {
        let t = Tolerance::default();
        assert!(t.accepts(1000.0, 1000.05));
        assert!(!t.accepts(1000.0, 1000.5));
        assert!(t.accepts(0.0, 5e-7));
        assert!(!t.accepts(1e-3, 1.2e-3));
    }
}
