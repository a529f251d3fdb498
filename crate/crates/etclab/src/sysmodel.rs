//! Core domain types: plant, delay/sampling bounds, trigger configuration,
//! and the selector basis underlying every matrix-inequality construction.
//!
//! All analysis conditions are quadratic forms in one augmented vector with
//! ten state-sized blocks. Using `x` for the state, `tau` for the current
//! sampling instant, `t_k` for the latest transmission arrival and `d` for
//! the delay, the block order is
//!
//! ```text
//!  1: x(t)            2: x(t-d)          3: dx(t)           4: dx(t-d)
//!  5: mean of x over [t-d, t]            6: x(tau)          7: x(tau-d)
//!  8: mean of x over [tau, t]            9: mean over [tau-d, t-d]
//! 10: x(t_k-d)
//! ```
//!
//! [`SelectorBasis`] provides the matrices that extract each block.

use nalgebra::DMatrix;

use crate::mat;
use crate::{Error, Result};

/// Continuous-time LTI plant with a known disturbance input channel.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bw: DMatrix<f64>,
}

impl LtiSystem {
    /// Validates shapes and that the disturbance channel has full column rank.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, bw: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(Error::Dim(format!(
                "state matrix must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dim(format!(
                "input matrix has {} rows, expected {}",
                b.nrows(),
                n
            )));
        }
        if bw.nrows() != n {
            return Err(Error::Dim(format!(
                "disturbance matrix has {} rows, expected {}",
                bw.nrows(),
                n
            )));
        }
        if mat::rank(&bw, 1e-12) != bw.ncols() {
            return Err(Error::Invalid(
                "disturbance matrix must have full column rank".into(),
            ));
        }
        Ok(Self { a, b, bw })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.bw.ncols()
    }
}

/// Admissible boxes for the communication delay and the sampling interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySamplingBounds {
    pub d_lo: f64,
    pub d_hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

impl DelaySamplingBounds {
    pub fn new(d_lo: f64, d_hi: f64, h_lo: f64, h_hi: f64) -> Result<Self> {
        if !(0.0 <= d_lo && d_lo <= d_hi) {
            return Err(Error::Invalid(format!(
                "delay bounds must satisfy 0 <= d_lo <= d_hi, got [{d_lo}, {d_hi}]"
            )));
        }
        if !(0.0 < h_lo && h_lo <= h_hi) {
            return Err(Error::Invalid(format!(
                "sampling bounds must satisfy 0 < h_lo <= h_hi, got [{h_lo}, {h_hi}]"
            )));
        }
        Ok(Self { d_lo, d_hi, h_lo, h_hi })
    }

    /// Degenerate box pinned at a single (h, d) point.
    pub fn point(h: f64, d: f64) -> Result<Self> {
        Self::new(d, d, h, h)
    }

    /// The trigger orders events only when the delay stays below one
    /// sampling interval. Analysis sweeps may ignore this; simulation must
    /// not.
    pub fn trigger_compatible(&self) -> bool {
        self.d_hi < self.h_lo
    }

    /// The distinct (h, d) corner points of the box.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        let hs = if self.h_lo == self.h_hi {
            vec![self.h_lo]
        } else {
            vec![self.h_lo, self.h_hi]
        };
        let ds = if self.d_lo == self.d_hi {
            vec![self.d_lo]
        } else {
            vec![self.d_lo, self.d_hi]
        };
        let mut out = Vec::new();
        for &h in &hs {
            for &d in &ds {
                out.push((h, d));
            }
        }
        out
    }
}

/// One condition of the dynamic-trigger hypotheses that failed validation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TriggerViolation {
    #[error("eta0 = {0} must be nonnegative")]
    NegativeEta0(f64),
    #[error("lambda = {0} must be positive")]
    NonPositiveLambda(f64),
    #[error("sigma1 = {0} must be nonnegative")]
    NegativeSigma1(f64),
    #[error("sigma2 = {0} must be nonnegative")]
    NegativeSigma2(f64),
    #[error("theta = {0} must be nonnegative")]
    NegativeTheta(f64),
    #[error("weight matrix not positive semidefinite (min eigenvalue {0:.3e})")]
    WeightNotPsd(f64),
    #[error("weight matrix must be {0}x{0} symmetric")]
    WeightShape(usize),
    #[error("decay hypothesis fails: 1 - lambda - 1/theta = {0:.6} < 0")]
    DecayHypothesis(f64),
}

/// Parameters of the dynamic event trigger and the delay it runs under.
///
/// Transmission is decided at every sampling instant from the running
/// threshold variable `eta` (decay rate `lambda`, initial value `eta0`) and
/// the quadratic form weighted by `omega` with coefficients `sigma1`
/// (current sample), `sigma2` (last transmitted sample) and a unit penalty
/// on their difference; `theta` trades the static against the dynamic part.
#[derive(Debug, Clone)]
pub struct TriggerConfig {
    pub sigma1: f64,
    pub sigma2: f64,
    pub theta: f64,
    pub lambda: f64,
    pub omega: DMatrix<f64>,
    pub h: f64,
    pub d: f64,
    pub eta0: f64,
}

/// Absolute tolerance on the minimum eigenvalue when checking that the
/// trigger weight is positive semidefinite.
pub const OMEGA_PSD_TOL: f64 = 1e-10;

impl TriggerConfig {
    /// Checks every hypothesis needed for the threshold variable to stay
    /// nonnegative; all violations are reported, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.eta0 < 0.0 {
            v.push(TriggerViolation::NegativeEta0(self.eta0));
        }
        if self.lambda <= 0.0 {
            v.push(TriggerViolation::NonPositiveLambda(self.lambda));
        }
        if self.sigma1 < 0.0 {
            v.push(TriggerViolation::NegativeSigma1(self.sigma1));
        }
        if self.sigma2 < 0.0 {
            v.push(TriggerViolation::NegativeSigma2(self.sigma2));
        }
        if self.theta < 0.0 {
            v.push(TriggerViolation::NegativeTheta(self.theta));
        }
        if self.omega.nrows() != self.omega.ncols() {
            v.push(TriggerViolation::WeightShape(self.omega.nrows()));
        } else {
            let emin = mat::min_eig(&self.omega);
            if emin < -OMEGA_PSD_TOL {
                v.push(TriggerViolation::WeightNotPsd(emin));
            }
        }
        if self.theta > 0.0 {
            let slack = 1.0 - self.lambda - 1.0 / self.theta;
            if slack < 0.0 {
                v.push(TriggerViolation::DecayHypothesis(slack));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Trigger(v))
        }
    }
}

/// Number of state-sized blocks in the augmented vector.
pub const NUM_BLOCKS: usize = 10;

/// Block-selector matrices for the 10-block augmented vector.
///
/// `selector(i)` (1-based) is the `n x 10n` matrix with the identity in
/// block `i`; `zero()` is the `n x 10n` zero matrix.
#[derive(Debug, Clone)]
pub struct SelectorBasis {
    n: usize,
    sel: Vec<DMatrix<f64>>,
    zero: DMatrix<f64>,
}

impl SelectorBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("block size must be at least 1".into()));
        }
        let dim = NUM_BLOCKS * n;
        let mut sel = Vec::with_capacity(NUM_BLOCKS);
        for i in 0..NUM_BLOCKS {
            let mut m = DMatrix::zeros(n, dim);
            for r in 0..n {
                m[(r, i * n + r)] = 1.0;
            }
            sel.push(m);
        }
        Ok(Self {
            n,
            sel,
            zero: DMatrix::zeros(n, dim),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension of the augmented vector, `10n`.
    pub fn dim(&self) -> usize {
        NUM_BLOCKS * self.n
    }

    /// 1-based selector for block `i`.
    pub fn selector(&self, i: usize) -> &DMatrix<f64> {
        assert!(
            (1..=NUM_BLOCKS).contains(&i),
            "selector index {i} out of range 1..=10"
        );
        &self.sel[i - 1]
    }

    pub fn zero(&self) -> &DMatrix<f64> {
        &self.zero
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn selector_rows_n1() {
        let b = SelectorBasis::new(1).unwrap();
        let l3 = b.selector(3);
        let expect = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        for (j, e) in expect.iter().enumerate() {
            assert_eq!(l3[(0, j)], *e);
        }
    }

    #[test]
    fn selector_orthonormal_blocks() {
        let b = SelectorBasis::new(2).unwrap();
        let gram = b.selector(1) * b.selector(1).transpose();
        assert!((gram - DMatrix::<f64>::identity(2, 2)).norm() == 0.0);
        let cross = b.selector(1) * b.selector(4).transpose();
        assert_eq!(cross.norm(), 0.0);
    }

    #[test]
    fn selectors_resolve_identity() {
        // Independently derived: summing the back-projections of all blocks
        // must reproduce the identity on the augmented space.
        let b = SelectorBasis::new(2).unwrap();
        let mut acc = DMatrix::<f64>::zeros(b.dim(), b.dim());
        for i in 1..=NUM_BLOCKS {
            acc += b.selector(i).transpose() * b.selector(i);
        }
        assert!((acc - DMatrix::<f64>::identity(20, 20)).norm() < 1e-15);
    }

    #[test]
    fn selector_extracts_block() {
        let b = SelectorBasis::new(3).unwrap();
        let xi = DVector::from_fn(30, |i, _| i as f64);
        for i in 1..=NUM_BLOCKS {
            let blk = b.selector(i) * &xi;
            for r in 0..3 {
                assert_eq!(blk[r], ((i - 1) * 3 + r) as f64);
            }
        }
    }

    #[test]
    fn zero_selector_rejected() {
        assert!(SelectorBasis::new(0).is_err());
    }

    fn cfg(lambda: f64, theta: f64) -> TriggerConfig {
        TriggerConfig {
            sigma1: 0.4,
            sigma2: 0.1,
            theta,
            lambda,
            omega: DMatrix::identity(2, 2),
            h: 0.2,
            d: 0.1,
            eta0: 1.0,
        }
    }

    #[test]
    fn trigger_hypothesis_examples() {
        // 1 - 0.5 - 1/2 = 0: boundary accepted.
        assert!(cfg(0.5, 2.0).validate().is_ok());
        // 1 - 0.5 - 1 = -0.5: rejected.
        let err = cfg(0.5, 1.0).validate().unwrap_err();
        match err {
            Error::Trigger(v) => {
                assert!(matches!(v[0], TriggerViolation::DecayHypothesis(_)))
            }
            other => panic!("unexpected error {other}"),
        }
        // theta = 0 branch accepted for any positive lambda.
        assert!(cfg(0.9, 0.0).validate().is_ok());
    }

    #[test]
    fn trigger_psd_reports_eigenvalue() {
        let mut c = cfg(0.5, 2.0);
        c.omega = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        match c.validate().unwrap_err() {
            Error::Trigger(v) => match v[0] {
                TriggerViolation::WeightNotPsd(e) => assert!((e + 0.5).abs() < 1e-12),
                ref other => panic!("unexpected violation {other}"),
            },
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn trigger_validation_monotone_in_theta() {
        // If theta2 passes the decay hypothesis, any larger theta1 passes too.
        let lambda = 0.3;
        let theta_min = 1.0 / (1.0 - lambda);
        for k in 0..40 {
            let theta2 = theta_min * (1.0 + 0.1 * k as f64);
            let theta1 = theta2 * 1.7;
            assert!(cfg(lambda, theta2).validate().is_ok());
            assert!(cfg(lambda, theta1).validate().is_ok());
        }
    }

    #[test]
    fn bounds_validation() {
        assert!(DelaySamplingBounds::new(0.0, 0.1, 1e-5, 0.7).is_ok());
        assert!(DelaySamplingBounds::new(0.2, 0.1, 1e-5, 0.7).is_err());
        assert!(DelaySamplingBounds::new(0.0, 0.0, 0.0, 0.7).is_err());
        let b = DelaySamplingBounds::new(0.0, 0.0, 0.2, 0.2).unwrap();
        assert_eq!(b.vertices().len(), 1);
        let b2 = DelaySamplingBounds::new(0.0, 0.1, 1e-5, 0.7).unwrap();
        assert_eq!(b2.vertices().len(), 4);
    }
}
