//! Assembly of the shared matrix blocks behind every stability condition.
//!
//! The quadratic forms live on the 10-block augmented vector (see
//! [`crate::sysmodel`]). The pieces are:
//!
//! - a rate core: derivative of the storage quadratic plus the free-matrix
//!   couplings from the two integral bounds, affine in the delay `d`;
//! - interval-start / interval-end rates: the parts of the loop-functional
//!   derivative proportional to remaining respectively elapsed time inside
//!   a sampling interval, scaled by the sampling interval `h`;
//! - the trigger form weighting the sampled state, the last transmitted
//!   state and their difference;
//! - coupling and diagonal blocks completing the two integral bounds by
//!   Schur complement (`d`-blocks for the delay bound, `h`-blocks for the
//!   intra-interval bound).

use nalgebra::DMatrix;

use crate::mat;
use crate::sysmodel::SelectorBasis;

use super::{Placed, Term, VarId, VarSet, VarShape};

/// Trigger weighting coefficients entering the analysis conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerWeights {
    pub sigma1: f64,
    pub sigma2: f64,
}

/// The decision variables shared by all condition families.
#[derive(Debug, Clone, Copy)]
pub struct StdVars {
    /// Storage quadratic over (state, delayed state, delay-window integral).
    pub p: VarId,
    /// Storage quadratic over (state, derivative) on the delay window.
    pub z: VarId,
    /// Weight of the double-integral storage term.
    pub t: VarId,
    /// Loop-functional integral weights.
    pub r1: VarId,
    pub r2: VarId,
    /// Trigger weight matrix.
    pub omega: VarId,
    /// Loop-functional cross quadratic (indefinite).
    pub s: VarId,
    /// Free multipliers of the integral bounds.
    pub n_mult: VarId,
    pub m1: VarId,
    pub m2: VarId,
}

impl StdVars {
    pub fn declare(vars: &mut VarSet, n: usize) -> Self {
        Self {
            p: vars.add("P", VarShape::Sym(3 * n)),
            z: vars.add("Z", VarShape::Sym(2 * n)),
            t: vars.add("T", VarShape::Sym(n)),
            r1: vars.add("R1", VarShape::Sym(n)),
            r2: vars.add("R2", VarShape::Sym(n)),
            omega: vars.add("Omega", VarShape::Sym(n)),
            s: vars.add("S", VarShape::Sym(2 * n)),
            n_mult: vars.add("N", VarShape::Rect(10 * n, 2 * n)),
            m1: vars.add("M1", VarShape::Rect(10 * n, 2 * n)),
            m2: vars.add("M2", VarShape::Rect(10 * n, 2 * n)),
        }
    }

    /// Variables required positive definite (everything except the
    /// indefinite cross quadratic and the rectangular multipliers).
    pub fn definite_ids(&self) -> [VarId; 6] {
        [self.p, self.z, self.t, self.r1, self.r2, self.omega]
    }
}

/// Which block the delay-weighted storage vector uses for its third slot.
/// `MeanBlock` is the reading consistent with the functional derivative;
/// the alternative exists only so the oracle can demonstrate its failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StorageDelaySlot {
    #[default]
    MeanBlock,
    DelayedRateBlock,
}

/// Numeric selector stacks plus term generators for the shared blocks.
#[derive(Debug, Clone)]
pub struct CoreBlocks {
    n: usize,
    trig: TriggerWeights,
    /// Storage vector rows: constant part (state, delayed state, 0).
    pub pv_const: DMatrix<f64>,
    /// Storage vector rows multiplying `d` (0, 0, window mean).
    pub pv_delay: DMatrix<f64>,
    /// Derivative of the storage vector.
    pub pv_rate: DMatrix<f64>,
    /// (state, derivative) now and delayed.
    pub phi_now: DMatrix<f64>,
    pub phi_delayed: DMatrix<f64>,
    /// Integral-bound stacks on [t-d, t], [tau, t], [tau-d, t-d].
    pub jensen_delay: DMatrix<f64>,
    pub jensen_loop_now: DMatrix<f64>,
    pub jensen_loop_delayed: DMatrix<f64>,
    /// (sampled state, delayed sampled state).
    pub sampled_pair: DMatrix<f64>,
    /// Selectors kept for the couplings.
    l3: DMatrix<f64>,
    l4: DMatrix<f64>,
    l7: DMatrix<f64>,
    l10: DMatrix<f64>,
    eye_core: DMatrix<f64>,
}

impl CoreBlocks {
    pub fn new(basis: &SelectorBasis, trig: TriggerWeights) -> Self {
        Self::with_storage_slot(basis, trig, StorageDelaySlot::MeanBlock)
    }

    pub fn with_storage_slot(
        basis: &SelectorBasis,
        trig: TriggerWeights,
        slot: StorageDelaySlot,
    ) -> Self {
        let n = basis.n();
        let l = |i: usize| basis.selector(i);
        let zero = basis.zero();
        let third = match slot {
            StorageDelaySlot::MeanBlock => l(5),
            StorageDelaySlot::DelayedRateBlock => l(4),
        };
        let pv_const = mat::vstack(&[l(1), l(2), zero]);
        let pv_delay = mat::vstack(&[zero, zero, third]);
        let pv_rate = mat::vstack(&[l(3), l(4), &(l(1) - l(2))]);
        let phi_now = mat::vstack(&[l(1), l(3)]);
        let phi_delayed = mat::vstack(&[l(2), l(4)]);
        let jensen_delay = mat::vstack(&[&(l(1) - l(2)), &(l(1) + l(2) - 2.0 * l(5))]);
        let jensen_loop_now = mat::vstack(&[&(l(1) - l(6)), &(l(1) + l(6) - 2.0 * l(8))]);
        let jensen_loop_delayed = mat::vstack(&[&(l(2) - l(7)), &(l(2) + l(7) - 2.0 * l(9))]);
        let sampled_pair = mat::vstack(&[l(6), l(7)]);
        Self {
            n,
            trig,
            pv_const,
            pv_delay,
            pv_rate,
            phi_now,
            phi_delayed,
            jensen_delay,
            jensen_loop_now,
            jensen_loop_delayed,
            sampled_pair,
            l3: l(3).clone(),
            l4: l(4).clone(),
            l7: l(7).clone(),
            l10: l(10).clone(),
            eye_core: DMatrix::identity(10 * n, 10 * n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn core_dim(&self) -> usize {
        10 * self.n
    }

    /// Derivative core at delay `d` (position-independent part), placed on
    /// the diagonal at `off`.
    pub fn rate_core_terms(&self, sv: &StdVars, d: f64, off: usize) -> Vec<Placed> {
        let mut out = vec![
            Placed::sym(
                off,
                Term::Lin {
                    var: sv.p,
                    left: self.pv_const.transpose(),
                    right: self.pv_rate.clone(),
                    transpose_var: false,
                },
            ),
            Placed::sym(
                off,
                Term::Lin {
                    var: sv.n_mult,
                    left: self.eye_core.clone(),
                    right: self.jensen_delay.clone(),
                    transpose_var: false,
                },
            ),
            Placed::sym(
                off,
                Term::Lin {
                    var: sv.m1,
                    left: self.eye_core.clone(),
                    right: self.jensen_loop_now.clone(),
                    transpose_var: false,
                },
            ),
            Placed::sym(
                off,
                Term::Lin {
                    var: sv.m2,
                    left: self.eye_core.clone(),
                    right: self.jensen_loop_delayed.clone(),
                    transpose_var: false,
                },
            ),
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.z,
                    left: self.phi_now.transpose(),
                    right: self.phi_now.clone(),
                    transpose_var: false,
                },
            ),
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.z,
                    left: -self.phi_delayed.transpose(),
                    right: self.phi_delayed.clone(),
                    transpose_var: false,
                },
            ),
        ];
        if d != 0.0 {
            out.push(Placed::sym(
                off,
                Term::Lin {
                    var: sv.p,
                    left: d * self.pv_delay.transpose(),
                    right: self.pv_rate.clone(),
                    transpose_var: false,
                },
            ));
            // d-scaled derivative of the double-integral storage term.
            out.push(Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.t,
                    left: d * self.l3.transpose(),
                    right: self.l3.clone(),
                    transpose_var: false,
                },
            ));
        }
        out
    }

    /// `h` times the interval-start rate, on the diagonal at `off`.
    pub fn rate_start_terms(&self, sv: &StdVars, h: f64, off: usize) -> Vec<Placed> {
        vec![
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.s,
                    left: h * self.sampled_pair.transpose(),
                    right: self.sampled_pair.clone(),
                    transpose_var: false,
                },
            ),
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.r1,
                    left: h * self.l3.transpose(),
                    right: self.l3.clone(),
                    transpose_var: false,
                },
            ),
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.r2,
                    left: h * self.l4.transpose(),
                    right: self.l4.clone(),
                    transpose_var: false,
                },
            ),
        ]
    }

    /// `h` times the interval-end rate, on the diagonal at `off`.
    pub fn rate_end_terms(&self, sv: &StdVars, h: f64, off: usize) -> Vec<Placed> {
        vec![Placed::new(
            off,
            off,
            Term::Lin {
                var: sv.s,
                left: -h * self.sampled_pair.transpose(),
                right: self.sampled_pair.clone(),
                transpose_var: false,
            },
        )]
    }

    /// Trigger quadratic form, on the diagonal at `off`.
    pub fn trigger_terms(&self, sv: &StdVars, off: usize) -> Vec<Placed> {
        let diff = &self.l7 - &self.l10;
        vec![
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.omega,
                    left: self.trig.sigma1 * self.l7.transpose(),
                    right: self.l7.clone(),
                    transpose_var: false,
                },
            ),
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.omega,
                    left: self.trig.sigma2 * self.l10.transpose(),
                    right: self.l10.clone(),
                    transpose_var: false,
                },
            ),
            Placed::new(
                off,
                off,
                Term::Lin {
                    var: sv.omega,
                    left: -diff.transpose(),
                    right: diff,
                    transpose_var: false,
                },
            ),
        ]
    }

    /// Off-diagonal coupling of the delay integral bound. The Schur pair
    /// `(d N, d diag(-T, -3T))` is emitted in the congruence-rescaled form
    /// `(sqrt(d) N, diag(-T, -3T))`, which certifies the same set and keeps
    /// the block scales comparable down to tiny delays.
    pub fn delay_coupling(&self, sv: &StdVars, d: f64, row: usize, col: usize) -> Placed {
        let n2 = 2 * self.n;
        Placed::new(
            row,
            col,
            Term::Lin {
                var: sv.n_mult,
                left: d.sqrt() * self.eye_core.clone(),
                right: DMatrix::identity(n2, n2),
                transpose_var: false,
            },
        )
    }

    /// Diagonal Schur block of the delay bound (rescaled, see
    /// [`CoreBlocks::delay_coupling`]).
    pub fn delay_diag_terms(&self, sv: &StdVars, _d: f64, off: usize) -> Vec<Placed> {
        embedded_diag(sv.t, &[-1.0, -3.0], self.n, off)
    }

    /// Off-diagonal coupling of the intra-interval bound, rescaled like
    /// [`CoreBlocks::delay_coupling`]: `(sqrt(h) [M1 M2], diag(-R, -3R))`.
    pub fn loop_coupling_terms(&self, sv: &StdVars, h: f64, row: usize, col: usize) -> Vec<Placed> {
        let h = h.sqrt();
        let n2 = 2 * self.n;
        let right1 = mat::hstack(&[&DMatrix::identity(n2, n2), &DMatrix::zeros(n2, n2)]);
        let right2 = mat::hstack(&[&DMatrix::zeros(n2, n2), &DMatrix::identity(n2, n2)]);
        vec![
            Placed::new(
                row,
                col,
                Term::Lin {
                    var: sv.m1,
                    left: h * self.eye_core.clone(),
                    right: right1,
                    transpose_var: false,
                },
            ),
            Placed::new(
                row,
                col,
                Term::Lin {
                    var: sv.m2,
                    left: h * self.eye_core.clone(),
                    right: right2,
                    transpose_var: false,
                },
            ),
        ]
    }

    /// Diagonal Schur block of the intra-interval bound (rescaled, see
    /// [`CoreBlocks::loop_coupling_terms`]).
    pub fn loop_diag_terms(&self, sv: &StdVars, _h: f64, off: usize) -> Vec<Placed> {
        let mut out = embedded_diag(sv.r1, &[-1.0, -3.0], self.n, off);
        out.extend(embedded_diag(sv.r2, &[-1.0, -3.0], self.n, off + 2 * self.n));
        out
    }
}

/// Places `scale_k * X` into consecutive `n x n` diagonal slots starting at
/// `off`.
fn embedded_diag(var: VarId, scales: &[f64], n: usize, off: usize) -> Vec<Placed> {
    scales
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            Placed::new(
                off + k * n,
                off + k * n,
                Term::Lin {
                    var,
                    left: s * DMatrix::identity(n, n),
                    right: DMatrix::identity(n, n),
                    transpose_var: false,
                },
            )
        })
        .collect()
}
