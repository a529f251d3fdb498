//! The six stability / design condition families, assembled as affine LMI
//! problems over the shared blocks.
//!
//! Families (by what is known and what is searched):
//!
//! - [`Condition::ModelBased`]: plant known, gain fixed — analysis.
//! - [`Condition::DataDriven`]: plant unknown, gain fixed; robustness over
//!   the dualized data-consistency set with a scalar multiplier.
//! - [`Condition::DataDrivenKnownB`]: input matrix known; gain either fixed
//!   (multiplier free) or free (multiplier fixed) — the latter enables the
//!   alternating gain search.
//! - [`Condition::GainSearch`]: gain free against the primal consistency
//!   set with the rectangular multiplier fixed.
//! - [`Condition::ConvexCodesign`] / [`Condition::ConvexCodesignKnownB`]:
//!   gain and trigger weight both free through the change of variables
//!   `K = Kc G^{-1}`; the rectangular multiplier is restricted to
//!   `(L1 + eps L3)^T G`, which keeps everything affine.
//!
//! Each family contributes two matrix inequalities per `(h, d)` vertex; a
//! box problem shares one variable set across all vertices. Structurally
//! zero Schur blocks (at `d = 0` or `h = 0`) are eliminated rather than
//! emitted as zero rows.

use nalgebra::DMatrix;

use crate::datarep::{Qmi, StackForm};
use crate::mat;
use crate::sysmodel::{DelaySamplingBounds, LtiSystem, SelectorBasis};
use crate::{Error, Result};

use super::blocks::{CoreBlocks, StdVars, TriggerWeights};
use super::{Constraint, LmiProblem, Placed, Sense, Term, VarId, VarSet, VarShape, DEFAULT_MARGIN};

/// Whether the feedback gain is a fixed parameter or a decision variable
/// (with the rectangular multiplier fixed instead).
#[derive(Debug, Clone, Copy)]
pub enum GainRole<'a> {
    Fixed(&'a DMatrix<f64>),
    Free { multiplier: &'a DMatrix<f64> },
}

/// One of the six condition families with its fixed data.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    ModelBased {
        sys: &'a LtiSystem,
        gain: &'a DMatrix<f64>,
    },
    DataDriven {
        dual: &'a Qmi,
        gain: &'a DMatrix<f64>,
    },
    DataDrivenKnownB {
        dual: &'a Qmi,
        input: &'a DMatrix<f64>,
        gain: GainRole<'a>,
    },
    GainSearch {
        primal: &'a Qmi,
        multiplier: &'a DMatrix<f64>,
        input_cols: usize,
    },
    ConvexCodesign {
        primal: &'a Qmi,
        input_cols: usize,
        deriv_weight: f64,
    },
    ConvexCodesignKnownB {
        primal: &'a Qmi,
        input: &'a DMatrix<f64>,
        deriv_weight: f64,
    },
}

impl Condition<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Condition::ModelBased { .. } => "model-based",
            Condition::DataDriven { .. } => "data-driven",
            Condition::DataDrivenKnownB { .. } => "data-driven-known-b",
            Condition::GainSearch { .. } => "gain-search",
            Condition::ConvexCodesign { .. } => "convex-codesign",
            Condition::ConvexCodesignKnownB { .. } => "convex-codesign-known-b",
        }
    }

    /// State and input dimensions implied by the condition data.
    pub fn dims(&self) -> Result<(usize, usize)> {
        match self {
            Condition::ModelBased { sys, gain } => {
                let (n, m) = (sys.n(), sys.m());
                check_gain(gain, n, m)?;
                Ok((n, m))
            }
            Condition::DataDriven { dual, gain } => {
                require_form(dual, StackForm::Plain)?;
                let (b1, b2) = dual.block_sizes();
                let n = b1;
                let m = b2
                    .checked_sub(n)
                    .ok_or_else(|| Error::Dim("dual set blocks inconsistent".into()))?;
                check_gain(gain, n, m)?;
                Ok((n, m))
            }
            Condition::DataDrivenKnownB { dual, input, gain } => {
                require_form(dual, StackForm::Plain)?;
                let (b1, b2) = dual.block_sizes();
                if b1 != b2 {
                    return Err(Error::Dim("known-input dual set must have equal blocks".into()));
                }
                let n = b1;
                let m = input.ncols();
                if input.nrows() != n {
                    return Err(Error::Dim("input matrix rows mismatch".into()));
                }
                match gain {
                    GainRole::Fixed(k) => check_gain(k, n, m)?,
                    GainRole::Free { multiplier } => check_multiplier(multiplier, n)?,
                }
                Ok((n, m))
            }
            Condition::GainSearch {
                primal,
                multiplier,
                input_cols,
            } => {
                require_form(primal, StackForm::Transposed)?;
                let (b1, b2) = primal.block_sizes();
                let n = b2;
                let m = *input_cols;
                if b1 != n + m {
                    return Err(Error::Dim("primal set blocks inconsistent with input size".into()));
                }
                check_multiplier(multiplier, n)?;
                Ok((n, m))
            }
            Condition::ConvexCodesign {
                primal, input_cols, ..
            } => {
                require_form(primal, StackForm::Transposed)?;
                let (b1, b2) = primal.block_sizes();
                let n = b2;
                let m = *input_cols;
                if b1 != n + m {
                    return Err(Error::Dim("primal set blocks inconsistent with input size".into()));
                }
                Ok((n, m))
            }
            Condition::ConvexCodesignKnownB { primal, input, .. } => {
                require_form(primal, StackForm::Transposed)?;
                let (b1, b2) = primal.block_sizes();
                if b1 != b2 {
                    return Err(Error::Dim("known-input primal set must have equal blocks".into()));
                }
                let n = b1;
                if input.nrows() != n {
                    return Err(Error::Dim("input matrix rows mismatch".into()));
                }
                Ok((n, input.ncols()))
            }
        }
    }

    fn deriv_weight(&self) -> Option<f64> {
        match self {
            Condition::ConvexCodesign { deriv_weight, .. }
            | Condition::ConvexCodesignKnownB { deriv_weight, .. } => Some(*deriv_weight),
            _ => None,
        }
    }
}

fn check_gain(k: &DMatrix<f64>, n: usize, m: usize) -> Result<()> {
    if k.nrows() != m || k.ncols() != n {
        return Err(Error::Dim(format!(
            "gain must be {m}x{n}, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    Ok(())
}

fn check_multiplier(f: &DMatrix<f64>, n: usize) -> Result<()> {
    if f.nrows() != 10 * n || f.ncols() != n {
        return Err(Error::Dim(format!(
            "multiplier must be {}x{n}, got {}x{}",
            10 * n,
            f.nrows(),
            f.ncols()
        )));
    }
    Ok(())
}

fn require_form(qmi: &Qmi, form: StackForm) -> Result<()> {
    if qmi.form() != form {
        return Err(Error::Signature(match form {
            StackForm::Plain => {
                "condition needs the dualized set; dualize after verifying the signature".into()
            }
            StackForm::Transposed => "condition needs the primal (non-dualized) set".into(),
        }));
    }
    Ok(())
}

/// Variable handles of a built problem.
#[derive(Debug, Clone, Copy)]
pub struct TheoremVars {
    pub std: StdVars,
    pub f: Option<VarId>,
    pub k: Option<VarId>,
    pub g: Option<VarId>,
    pub kc: Option<VarId>,
    pub eps: Option<VarId>,
}

#[derive(Debug, Clone)]
pub struct BuiltProblem {
    pub problem: LmiProblem,
    pub vars: TheoremVars,
    pub n: usize,
    pub m: usize,
    pub vertices: Vec<(f64, f64)>,
}

/// Builds the joint problem over all `(h, d)` vertices of `bounds`, one
/// shared variable set, two matrix constraints per vertex plus the
/// definiteness constraints.
pub fn build_box(
    cond: &Condition,
    trig: TriggerWeights,
    bounds: &DelaySamplingBounds,
    margin: f64,
) -> Result<BuiltProblem> {
    build_at_vertices(cond, trig, &bounds.vertices(), margin)
}

/// Builds the two matrix inequalities of one `(h, d)` vertex.
pub fn build_vertex(
    cond: &Condition,
    trig: TriggerWeights,
    h: f64,
    d: f64,
    margin: f64,
) -> Result<BuiltProblem> {
    build_at_vertices(cond, trig, &[(h, d)], margin)
}

pub fn build_at_vertices(
    cond: &Condition,
    trig: TriggerWeights,
    vertices: &[(f64, f64)],
    margin: f64,
) -> Result<BuiltProblem> {
    let (n, m) = cond.dims()?;
    for &(h, d) in vertices {
        if h < 0.0 || d < 0.0 {
            return Err(Error::Invalid("vertex with negative h or d".into()));
        }
    }
    let basis = SelectorBasis::new(n)?;
    let mut vars = VarSet::new();
    let std = StdVars::declare(&mut vars, n);
    let mut tv = TheoremVars {
        std,
        f: None,
        k: None,
        g: None,
        kc: None,
        eps: None,
    };
    match cond {
        Condition::ModelBased { .. } => {
            tv.f = Some(vars.add("F", VarShape::Rect(10 * n, n)));
        }
        Condition::DataDriven { .. } => {
            tv.f = Some(vars.add("F", VarShape::Rect(10 * n, n)));
            tv.eps = Some(vars.add("eps", VarShape::Scalar));
        }
        Condition::DataDrivenKnownB { gain, .. } => {
            match gain {
                GainRole::Fixed(_) => tv.f = Some(vars.add("F", VarShape::Rect(10 * n, n))),
                GainRole::Free { .. } => tv.k = Some(vars.add("K", VarShape::Rect(m, n))),
            }
            tv.eps = Some(vars.add("eps", VarShape::Scalar));
        }
        Condition::GainSearch { .. } => {
            tv.k = Some(vars.add("K", VarShape::Rect(m, n)));
            tv.eps = Some(vars.add("eps", VarShape::Scalar));
        }
        Condition::ConvexCodesign { .. } | Condition::ConvexCodesignKnownB { .. } => {
            tv.g = Some(vars.add("G", VarShape::Rect(n, n)));
            tv.kc = Some(vars.add("Kc", VarShape::Rect(m, n)));
            tv.eps = Some(vars.add("eps", VarShape::Scalar));
        }
    }

    let core = CoreBlocks::new(&basis, trig);
    let mut prob = LmiProblem::new(vars, margin);
    prob.note("condition", cond.name());
    if let Some(e) = cond.deriv_weight() {
        prob.note("deriv_weight", e);
    }

    for (vi, &(h, d)) in vertices.iter().enumerate() {
        prob.note(&format!("vertex{vi}"), format!("h={h}, d={d}"));
        for second in [false, true] {
            let c = assemble_constraint(cond, &core, &basis, &tv, h, d, second, vi)?;
            prob.constraints.push(c);
        }
    }

    // Definiteness of the storage and trigger matrices, and of the scalar
    // multiplier when present.
    for id in std.definite_ids() {
        let (dim, _) = prob.vars.shape(id).dims();
        prob.constraints.push(Constraint {
            name: format!("{} > 0", prob.vars.name(id)),
            dim,
            sense: Sense::NegDef,
            terms: vec![Placed::new(
                0,
                0,
                Term::Lin {
                    var: id,
                    left: -DMatrix::identity(dim, dim),
                    right: DMatrix::identity(dim, dim),
                    transpose_var: false,
                },
            )],
        });
    }
    if let Some(eps) = tv.eps {
        prob.constraints.push(Constraint {
            name: "eps > 0".into(),
            dim: 1,
            sense: Sense::NegDef,
            terms: vec![Placed::new(
                0,
                0,
                Term::Lin {
                    var: eps,
                    left: -DMatrix::identity(1, 1),
                    right: DMatrix::identity(1, 1),
                    transpose_var: false,
                },
            )],
        });
    }

    Ok(BuiltProblem {
        problem: prob,
        vars: tv,
        n,
        m,
        vertices: vertices.to_vec(),
    })
}

/// Lays out and fills one matrix inequality. `second` selects the variant
/// with the intra-interval Schur blocks.
fn assemble_constraint(
    cond: &Condition,
    core: &CoreBlocks,
    basis: &SelectorBasis,
    tv: &TheoremVars,
    h: f64,
    d: f64,
    second: bool,
    vertex_index: usize,
) -> Result<Constraint> {
    let n = core.n();
    let sv = &tv.std;
    let extra = match cond {
        Condition::ModelBased { .. } => 0,
        Condition::DataDriven { .. } => n,
        Condition::DataDrivenKnownB { .. } => n,
        Condition::GainSearch { .. } | Condition::ConvexCodesign { .. } => {
            n + cond.dims()?.1
        }
        Condition::ConvexCodesignKnownB { .. } => n,
    };
    let core_off = extra;
    let mut dim = extra + core.core_dim();
    let dcol = if d > 0.0 {
        let off = dim;
        dim += 2 * n;
        Some(off)
    } else {
        None
    };
    let hcol = if second && h > 0.0 {
        let off = dim;
        dim += 4 * n;
        Some(off)
    } else {
        None
    };

    let mut terms = Vec::new();
    terms.extend(core.rate_core_terms(sv, d, core_off));
    if second {
        terms.extend(core.rate_end_terms(sv, h, core_off));
    } else {
        terms.extend(core.rate_start_terms(sv, h, core_off));
    }
    terms.extend(core.trigger_terms(sv, core_off));
    if let Some(doff) = dcol {
        terms.push(core.delay_coupling(sv, d, core_off, doff));
        terms.extend(core.delay_diag_terms(sv, d, doff));
    }
    if let Some(hoff) = hcol {
        terms.extend(core.loop_coupling_terms(sv, h, core_off, hoff));
        terms.extend(core.loop_diag_terms(sv, h, hoff));
    }

    let l = |i: usize| basis.selector(i);
    match cond {
        Condition::ModelBased { sys, gain } => {
            // Sym{F (A L1 + B K L10 - L3)} with F free.
            let rhs = &sys.a * l(1) + &sys.b * *gain * l(10) - l(3);
            terms.push(Placed::sym(
                core_off,
                Term::Lin {
                    var: tv.f.unwrap(),
                    left: DMatrix::identity(10 * n, 10 * n),
                    right: rhs,
                    transpose_var: false,
                },
            ));
        }
        Condition::DataDriven { dual, gain } => {
            let m = gain.nrows();
            // Y1 = [0; L1; K L10], Y2 = [I; 0; 0] over rows (n, n, m).
            let y1 = mat::vstack(&[
                &DMatrix::zeros(n, 10 * n),
                l(1),
                &(*gain * l(10)),
            ]);
            let y2 = mat::vstack(&[
                &DMatrix::identity(n, n),
                &DMatrix::zeros(n + m, n),
            ]);
            let theta = dual.theta();
            push_scalar(&mut terms, tv.eps.unwrap(), 0, 0, y2.transpose() * theta * &y2);
            push_scalar(&mut terms, tv.eps.unwrap(), 0, core_off, y2.transpose() * theta * &y1);
            push_scalar(&mut terms, tv.eps.unwrap(), core_off, core_off, y1.transpose() * theta * &y1);
            // F^T in the coupling row, Sym{-F L3} in the core.
            terms.push(Placed::new(
                0,
                core_off,
                Term::Lin {
                    var: tv.f.unwrap(),
                    left: DMatrix::identity(n, n),
                    right: DMatrix::identity(10 * n, 10 * n),
                    transpose_var: true,
                },
            ));
            terms.push(Placed::sym(
                core_off,
                Term::Lin {
                    var: tv.f.unwrap(),
                    left: -DMatrix::identity(10 * n, 10 * n),
                    right: l(3).clone(),
                    transpose_var: false,
                },
            ));
        }
        Condition::DataDrivenKnownB { dual, input, gain } => {
            let y1 = mat::vstack(&[&DMatrix::zeros(n, 10 * n), l(1)]);
            let y2 = mat::vstack(&[&DMatrix::identity(n, n), &DMatrix::zeros(n, n)]);
            let theta = dual.theta();
            push_scalar(&mut terms, tv.eps.unwrap(), 0, 0, y2.transpose() * theta * &y2);
            push_scalar(&mut terms, tv.eps.unwrap(), 0, core_off, y2.transpose() * theta * &y1);
            push_scalar(&mut terms, tv.eps.unwrap(), core_off, core_off, y1.transpose() * theta * &y1);
            match gain {
                GainRole::Fixed(k) => {
                    let f = tv.f.unwrap();
                    terms.push(Placed::new(
                        0,
                        core_off,
                        Term::Lin {
                            var: f,
                            left: DMatrix::identity(n, n),
                            right: DMatrix::identity(10 * n, 10 * n),
                            transpose_var: true,
                        },
                    ));
                    // Sym{F (B K L10 - L3)}
                    let rhs = *input * *k * l(10) - l(3);
                    terms.push(Placed::sym(
                        core_off,
                        Term::Lin {
                            var: f,
                            left: DMatrix::identity(10 * n, 10 * n),
                            right: rhs,
                            transpose_var: false,
                        },
                    ));
                }
                GainRole::Free { multiplier } => {
                    let k = tv.k.unwrap();
                    terms.push(Placed::new(
                        0,
                        core_off,
                        Term::Const(multiplier.transpose()),
                    ));
                    // Sym{(F B) K L10} - Sym{F L3}
                    terms.push(Placed::sym(
                        core_off,
                        Term::Lin {
                            var: k,
                            left: *multiplier * *input,
                            right: l(10).clone(),
                            transpose_var: false,
                        },
                    ));
                    let fl3 = *multiplier * l(3);
                    terms.push(Placed::new(
                        core_off,
                        core_off,
                        Term::Const(-(&fl3 + fl3.transpose())),
                    ));
                }
            }
        }
        Condition::GainSearch {
            primal, multiplier, ..
        } => {
            let m = cond.dims()?.1;
            let eps = tv.eps.unwrap();
            let q = primal.q_block();
            let s = primal.s_block();
            let r = primal.r_block();
            // D1 = [I_{n+m} 0], D2 = [0 0 F] over columns (n, m, n); F fixed.
            push_scalar(&mut terms, eps, 0, 0, q.clone());
            push_scalar(&mut terms, eps, 0, core_off, &s * multiplier.transpose());
            push_scalar(
                &mut terms,
                eps,
                core_off,
                core_off,
                *multiplier * &r * multiplier.transpose(),
            );
            // coupling [L1; K L10] with K free
            terms.push(Placed::new(0, core_off, Term::Const(l(1).clone())));
            let embed_m = mat::vstack(&[&DMatrix::zeros(n, m), &DMatrix::identity(m, m)]);
            terms.push(Placed::new(
                0,
                core_off,
                Term::Lin {
                    var: tv.k.unwrap(),
                    left: embed_m,
                    right: l(10).clone(),
                    transpose_var: false,
                },
            ));
            // Sym{-F L3} with F fixed.
            let fl3 = *multiplier * l(3);
            terms.push(Placed::new(
                core_off,
                core_off,
                Term::Const(-(&fl3 + fl3.transpose())),
            ));
        }
        Condition::ConvexCodesign {
            primal,
            deriv_weight,
            ..
        } => {
            let m = cond.dims()?.1;
            let eps = tv.eps.unwrap();
            let lmix = (l(1).transpose() + *deriv_weight * l(3).transpose()).clone_owned();
            let q = primal.q_block();
            let s = primal.s_block();
            let r = primal.r_block();
            push_scalar(&mut terms, eps, 0, 0, q.clone());
            push_scalar(&mut terms, eps, 0, core_off, &s * lmix.transpose());
            push_scalar(&mut terms, eps, core_off, core_off, &lmix * &r * lmix.transpose());
            // coupling [G L1; Kc L10]
            let embed_n = mat::vstack(&[&DMatrix::identity(n, n), &DMatrix::zeros(m, n)]);
            let embed_m = mat::vstack(&[&DMatrix::zeros(n, m), &DMatrix::identity(m, m)]);
            terms.push(Placed::new(
                0,
                core_off,
                Term::Lin {
                    var: tv.g.unwrap(),
                    left: embed_n,
                    right: l(1).clone(),
                    transpose_var: false,
                },
            ));
            terms.push(Placed::new(
                0,
                core_off,
                Term::Lin {
                    var: tv.kc.unwrap(),
                    left: embed_m,
                    right: l(10).clone(),
                    transpose_var: false,
                },
            ));
            // Sym{-(L1 + eps L3)^T G L3}
            terms.push(Placed::sym(
                core_off,
                Term::Lin {
                    var: tv.g.unwrap(),
                    left: -&lmix,
                    right: l(3).clone(),
                    transpose_var: false,
                },
            ));
        }
        Condition::ConvexCodesignKnownB {
            primal,
            input,
            deriv_weight,
        } => {
            let eps = tv.eps.unwrap();
            let lmix = (l(1).transpose() + *deriv_weight * l(3).transpose()).clone_owned();
            let q = primal.q_block();
            let s = primal.s_block();
            let r = primal.r_block();
            push_scalar(&mut terms, eps, 0, 0, q.clone());
            push_scalar(&mut terms, eps, 0, core_off, &s * lmix.transpose());
            push_scalar(&mut terms, eps, core_off, core_off, &lmix * &r * lmix.transpose());
            // coupling G L1
            terms.push(Placed::new(
                0,
                core_off,
                Term::Lin {
                    var: tv.g.unwrap(),
                    left: DMatrix::identity(n, n),
                    right: l(1).clone(),
                    transpose_var: false,
                },
            ));
            // Sym{(L1 + eps L3)^T (B Kc L10 - G L3)}
            terms.push(Placed::sym(
                core_off,
                Term::Lin {
                    var: tv.kc.unwrap(),
                    left: &lmix * *input,
                    right: l(10).clone(),
                    transpose_var: false,
                },
            ));
            terms.push(Placed::sym(
                core_off,
                Term::Lin {
                    var: tv.g.unwrap(),
                    left: -&lmix,
                    right: l(3).clone(),
                    transpose_var: false,
                },
            ));
        }
    }

    Ok(Constraint {
        name: format!(
            "{} v{vertex_index} (h={h}, d={d}) lmi{}",
            cond.name(),
            if second { 2 } else { 1 }
        ),
        dim,
        sense: Sense::NegDef,
        terms,
    })
}

fn push_scalar(terms: &mut Vec<Placed>, var: VarId, row: usize, col: usize, m: DMatrix<f64>) {
    let m = if row == col { mat::symmetrize(&m) } else { m };
    terms.push(Placed::new(row, col, Term::ScalarLin { var, m }));
}
