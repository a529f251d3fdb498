//! Dense log-barrier reference backend.
//!
//! A damped-Newton phase-I method: minimize the slack `s` subject to
//! `C_i(x) + m_i I <= s I` through the barrier
//! `s - mu * sum_i logdet(s I - G_i(x))`. Intended as a slow but
//! transparent regression guard for small problems; it refuses anything
//! with a constraint above dimension 100 or more than 160 scalar
//! components.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::lmi::LmiProblem;
use crate::lmi::Sense;
use crate::sdp::{Backend, Objective, RawSolve};

pub struct BarrierBackend {
    pub max_newton_steps: usize,
}

impl Default for BarrierBackend {
    fn default() -> Self {
        Self {
            max_newton_steps: 400,
        }
    }
}

const MAX_DIM: usize = 100;
const MAX_VARS: usize = 160;

struct DenseConstraint {
    /// Constant part shifted by the required margin.
    base: DMatrix<f64>,
    /// One dense coefficient matrix per scalar component.
    coeffs: Vec<DMatrix<f64>>,
    dim: usize,
}

fn densify(prob: &LmiProblem) -> Result<Vec<DenseConstraint>, String> {
    let nvars = prob.vars.total_components();
    if nvars > MAX_VARS {
        return Err(format!("reference backend limited to {MAX_VARS} scalars, got {nvars}"));
    }
    let vec = prob.vectorize();
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::new();
    let mut base_row = 0usize;
    for (ci, &dim) in vec.cone_dims.iter().enumerate() {
        if dim > MAX_DIM {
            return Err(format!(
                "reference backend limited to dimension {MAX_DIM}, constraint {ci} has {dim}"
            ));
        }
        let tri = dim * (dim + 1) / 2;
        // vectorize() encodes s = b - A x in the PSD cone; recover
        // G_i(x) = -s as dense symmetric matrices.
        let unpack = |svec: &dyn Fn(usize) -> f64| -> DMatrix<f64> {
            let mut m = DMatrix::zeros(dim, dim);
            let mut idx = 0;
            for c in 0..dim {
                for r in 0..=c {
                    let v = svec(idx);
                    if r == c {
                        m[(r, c)] = v;
                    } else {
                        m[(r, c)] = v / sqrt2;
                        m[(c, r)] = v / sqrt2;
                    }
                    idx += 1;
                }
            }
            m
        };
        let base = unpack(&|i| -vec.b[base_row + i]);
        let mut coeffs = vec![DMatrix::zeros(dim, dim); nvars];
        for &(r, c, v) in &vec.triplets {
            if r >= base_row && r < base_row + tri {
                let slot = r - base_row;
                // locate (row, col) of this svec slot
                let mut cc = 0usize;
                let mut acc = 0usize;
                while acc + cc + 1 <= slot {
                    acc += cc + 1;
                    cc += 1;
                }
                let rr = slot - acc;
                let val = if rr == cc { v } else { v / sqrt2 };
                coeffs[c][(rr, cc)] += val;
                if rr != cc {
                    coeffs[c][(cc, rr)] += val;
                }
            }
        }
        out.push(DenseConstraint { base, coeffs, dim });
        base_row += tri;
    }
    Ok(out)
}

impl Backend for BarrierBackend {
    fn name(&self) -> String {
        "log-barrier".into()
    }

    fn solve_raw(&self, prob: &LmiProblem, obj: &Objective) -> RawSolve {
        if matches!(obj, Objective::MaximizeMargin { .. }) {
            return RawSolve::Failure("reference backend only does feasibility".into());
        }
        let cons = match densify(prob) {
            Ok(c) => c,
            Err(e) => return RawSolve::Failure(e),
        };
        let nvars = prob.vars.total_components();
        let mut x = DVector::<f64>::zeros(nvars);
        // initial slack above the worst eigenvalue at x = 0
        let mut s = cons
            .iter()
            .map(|c| crate::mat::max_eig(&c.base))
            .fold(f64::NEG_INFINITY, f64::max)
            + 1.0;

        let total_dim: usize = cons.iter().map(|c| c.dim).sum();
        let mut mu = 1.0f64;
        let mut steps = 0usize;
        while mu > 1e-10 {
            loop {
                steps += 1;
                if steps > self.max_newton_steps {
                    return RawSolve::Failure("newton step budget exhausted".into());
                }
                // slack matrices and their inverses
                let mut grads = DVector::<f64>::zeros(nvars + 1);
                let mut hess = DMatrix::<f64>::zeros(nvars + 1, nvars + 1);
                grads[nvars] = 1.0; // d/ds of the objective
                let mut ok = true;
                for c in &cons {
                    let mut g = c.base.clone();
                    for (j, cj) in c.coeffs.iter().enumerate() {
                        if x[j] != 0.0 {
                            g += cj * x[j];
                        }
                    }
                    let slack = s * DMatrix::identity(c.dim, c.dim) - g;
                    let chol = match Cholesky::new(slack.clone()) {
                        Some(ch) => ch,
                        None => {
                            ok = false;
                            break;
                        }
                    };
                    let sinv = chol.inverse();
                    // gradient: d/dx_j of -mu logdet(S) = mu tr(Sinv Gj);
                    // d/ds adds -mu tr(Sinv)
                    let si_g: Vec<DMatrix<f64>> =
                        c.coeffs.iter().map(|cj| &sinv * cj).collect();
                    for j in 0..nvars {
                        grads[j] += mu * si_g[j].trace();
                    }
                    grads[nvars] -= mu * sinv.trace();
                    for j in 0..nvars {
                        for k in j..nvars {
                            let v = mu * (&si_g[j] * &si_g[k]).trace();
                            hess[(j, k)] += v;
                            if j != k {
                                hess[(k, j)] += v;
                            }
                        }
                        let v = -mu * (&si_g[j] * &sinv).trace();
                        hess[(j, nvars)] += v;
                        hess[(nvars, j)] += v;
                    }
                    hess[(nvars, nvars)] += mu * (&sinv * &sinv).trace();
                }
                if !ok {
                    return RawSolve::Failure("slack lost definiteness".into());
                }
                for j in 0..=nvars {
                    hess[(j, j)] += 1e-12;
                }
                let step = match Cholesky::new(hess.clone()) {
                    Some(ch) => ch.solve(&grads),
                    None => {
                        return RawSolve::Failure("barrier hessian not positive definite".into())
                    }
                };
                let decrement = grads.dot(&step);
                // backtracking keeping all slacks definite
                let mut alpha = 1.0;
                let value = |x: &DVector<f64>, s: f64| -> Option<f64> {
                    let mut val = s;
                    for c in &cons {
                        let mut g = c.base.clone();
                        for (j, cj) in c.coeffs.iter().enumerate() {
                            if x[j] != 0.0 {
                                g += cj * x[j];
                            }
                        }
                        let slack = s * DMatrix::identity(c.dim, c.dim) - g;
                        let chol = Cholesky::new(slack)?;
                        let mut logdet = 0.0;
                        for i in 0..c.dim {
                            logdet += chol.l()[(i, i)].ln();
                        }
                        val -= mu * 2.0 * logdet;
                    }
                    Some(val)
                };
                let f0 = match value(&x, s) {
                    Some(v) => v,
                    None => return RawSolve::Failure("barrier value undefined".into()),
                };
                let mut accepted = false;
                for _ in 0..60 {
                    let xs = &x - alpha * step.rows(0, nvars);
                    let ss = s - alpha * step[nvars];
                    if let Some(f1) = value(&xs, ss) {
                        if f1 <= f0 - 0.25 * alpha * decrement {
                            x = xs;
                            s = ss;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted || decrement.abs() < 1e-12 {
                    break;
                }
                if decrement < 1e-9 {
                    break;
                }
            }
            // early exits on either side of the certificate
            if s < -1e-12 {
                return RawSolve::Solution(x.iter().copied().collect());
            }
            if s - mu * total_dim as f64 > 0.0 && mu < 1e-6 {
                return RawSolve::Infeasible(format!(
                    "phase-one slack bounded below by {:.3e}",
                    s - mu * total_dim as f64
                ));
            }
            mu *= 0.15;
        }
        if s < 0.0 {
            RawSolve::Solution(x.iter().copied().collect())
        } else {
            RawSolve::Infeasible(format!("phase-one slack converged to {s:.3e} > 0"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{Constraint, Placed, Term, VarSet, VarShape};
    use crate::sdp::{solve, Objective, Status};
    use nalgebra::DMatrix as M;

    #[test]
    fn agrees_with_conic_on_scalar_problems() {
        // feasible: x I - I < 0 plus x > 0.2
        let build = |flip: bool| {
            let mut vars = VarSet::new();
            let x = vars.add("x", VarShape::Scalar);
            let mut prob = crate::lmi::LmiProblem::new(vars, 1e-7);
            prob.constraints.push(Constraint {
                name: "upper".into(),
                dim: 2,
                sense: Sense::NegDef,
                terms: vec![
                    Placed::new(0, 0, Term::ScalarLin { var: x, m: M::identity(2, 2) }),
                    Placed::new(0, 0, Term::Const(-M::identity(2, 2))),
                ],
            });
            let lower = if flip { 1.5 } else { 0.2 };
            prob.constraints.push(Constraint {
                name: "lower".into(),
                dim: 1,
                sense: Sense::NegDef,
                terms: vec![
                    Placed::new(0, 0, Term::ScalarLin { var: x, m: -M::identity(1, 1) }),
                    Placed::new(0, 0, Term::Const(lower * M::identity(1, 1))),
                ],
            });
            prob
        };
        let feasible = build(false);
        let infeasible = build(true);
        let bb = BarrierBackend::default();
        let cb = crate::sdp::conic::ConicBackend::default();
        for (prob, expect) in [(&feasible, Status::Feasible), (&infeasible, Status::Infeasible)] {
            let o1 = solve(prob, Objective::Feasibility, &bb);
            let o2 = solve(prob, Objective::Feasibility, &cb);
            assert_eq!(o1.status, expect, "barrier on {}", prob.constraints[1].name);
            assert_eq!(o2.status, expect, "conic on {}", prob.constraints[1].name);
        }
    }

    #[test]
    fn refuses_oversized_problems() {
        let mut vars = VarSet::new();
        let p = vars.add("P", VarShape::Sym(120));
        let mut prob = crate::lmi::LmiProblem::new(vars, 1e-7);
        prob.constraints.push(Constraint {
            name: "big".into(),
            dim: 120,
            sense: Sense::NegDef,
            terms: vec![Placed::new(0, 0, Term::Lin {
                var: p,
                left: -M::identity(120, 120),
                right: M::identity(120, 120),
                transpose_var: false,
            })],
        });
        let out = BarrierBackend::default().solve_raw(&prob, &Objective::Feasibility);
        assert!(matches!(out, RawSolve::Failure(_)));
    }
}
