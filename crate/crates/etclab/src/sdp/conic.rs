//! Interior-point conic backend (Clarabel) behind the [`Backend`] trait.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::lmi::{LmiProblem, Sense};
use crate::sdp::{Backend, Objective, RawSolve};

#[derive(Debug, Clone)]
pub struct ConicBackend {
    pub max_iter: u32,
    pub time_limit: f64,
}

impl Default for ConicBackend {
    fn default() -> Self {
        Self {
            max_iter: 200,
            time_limit: 300.0,
        }
    }
}

impl Backend for ConicBackend {
    fn name(&self) -> String {
        "clarabel".into()
    }

    fn solve_raw(&self, prob: &LmiProblem, obj: &Objective) -> RawSolve {
        let vec = prob.vectorize();
        let margin_var = matches!(obj, Objective::MaximizeMargin { .. });
        let nvars = vec.num_vars + usize::from(margin_var);

        let mut triplets = vec.triplets.clone();
        let mut b = vec.b.clone();
        let mut cones: Vec<SupportedConeT<f64>> = vec
            .cone_dims
            .iter()
            .map(|&d| SupportedConeT::PSDTriangleConeT(d))
            .collect();

        if let Objective::MaximizeMargin { cap } = obj {
            // s = svec(-C(x) - mI - tI): the margin variable adds +1 on
            // every diagonal slot of strict constraints.
            let t_col = vec.num_vars;
            let mut base = 0usize;
            for (ci, &dim) in vec.cone_dims.iter().enumerate() {
                if prob.constraints[ci].sense == Sense::NegDef {
                    for r in 0..dim {
                        triplets.push((base + r * (r + 1) / 2 + r, t_col, 1.0));
                    }
                }
                base += dim * (dim + 1) / 2;
            }
            // cap: s = cap - t >= 0
            triplets.push((base, t_col, 1.0));
            b.push(*cap);
            cones.push(SupportedConeT::NonnegativeConeT(1));
        }

        let nrows = b.len();
        let a = csc_from_triplets(nrows, nvars, &triplets);
        let p = CscMatrix::zeros((nvars, nvars));
        let mut q = vec![0.0; nvars];
        if margin_var {
            q[nvars - 1] = -1.0;
        }

        let settings = match DefaultSettingsBuilder::default()
            .verbose(std::env::var("ETCLAB_SOLVER_VERBOSE").is_ok())
            .max_iter(self.max_iter)
            .time_limit(self.time_limit)
            .build()
        {
            Ok(s) => s,
            Err(e) => return RawSolve::Failure(format!("settings: {e}")),
        };
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return RawSolve::Failure(format!("setup: {e:?}")),
        };
        solver.solve();
        let status = solver.solution.status;
        match status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                RawSolve::Solution(solver.solution.x.clone())
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                RawSolve::Infeasible(format!("{status:?}"))
            }
            other => RawSolve::Failure(format!("{other:?}")),
        }
    }
}

fn csc_from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
    sorted.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; ncols + 1];
    let mut rowval: Vec<usize> = Vec::with_capacity(sorted.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut cur_col = 0usize;
    for (r, c, v) in sorted {
        debug_assert!(r < nrows && c < ncols);
        while cur_col < c {
            cur_col += 1;
            colptr[cur_col] = rowval.len();
        }
        if rowval.len() > colptr[cur_col] && *rowval.last().unwrap() == r {
            *nzval.last_mut().unwrap() += v;
        } else {
            rowval.push(r);
            nzval.push(v);
        }
    }
    while cur_col < ncols {
        cur_col += 1;
        colptr[cur_col] = rowval.len();
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{Constraint, LmiProblem, Placed, Sense, Term, VarSet, VarShape};
    use crate::sdp::{solve, Objective, Status};
    use nalgebra::DMatrix;

    /// x I2 - I2 <= -m I with x free: feasible, x < 1.
    fn scalar_problem() -> LmiProblem {
        let mut vars = VarSet::new();
        let x = vars.add("x", VarShape::Scalar);
        let mut prob = LmiProblem::new(vars, 1e-7);
        prob.constraints.push(Constraint {
            name: "xI - I < 0".into(),
            dim: 2,
            sense: Sense::NegDef,
            terms: vec![
                Placed::new(0, 0, Term::ScalarLin { var: x, m: DMatrix::identity(2, 2) }),
                Placed::new(0, 0, Term::Const(-DMatrix::identity(2, 2))),
            ],
        });
        prob
    }

    #[test]
    fn scalar_feasible() {
        let prob = scalar_problem();
        let out = solve(&prob, Objective::Feasibility, &ConicBackend::default());
        assert_eq!(out.status, Status::Feasible);
        let x = out.assignment.unwrap().scalar(crate::lmi::VarId(0));
        assert!(x < 1.0 - 1e-7);
    }

    #[test]
    fn contradictory_bounds_infeasible() {
        // x >= 1 and x <= 0 as 1x1 strict constraints.
        let mut vars = VarSet::new();
        let x = vars.add("x", VarShape::Scalar);
        let mut prob = LmiProblem::new(vars, 1e-7);
        let one = DMatrix::identity(1, 1);
        prob.constraints.push(Constraint {
            name: "x >= 1".into(),
            dim: 1,
            sense: Sense::NegDef,
            terms: vec![
                Placed::new(0, 0, Term::ScalarLin { var: x, m: -one.clone() }),
                Placed::new(0, 0, Term::Const(one.clone())),
            ],
        });
        prob.constraints.push(Constraint {
            name: "x <= 0".into(),
            dim: 1,
            sense: Sense::NegDef,
            terms: vec![Placed::new(0, 0, Term::ScalarLin { var: x, m: one })],
        });
        let out = solve(&prob, Objective::Feasibility, &ConicBackend::default());
        assert_eq!(out.status, Status::Infeasible);
    }

    #[test]
    fn margin_maximization_reports_objective() {
        let prob = scalar_problem();
        let out = solve(
            &prob,
            Objective::MaximizeMargin { cap: 0.5 },
            &ConicBackend::default(),
        );
        assert_eq!(out.status, Status::Feasible);
        let t = out.objective_value.unwrap();
        assert!(t > 0.4, "margin cap should be nearly reached, got {t}");
    }
}
