//! Semidefinite feasibility backends and the independent verification layer.
//!
//! Backends only propose solutions; every "feasible" verdict reported from
//! this module has been re-checked by dense eigenvalue computation on all
//! constraints. Failures are retried with stricter margins before being
//! reported as numerical failures (never as infeasible).

pub mod barrier;
pub mod conic;
pub mod search;

use crate::lmi::{Assignment, LmiProblem, Sense};
use crate::mat;

/// Absolute floor on semidefinite-constraint violations in the re-check.
const PSD_RECHECK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Feasibility,
    /// Maximize a common extra margin `t` added to every strict constraint,
    /// capped to keep the homogeneous problem bounded.
    MaximizeMargin { cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Feasible,
    Infeasible,
    NumericalFailure,
}

/// Raw backend verdict before verification.
#[derive(Debug, Clone)]
pub enum RawSolve {
    /// Flat component vector in declaration order (plus the margin variable
    /// last when maximizing the margin).
    Solution(Vec<f64>),
    Infeasible(String),
    Failure(String),
}

pub trait Backend: Sync {
    fn name(&self) -> String;
    fn solve_raw(&self, prob: &LmiProblem, obj: &Objective) -> RawSolve;
    /// Whether feasibility decisions should go through the capped
    /// margin-maximization (robust for the near-homogeneous problems here)
    /// instead of a plain feasibility call.
    fn prefers_margin_objective(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct RecheckReport {
    /// Worst violation over all constraints: max eigenvalue plus required
    /// margin for strict constraints, negated min eigenvalue for
    /// semidefinite ones. Feasible iff <= 0 within slack.
    pub worst: f64,
    /// Slack granted: half the strictness margin.
    pub allowed: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: Status,
    pub assignment: Option<Assignment>,
    /// Negative of the worst re-checked violation (margin actually achieved
    /// beyond the required one); meaningful only when feasible.
    pub margin_achieved: f64,
    /// Objective value when maximizing the margin.
    pub objective_value: Option<f64>,
    pub backend: String,
    pub recheck: Option<RecheckReport>,
    pub detail: String,
}

impl SolveOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }
}

/// Independent verification of a candidate assignment: every strict
/// constraint must clear half its margin (plus `shift`, the extra margin
/// claimed by a margin-maximizing solve), every semidefinite constraint
/// must be nonnegative up to a scale-relative tolerance.
pub fn recheck_shifted(prob: &LmiProblem, asg: &Assignment, shift: f64) -> RecheckReport {
    let mut worst = f64::NEG_INFINITY;
    for (i, c) in prob.constraints.iter().enumerate() {
        let val = c.evaluate(asg);
        let v = match c.sense {
            Sense::NegDef => mat::max_eig(&val) + 0.5 * prob.margin_eff(i) + shift,
            Sense::Psd => -mat::min_eig(&val) - PSD_RECHECK_TOL * (1.0 + mat::sym_norm(&val)),
        };
        worst = worst.max(v);
    }
    RecheckReport {
        worst,
        allowed: 0.0,
        passed: worst <= 0.0,
    }
}

pub fn recheck(prob: &LmiProblem, asg: &Assignment) -> RecheckReport {
    recheck_shifted(prob, asg, 0.0)
}

/// Solve with verification and margin-jittered retries (x1, x2, x5).
pub fn solve(prob: &LmiProblem, obj: Objective, backend: &dyn Backend) -> SolveOutcome {
    let mut last_fail = String::new();
    for (attempt, mult) in [1.0, 2.0, 5.0].into_iter().enumerate() {
        let scaled;
        let p = if mult == 1.0 {
            prob
        } else {
            scaled = LmiProblem {
                margin: prob.margin * mult,
                ..prob.clone()
            };
            &scaled
        };
        match backend.solve_raw(p, &obj) {
            RawSolve::Solution(flat) => {
                let (x, obj_val) = match obj {
                    Objective::Feasibility => (flat.as_slice(), None),
                    Objective::MaximizeMargin { .. } => {
                        let (xs, t) = flat.split_at(flat.len() - 1);
                        (xs, Some(t[0]))
                    }
                };
                let asg = Assignment::from_flat(&prob.vars, x);
                let report = recheck(prob, &asg);
                if report.passed {
                    return SolveOutcome {
                        status: Status::Feasible,
                        margin_achieved: -report.worst,
                        assignment: Some(asg),
                        objective_value: obj_val,
                        backend: backend.name(),
                        recheck: Some(report),
                        detail: format!("verified on attempt {}", attempt + 1),
                    };
                }
                last_fail = format!(
                    "solution failed independent re-check (violation {:.3e})",
                    report.worst
                );
            }
            RawSolve::Infeasible(msg) => {
                return SolveOutcome {
                    status: Status::Infeasible,
                    assignment: None,
                    margin_achieved: f64::NEG_INFINITY,
                    objective_value: None,
                    backend: backend.name(),
                    recheck: None,
                    detail: msg,
                };
            }
            RawSolve::Failure(msg) => last_fail = msg,
        }
    }
    SolveOutcome {
        status: Status::NumericalFailure,
        assignment: None,
        margin_achieved: f64::NEG_INFINITY,
        objective_value: None,
        backend: backend.name(),
        recheck: None,
        detail: format!("indeterminate after margin-jittered retries: {last_fail}"),
    }
}

/// Cap for the internal margin maximization; the achieved value separates
/// feasible (near the cap for the homogeneous analysis problems) from
/// infeasible (near zero) by many orders of magnitude.
const DECISION_CAP: f64 = 0.1;
/// Threshold on the achieved extra margin below which the problem is
/// declared infeasible at its strictness margin.
const DECISION_THRESHOLD: f64 = 1e-6;

/// Feasibility decision with a robust mechanism per backend: conic
/// backends maximize a capped common margin and decide by its sign; the
/// reference backend runs its own phase-one search.
pub fn decide_feasibility(prob: &LmiProblem, backend: &dyn Backend) -> SolveOutcome {
    if !backend.prefers_margin_objective() {
        return solve(prob, Objective::Feasibility, backend);
    }
    let mut out = solve(
        prob,
        Objective::MaximizeMargin { cap: DECISION_CAP },
        backend,
    );
    if out.status == Status::Feasible {
        let t = out.objective_value.unwrap_or(f64::NEG_INFINITY);
        if t < DECISION_THRESHOLD * DECISION_CAP {
            out.status = Status::Infeasible;
            out.detail = format!("margin maximization stalled at {t:.3e}");
            out.assignment = None;
        }
    }
    out
}

/// Default backend used across the crate.
pub fn default_backend() -> conic::ConicBackend {
    conic::ConicBackend::default()
}
