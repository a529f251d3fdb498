//! Parameter search drivers: box feasibility over the four delay/sampling
//! vertices and bisection for the largest feasible sampling interval.

use crate::lmi::theorems::{build_box, BuiltProblem, Condition};
use crate::lmi::blocks::TriggerWeights;
use crate::sdp::{solve, Backend, Objective, SolveOutcome, Status};
use crate::sysmodel::DelaySamplingBounds;
use crate::{Error, Result};

/// Joint feasibility of one condition family over all vertices of the box
/// (single shared variable set).
pub fn box_feasible(
    cond: &Condition,
    trig: TriggerWeights,
    bounds: &DelaySamplingBounds,
    margin: f64,
    backend: &dyn Backend,
) -> Result<(SolveOutcome, BuiltProblem)> {
    let built = build_box(cond, trig, bounds, margin)?;
    let outcome = solve(&built.problem, Objective::Feasibility, backend);
    Ok((outcome, built))
}

/// One bisection probe.
#[derive(Debug, Clone)]
pub struct Probe {
    pub h: f64,
    pub status: Status,
}

#[derive(Debug, Clone)]
pub struct BisectOptions {
    /// Grid resolution; the result is exact to one grid cell.
    pub tol: f64,
    /// Bracket growth factor applied when the initial top is feasible.
    pub expand_factor: f64,
    pub max_expansions: usize,
}

impl Default for BisectOptions {
    fn default() -> Self {
        Self {
            tol: 0.01,
            expand_factor: 2.0,
            max_expansions: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BisectOutcome {
    /// Largest verified-feasible grid point.
    pub h_bar: f64,
    /// Whether `h_bar + tol` was probed and came back infeasible (as
    /// opposed to indeterminate or bracket-capped).
    pub upper_infeasible: bool,
    pub probes: Vec<Probe>,
    /// Pairs (h_low, h_high) where a lower point failed while a higher one
    /// succeeded; empty when the probe history is order-consistent.
    pub non_monotone: Vec<(f64, f64)>,
    pub indeterminate_seen: bool,
}

/// Bisection for the largest feasible parameter on the grid
/// `lo + k tol, k = 0..`, expanding the bracket geometrically while the top
/// stays feasible.
///
/// The oracle is three-valued; indeterminate probes are treated as not
/// feasible for the search but recorded. Errors if the bracket start is not
/// feasible.
pub fn bisect_max_feasible<F>(
    mut oracle: F,
    lo: f64,
    hi: f64,
    opts: &BisectOptions,
) -> Result<BisectOutcome>
where
    F: FnMut(f64) -> Status,
{
    if !(hi > lo) || opts.tol <= 0.0 {
        return Err(Error::Invalid("bisection bracket must satisfy hi > lo, tol > 0".into()));
    }
    let grid = |k: usize| lo + k as f64 * opts.tol;
    let mut probes: Vec<Probe> = Vec::new();
    let mut indeterminate_seen = false;
    let mut probe = |k: usize, probes: &mut Vec<Probe>, ind: &mut bool| -> Status {
        let h = grid(k);
        if let Some(p) = probes.iter().find(|p| (p.h - h).abs() < 1e-15) {
            return p.status;
        }
        let status = oracle(h);
        if status == Status::NumericalFailure {
            *ind = true;
        }
        probes.push(Probe { h, status });
        status
    };

    if probe(0, &mut probes, &mut indeterminate_seen) != Status::Feasible {
        return Err(Error::Infeasible(format!(
            "no feasible bracket: infeasible already at {lo}"
        )));
    }

    let mut top_k = ((hi - lo) / opts.tol).ceil() as usize;
    let mut expansions = 0;
    let mut upper_status = probe(top_k, &mut probes, &mut indeterminate_seen);
    while upper_status == Status::Feasible && expansions < opts.max_expansions {
        top_k = ((top_k as f64) * opts.expand_factor).ceil() as usize;
        expansions += 1;
        upper_status = probe(top_k, &mut probes, &mut indeterminate_seen);
    }
    if upper_status == Status::Feasible {
        // bracket capped; report the top as the largest verified point
        return Ok(BisectOutcome {
            h_bar: grid(top_k),
            upper_infeasible: false,
            non_monotone: non_monotone_pairs(&probes),
            probes,
            indeterminate_seen,
        });
    }

    let mut lo_k = 0usize;
    let mut hi_k = top_k;
    while hi_k - lo_k > 1 {
        let mid = lo_k + (hi_k - lo_k) / 2;
        match probe(mid, &mut probes, &mut indeterminate_seen) {
            Status::Feasible => lo_k = mid,
            _ => hi_k = mid,
        }
    }
    let upper_infeasible = probes
        .iter()
        .find(|p| (p.h - grid(hi_k)).abs() < 1e-15)
        .map(|p| p.status == Status::Infeasible)
        .unwrap_or(false);
    Ok(BisectOutcome {
        h_bar: grid(lo_k),
        upper_infeasible,
        non_monotone: non_monotone_pairs(&probes),
        probes,
        indeterminate_seen,
    })
}

fn non_monotone_pairs(probes: &[Probe]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for a in probes {
        for b in probes {
            if a.h < b.h && a.status == Status::Infeasible && b.status == Status::Feasible {
                out.push((a.h, b.h));
            }
        }
    }
    out
}

/// Bisection over the top of the sampling-interval box for one condition
/// family: at each probe `h`, the joint problem over
/// `[h_lo, h] x [d_lo, d_hi]` is solved with a shared variable set.
pub struct MsiSearch<'a> {
    pub trig: TriggerWeights,
    pub h_lo: f64,
    pub d_lo: f64,
    pub d_hi: f64,
    pub margin: f64,
    pub backend: &'a dyn Backend,
}

impl MsiSearch<'_> {
    pub fn run(
        &self,
        cond: &Condition,
        bracket: (f64, f64),
        opts: &BisectOptions,
    ) -> Result<BisectOutcome> {
        let oracle = |h: f64| -> Status {
            match DelaySamplingBounds::new(self.d_lo, self.d_hi, self.h_lo, h.max(self.h_lo)) {
                Ok(bounds) => match box_feasible(cond, self.trig, &bounds, self.margin, self.backend)
                {
                    Ok((out, _)) => out.status,
                    Err(_) => Status::NumericalFailure,
                },
                Err(_) => Status::NumericalFailure,
            }
        };
        bisect_max_feasible(oracle, bracket.0, bracket.1, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_threshold() {
        let oracle = |h: f64| {
            if h <= 0.5 {
                Status::Feasible
            } else {
                Status::Infeasible
            }
        };
        let opts = BisectOptions {
            tol: 0.01,
            ..Default::default()
        };
        let out = bisect_max_feasible(oracle, 0.05, 1.0, &opts).unwrap();
        assert!((out.h_bar - 0.5).abs() <= 0.01 + 1e-12);
        assert!(out.upper_infeasible);
        assert!(out.non_monotone.is_empty());

        // tightening the grid moves the answer by at most the old tol
        let fine = BisectOptions {
            tol: 0.001,
            ..Default::default()
        };
        let out2 = bisect_max_feasible(oracle, 0.05, 1.0, &fine).unwrap();
        assert!((out2.h_bar - out.h_bar).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn bracket_expansion() {
        let oracle = |h: f64| {
            if h <= 3.7 {
                Status::Feasible
            } else {
                Status::Infeasible
            }
        };
        let out = bisect_max_feasible(oracle, 0.1, 1.0, &BisectOptions::default()).unwrap();
        assert!((out.h_bar - 3.7).abs() <= 0.01 + 1e-12);
    }

    #[test]
    fn infeasible_start_rejected() {
        let oracle = |_h: f64| Status::Infeasible;
        assert!(bisect_max_feasible(oracle, 0.1, 1.0, &BisectOptions::default()).is_err());
    }
}
