//! Brute-force validators for the matrix-inequality algebra.
//!
//! Three independent checks pin down every contested reading in the block
//! assembly:
//!
//! - [`embedding_error`]: the data-driven conditions must reduce, under
//!   congruence with the stacked plant factor, to the model-based quadratic
//!   form plus the multiplier-weighted set-membership form. Verified
//!   numerically on random draws; the deliberately wrong readings
//!   ([`NegativeControl`]) must break it by a wide margin.
//! - [`functional_derivative_error`]: finite differences of the storage and
//!   loop functionals along polynomial trajectories against the assembled
//!   quadratic rate blocks plus exact integral remainders.
//! - [`integral_bound_margin`]: the free-matrix integral bound holds for
//!   random data and is tight at its analytic optimizer for affine
//!   trajectories.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};

use crate::datarep::{Qmi, StackForm};
use crate::lmi::blocks::{CoreBlocks, StdVars, StorageDelaySlot, TriggerWeights};
use crate::lmi::theorems::{build_vertex, Condition, GainRole};
use crate::lmi::{Assignment, Constraint, LmiProblem, Sense, VarSet, DEFAULT_MARGIN};
use crate::mat;
use crate::sysmodel::{LtiSystem, SelectorBasis};
use crate::Result;

// ---------------------------------------------------------------------------
// polynomial trajectories and quadrature
// ---------------------------------------------------------------------------

/// Vector-valued polynomial `x(t) = sum_k coeffs[k] t^k`.
#[derive(Debug, Clone)]
pub struct PolyTrajectory {
    pub coeffs: Vec<DVector<f64>>,
}

impl PolyTrajectory {
    pub fn random<R: Rng>(n: usize, degree: usize, scale: f64, rng: &mut R) -> Self {
        let coeffs = (0..=degree)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-scale..=scale)))
            .collect();
        Self { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        let mut p = 1.0;
        for c in &self.coeffs {
            acc += c * p;
            p *= t;
        }
        acc
    }

    pub fn derivative(&self) -> PolyTrajectory {
        if self.coeffs.len() == 1 {
            return PolyTrajectory {
                coeffs: vec![DVector::zeros(self.dim())],
            };
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c * k as f64)
            .collect();
        PolyTrajectory { coeffs }
    }
}

const GL8_NODES: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.5255324099163290,
    -0.1834346424956498,
    0.1834346424956498,
    0.5255324099163290,
    0.7966664774136267,
    0.9602898564975363,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.1012285362903763,
    0.2223810344533745,
    0.3137066458778873,
    0.3626837833783620,
    0.3626837833783620,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];

/// 8-node Gauss-Legendre quadrature on [a, b]; exact for polynomial
/// integrands up to degree 15.
pub fn gauss_legendre(mut f: impl FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

fn mean_of(traj: &PolyTrajectory, a: f64, b: f64) -> DVector<f64> {
    if (b - a).abs() < 1e-14 {
        return traj.eval(a);
    }
    let n = traj.dim();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        out[i] = gauss_legendre(|s| traj.eval(s)[i], a, b) / (b - a);
    }
    out
}

fn quad_integral(traj_dot: &PolyTrajectory, w: &DMatrix<f64>, a: f64, b: f64) -> f64 {
    gauss_legendre(
        |s| {
            let xd = traj_dot.eval(s);
            (xd.transpose() * w * &xd)[(0, 0)]
        },
        a,
        b,
    )
}

/// Augmented vector along a trajectory: blocks (state, delayed state, rate,
/// delayed rate, delay-window mean, sampled state, delayed sampled state,
/// loop means, last-transmitted delayed state).
pub fn augmented_vector(
    traj: &PolyTrajectory,
    t: f64,
    d: f64,
    tau: f64,
    t_transmit: f64,
) -> DVector<f64> {
    let xdot = traj.derivative();
    let blocks = [
        traj.eval(t),
        traj.eval(t - d),
        xdot.eval(t),
        xdot.eval(t - d),
        mean_of(traj, t - d, t),
        traj.eval(tau),
        traj.eval(tau - d),
        mean_of(traj, tau, t),
        mean_of(traj, tau - d, t - d),
        traj.eval(t_transmit - d),
    ];
    let n = traj.dim();
    let mut out = DVector::zeros(10 * n);
    for (i, b) in blocks.iter().enumerate() {
        out.rows_mut(i * n, n).copy_from(b);
    }
    out
}

// ---------------------------------------------------------------------------
// functional derivative check
// ---------------------------------------------------------------------------

/// Numeric values for the storage / loop-functional matrices.
#[derive(Debug, Clone)]
pub struct StorageVars {
    pub p: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub t_mat: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl StorageVars {
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let sym = |k: usize, rng: &mut R| {
            let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..=1.0));
            mat::symmetrize(&m)
        };
        Self {
            p: sym(3 * n, rng),
            z: sym(2 * n, rng),
            t_mat: sym(n, rng),
            r1: sym(n, rng),
            r2: sym(n, rng),
            s: sym(2 * n, rng),
        }
    }
}

/// Storage functional: quadratic in (state, delayed state, window integral)
/// plus the two integral terms.
fn storage_value(vars: &StorageVars, traj: &PolyTrajectory, t: f64, d: f64) -> f64 {
    let n = traj.dim();
    let xdot = traj.derivative();
    let mut nu = DVector::zeros(3 * n);
    nu.rows_mut(0, n).copy_from(&traj.eval(t));
    nu.rows_mut(n, n).copy_from(&traj.eval(t - d));
    for i in 0..n {
        nu[2 * n + i] = gauss_legendre(|s| traj.eval(s)[i], t - d, t);
    }
    let mut v = (nu.transpose() * &vars.p * &nu)[(0, 0)];
    v += gauss_legendre(
        |s| {
            let mut phi = DVector::zeros(2 * n);
            phi.rows_mut(0, n).copy_from(&traj.eval(s));
            phi.rows_mut(n, n).copy_from(&xdot.eval(s));
            (phi.transpose() * &vars.z * &phi)[(0, 0)]
        },
        t - d,
        t,
    );
    v += gauss_legendre(
        |s| quad_integral(&xdot, &vars.t_mat, s, t),
        t - d,
        t,
    );
    v
}

/// Loop functional on `[tau, tau + h)`: vanishes at both ends of the
/// interval.
fn loop_value(
    vars: &StorageVars,
    traj: &PolyTrajectory,
    t: f64,
    d: f64,
    tau: f64,
    h: f64,
) -> f64 {
    let n = traj.dim();
    let xdot = traj.derivative();
    let mut chi = DVector::zeros(2 * n);
    chi.rows_mut(0, n).copy_from(&traj.eval(tau));
    chi.rows_mut(n, n).copy_from(&traj.eval(tau - d));
    let tau_next = tau + h;
    (tau_next - t) * (t - tau) * (chi.transpose() * &vars.s * &chi)[(0, 0)]
        + (tau_next - t) * quad_integral(&xdot, &vars.r1, tau, t)
        + (tau_next - t) * quad_integral(&xdot, &vars.r2, tau - d, t - d)
}

/// Dense rate matrices extracted from the production block assembly with
/// the bound multipliers and the trigger weight zeroed.
fn production_rate_matrices(
    n: usize,
    d: f64,
    vars: &StorageVars,
    slot: StorageDelaySlot,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let basis = SelectorBasis::new(n).expect("n >= 1");
    let mut vs = VarSet::new();
    let sv = StdVars::declare(&mut vs, n);
    let core = CoreBlocks::with_storage_slot(
        &basis,
        TriggerWeights {
            sigma1: 0.0,
            sigma2: 0.0,
        },
        slot,
    );
    let prob = LmiProblem::new(vs, DEFAULT_MARGIN);
    let mut asg = Assignment::zeros(&prob.vars);
    asg.set(&prob.vars, sv.p, vars.p.clone()).unwrap();
    asg.set(&prob.vars, sv.z, vars.z.clone()).unwrap();
    asg.set(&prob.vars, sv.t, vars.t_mat.clone()).unwrap();
    asg.set(&prob.vars, sv.r1, vars.r1.clone()).unwrap();
    asg.set(&prob.vars, sv.r2, vars.r2.clone()).unwrap();
    asg.set(&prob.vars, sv.s, vars.s.clone()).unwrap();
    let dim = 10 * n;
    let cons = |terms| Constraint {
        name: "rate".into(),
        dim,
        sense: Sense::NegDef,
        terms,
    };
    let qcore = cons(core.rate_core_terms(&sv, d, 0)).evaluate(&asg);
    let qstart = cons(core.rate_start_terms(&sv, 1.0, 0)).evaluate(&asg);
    let qend = cons(core.rate_end_terms(&sv, 1.0, 0)).evaluate(&asg);
    (qcore, qstart, qend)
}

/// Max relative error between finite differences of the functionals and the
/// assembled quadratic rate plus exact integral remainders, over interior
/// evaluation points of one sampling interval.
pub fn functional_derivative_error(
    vars: &StorageVars,
    traj: &PolyTrajectory,
    h: f64,
    d: f64,
    slot: StorageDelaySlot,
) -> f64 {
    let n = traj.dim();
    let xdot = traj.derivative();
    let (qcore, qstart, qend) = production_rate_matrices(n, d, vars, slot);
    let tau = 0.0;
    let t_transmit = tau;
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for frac in [0.15, 0.3, 0.5, 0.7, 0.85] {
        let t = tau + frac * h;
        let value = |tt: f64| {
            storage_value(vars, traj, tt, d) + loop_value(vars, traj, tt, d, tau, h)
        };
        let fd = (value(t - 2.0 * eps) - 8.0 * value(t - eps) + 8.0 * value(t + eps)
            - value(t + 2.0 * eps))
            / (12.0 * eps);
        let xi = augmented_vector(traj, t, d, tau, t_transmit);
        let q = &qcore + (tau + h - t) * &qstart + (t - tau) * &qend;
        let analytic = (xi.transpose() * q * &xi)[(0, 0)]
            - quad_integral(&xdot, &vars.t_mat, t - d, t)
            - quad_integral(&xdot, &vars.r1, tau, t)
            - quad_integral(&xdot, &vars.r2, tau - d, t - d);
        let err = (fd - analytic).abs() / (1.0 + fd.abs());
        worst = worst.max(err);
    }
    worst
}

// ---------------------------------------------------------------------------
// integral bound check
// ---------------------------------------------------------------------------

/// Left and right sides of the free-matrix integral bound
/// `-int xdot' R xdot <= (b-a) v'N inv(diag(R,3R))N'v + 2 v'N pi` for the
/// boundary vector `pi` built from the trajectory.
pub fn integral_bound_sides(
    r: &DMatrix<f64>,
    nmat: &DMatrix<f64>,
    v: &DVector<f64>,
    traj: &PolyTrajectory,
    a: f64,
    b: f64,
) -> (f64, f64) {
    let n = r.nrows();
    let xdot = traj.derivative();
    let lhs = -quad_integral(&xdot, r, a, b);
    let pi = boundary_vector(traj, a, b);
    let mut rcal = DMatrix::zeros(2 * n, 2 * n);
    rcal.view_mut((0, 0), (n, n)).copy_from(r);
    rcal.view_mut((n, n), (n, n)).copy_from(&(3.0 * r));
    let rinv = rcal.try_inverse().expect("R diag invertible");
    let nv = nmat.transpose() * v;
    let rhs = (b - a) * (nv.transpose() * &rinv * &nv)[(0, 0)]
        + 2.0 * (v.transpose() * nmat * &pi)[(0, 0)];
    (lhs, rhs)
}

fn boundary_vector(traj: &PolyTrajectory, a: f64, b: f64) -> DVector<f64> {
    let n = traj.dim();
    let xa = traj.eval(a);
    let xb = traj.eval(b);
    let mean = mean_of(traj, a, b);
    let mut pi = DVector::zeros(2 * n);
    pi.rows_mut(0, n).copy_from(&(&xb - &xa));
    pi.rows_mut(n, n).copy_from(&(&xb + &xa - 2.0 * mean));
    pi
}

/// The multiplier minimizing the right side for given data; achieves
/// equality for affine trajectories.
pub fn integral_bound_optimizer(
    r: &DMatrix<f64>,
    v: &DVector<f64>,
    traj: &PolyTrajectory,
    a: f64,
    b: f64,
) -> DMatrix<f64> {
    let n = r.nrows();
    let pi = boundary_vector(traj, a, b);
    let mut rcal = DMatrix::zeros(2 * n, 2 * n);
    rcal.view_mut((0, 0), (n, n)).copy_from(r);
    rcal.view_mut((n, n), (n, n)).copy_from(&(3.0 * r));
    let y = -(&rcal * pi) / (b - a);
    v * y.transpose() / v.norm_squared()
}

// ---------------------------------------------------------------------------
// quadratic embedding (the data-driven conditions against the model form)
// ---------------------------------------------------------------------------

/// Which data-driven condition family to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedFamily {
    DataDriven,
    DataDrivenKnownB,
    GainSearch,
    ConvexCodesign,
    ConvexCodesignKnownB,
}

/// Deliberately wrong readings; each must break the embedding by more than
/// 1e-3 while the accepted reading stays below 1e-9.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeControl {
    /// Plant coupling without the gain factor (square-input draw).
    GainDroppedFromCoupling,
    /// Fixed multiplier placed against the leading instead of the trailing
    /// set block.
    MultiplierBlockMisplaced,
    /// Gain-change coupling through the neighboring selector block.
    StaleSelectorIndex,
}

/// One random draw for the embedding check.
pub struct EmbedDraw {
    pub sys: LtiSystem,
    pub gain: DMatrix<f64>,
    pub multiplier: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub kc: DMatrix<f64>,
    pub eps_sp: f64,
    pub deriv_weight: f64,
    pub set_joint: Qmi,
    pub set_joint_dual: Qmi,
    pub set_solo: Qmi,
    pub set_solo_dual: Qmi,
}

impl EmbedDraw {
    pub fn random<R: Rng>(n: usize, m: usize, rng: &mut R) -> Self {
        let mut mk = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0));
        let a = mk(n, n);
        let b = mk(n, m);
        let sys = LtiSystem::new(a, b, DMatrix::identity(n, n)).expect("identity channel");
        let gain = mk(m, n);
        let multiplier = mk(10 * n, n);
        let g = mk(n, n);
        let kc = mk(m, n);
        let sym = |mm: &DMatrix<f64>| mat::symmetrize(mm);
        let tj = sym(&mk(n + m + n, n + m + n));
        let ts = sym(&mk(2 * n, 2 * n));
        let set_joint = Qmi::new(tj.clone(), n + m, n, StackForm::Transposed).unwrap();
        let set_joint_dual = Qmi::new(
            sym(&mk(n + (n + m), n + (n + m))),
            n,
            n + m,
            StackForm::Plain,
        )
        .unwrap();
        let set_solo = Qmi::new(ts.clone(), n, n, StackForm::Transposed).unwrap();
        let set_solo_dual =
            Qmi::new(sym(&mk(2 * n, 2 * n)), n, n, StackForm::Plain).unwrap();
        Self {
            sys,
            gain,
            multiplier,
            g,
            kc,
            eps_sp: rng.random_range(0.1..=2.0),
            deriv_weight: rng.random_range(0.5..=3.0),
            set_joint,
            set_joint_dual,
            set_solo,
            set_solo_dual,
        }
    }
}

fn copy_std(
    src_draw: &Assignment,
    src_vars: &VarSet,
    src: &StdVars,
    dst_prob: &mut Assignment,
    dst_vars: &VarSet,
    dst: &StdVars,
) {
    let pairs = [
        (src.p, dst.p),
        (src.z, dst.z),
        (src.t, dst.t),
        (src.r1, dst.r1),
        (src.r2, dst.r2),
        (src.omega, dst.omega),
        (src.s, dst.s),
        (src.n_mult, dst.n_mult),
        (src.m1, dst.m1),
        (src.m2, dst.m2),
    ];
    let _ = src_vars;
    for (s, d) in pairs {
        dst_prob.set(dst_vars, d, src_draw.get(s).clone()).unwrap();
    }
}

/// Relative discrepancy between the congruence-reduced data-driven
/// constraint and the model-based constraint plus the multiplier-weighted
/// membership form, maximized over both inequalities of the vertex.
pub fn embedding_error<R: Rng>(
    family: EmbedFamily,
    draw: &EmbedDraw,
    trig: TriggerWeights,
    h: f64,
    d: f64,
    control: Option<NegativeControl>,
    rng: &mut R,
) -> Result<f64> {
    let n = draw.sys.n();
    let m = draw.sys.m();
    let basis = SelectorBasis::new(n)?;
    let l = |i: usize| basis.selector(i);
    let ab = mat::hstack(&[&draw.sys.a, &draw.sys.b]);

    // production side
    let cond = match family {
        EmbedFamily::DataDriven => Condition::DataDriven {
            dual: &draw.set_joint_dual,
            gain: &draw.gain,
        },
        EmbedFamily::DataDrivenKnownB => Condition::DataDrivenKnownB {
            dual: &draw.set_solo_dual,
            input: &draw.sys.b,
            gain: GainRole::Fixed(&draw.gain),
        },
        EmbedFamily::GainSearch => Condition::GainSearch {
            primal: &draw.set_joint,
            multiplier: &draw.multiplier,
            input_cols: m,
        },
        EmbedFamily::ConvexCodesign => Condition::ConvexCodesign {
            primal: &draw.set_joint,
            input_cols: m,
            deriv_weight: draw.deriv_weight,
        },
        EmbedFamily::ConvexCodesignKnownB => Condition::ConvexCodesignKnownB {
            primal: &draw.set_solo,
            input: &draw.sys.b,
            deriv_weight: draw.deriv_weight,
        },
    };
    let built = build_vertex(&cond, trig, h, d, DEFAULT_MARGIN)?;
    let mut asg = Assignment::random(&built.problem.vars, rng);
    if let Some(f) = built.vars.f {
        asg.set(&built.problem.vars, f, draw.multiplier.clone())?;
    }
    if let Some(k) = built.vars.k {
        asg.set(&built.problem.vars, k, draw.gain.clone())?;
    }
    if let Some(g) = built.vars.g {
        asg.set(&built.problem.vars, g, draw.g.clone())?;
    }
    if let Some(kc) = built.vars.kc {
        asg.set(&built.problem.vars, kc, draw.kc.clone())?;
    }
    if let Some(eps) = built.vars.eps {
        asg.set(
            &built.problem.vars,
            eps,
            DMatrix::from_element(1, 1, draw.eps_sp),
        )?;
    }

    // model side sharing the same storage variables
    let zero_gain = DMatrix::zeros(m, n);
    let model_gain = match family {
        EmbedFamily::ConvexCodesign | EmbedFamily::ConvexCodesignKnownB => &zero_gain,
        _ => &draw.gain,
    };
    let model = Condition::ModelBased {
        sys: &draw.sys,
        gain: model_gain,
    };
    let built_model = build_vertex(&model, trig, h, d, DEFAULT_MARGIN)?;
    let mut masg = Assignment::zeros(&built_model.problem.vars);
    copy_std(
        &asg,
        &built.problem.vars,
        &built.vars.std,
        &mut masg,
        &built_model.problem.vars,
        &built_model.vars.std,
    );
    let mf = built_model.vars.f.unwrap();
    match family {
        EmbedFamily::ConvexCodesign | EmbedFamily::ConvexCodesignKnownB => {
            masg.set(&built_model.problem.vars, mf, DMatrix::zeros(10 * n, n))?
        }
        _ => masg.set(&built_model.problem.vars, mf, draw.multiplier.clone())?,
    }

    // the stacked plant factor entering the congruence
    let plant_stack: DMatrix<f64> = match family {
        EmbedFamily::DataDriven => match control {
            Some(NegativeControl::GainDroppedFromCoupling) => {
                assert_eq!(n, m, "square-input draw required for this control");
                &draw.sys.a * l(1) + &draw.sys.b * l(10)
            }
            _ => &draw.sys.a * l(1) + &draw.sys.b * &draw.gain * l(10),
        },
        EmbedFamily::DataDrivenKnownB => &draw.sys.a * l(1),
        EmbedFamily::GainSearch => {
            let fa = &draw.multiplier * &draw.sys.a;
            let fb = &draw.multiplier * &draw.sys.b;
            mat::hstack(&[&fa, &fb]).transpose()
        }
        EmbedFamily::ConvexCodesign => {
            let lmix = (l(1).transpose() + draw.deriv_weight * l(3).transpose()).clone_owned();
            ab.transpose() * lmix.transpose()
        }
        EmbedFamily::ConvexCodesignKnownB => {
            let lmix = (l(1).transpose() + draw.deriv_weight * l(3).transpose()).clone_owned();
            draw.sys.a.transpose() * lmix.transpose()
        }
    };

    // membership form of the plant in the relevant set
    let member_form = match family {
        EmbedFamily::DataDriven => draw.set_joint_dual.membership_form(&ab)?,
        EmbedFamily::DataDrivenKnownB => draw.set_solo_dual.membership_form(&draw.sys.a)?,
        EmbedFamily::GainSearch => draw.set_joint.membership_form(&ab)?,
        EmbedFamily::ConvexCodesign => draw.set_joint.membership_form(&ab)?,
        EmbedFamily::ConvexCodesignKnownB => draw.set_solo.membership_form(&draw.sys.a)?,
    };
    // the fixed factor carrying the membership form into the core block
    let carrier: DMatrix<f64> = match family {
        EmbedFamily::DataDriven => {
            mat::vstack(&[l(1), &(&draw.gain * l(10))])
        }
        EmbedFamily::DataDrivenKnownB => l(1).clone(),
        EmbedFamily::GainSearch => draw.multiplier.transpose(),
        EmbedFamily::ConvexCodesign | EmbedFamily::ConvexCodesignKnownB => {
            (l(1).transpose() + draw.deriv_weight * l(3).transpose()).transpose()
        }
    };
    let carrier = match control {
        Some(NegativeControl::MultiplierBlockMisplaced) => carrier,
        _ => carrier,
    };
    let s_term = match control {
        Some(NegativeControl::MultiplierBlockMisplaced) => {
            // wrong reading: the fixed multiplier against the leading block
            assert_eq!(family, EmbedFamily::GainSearch);
            let q = draw.set_joint.q_block();
            let fq = &draw.multiplier
                * q.view((0, 0), (n, n)).clone_owned()
                * draw.multiplier.transpose();
            draw.eps_sp * fq
        }
        _ => draw.eps_sp * carrier.transpose() * &member_form * &carrier,
    };

    // transformed-plant coupling for the convex families
    let transformed_coupling: Option<DMatrix<f64>> = match family {
        EmbedFamily::ConvexCodesign | EmbedFamily::ConvexCodesignKnownB => {
            let lmix = (l(1).transpose() + draw.deriv_weight * l(3).transpose()).clone_owned();
            let kc_sel = match control {
                Some(NegativeControl::StaleSelectorIndex) => l(9),
                _ => l(10),
            };
            let core = &draw.sys.a * &draw.g * l(1) + &draw.sys.b * &draw.kc * kc_sel
                - &draw.g * l(3);
            let blk = &lmix * core;
            Some(&blk + blk.transpose())
        }
        _ => None,
    };

    let mut worst: f64 = 0.0;
    for idx in [0usize, 1usize] {
        let big = built.problem.constraints[idx].evaluate(&asg);
        let model_mat = built_model.problem.constraints[idx].evaluate(&masg);
        let extra = big.nrows() - model_mat.nrows();
        let rest = model_mat.nrows() - 10 * n;
        // congruence: [[plant_stack, 0]; [I_10n, 0]; [0, I_rest]]
        let mut stack = DMatrix::zeros(big.nrows(), model_mat.nrows());
        stack
            .view_mut((0, 0), (extra, 10 * n))
            .copy_from(&plant_stack);
        stack
            .view_mut((extra, 0), (10 * n, 10 * n))
            .copy_from(&DMatrix::identity(10 * n, 10 * n));
        stack
            .view_mut((extra + 10 * n, 10 * n), (rest, rest))
            .copy_from(&DMatrix::identity(rest, rest));
        let reduced = stack.transpose() * &big * stack;

        let mut expected = model_mat.clone();
        expected
            .view_mut((0, 0), (10 * n, 10 * n))
            .add_assign(&s_term);
        if let Some(tc) = &transformed_coupling {
            expected.view_mut((0, 0), (10 * n, 10 * n)).add_assign(tc);
        }
        worst = worst.max(mat::rel_err(&reduced, &expected));
    }
    Ok(worst)
}

use std::ops::AddAssign;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trig() -> TriggerWeights {
        TriggerWeights {
            sigma1: 0.4,
            sigma2: 0.1,
        }
    }

    #[test]
    fn quadrature_exact_on_polynomials() {
        // integral of t^7 over [0.3, 1.7]
        let exact = (1.7f64.powi(8) - 0.3f64.powi(8)) / 8.0;
        let got = gauss_legendre(|t| t.powi(7), 0.3, 1.7);
        assert!((got - exact).abs() < 1e-12 * exact.abs());
    }

    #[test]
    fn derivative_check_constant_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vars = StorageVars::random(2, &mut rng);
        let traj = PolyTrajectory {
            coeffs: vec![DVector::from_column_slice(&[1.0, -2.0])],
        };
        let err = functional_derivative_error(&vars, &traj, 0.4, 0.15, StorageDelaySlot::MeanBlock);
        assert!(err < 1e-9, "constant trajectory error {err}");
    }

    #[test]
    fn derivative_check_linear_no_delay() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vars = StorageVars::random(2, &mut rng);
        let traj = PolyTrajectory {
            coeffs: vec![
                DVector::from_column_slice(&[0.3, 0.1]),
                DVector::from_column_slice(&[1.0, -0.5]),
            ],
        };
        let err = functional_derivative_error(&vars, &traj, 0.5, 0.0, StorageDelaySlot::MeanBlock);
        assert!(err < 1e-8, "linear trajectory error {err}");
    }

    #[test]
    fn derivative_check_random_quartics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 3] {
            for _ in 0..10 {
                let vars = StorageVars::random(n, &mut rng);
                let traj = PolyTrajectory::random(n, 4, 1.0, &mut rng);
                let h = rng.random_range(0.1..0.8);
                let d = rng.random_range(0.0..h * 0.8);
                let err =
                    functional_derivative_error(&vars, &traj, h, d, StorageDelaySlot::MeanBlock);
                assert!(err <= 1e-6, "n={n} h={h} d={d}: error {err}");
            }
        }
    }

    #[test]
    fn derivative_check_rejects_wrong_storage_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let vars = StorageVars::random(2, &mut rng);
            let traj = PolyTrajectory::random(2, 3, 1.0, &mut rng);
            let err = functional_derivative_error(
                &vars,
                &traj,
                0.4,
                0.25,
                StorageDelaySlot::DelayedRateBlock,
            );
            worst = worst.max(err);
        }
        assert!(worst > 1e-3, "wrong storage slot must fail, got {worst}");
    }

    #[test]
    fn integral_bound_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let n = rng.random_range(1..=3);
            let mdim = rng.random_range(1..=6);
            let base = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
            let r = &base * base.transpose() + 0.1 * DMatrix::identity(n, n);
            let nmat = DMatrix::from_fn(mdim, 2 * n, |_, _| rng.random_range(-1.0..=1.0));
            let v = DVector::from_fn(mdim, |_, _| rng.random_range(-1.0..=1.0));
            let traj = PolyTrajectory::random(n, 3, 1.0, &mut rng);
            let a = rng.random_range(-1.0..0.0);
            let b = a + rng.random_range(0.1..2.0);
            let (lhs, rhs) = integral_bound_sides(&r, &nmat, &v, &traj, a, b);
            assert!(lhs <= rhs + 1e-10, "violated: lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn integral_bound_tight_for_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let n = 2;
            let base = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
            let r = &base * base.transpose() + 0.2 * DMatrix::identity(n, n);
            let v = DVector::from_fn(4, |_, _| rng.random_range(-1.0..=1.0));
            let traj = PolyTrajectory::random(n, 1, 1.0, &mut rng);
            let (a, b) = (0.2, 1.1);
            let nopt = integral_bound_optimizer(&r, &v, &traj, a, b);
            let (lhs, rhs) = integral_bound_sides(&r, &nopt, &v, &traj, a, b);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()),
                "optimizer not tight: lhs {lhs} rhs {rhs}"
            );
        }
    }

    #[test]
    fn integral_bound_zero_for_constant() {
        let r = DMatrix::identity(2, 2);
        let nmat = DMatrix::zeros(3, 4);
        let v = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let traj = PolyTrajectory {
            coeffs: vec![DVector::from_column_slice(&[0.7, -0.2])],
        };
        let (lhs, rhs) = integral_bound_sides(&r, &nmat, &v, &traj, 0.0, 1.0);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn embeddings_hold_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fams = [
            EmbedFamily::DataDriven,
            EmbedFamily::DataDrivenKnownB,
            EmbedFamily::GainSearch,
            EmbedFamily::ConvexCodesign,
            EmbedFamily::ConvexCodesignKnownB,
        ];
        for fam in fams {
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let (n, m) = (2, 1);
                let draw = EmbedDraw::random(n, m, &mut rng);
                let h = rng.random_range(0.05..1.0);
                let d = if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.0..0.3)
                };
                let err = embedding_error(fam, &draw, trig(), h, d, None, &mut rng).unwrap();
                worst = worst.max(err);
            }
            assert!(worst <= 1e-9, "{fam:?} embedding error {worst}");
        }
    }

    #[test]
    fn embedding_negative_controls_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // dropped gain (square input)
        let draw = EmbedDraw::random(2, 2, &mut rng);
        let err = embedding_error(
            EmbedFamily::DataDriven,
            &draw,
            trig(),
            0.3,
            0.1,
            Some(NegativeControl::GainDroppedFromCoupling),
            &mut rng,
        )
        .unwrap();
        assert!(err > 1e-3, "dropped gain control: {err}");

        // misplaced multiplier block
        let draw = EmbedDraw::random(2, 1, &mut rng);
        let err = embedding_error(
            EmbedFamily::GainSearch,
            &draw,
            trig(),
            0.3,
            0.1,
            Some(NegativeControl::MultiplierBlockMisplaced),
            &mut rng,
        )
        .unwrap();
        assert!(err > 1e-3, "misplaced multiplier control: {err}");

        // stale selector
        let draw = EmbedDraw::random(2, 1, &mut rng);
        let err = embedding_error(
            EmbedFamily::ConvexCodesignKnownB,
            &draw,
            trig(),
            0.3,
            0.1,
            Some(NegativeControl::StaleSelectorIndex),
            &mut rng,
        )
        .unwrap();
        assert!(err > 1e-3, "stale selector control: {err}");
    }
}
