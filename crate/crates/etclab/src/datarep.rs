//! Experiment data, noise sets, and the quadratic matrix inequality (QMI)
//! representations of every system consistent with the measurements.
//!
//! The measured samples obey `Xdot = A X + B U + Bw W` with the disturbance
//! matrix `W` unknown but confined to a quadratic set. [`consistency_qmi`]
//! turns the data into the set of all `[A B]` pairs compatible with them;
//! [`consistency_qmi_known_b`] does the same for `A` alone when `B` is
//! known. [`Qmi::dualize`] exchanges the transposed-stack form for the
//! plain-stack form required by the analysis conditions.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};

use crate::mat;
use crate::sysmodel::LtiSystem;
use crate::{Error, Result};

/// Quadratic disturbance set `{ W : [W^T; I]^T [qd sd; * rd] [W^T; I] >= 0 }`.
#[derive(Debug, Clone)]
pub struct NoiseBound {
    pub qd: DMatrix<f64>,
    pub sd: DMatrix<f64>,
    pub rd: DMatrix<f64>,
}

impl NoiseBound {
    pub fn new(qd: DMatrix<f64>, sd: DMatrix<f64>, rd: DMatrix<f64>) -> Result<Self> {
        let rho = qd.nrows();
        let n_w = rd.nrows();
        if qd.ncols() != rho || rd.ncols() != n_w || sd.nrows() != rho || sd.ncols() != n_w {
            return Err(Error::Dim(
                "noise bound blocks must be (rho x rho, rho x n_w, n_w x n_w)".into(),
            ));
        }
        if mat::max_eig(&qd) >= 0.0 {
            return Err(Error::Invalid(
                "noise bound requires a negative definite first block".into(),
            ));
        }
        Ok(Self { qd, sd, rd })
    }

    /// Bound for `rho` samples of a disturbance with per-entry amplitude
    /// `wbar`: first block `-I`, coupling zero, last block `wbar^2 rho I`.
    pub fn interval(wbar: f64, rho: usize, n_w: usize) -> Result<Self> {
        if wbar < 0.0 {
            return Err(Error::Invalid("amplitude bound must be nonnegative".into()));
        }
        if rho == 0 {
            return Err(Error::Invalid("sample count must be at least 1".into()));
        }
        Ok(Self {
            qd: -DMatrix::identity(rho, rho),
            sd: DMatrix::zeros(rho, n_w),
            rd: wbar * wbar * rho as f64 * DMatrix::identity(n_w, n_w),
        })
    }

    pub fn rho(&self) -> usize {
        self.qd.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.rd.nrows()
    }

    /// Quadratic form whose positive semidefiniteness admits `w`.
    pub fn membership_form(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        mat::symmetrize(
            &(w * &self.qd * w.transpose()
                + w * &self.sd
                + self.sd.transpose() * w.transpose()
                + &self.rd),
        )
    }

    pub fn admits(&self, w: &DMatrix<f64>, tol: f64) -> bool {
        mat::min_eig(&self.membership_form(w)) >= -tol
    }
}

/// Per-interval excitation held constant between samples.
#[derive(Debug, Clone)]
pub enum SignalPolicy {
    Zero,
    /// I.i.d. uniform on `[-amplitude, amplitude]`, one draw per interval.
    UniformIid { amplitude: f64 },
    /// Explicit per-interval values (column k held on `[T_k, T_{k+1})`).
    Held(Vec<DVector<f64>>),
}

impl SignalPolicy {
    fn draw<R: Rng>(&self, k: usize, dim: usize, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            SignalPolicy::Zero => Ok(DVector::zeros(dim)),
            SignalPolicy::UniformIid { amplitude } => Ok(DVector::from_fn(dim, |_, _| {
                rng.random_range(-*amplitude..=*amplitude)
            })),
            SignalPolicy::Held(vals) => vals
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("held policy has no value for interval {k}")))
                .and_then(|v| {
                    if v.len() == dim {
                        Ok(v)
                    } else {
                        Err(Error::Dim(format!(
                            "held value {k} has dimension {}, expected {dim}",
                            v.len()
                        )))
                    }
                }),
        }
    }
}

/// Matrices of sampled derivatives, states and inputs, one column per
/// sample; the true disturbance samples are retained only for tests.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub xdot: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub times: Vec<f64>,
    pub w_true: Option<DMatrix<f64>>,
}

impl ExperimentData {
    pub fn rho(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    /// Residual `||Xdot - A X - B U - Bw W||` relative to the data scale.
    pub fn consistency_residual(&self, sys: &LtiSystem) -> Option<f64> {
        let w = self.w_true.as_ref()?;
        let resid = &self.xdot - &sys.a * &self.x - &sys.b * &self.u - &sys.bw * w;
        Some(resid.norm() / (1.0 + self.xdot.norm()))
    }

    /// Writes one row per sample: `t, x1..xn, xdot1..xdotn, u1..um[, w1..]`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let (n, m) = (self.n(), self.m());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("xdot{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        if let Some(w) = &self.w_true {
            header.extend((1..=w.nrows()).map(|i| format!("w{i}")));
        }
        wtr.write_record(&header)?;
        for k in 0..self.rho() {
            let mut row = vec![format!("{:.17e}", self.times[k])];
            row.extend(self.x.column(k).iter().map(|v| format!("{v:.17e}")));
            row.extend(self.xdot.column(k).iter().map(|v| format!("{v:.17e}")));
            row.extend(self.u.column(k).iter().map(|v| format!("{v:.17e}")));
            if let Some(w) = &self.w_true {
                row.extend(w.column(k).iter().map(|v| format!("{v:.17e}")));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the format written by [`ExperimentData::write_csv`]; the header
    /// determines the dimensions and whether disturbance columns exist.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Config("experiment CSV must start with a 't' column".into()));
        }
        let n = header.iter().filter(|h| h.starts_with('x') && !h.starts_with("xdot")).count();
        let n_dot = header.iter().filter(|h| h.starts_with("xdot")).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        let n_w = header.iter().filter(|h| h.starts_with('w')).count();
        if n == 0 || n_dot != n || 1 + 2 * n + m + n_w != header.len() {
            return Err(Error::Config(format!(
                "unrecognized experiment CSV header: {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("bad number in CSV: {e}")))?;
            if vals.len() != header.len() {
                return Err(Error::Config("ragged experiment CSV row".into()));
            }
            times.push(vals[0]);
            cols.push(vals[1..].to_vec());
        }
        let rho = times.len();
        let grab = |off: usize, rows: usize| -> DMatrix<f64> {
            DMatrix::from_fn(rows, rho, |r, c| cols[c][off + r])
        };
        let x = grab(0, n);
        let xdot = grab(n, n);
        let u = grab(2 * n, m);
        let w_true = if n_w > 0 { Some(grab(2 * n + m, n_w)) } else { None };
        Ok(Self { xdot, x, u, times, w_true })
    }
}

/// Steps-per-interval divisor for the data-generation integrator: the RK4
/// step is the smallest schedule interval divided by this.
const COLLECT_STEPS_PER_INTERVAL: usize = 100;

fn rk4_step_affine(a: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, dt: f64) -> DVector<f64> {
    let f = |x: &DVector<f64>| a * x + c;
    let k1 = f(x);
    let k2 = f(&(x + 0.5 * dt * &k1));
    let k3 = f(&(x + 0.5 * dt * &k2));
    let k4 = f(&(x + dt * &k3));
    x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Simulates the perturbed plant over a strictly increasing schedule and
/// records exact derivative samples `Xdot_i = A x_i + B u_i + Bw w_i`.
///
/// Inputs and disturbances are held constant over each interval. The state
/// at the first schedule instant is `x0`.
pub fn collect_data<R: Rng>(
    sys: &LtiSystem,
    input: &SignalPolicy,
    noise: &SignalPolicy,
    schedule: &[f64],
    x0: &DVector<f64>,
    rng: &mut R,
    retain_disturbance: bool,
) -> Result<ExperimentData> {
    if schedule.is_empty() {
        return Err(Error::Invalid("empty sampling schedule".into()));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("schedule must be strictly increasing".into()));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dim("initial state dimension mismatch".into()));
    }
    let rho = schedule.len();
    let (n, m, n_w) = (sys.n(), sys.m(), sys.n_w());
    let min_dt = schedule
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let step = if rho == 1 { 1.0 } else { min_dt / COLLECT_STEPS_PER_INTERVAL as f64 };

    let mut x = DMatrix::zeros(n, rho);
    let mut xdot = DMatrix::zeros(n, rho);
    let mut u = DMatrix::zeros(m, rho);
    let mut w = DMatrix::zeros(n_w, rho);

    let mut state = x0.clone();
    for k in 0..rho {
        let uk = input.draw(k, m, rng)?;
        let wk = noise.draw(k, n_w, rng)?;
        x.set_column(k, &state);
        u.set_column(k, &uk);
        w.set_column(k, &wk);
        xdot.set_column(k, &(&sys.a * &state + &sys.b * &uk + &sys.bw * &wk));
        if k + 1 < rho {
            let span = schedule[k + 1] - schedule[k];
            let nsteps = (span / step).round().max(1.0) as usize;
            let dt = span / nsteps as f64;
            if !dt.is_finite() || dt <= 0.0 {
                return Err(Error::Numerical("integrator step collapsed".into()));
            }
            let c = &sys.b * &uk + &sys.bw * &wk;
            for _ in 0..nsteps {
                state = rk4_step_affine(&sys.a, &c, &state, dt);
                if !state.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numerical("data-generation integrator diverged".into()));
                }
            }
        }
    }

    Ok(ExperimentData {
        xdot,
        x,
        u,
        times: schedule.to_vec(),
        w_true: if retain_disturbance { Some(w) } else { None },
    })
}

/// Which way the unknown matrix is stacked against the identity in the
/// quadratic membership form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackForm {
    /// `[M^T; I]`: the form produced directly from data.
    Transposed,
    /// `[M; I]`: the dual form used inside the analysis conditions.
    Plain,
}

/// A quadratic matrix inequality describing a set of matrices.
///
/// For `Transposed` form the members are `M` with
/// `[M^T; I]^T theta [M^T; I] >= 0` where `M` is `b2 x b1`; for `Plain`
/// form the members satisfy `[M; I]^T theta [M; I] >= 0` with `M` of size
/// `b1 x b2`. Both forms describe `b2 x b1`-shaped... the member shape is
/// `rows() x cols()` below.
#[derive(Debug, Clone)]
pub struct Qmi {
    theta: DMatrix<f64>,
    b1: usize,
    b2: usize,
    form: StackForm,
}

/// Scale-invariant default tolerance for QMI membership.
pub const QMI_MEMBERSHIP_TOL: f64 = 1e-8;

impl Qmi {
    pub fn new(theta: DMatrix<f64>, b1: usize, b2: usize, form: StackForm) -> Result<Self> {
        if theta.nrows() != b1 + b2 || theta.ncols() != b1 + b2 {
            return Err(Error::Dim(format!(
                "theta is {}x{}, expected {0}x{0} with blocks {b1}+{b2}",
                theta.nrows(),
                theta.ncols()
            )));
        }
        Ok(Self {
            theta: mat::symmetrize(&theta),
            b1,
            b2,
            form,
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn form(&self) -> StackForm {
        self.form
    }

    pub fn block_sizes(&self) -> (usize, usize) {
        (self.b1, self.b2)
    }

    /// Shape of a member matrix.
    pub fn member_shape(&self) -> (usize, usize) {
        match self.form {
            StackForm::Transposed => (self.b2, self.b1),
            StackForm::Plain => (self.b1, self.b2),
        }
    }

    /// Leading diagonal block (`b1 x b1`).
    pub fn q_block(&self) -> DMatrix<f64> {
        self.theta.view((0, 0), (self.b1, self.b1)).into()
    }

    /// Off-diagonal block (`b1 x b2`).
    pub fn s_block(&self) -> DMatrix<f64> {
        self.theta.view((0, self.b1), (self.b1, self.b2)).into()
    }

    /// Trailing diagonal block (`b2 x b2`).
    pub fn r_block(&self) -> DMatrix<f64> {
        self.theta.view((self.b1, self.b1), (self.b2, self.b2)).into()
    }

    fn stack(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (rows, cols) = self.member_shape();
        if m.nrows() != rows || m.ncols() != cols {
            return Err(Error::Dim(format!(
                "member is {}x{}, expected {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        let eye = DMatrix::identity(self.b2, self.b2);
        Ok(match self.form {
            StackForm::Transposed => mat::vstack(&[&m.transpose(), &eye]),
            StackForm::Plain => mat::vstack(&[m, &eye]),
        })
    }

    /// The symmetric form whose positive semidefiniteness admits `m`.
    pub fn membership_form(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let s = self.stack(m)?;
        Ok(mat::symmetrize(&(s.transpose() * &self.theta * s)))
    }

    /// Membership with the scale-invariant tolerance
    /// `min_eig >= -tol (1 + ||theta||)`.
    pub fn contains(&self, m: &DMatrix<f64>, tol: f64) -> Result<bool> {
        let form = self.membership_form(m)?;
        Ok(mat::min_eig(&form) >= -tol * (1.0 + mat::sym_norm(&self.theta)))
    }

    /// Signed distance of `m` from the membership boundary: the minimum
    /// eigenvalue of the membership form.
    pub fn membership_margin(&self, m: &DMatrix<f64>) -> Result<f64> {
        Ok(mat::min_eig(&self.membership_form(m)?))
    }

    /// Eigenvalue signature report used to gate dualization.
    pub fn signature(&self) -> SignatureReport {
        SignatureReport::of(&self.theta)
    }

    /// Exchanges the stack form via the partitioned inverse.
    ///
    /// Requires the signature to show exactly `expected_positive`
    /// positive eigenvalues and an invertible matrix, and rejects condition
    /// numbers above 1e12.
    pub fn dualize(&self, expected_positive: usize) -> Result<Qmi> {
        let sig = self.signature();
        if !sig.invertible {
            return Err(Error::Signature(
                "cannot dualize: matrix numerically singular".into(),
            ));
        }
        if sig.positive != expected_positive {
            return Err(Error::Signature(format!(
                "cannot dualize: {} positive eigenvalues, expected {expected_positive}",
                sig.positive
            )));
        }
        let cond = mat::sym_cond(&self.theta);
        if cond > 1e12 {
            return Err(Error::IllConditioned { cond });
        }
        let inv = self
            .theta
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("inversion failed".into()))?;
        let qt = inv.view((0, 0), (self.b1, self.b1)).clone_owned();
        let st = inv.view((0, self.b1), (self.b1, self.b2)).clone_owned();
        let rt = inv
            .view((self.b1, self.b1), (self.b2, self.b2))
            .clone_owned();
        let top = mat::hstack(&[&(-&rt), &st.transpose()]);
        let bot = mat::hstack(&[&st, &(-&qt)]);
        let theta_dual = mat::vstack(&[&top, &bot]);
        Qmi::new(
            theta_dual,
            self.b2,
            self.b1,
            match self.form {
                StackForm::Transposed => StackForm::Plain,
                StackForm::Plain => StackForm::Transposed,
            },
        )
    }
}

/// Eigenvalue signature of a symmetric matrix with a scale-relative zero
/// classification tolerance of `1e-9 ||theta||`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureReport {
    pub invertible: bool,
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
    pub min_abs: f64,
    pub norm: f64,
}

impl SignatureReport {
    pub fn of(theta: &DMatrix<f64>) -> Self {
        let ev = mat::sym_eigenvalues(theta);
        let norm = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = 1e-9 * norm.max(f64::MIN_POSITIVE);
        let mut positive = 0;
        let mut negative = 0;
        let mut zero = 0;
        let mut min_abs = f64::INFINITY;
        for v in ev.iter() {
            min_abs = min_abs.min(v.abs());
            if *v > tol {
                positive += 1;
            } else if *v < -tol {
                negative += 1;
            } else {
                zero += 1;
            }
        }
        SignatureReport {
            invertible: zero == 0,
            positive,
            negative,
            zero,
            min_abs,
            norm,
        }
    }

    /// Invertible with exactly `n_w` positive eigenvalues.
    pub fn satisfies(&self, n_w: usize) -> bool {
        self.invertible && self.positive == n_w
    }
}

fn weighted_outer(
    left: &DMatrix<f64>,
    nb: &NoiseBound,
) -> DMatrix<f64> {
    // left = [col1 col2] with widths (rho, n_w); returns left * [qd sd; * rd] * left^T.
    let rho = nb.rho();
    let n_w = nb.n_w();
    let c1 = left.view((0, 0), (left.nrows(), rho)).clone_owned();
    let c2 = left.view((0, rho), (left.nrows(), n_w)).clone_owned();
    let m = &c1 * &nb.qd * c1.transpose()
        + &c1 * &nb.sd * c2.transpose()
        + &c2 * nb.sd.transpose() * c1.transpose()
        + &c2 * &nb.rd * c2.transpose();
    mat::symmetrize(&m)
}

/// QMI for the set of `[A B]` pairs consistent with the data and noise
/// bound; block sizes `(n+m, n)`, transposed stack form.
pub fn consistency_qmi(data: &ExperimentData, nb: &NoiseBound, bw: &DMatrix<f64>) -> Result<Qmi> {
    let (n, m, rho) = (data.n(), data.m(), data.rho());
    if nb.rho() != rho {
        return Err(Error::Dim(format!(
            "noise bound covers {} samples, data has {rho}",
            nb.rho()
        )));
    }
    if bw.nrows() != n || bw.ncols() != nb.n_w() {
        return Err(Error::Dim("disturbance matrix shape mismatch".into()));
    }
    // [ -Z  0 ; Xdot  Bw ] with Z = [X; U].
    let z = mat::vstack(&[&data.x, &data.u]);
    let zero = DMatrix::zeros(n + m, nb.n_w());
    let top = mat::hstack(&[&(-&z), &zero]);
    let bot = mat::hstack(&[&data.xdot, bw]);
    let theta = weighted_outer(&mat::vstack(&[&top, &bot]), nb);
    Qmi::new(theta, n + m, n, StackForm::Transposed)
}

/// QMI for the set of `A` matrices consistent with the data when `B` is
/// known; block sizes `(n, n)`, transposed stack form.
pub fn consistency_qmi_known_b(
    data: &ExperimentData,
    nb: &NoiseBound,
    b: &DMatrix<f64>,
    bw: &DMatrix<f64>,
) -> Result<Qmi> {
    let (n, rho) = (data.n(), data.rho());
    if nb.rho() != rho {
        return Err(Error::Dim(format!(
            "noise bound covers {} samples, data has {rho}",
            nb.rho()
        )));
    }
    if b.nrows() != n || b.ncols() != data.m() {
        return Err(Error::Dim("known input matrix shape mismatch".into()));
    }
    if bw.nrows() != n || bw.ncols() != nb.n_w() {
        return Err(Error::Dim("disturbance matrix shape mismatch".into()));
    }
    let resid = &data.xdot - b * &data.u;
    let zero = DMatrix::zeros(n, nb.n_w());
    let top = mat::hstack(&[&(-&data.x), &zero]);
    let bot = mat::hstack(&[&resid, bw]);
    let theta = weighted_outer(&mat::vstack(&[&top, &bot]), nb);
    Qmi::new(theta, n, n, StackForm::Transposed)
}

/// Forward-difference derivative estimates with per-column error bounds.
///
/// For each interval the bound is
/// `abar dt / 2 * (abar ||x_i|| + (1 + abar dt bbar / 3) ||u_i||)`
/// where `abar`, `bbar` bound the spectral norms of the (unknown) state and
/// input matrices. Returns `rho - 1` estimate columns.
pub fn estimate_derivatives(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    times: &[f64],
    abar: f64,
    bbar: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let rho = x.ncols();
    if rho < 2 {
        return Err(Error::Invalid(
            "derivative estimation needs at least 2 samples".into(),
        ));
    }
    if times.len() != rho || u.ncols() != rho {
        return Err(Error::Dim("sample count mismatch".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("times must be strictly increasing".into()));
    }
    let n = x.nrows();
    let mut est = DMatrix::zeros(n, rho - 1);
    let mut bounds = Vec::with_capacity(rho - 1);
    for k in 0..rho - 1 {
        let dt = times[k + 1] - times[k];
        let diff = (x.column(k + 1) - x.column(k)) / dt;
        est.set_column(k, &diff);
        let xn = x.column(k).norm();
        let un = u.column(k).norm();
        bounds.push(abar * dt / 2.0 * (abar * xn + (1.0 + abar * dt * bbar / 3.0) * un));
    }
    Ok((est, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn interval_bound_values() {
        let nb = NoiseBound::interval(0.01, 100, 2).unwrap();
        assert_relative_eq!(nb.rd[(0, 0)], 0.01, epsilon = 1e-15);
        assert_relative_eq!(nb.rd[(1, 1)], 0.01, epsilon = 1e-15);
        assert_eq!(nb.sd.norm(), 0.0);
        // Zero amplitude admits only W = 0.
        let nb0 = NoiseBound::interval(0.0, 5, 1).unwrap();
        assert_eq!(nb0.rd.norm(), 0.0);
        assert!(nb0.admits(&DMatrix::zeros(1, 5), 1e-12));
        assert!(!nb0.admits(&DMatrix::from_element(1, 5, 1e-3), 1e-12));
    }

    #[test]
    fn interval_bound_admits_bounded_samples() {
        let wbar = 0.05;
        let nb = NoiseBound::interval(wbar, 40, 2).unwrap();
        let mut r = rng(7);
        for _ in 0..1000 {
            let w = DMatrix::from_fn(2, 40, |_, _| r.random_range(-wbar..=wbar));
            assert!(nb.admits(&w, 1e-12));
        }
    }

    #[test]
    fn collect_zero_everything() {
        let sys = presets::example1_plant();
        let mut r = rng(1);
        let data = collect_data(
            &sys,
            &SignalPolicy::Zero,
            &SignalPolicy::Zero,
            &[0.0, 1.0, 2.0],
            &DVector::zeros(2),
            &mut r,
            true,
        )
        .unwrap();
        assert_eq!(data.x.norm(), 0.0);
        assert_eq!(data.xdot.norm(), 0.0);
    }

    #[test]
    fn collect_single_sample_matches_matvec() {
        let sys = presets::example1_plant();
        let mut r = rng(2);
        let x0 = DVector::from_column_slice(&[1.0, 0.0]);
        let data = collect_data(
            &sys,
            &SignalPolicy::Held(vec![DVector::from_element(1, 1.0)]),
            &SignalPolicy::Zero,
            &[0.0],
            &x0,
            &mut r,
            false,
        )
        .unwrap();
        // Independent oracle: single matrix-vector product.
        let expected = &sys.a * &x0 + &sys.b * DVector::from_element(1, 1.0);
        assert_relative_eq!(data.xdot.column(0).norm(), expected.norm(), epsilon = 1e-15);
        assert_relative_eq!((data.xdot.column(0) - expected).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn collect_respects_noise_amplitude_and_consistency() {
        let sys = presets::example1_plant();
        let mut r = rng(3);
        let data = collect_data(
            &sys,
            &SignalPolicy::UniformIid { amplitude: 1.0 },
            &SignalPolicy::UniformIid { amplitude: 0.01 },
            &presets::example1_schedule(),
            &DVector::zeros(2),
            &mut r,
            true,
        )
        .unwrap();
        let w = data.w_true.as_ref().unwrap();
        assert!(w.iter().all(|v| v.abs() <= 0.01));
        assert!(data.consistency_residual(&sys).unwrap() < 1e-9);
    }

    #[test]
    fn collect_rejects_bad_schedule() {
        let sys = presets::example1_plant();
        let mut r = rng(4);
        assert!(collect_data(
            &sys,
            &SignalPolicy::Zero,
            &SignalPolicy::Zero,
            &[],
            &DVector::zeros(2),
            &mut r,
            false
        )
        .is_err());
        assert!(collect_data(
            &sys,
            &SignalPolicy::Zero,
            &SignalPolicy::Zero,
            &[0.0, 0.0],
            &DVector::zeros(2),
            &mut r,
            false
        )
        .is_err());
    }

    #[test]
    fn consistency_qmi_single_sample_expansion() {
        // For one sample with unit-interval noise blocks the assembled
        // matrix must equal -[Z; Xdot][Z; Xdot]^T + blkdiag(0, r I).
        let sys = presets::example1_plant();
        let mut r = rng(5);
        let data = collect_data(
            &sys,
            &SignalPolicy::Held(vec![DVector::from_element(1, 0.7)]),
            &SignalPolicy::Zero,
            &[0.0],
            &DVector::from_column_slice(&[0.3, -0.4]),
            &mut r,
            false,
        )
        .unwrap();
        let rd = 0.5;
        let nb = NoiseBound::new(
            -DMatrix::identity(1, 1),
            DMatrix::zeros(1, 2),
            rd * DMatrix::identity(2, 2),
        )
        .unwrap();
        let qmi = consistency_qmi(&data, &nb, &DMatrix::identity(2, 2)).unwrap();
        let zx = mat::vstack(&[&data.x, &data.u, &(-&data.xdot)]);
        let mut expected = -&zx * zx.transpose();
        for i in 0..2 {
            expected[(3 + i, 3 + i)] += rd;
        }
        assert_relative_eq!((qmi.theta() - expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn true_pair_is_member() {
        let sys = presets::example1_plant();
        let mut r = rng(6);
        let wbar = 0.01;
        let data = collect_data(
            &sys,
            &SignalPolicy::UniformIid { amplitude: 1.0 },
            &SignalPolicy::UniformIid { amplitude: wbar },
            &presets::example1_schedule(),
            &DVector::zeros(2),
            &mut r,
            true,
        )
        .unwrap();
        let nb = NoiseBound::interval(wbar, data.rho(), 2).unwrap();
        let qmi = consistency_qmi(&data, &nb, &sys.bw).unwrap();
        let ab = mat::hstack(&[&sys.a, &sys.b]);
        assert!(qmi.contains(&ab, QMI_MEMBERSHIP_TOL).unwrap());

        let bar = consistency_qmi_known_b(&data, &nb, &sys.b, &sys.bw).unwrap();
        assert!(bar.contains(&sys.a, QMI_MEMBERSHIP_TOL).unwrap());
    }

    #[test]
    fn known_b_noiseless_boundary() {
        // Exact B, no noise, rd = 0: the true A sits on the membership
        // boundary (form is exactly zero).
        let sys = presets::example1_plant();
        let mut r = rng(7);
        let data = collect_data(
            &sys,
            &SignalPolicy::UniformIid { amplitude: 1.0 },
            &SignalPolicy::Zero,
            &[0.0, 1.0, 2.0, 3.0, 4.5],
            &DVector::from_column_slice(&[1.0, -1.0]),
            &mut r,
            false,
        )
        .unwrap();
        let nb = NoiseBound::interval(0.0, data.rho(), 2).unwrap();
        let qmi = consistency_qmi_known_b(&data, &nb, &sys.b, &sys.bw).unwrap();
        let form = qmi.membership_form(&sys.a).unwrap();
        assert!(form.norm() < 1e-16 * (1.0 + qmi.theta().norm()) + 1e-10);
    }

    #[test]
    fn known_b_set_contains_projected_pairs() {
        // Every [A B_true] member of the joint set must place A in the
        // known-B set on the same data.
        let sys = presets::example1_plant();
        let mut r = rng(8);
        let wbar = 0.05;
        let data = collect_data(
            &sys,
            &SignalPolicy::UniformIid { amplitude: 1.0 },
            &SignalPolicy::UniformIid { amplitude: wbar },
            &presets::example1_schedule(),
            &DVector::zeros(2),
            &mut r,
            false,
        )
        .unwrap();
        let nb = NoiseBound::interval(wbar, data.rho(), 2).unwrap();
        let joint = consistency_qmi(&data, &nb, &sys.bw).unwrap();
        let solo = consistency_qmi_known_b(&data, &nb, &sys.b, &sys.bw).unwrap();
        let mut hits = 0;
        for _ in 0..400 {
            let da = DMatrix::from_fn(2, 2, |_, _| r.random_range(-0.02..=0.02));
            let a = &sys.a + da;
            let ab = mat::hstack(&[&a, &sys.b]);
            if joint.contains(&ab, QMI_MEMBERSHIP_TOL).unwrap() {
                hits += 1;
                assert!(solo.contains(&a, QMI_MEMBERSHIP_TOL).unwrap());
            }
        }
        assert!(hits > 10, "perturbation scale produced no members");
    }

    #[test]
    fn signature_reports() {
        let theta = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0, -1.0]));
        let sig = SignatureReport::of(&theta);
        assert!(sig.satisfies(1));
        assert_eq!((sig.positive, sig.negative, sig.zero), (1, 2, 0));

        let theta = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0, -1.0]));
        let sig = SignatureReport::of(&theta);
        assert!(!sig.invertible);
        assert!(!sig.satisfies(1));
    }

    #[test]
    fn example_data_signature_passes() {
        let sys = presets::example1_plant();
        let mut r = rng(9);
        for wbar in [0.005, 0.05] {
            let data = collect_data(
                &sys,
                &SignalPolicy::UniformIid { amplitude: 1.0 },
                &SignalPolicy::UniformIid { amplitude: wbar },
                &presets::example1_schedule(),
                &DVector::zeros(2),
                &mut r,
                false,
            )
            .unwrap();
            let nb = NoiseBound::interval(wbar, data.rho(), 2).unwrap();
            let qmi = consistency_qmi(&data, &nb, &sys.bw).unwrap();
            assert!(qmi.signature().satisfies(2), "joint set signature at {wbar}");
            let bar = consistency_qmi_known_b(&data, &nb, &sys.b, &sys.bw).unwrap();
            assert!(bar.signature().satisfies(2), "known-B signature at {wbar}");
        }
    }

    #[test]
    fn dualize_diagonal_example() {
        let theta = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        let qmi = Qmi::new(theta, 1, 1, StackForm::Transposed).unwrap();
        let dual = qmi.dualize(1).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 1.0]);
        assert_relative_eq!((dual.theta() - expected).norm(), 0.0, epsilon = 1e-14);
        assert_eq!(dual.form(), StackForm::Plain);
    }

    #[test]
    fn dualize_round_trip() {
        let sys = presets::example1_plant();
        let mut r = rng(10);
        let data = collect_data(
            &sys,
            &SignalPolicy::UniformIid { amplitude: 1.0 },
            &SignalPolicy::UniformIid { amplitude: 0.01 },
            &presets::example1_schedule(),
            &DVector::zeros(2),
            &mut r,
            false,
        )
        .unwrap();
        let nb = NoiseBound::interval(0.01, data.rho(), 2).unwrap();
        let qmi = consistency_qmi(&data, &nb, &sys.bw).unwrap();
        let dual = qmi.dualize(2).unwrap();
        let back = dual.dualize(dual.signature().positive).unwrap();
        assert!(mat::rel_err(back.theta(), qmi.theta()) < 1e-9);
        assert_eq!(back.form(), StackForm::Transposed);
        assert_eq!(back.block_sizes(), qmi.block_sizes());
    }

    #[test]
    fn dualize_rejects_singular() {
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let qmi = Qmi::new(theta, 1, 1, StackForm::Transposed).unwrap();
        assert!(qmi.dualize(1).is_err());
    }

    #[test]
    fn derivative_estimates() {
        // Constant trajectory: zero estimate.
        let x = DMatrix::from_element(2, 4, 3.0);
        let u = DMatrix::zeros(1, 4);
        let t = [0.0, 0.5, 1.0, 1.5];
        let (est, bounds) = estimate_derivatives(&x, &u, &t, 2.0, 1.0).unwrap();
        assert_eq!(est.norm(), 0.0);
        // Bound formula at ||x|| = 3 sqrt(2), u = 0: abar*dt/2*abar*||x||.
        let expect = 2.0 * 0.5 / 2.0 * 2.0 * (18.0f64).sqrt();
        assert_relative_eq!(bounds[0], expect, epsilon = 1e-12);

        // Affine trajectory: exact recovery of the slope.
        let v = DVector::from_column_slice(&[1.0, -2.0]);
        let x = DMatrix::from_fn(2, 4, |r, c| v[r] * t[c]);
        let (est, _) = estimate_derivatives(&x, &u, &t, 2.0, 1.0).unwrap();
        for k in 0..3 {
            assert_relative_eq!((est.column(k) - &v).norm(), 0.0, epsilon = 1e-12);
        }

        assert!(estimate_derivatives(&x.columns(0, 1).into(), &u.columns(0, 1).into(), &t[..1], 1.0, 1.0).is_err());
    }

    #[test]
    fn derivative_bound_holds_on_dense_run() {
        let sys = presets::example1_plant();
        let mut r = rng(11);
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 1e-3).collect();
        let data = collect_data(
            &sys,
            &SignalPolicy::Zero,
            &SignalPolicy::Zero,
            &times,
            &DVector::from_column_slice(&[1.0, -0.5]),
            &mut r,
            false,
        )
        .unwrap();
        let abar = 1.01; // above ||A||_2 for the example plant
        let (est, bounds) = estimate_derivatives(&data.x, &data.u, &times, abar, 0.11).unwrap();
        for k in 0..est.ncols() {
            let err = (est.column(k) - data.xdot.column(k)).norm();
            assert!(
                err <= bounds[k] + 1e-12,
                "column {k}: err {err} exceeds bound {}",
                bounds[k]
            );
        }
    }

    #[test]
    fn csv_round_trip() {
        let sys = presets::example1_plant();
        let mut r = rng(12);
        let data = collect_data(
            &sys,
            &SignalPolicy::UniformIid { amplitude: 1.0 },
            &SignalPolicy::UniformIid { amplitude: 0.02 },
            &[0.0, 1.0, 3.0],
            &DVector::zeros(2),
            &mut r,
            true,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        data.write_csv(&path).unwrap();
        let back = ExperimentData::read_csv(&path).unwrap();
        assert_eq!(back.rho(), 3);
        assert!((back.x - &data.x).norm() < 1e-12);
        assert!((back.xdot - &data.xdot).norm() < 1e-12);
        assert!((back.u - &data.u).norm() < 1e-12);
        assert!((back.w_true.unwrap() - data.w_true.as_ref().unwrap()).norm() < 1e-12);
    }
}
