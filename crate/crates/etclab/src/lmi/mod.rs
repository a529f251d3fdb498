//! Affine linear-matrix-inequality problems.
//!
//! A problem is a set of shaped decision variables (symmetric blocks,
//! rectangular blocks, scalars) and a list of symmetric matrix constraints,
//! each affine in the variables by construction: the term grammar admits
//! only `const`, `left * X * right` and `scalar * const`, so
//! variable-variable products cannot be expressed.
//!
//! Strict constraints `C(x) < 0` are realized as
//! `C(x) <= -margin (1 + ||const part||_F) I`.

pub mod blocks;
pub mod theorems;

use nalgebra::DMatrix;
use rand::{Rng, RngExt};

use crate::{Error, Result};

/// Handle to a declared decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    /// Symmetric `n x n`.
    Sym(usize),
    /// Rectangular `rows x cols`.
    Rect(usize, usize),
    Scalar,
}

impl VarShape {
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Sym(n) => (n, n),
            VarShape::Rect(r, c) => (r, c),
            VarShape::Scalar => (1, 1),
        }
    }

    /// Number of free scalar components.
    pub fn num_components(&self) -> usize {
        match *self {
            VarShape::Sym(n) => n * (n + 1) / 2,
            VarShape::Rect(r, c) => r * c,
            VarShape::Scalar => 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct VarSet {
    defs: Vec<(String, VarShape)>,
    offsets: Vec<usize>,
    total: usize,
}

impl VarSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: VarShape) -> VarId {
        let id = VarId(self.defs.len());
        self.offsets.push(self.total);
        self.total += shape.num_components();
        self.defs.push((name.to_string(), shape));
        id
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.defs[id.0].0
    }

    pub fn shape(&self, id: VarId) -> VarShape {
        self.defs[id.0].1
    }

    pub fn component_offset(&self, id: VarId) -> usize {
        self.offsets[id.0]
    }

    pub fn total_components(&self) -> usize {
        self.total
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.defs.len()).map(VarId)
    }
}

/// Concrete values for every variable (scalars stored as 1x1).
#[derive(Debug, Clone)]
pub struct Assignment {
    values: Vec<DMatrix<f64>>,
}

impl Assignment {
    pub fn zeros(vars: &VarSet) -> Self {
        let values = vars
            .ids()
            .map(|id| {
                let (r, c) = vars.shape(id).dims();
                DMatrix::zeros(r, c)
            })
            .collect();
        Self { values }
    }

    /// Uniform random entries in [-1, 1]; symmetric variables symmetrized.
    pub fn random<R: Rng>(vars: &VarSet, rng: &mut R) -> Self {
        let mut asg = Self::zeros(vars);
        for id in vars.ids() {
            let (r, c) = vars.shape(id).dims();
            let mut m = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0));
            if matches!(vars.shape(id), VarShape::Sym(_)) {
                m = crate::mat::symmetrize(&m);
            }
            asg.values[id.0] = m;
        }
        asg
    }

    pub fn set(&mut self, vars: &VarSet, id: VarId, value: DMatrix<f64>) -> Result<()> {
        let (r, c) = vars.shape(id).dims();
        if value.nrows() != r || value.ncols() != c {
            return Err(Error::Dim(format!(
                "assignment for {} must be {r}x{c}",
                vars.name(id)
            )));
        }
        if matches!(vars.shape(id), VarShape::Sym(_)) {
            self.values[id.0] = crate::mat::symmetrize(&value);
        } else {
            self.values[id.0] = value;
        }
        Ok(())
    }

    pub fn get(&self, id: VarId) -> &DMatrix<f64> {
        &self.values[id.0]
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        self.values[id.0][(0, 0)]
    }

    /// Unpacks a flat component vector in declaration order.
    pub fn from_flat(vars: &VarSet, x: &[f64]) -> Self {
        assert_eq!(x.len(), vars.total_components());
        let mut asg = Self::zeros(vars);
        for id in vars.ids() {
            let off = vars.component_offset(id);
            let m = &mut asg.values[id.0];
            match vars.shape(id) {
                VarShape::Sym(n) => {
                    let mut idx = 0;
                    for c in 0..n {
                        for r in 0..=c {
                            m[(r, c)] = x[off + idx];
                            m[(c, r)] = x[off + idx];
                            idx += 1;
                        }
                    }
                }
                VarShape::Rect(rows, cols) => {
                    let mut idx = 0;
                    for c in 0..cols {
                        for r in 0..rows {
                            m[(r, c)] = x[off + idx];
                            idx += 1;
                        }
                    }
                }
                VarShape::Scalar => m[(0, 0)] = x[off],
            }
        }
        asg
    }

    /// Midpoint of two assignments (used by the affinity checks).
    pub fn midpoint(a: &Assignment, b: &Assignment) -> Assignment {
        let values = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        Assignment { values }
    }
}

/// One affine contribution to a constraint matrix.
#[derive(Debug, Clone)]
pub enum Term {
    Const(DMatrix<f64>),
    /// `left * X * right`, or `left * X^T * right` when `transpose_var`.
    Lin {
        var: VarId,
        left: DMatrix<f64>,
        right: DMatrix<f64>,
        transpose_var: bool,
    },
    /// `x * m` for a scalar variable `x`.
    ScalarLin { var: VarId, m: DMatrix<f64> },
}

impl Term {
    fn block_dims(&self, vars: &VarSet) -> (usize, usize) {
        match self {
            Term::Const(m) => (m.nrows(), m.ncols()),
            Term::Lin { left, right, .. } => (left.nrows(), right.ncols()),
            Term::ScalarLin { m, .. } => (m.nrows(), m.ncols()),
        }
    }

    fn eval(&self, asg: &Assignment) -> DMatrix<f64> {
        match self {
            Term::Const(m) => m.clone(),
            Term::Lin {
                var,
                left,
                right,
                transpose_var,
            } => {
                let x = asg.get(*var);
                if *transpose_var {
                    left * x.transpose() * right
                } else {
                    left * x * right
                }
            }
            Term::ScalarLin { var, m } => asg.scalar(*var) * m,
        }
    }
}

/// A term placed at block offset (row, col) of a constraint matrix.
///
/// Off-diagonal placements are mirrored transposed automatically; `sym`
/// placements contribute `B + B^T` and must sit on the diagonal.
#[derive(Debug, Clone)]
pub struct Placed {
    pub row: usize,
    pub col: usize,
    pub sym: bool,
    pub term: Term,
}

impl Placed {
    pub fn new(row: usize, col: usize, term: Term) -> Self {
        Self {
            row,
            col,
            sym: false,
            term,
        }
    }

    pub fn sym(row: usize, term: Term) -> Self {
        Self {
            row,
            col: row,
            sym: true,
            term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `C(x) <= -margin_eff I`.
    NegDef,
    /// `C(x) >= 0`.
    Psd,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub dim: usize,
    pub sense: Sense,
    pub terms: Vec<Placed>,
}

impl Constraint {
    /// Dense symmetric value of the affine map at `asg` (margin excluded).
    pub fn evaluate(&self, asg: &Assignment) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for placed in &self.terms {
            let block = placed.term.eval(asg);
            add_block(&mut out, placed, &block);
        }
        out
    }

    /// Constant part of the affine map.
    pub fn const_part(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for placed in &self.terms {
            if let Term::Const(m) = &placed.term {
                add_block(&mut out, placed, m);
            }
        }
        out
    }
}

fn add_block(out: &mut DMatrix<f64>, placed: &Placed, block: &DMatrix<f64>) {
    let (rb, cb) = (block.nrows(), block.ncols());
    if placed.sym {
        debug_assert_eq!(placed.row, placed.col);
        debug_assert_eq!(rb, cb);
        for i in 0..rb {
            for j in 0..cb {
                out[(placed.row + i, placed.row + j)] += block[(i, j)];
                out[(placed.row + j, placed.row + i)] += block[(i, j)];
            }
        }
    } else if placed.row == placed.col && rb == cb {
        for i in 0..rb {
            for j in 0..cb {
                out[(placed.row + i, placed.col + j)] += block[(i, j)];
            }
        }
    } else {
        for i in 0..rb {
            for j in 0..cb {
                out[(placed.row + i, placed.col + j)] += block[(i, j)];
                out[(placed.col + j, placed.row + i)] += block[(i, j)];
            }
        }
    }
}

/// Default strictness margin.
pub const DEFAULT_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub vars: VarSet,
    pub constraints: Vec<Constraint>,
    pub margin: f64,
    /// Free-form parameter notes carried into dumps and manifests.
    pub notes: Vec<(String, String)>,
}

impl LmiProblem {
    pub fn new(vars: VarSet, margin: f64) -> Self {
        Self {
            vars,
            constraints: Vec::new(),
            margin,
            notes: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    /// Effective margin of constraint `i`: `margin (1 + ||const||_F)` for
    /// strict constraints, zero for semidefinite ones.
    pub fn margin_eff(&self, i: usize) -> f64 {
        match self.constraints[i].sense {
            Sense::NegDef => self.margin * (1.0 + self.constraints[i].const_part().norm()),
            Sense::Psd => 0.0,
        }
    }

    /// Max eigenvalue of `C(x) + margin_eff I` over strict constraints and
    /// of `-C(x)` over semidefinite ones; feasible iff <= 0.
    pub fn worst_violation(&self, asg: &Assignment) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, c) in self.constraints.iter().enumerate() {
            let val = c.evaluate(asg);
            let v = match c.sense {
                Sense::NegDef => crate::mat::max_eig(&val) + self.margin_eff(i),
                Sense::Psd => -crate::mat::min_eig(&val),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Structured text dump: variable table followed by per-constraint term
    /// listings. Debug aid; format not stable.
    pub fn dump(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(s, "lmi problem: {} vars, {} constraints, margin {:.3e}",
            self.vars.len(), self.constraints.len(), self.margin);
        for (k, v) in &self.notes {
            let _ = writeln!(s, "  param {k} = {v}");
        }
        let _ = writeln!(s, "variables:");
        for id in self.vars.ids() {
            let (r, c) = self.vars.shape(id).dims();
            let kind = match self.vars.shape(id) {
                VarShape::Sym(_) => "sym",
                VarShape::Rect(..) => "rect",
                VarShape::Scalar => "scalar",
            };
            let _ = writeln!(
                s,
                "  [{}] {} {kind} {r}x{c} (components {})",
                id.0,
                self.vars.name(id),
                self.vars.shape(id).num_components()
            );
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = writeln!(
                s,
                "constraint {i} '{}': dim {} sense {:?} margin_eff {:.3e}",
                c.name,
                c.dim,
                c.sense,
                self.margin_eff(i)
            );
            for p in &c.terms {
                let desc = match &p.term {
                    Term::Const(m) => format!("const {}x{} |.|={:.3e}", m.nrows(), m.ncols(), m.norm()),
                    Term::Lin {
                        var,
                        left,
                        right,
                        transpose_var,
                    } => format!(
                        "{} {} {} ({}x{} * var * {}x{})",
                        left.nrows(),
                        self.vars.name(*var),
                        if *transpose_var { "^T" } else { "" },
                        left.nrows(),
                        left.ncols(),
                        right.nrows(),
                        right.ncols()
                    ),
                    Term::ScalarLin { var, m } => {
                        format!("{} * const {}x{}", self.vars.name(*var), m.nrows(), m.ncols())
                    }
                };
                let _ = writeln!(
                    s,
                    "  at ({},{}) sym={} : {desc}",
                    p.row, p.col, p.sym
                );
            }
        }
        s
    }

    /// Conic vectorization shared by all backends.
    pub fn vectorize(&self) -> VectorizedLmi {
        let nvars = self.vars.total_components();
        let mut cone_dims = Vec::with_capacity(self.constraints.len());
        let mut b = Vec::new();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut row_base = 0usize;

        for (ci, c) in self.constraints.iter().enumerate() {
            let dim = c.dim;
            let tri = dim * (dim + 1) / 2;
            cone_dims.push(dim);
            // sign convention: s = b - A x must lie in the PSD cone.
            //   NegDef: s = svec(-C(x) - m I)  -> b = svec(-const - m I), A = +svec(coeffs)
            //   Psd:    s = svec(C(x))         -> b = svec(const),        A = -svec(coeffs)
            let (sgn_b, sgn_a) = match c.sense {
                Sense::NegDef => (-1.0, 1.0),
                Sense::Psd => (1.0, -1.0),
            };
            let m_eff = self.margin_eff(ci);

            let mut b_raw = vec![0.0f64; tri];
            let mut fold = |slots: &mut Vec<f64>, i: usize, j: usize, v: f64| {
                let (r, cmin) = if i <= j { (i, j) } else { (j, i) };
                slots[cmin * (cmin + 1) / 2 + r] += v;
            };

            // constant part and margin
            for p in &c.terms {
                if let Term::Const(m) = &p.term {
                    emit_entries(p, m, |i, j, v| fold(&mut b_raw, i, j, sgn_b * v));
                }
            }
            if matches!(c.sense, Sense::NegDef) {
                for i in 0..dim {
                    fold(&mut b_raw, i, i, -m_eff);
                }
            }
            let sqrt2 = std::f64::consts::SQRT_2;
            for cidx in 0..dim {
                for r in 0..=cidx {
                    let slot = cidx * (cidx + 1) / 2 + r;
                    let raw = b_raw[slot];
                    b.push(if r == cidx { raw } else { raw / sqrt2 });
                }
            }

            // variable coefficients
            for p in &c.terms {
                match &p.term {
                    Term::Const(_) => {}
                    Term::ScalarLin { var, m } => {
                        let col = self.vars.component_offset(*var);
                        let mut raw = vec![0.0f64; tri];
                        emit_entries(p, m, |i, j, v| fold(&mut raw, i, j, v));
                        push_svec_col(&mut triplets, &raw, dim, row_base, col, sgn_a);
                    }
                    Term::Lin {
                        var,
                        left,
                        right,
                        transpose_var,
                    } => {
                        let off = self.vars.component_offset(*var);
                        match self.vars.shape(*var) {
                            VarShape::Scalar => {
                                // treated as 1x1 rectangular
                                let m = left * right * 1.0;
                                let mut raw = vec![0.0f64; tri];
                                emit_entries(p, &m, |i, j, v| fold(&mut raw, i, j, v));
                                push_svec_col(&mut triplets, &raw, dim, row_base, off, sgn_a);
                            }
                            VarShape::Rect(rows, cols) => {
                                let mut comp = 0;
                                for bcol in 0..cols {
                                    for arow in 0..rows {
                                        let mut raw = vec![0.0f64; tri];
                                        let coeff = if *transpose_var {
                                            outer_from(left, bcol, right, arow)
                                        } else {
                                            outer_from(left, arow, right, bcol)
                                        };
                                        emit_entries(p, &coeff, |i, j, v| {
                                            fold(&mut raw, i, j, v)
                                        });
                                        push_svec_col(
                                            &mut triplets,
                                            &raw,
                                            dim,
                                            row_base,
                                            off + comp,
                                            sgn_a,
                                        );
                                        comp += 1;
                                    }
                                }
                            }
                            VarShape::Sym(nn) => {
                                let mut comp = 0;
                                for bcol in 0..nn {
                                    for arow in 0..=bcol {
                                        let mut coeff = outer_from(left, arow, right, bcol);
                                        if arow != bcol {
                                            coeff += outer_from(left, bcol, right, arow);
                                        }
                                        let mut raw = vec![0.0f64; tri];
                                        emit_entries(p, &coeff, |i, j, v| {
                                            fold(&mut raw, i, j, v)
                                        });
                                        push_svec_col(
                                            &mut triplets,
                                            &raw,
                                            dim,
                                            row_base,
                                            off + comp,
                                            sgn_a,
                                        );
                                        comp += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            row_base += tri;
        }

        VectorizedLmi {
            num_vars: nvars,
            num_rows: row_base,
            cone_dims,
            b,
            triplets,
        }
    }
}

/// `left[:, a] * right[b, :]` as a dense block.
fn outer_from(left: &DMatrix<f64>, a: usize, right: &DMatrix<f64>, b: usize) -> DMatrix<f64> {
    let lr = left.nrows();
    let rc = right.ncols();
    let mut out = DMatrix::zeros(lr, rc);
    for i in 0..lr {
        let li = left[(i, a)];
        if li == 0.0 {
            continue;
        }
        for j in 0..rc {
            let rj = right[(b, j)];
            if rj != 0.0 {
                out[(i, j)] = li * rj;
            }
        }
    }
    out
}

fn emit_entries(p: &Placed, block: &DMatrix<f64>, mut sink: impl FnMut(usize, usize, f64)) {
    let (rb, cb) = (block.nrows(), block.ncols());
    for i in 0..rb {
        for j in 0..cb {
            let v = block[(i, j)];
            if v == 0.0 {
                continue;
            }
            if p.sym {
                sink(p.row + i, p.row + j, v);
                sink(p.row + j, p.row + i, v);
            } else if p.row == p.col && rb == cb {
                sink(p.row + i, p.col + j, v);
            } else {
                sink(p.row + i, p.col + j, v);
                sink(p.col + j, p.row + i, v);
            }
        }
    }
}

fn push_svec_col(
    triplets: &mut Vec<(usize, usize, f64)>,
    raw: &[f64],
    dim: usize,
    row_base: usize,
    col: usize,
    sgn: f64,
) {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut slot = 0;
    for c in 0..dim {
        for r in 0..=c {
            let v = raw[slot];
            if v != 0.0 {
                let sv = if r == c { v } else { v / sqrt2 };
                triplets.push((row_base + slot, col, sgn * sv));
            }
            slot += 1;
        }
    }
}

/// Scaled-triangle conic data: one PSD cone per constraint, rows stacked in
/// constraint order, `s = b - A x` with off-diagonals scaled by sqrt(2).
#[derive(Debug, Clone)]
pub struct VectorizedLmi {
    pub num_vars: usize,
    pub num_rows: usize,
    pub cone_dims: Vec<usize>,
    pub b: Vec<f64>,
    /// (row, col, value) of A, unsorted.
    pub triplets: Vec<(usize, usize, f64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_problem() -> (LmiProblem, VarId, VarId) {
        let mut vars = VarSet::new();
        let p = vars.add("P", VarShape::Sym(2));
        let f = vars.add("F", VarShape::Rect(2, 3));
        let mut prob = LmiProblem::new(vars, 1e-7);
        let left = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let right = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        prob.constraints.push(Constraint {
            name: "toy".into(),
            dim: 2,
            sense: Sense::NegDef,
            terms: vec![
                Placed::sym(0, Term::Lin {
                    var: p,
                    left: left.clone(),
                    right: DMatrix::identity(2, 2),
                    transpose_var: false,
                }),
                Placed::sym(0, Term::Lin {
                    var: f,
                    left: DMatrix::identity(2, 2),
                    right,
                    transpose_var: false,
                }),
                Placed::new(0, 0, Term::Const(DMatrix::identity(2, 2))),
            ],
        });
        (prob, p, f)
    }

    #[test]
    fn evaluation_matches_direct_arithmetic() {
        let (prob, p, f) = toy_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let asg = {
            let mut a = Assignment::random(&prob.vars, &mut rng);
            let _ = (p, f);
            a.values[1] = DMatrix::from_fn(2, 3, |i, j| (i + 2 * j) as f64 * 0.1);
            a
        };
        let val = prob.constraints[0].evaluate(&asg);
        let left = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let right = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 2.0]);
        let pm = asg.get(VarId(0));
        let fm = asg.get(VarId(1));
        let block = &left * pm;
        let fblock = fm * &right;
        let expected =
            &block + block.transpose() + &fblock + fblock.transpose() + DMatrix::identity(2, 2);
        assert!((val - expected).norm() < 1e-14);
    }

    #[test]
    fn vectorization_consistent_with_evaluation() {
        // s = b - A x must equal svec(-C(x) - m I) for NegDef constraints.
        let (prob, _, _) = toy_problem();
        let vec = prob.vectorize();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flat: Vec<f64> = (0..vec.num_vars)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let asg = Assignment::from_flat(&prob.vars, &flat);
        let cval = prob.constraints[0].evaluate(&asg);
        let m_eff = prob.margin_eff(0);

        let mut s = vec.b.clone();
        for &(r, c, v) in &vec.triplets {
            s[r] -= v * flat[c];
        }
        // unfold svec and compare
        let dim = 2;
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut rec = DMatrix::zeros(dim, dim);
        let mut idx = 0;
        for c in 0..dim {
            for r in 0..=c {
                if r == c {
                    rec[(r, c)] = s[idx];
                } else {
                    rec[(r, c)] = s[idx] / sqrt2;
                    rec[(c, r)] = s[idx] / sqrt2;
                }
                idx += 1;
            }
        }
        let expected = -(cval + m_eff * DMatrix::identity(dim, dim));
        assert!((rec - expected).norm() < 1e-12);
    }

    #[test]
    fn affine_midpoint_exact() {
        let (prob, _, _) = toy_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a1 = Assignment::random(&prob.vars, &mut rng);
        let a2 = Assignment::random(&prob.vars, &mut rng);
        let mid = Assignment::midpoint(&a1, &a2);
        let v1 = prob.constraints[0].evaluate(&a1);
        let v2 = prob.constraints[0].evaluate(&a2);
        let vm = prob.constraints[0].evaluate(&mid);
        let expected = 0.5 * (&v1 + &v2);
        let rel = (&vm - &expected).norm() / (1.0 + expected.norm());
        assert!(rel < 1e-12, "midpoint linearity violated: {rel}");
    }
}
