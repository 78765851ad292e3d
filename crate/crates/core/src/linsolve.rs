//! Sparse direct solves backed by `faer`'s supernodal LU and Cholesky factorizations.
//!
//! Our matrices are stored row-major; the row arrays of `A` are handed to `faer` as the
//! column arrays of `A^T`, which is factorized and then solved in transposed mode. Mean
//! constraints are imposed by bordering with one extra multiplier unknown.

use std::ops::Range;
use std::panic::AssertUnwindSafe;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu, SymbolicLlt, SymbolicLu};
use faer::sparse::linalg::{LltError, LuError};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Col, Side};

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Relative residual bound used to accept a solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Linear constraint `weights . x = value` enforced through a bordered system.
#[derive(Debug, Clone)]
pub struct MeanConstraint {
    pub weights: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub constraint: Option<MeanConstraint>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Self {
        Self { matrix, rhs, constraint: None }
    }

    pub fn with_constraint(matrix: SparseMatrix, rhs: Vec<f64>, weights: Vec<f64>, value: f64) -> Self {
        Self { matrix, rhs, constraint: Some(MeanConstraint { weights, value }) }
    }

    fn validate(&self) -> Result<()> {
        let n = self.matrix.nrows();
        if self.matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.matrix.ncols() });
        }
        if self.rhs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.rhs.len() });
        }
        if let Some(c) = &self.constraint {
            if c.weights.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: c.weights.len() });
            }
        }
        Ok(())
    }

    /// The bordered matrix and right-hand side (identity when unconstrained).
    fn bordered(&self) -> (SparseMatrix, Vec<f64>) {
        match &self.constraint {
            None => (self.matrix.clone(), self.rhs.clone()),
            Some(c) => {
                let n = self.matrix.nrows();
                let mut b = TripletBuilder::with_capacity(n + 1, n + 1, self.matrix.nnz() + 2 * n);
                b.push_block(0, 0, &self.matrix, 1.0);
                for (i, &w) in c.weights.iter().enumerate() {
                    b.push(i, n, w);
                    b.push(n, i, w);
                }
                let mut rhs = self.rhs.clone();
                rhs.push(c.value);
                (b.build(), rhs)
            }
        }
    }
}

/// `||A x - b||_inf`
pub fn residual_inf(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    ax.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn residual_bound(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    RESIDUAL_TOLERANCE * (a.norm_inf() * inf_norm(x) + inf_norm(b))
}

fn transposed_view(a: &SparseMatrix) -> Result<SparseColMat<usize, f64>> {
    let n = a.nrows();
    let sym = SymbolicSparseColMat::new_checked(n, n, a.row_ptr().to_vec(), None, a.col_idx().to_vec());
    Ok(SparseColMat::new(sym, a.values().to_vec()))
}

fn map_lu_error(e: LuError) -> Error {
    match e {
        LuError::SymbolicSingular { index } => Error::Singular { pivot: Some(index) },
        LuError::Generic(g) => Error::InvalidInput(format!("factorization failed: {g:?}")),
    }
}

/// Reusable sparse LU. The symbolic analysis is kept and reused as long as the sparsity
/// pattern of successive matrices is unchanged.
#[derive(Default)]
pub struct SparseLu {
    pattern: Option<(Vec<usize>, Vec<usize>)>,
    symbolic: Option<SymbolicLu<usize>>,
    numeric: Option<Lu<usize, f64>>,
    matrix: Option<SparseMatrix>,
}

impl SparseLu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factor(&mut self, a: &SparseMatrix) -> Result<()> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
        }
        let view = transposed_view(a)?;
        let same = matches!(&self.pattern, Some((rp, ci)) if rp == a.row_ptr() && ci == a.col_idx());
        if !same || self.symbolic.is_none() {
            let sym = SymbolicLu::try_new(view.symbolic())
                .map_err(|e| Error::InvalidInput(format!("symbolic factorization failed: {e:?}")))?;
            self.symbolic = Some(sym);
            self.pattern = Some((a.row_ptr().to_vec(), a.col_idx().to_vec()));
        }
        let symbolic = self.symbolic.clone().unwrap();
        // faer panics on an exactly zero pivot instead of returning an error
        let lu = std::panic::catch_unwind(AssertUnwindSafe(|| Lu::try_new_with_symbolic(symbolic, view.as_ref())))
            .map_err(|_| Error::Singular { pivot: None })?
            .map_err(map_lu_error)?;
        self.numeric = Some(lu);
        self.matrix = Some(a.clone());
        Ok(())
    }

    /// Solves with the last factored matrix and checks the residual contract, applying
    /// one step of iterative refinement when needed.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let (lu, a) = match (&self.numeric, &self.matrix) {
            (Some(lu), Some(a)) => (lu, a),
            _ => return Err(Error::InvalidInput("solve called before factor".into())),
        };
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        let raw = |rhs: &[f64]| -> Vec<f64> {
            let col = Col::<f64>::from_fn(rhs.len(), |i| rhs[i]);
            let x = lu.solve_transpose(&col);
            (0..rhs.len()).map(|i| x[i]).collect()
        };
        let mut x = raw(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { pivot: None });
        }
        let mut res = residual_inf(a, &x, b);
        let mut bound = residual_bound(a, &x, b);
        if res > bound {
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let dx = raw(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
            res = residual_inf(a, &x, b);
            bound = residual_bound(a, &x, b);
        }
        if !res.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { pivot: None });
        }
        if res > bound {
            return Err(Error::InaccurateSolve { residual: res, bound });
        }
        Ok(x)
    }
}

/// General (nonsymmetric, possibly indefinite) sparse direct solve.
pub fn solve_direct(system: &LinearSystem) -> Result<Vec<f64>> {
    system.validate()?;
    let (a, b) = system.bordered();
    let mut lu = SparseLu::new();
    lu.factor(&a)?;
    let mut x = lu.solve(&b)?;
    x.truncate(system.matrix.nrows());
    Ok(x)
}

/// Solve for a symmetric positive definite matrix. Unconstrained systems use a sparse
/// Cholesky factorization and report breakdown as [`Error::NotSpd`]; constrained systems
/// (SPD only on the constraint's complement) are solved through the bordered LU.
pub fn solve_spd(system: &LinearSystem) -> Result<Vec<f64>> {
    system.validate()?;
    if system.constraint.is_some() {
        if system.matrix.max_abs_asymmetry() > 1e-12 * system.matrix.max_abs() {
            return Err(Error::NotSpd);
        }
        return solve_direct(system);
    }
    let a = &system.matrix;
    let view = transposed_view(a)?;
    let sym = SymbolicLlt::try_new(view.symbolic(), Side::Lower)
        .map_err(|e| Error::InvalidInput(format!("symbolic factorization failed: {e:?}")))?;
    let llt = Llt::try_new_with_symbolic(sym, view.as_ref(), Side::Lower).map_err(|e| match e {
        LltError::Numeric(_) => Error::NotSpd,
        LltError::Generic(g) => Error::InvalidInput(format!("factorization failed: {g:?}")),
    })?;
    let col = Col::<f64>::from_fn(system.rhs.len(), |i| system.rhs[i]);
    let sol = llt.solve(&col);
    let x: Vec<f64> = (0..col.nrows()).map(|i| sol[i]).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd);
    }
    let res = residual_inf(a, &x, &system.rhs);
    let bound = residual_bound(a, &x, &system.rhs);
    if res > bound {
        return Err(Error::InaccurateSolve { residual: res, bound });
    }
    Ok(x)
}

/// Reusable Cholesky factorization for repeated solves with one SPD matrix.
pub struct SpdFactor {
    llt: Llt<usize, f64>,
    matrix: SparseMatrix,
}

impl SpdFactor {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let view = transposed_view(a)?;
        let sym = SymbolicLlt::try_new(view.symbolic(), Side::Lower)
            .map_err(|e| Error::InvalidInput(format!("symbolic factorization failed: {e:?}")))?;
        let llt = Llt::try_new_with_symbolic(sym, view.as_ref(), Side::Lower).map_err(|e| match e {
            LltError::Numeric(_) => Error::NotSpd,
            LltError::Generic(g) => Error::InvalidInput(format!("factorization failed: {g:?}")),
        })?;
        Ok(Self { llt, matrix: a.clone() })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: self.matrix.nrows(), got: b.len() });
        }
        let col = Col::<f64>::from_fn(b.len(), |i| b[i]);
        let sol = self.llt.solve(&col);
        let x: Vec<f64> = (0..b.len()).map(|i| sol[i]).collect();
        let res = residual_inf(&self.matrix, &x, b);
        let bound = residual_bound(&self.matrix, &x, b);
        if !(res <= bound) {
            return Err(Error::InaccurateSolve { residual: res, bound });
        }
        Ok(x)
    }
}

/// Solver for bordered systems
///
/// ```text
/// [ K    w ] [x]   [b]
/// [ w^T  0 ] [l] = [c]
/// ```
///
/// where `w` is supported on the index block `block` and the indicator `z` of that block
/// spans both the left and the right kernel of `K` (a constant pressure or Neumann mode).
///
/// A dense border row makes the column-pivoted LU fill analysis dense, so the border is
/// never formed. The multiplier follows from `z^T b = l z^T w`; the redundant first
/// equation of the block is replaced by fixing its unknown, and the constraint is then
/// restored by adding a multiple of `z`. The result solves the bordered system itself.
pub struct ConstantModeLu {
    lu: SparseLu,
    matrix: Option<SparseMatrix>,
    block: Range<usize>,
    weights: Vec<f64>,
}

impl ConstantModeLu {
    pub fn new(block: Range<usize>, weights: Vec<f64>) -> Result<Self> {
        if block.is_empty() || weights.len() != block.len() {
            return Err(Error::DimensionMismatch { expected: block.len(), got: weights.len() });
        }
        if weights.iter().sum::<f64>() == 0.0 {
            return Err(Error::InvalidInput("constraint weights sum to zero".into()));
        }
        Ok(Self { lu: SparseLu::new(), matrix: None, block, weights })
    }

    pub fn factor(&mut self, k: &SparseMatrix) -> Result<()> {
        let n = k.nrows();
        if k.ncols() != n || self.block.end > n {
            return Err(Error::DimensionMismatch { expected: n, got: k.ncols().max(self.block.end) });
        }
        let pin = self.block.start;
        let mut b = TripletBuilder::with_capacity(n, n, k.nnz() + 1);
        for r in 0..n {
            if r == pin {
                b.push(pin, pin, 1.0);
                continue;
            }
            for (c, v) in k.row(r) {
                b.push(r, c, v);
            }
        }
        self.lu.factor(&b.build())?;
        self.matrix = Some(k.clone());
        Ok(())
    }

    fn solve_once(&self, b: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
        let blk = self.block.clone();
        let sw: f64 = self.weights.iter().sum();
        let lambda = b[blk.clone()].iter().sum::<f64>() / sw;
        let mut rhs = b.to_vec();
        for (r, w) in rhs[blk.clone()].iter_mut().zip(&self.weights) {
            *r -= w * lambda;
        }
        rhs[blk.start] = 0.0;
        let mut x = self.lu.solve(&rhs)?;
        let wx: f64 = x[blk.clone()].iter().zip(&self.weights).map(|(a, w)| a * w).sum();
        let alpha = (c - wx) / sw;
        x[blk].iter_mut().for_each(|v| *v += alpha);
        Ok((x, lambda))
    }

    /// Residual of the bordered system and the scale used by the acceptance bound.
    fn bordered_residual(&self, k: &SparseMatrix, x: &[f64], lambda: f64, b: &[f64], c: f64) -> (Vec<f64>, f64, f64) {
        let mut r: Vec<f64> = b.to_vec();
        k.mul_vec_add(x, -1.0, &mut r);
        for (ri, w) in r[self.block.clone()].iter_mut().zip(&self.weights) {
            *ri -= w * lambda;
        }
        let wx: f64 = x[self.block.clone()].iter().zip(&self.weights).map(|(a, w)| a * w).sum();
        let rc = c - wx;
        let res = inf_norm(&r).max(rc.abs());
        let wmax = inf_norm(&self.weights);
        let bound = RESIDUAL_TOLERANCE
            * ((k.norm_inf() + wmax) * inf_norm(x).max(lambda.abs()) + inf_norm(b).max(c.abs()));
        (r, rc, res - bound)
    }

    /// Solves for `(x, l)`, checking the residual contract on the bordered system.
    pub fn solve(&self, b: &[f64], c: f64) -> Result<(Vec<f64>, f64)> {
        let k = self.matrix.as_ref().ok_or_else(|| Error::InvalidInput("solve called before factor".into()))?;
        if b.len() != k.nrows() {
            return Err(Error::DimensionMismatch { expected: k.nrows(), got: b.len() });
        }
        let (mut x, mut lambda) = self.solve_once(b, c)?;
        let (r, rc, excess) = self.bordered_residual(k, &x, lambda, b, c);
        if excess > 0.0 {
            let (dx, dl) = self.solve_once(&r, rc)?;
            x.iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
            lambda += dl;
            let (r, rc, excess) = self.bordered_residual(k, &x, lambda, b, c);
            if excess > 0.0 || !excess.is_finite() {
                let residual = inf_norm(&r).max(rc.abs());
                return Err(Error::InaccurateSolve { residual, bound: residual - excess });
            }
        }
        Ok((x, lambda))
    }

    /// Same as [`solve`](Self::solve) with `c` and `l` stored as the last vector entry.
    pub fn solve_stacked(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let (b, c) = rhs.split_at(rhs.len().saturating_sub(1));
        let (mut x, l) = self.solve(b, *c.first().ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?)?;
        x.push(l);
        Ok(x)
    }
}
