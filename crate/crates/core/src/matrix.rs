//! Small dense row-major matrices: products, powers, linear solves and the exponential.

use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk, Execution};

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged matrix rows".into()));
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Non-negative entries and unit row sums within `tol`.
    pub fn check_stochastic(&self, tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", self.rows, self.cols)));
        }
        for i in 0..self.rows {
            if let Some(x) = self.row(i).iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidModel(format!("negative or non-finite entry {x} in row {}", i + 1)));
            }
            let s: f64 = self.row(i).iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::InvalidModel(format!("row {} sums to {s}", i + 1)));
            }
        }
        Ok(())
    }

    /// Non-negative off-diagonal entries and zero row sums within `tol`.
    pub fn check_generator(&self, tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", self.rows, self.cols)));
        }
        for i in 0..self.rows {
            for j in 0..self.cols {
                let x = self[(i, j)];
                if !x.is_finite() || (i != j && x < 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "generator entry ({}, {}) = {x} is not a valid rate",
                        i + 1,
                        j + 1
                    )));
                }
            }
            let s: f64 = self.row(i).iter().sum();
            if s.abs() > tol {
                return Err(Error::InvalidModel(format!("generator row {} sums to {s}", i + 1)));
            }
        }
        Ok(())
    }

    /// `self * rhs`. Each output row is accumulated left to right over the
    /// inner index, skipping zero entries of `self`.
    pub fn matmul(&self, rhs: &DenseMatrix, exec: Execution) -> DenseMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        if rhs.cols == 0 {
            return out;
        }
        for_each_chunk(exec, &mut out.data, rhs.cols, |i, out_row| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    for (o, b) in out_row.iter_mut().zip(rhs.row(k)) {
                        *o += a * b;
                    }
                }
            }
        });
        out
    }

    /// Row vector times matrix.
    pub fn vecmul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &a) in v.iter().enumerate() {
            if a != 0.0 {
                for (o, b) in out.iter_mut().zip(self.row(i)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn mulvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^t`: plain repeated multiplication for `t ≤ 8`, binary powering beyond.
    pub fn pow(&self, t: u64, exec: Execution) -> DenseMatrix {
        assert!(self.is_square());
        if t == 0 {
            return DenseMatrix::identity(self.rows);
        }
        if t <= 8 {
            let mut acc = self.clone();
            for _ in 1..t {
                acc = acc.matmul(self, exec);
            }
            return acc;
        }
        let mut result: Option<DenseMatrix> = None;
        let mut base = self.clone();
        let mut e = t;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.matmul(&base, exec),
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.matmul(&base, exec);
        }
        result.expect("t > 0")
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = m[(i, j)];
            }
        }
        out
    }

    /// Solves `self * X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if !self.is_square() || self.rows != rhs.rows {
            return Err(Error::Dimension("solve needs a square system".into()));
        }
        let lu = self.to_nalgebra().lu();
        let x = lu
            .solve(&rhs.to_nalgebra())
            .ok_or_else(|| Error::Dimension("singular linear system".into()))?;
        Ok(Self::from_nalgebra(&x))
    }

    /// Matrix exponential by scaling and squaring with a degree 3..13 Padé approximant
    /// chosen from the 1-norm (backward error at unit roundoff).
    pub fn expm(&self) -> DenseMatrix {
        assert!(self.is_square());
        let n = self.rows;
        let exec = Execution::Sequential;
        let norm = self.norm_1();
        let ident = DenseMatrix::identity(n);
        let (a, squarings, b): (DenseMatrix, u32, &[f64]) = if norm <= THETA[0] {
            (self.clone(), 0, &PADE3)
        } else if norm <= THETA[1] {
            (self.clone(), 0, &PADE5)
        } else if norm <= THETA[2] {
            (self.clone(), 0, &PADE7)
        } else if norm <= THETA[3] {
            (self.clone(), 0, &PADE9)
        } else {
            let s = (norm / THETA[4]).log2().ceil().max(0.0) as u32;
            (self.scale(0.5f64.powi(s as i32)), s, &PADE13)
        };
        let a2 = a.matmul(&a, exec);
        let (u, v) = if b.len() < 14 {
            // U = A Σ b_{2k+1} A^{2k}, V = Σ b_{2k} A^{2k}
            let mut pow = ident.clone();
            let mut u_acc = ident.scale(b[1]);
            let mut v_acc = ident.scale(b[0]);
            for k in 1..b.len() / 2 {
                pow = pow.matmul(&a2, exec);
                u_acc = u_acc.add(&pow.scale(b[2 * k + 1]));
                v_acc = v_acc.add(&pow.scale(b[2 * k]));
            }
            (a.matmul(&u_acc, exec), v_acc)
        } else {
            let a4 = a2.matmul(&a2, exec);
            let a6 = a4.matmul(&a2, exec);
            let inner_u = a6
                .scale(b[13])
                .add(&a4.scale(b[11]))
                .add(&a2.scale(b[9]));
            let u = a6
                .matmul(&inner_u, exec)
                .add(&a6.scale(b[7]))
                .add(&a4.scale(b[5]))
                .add(&a2.scale(b[3]))
                .add(&ident.scale(b[1]));
            let u = a.matmul(&u, exec);
            let inner_v = a6
                .scale(b[12])
                .add(&a4.scale(b[10]))
                .add(&a2.scale(b[8]));
            let v = a6
                .matmul(&inner_v, exec)
                .add(&a6.scale(b[6]))
                .add(&a4.scale(b[4]))
                .add(&a2.scale(b[2]))
                .add(&ident.scale(b[0]));
            (u, v)
        };
        let p = v.add(&u);
        let q = v.add(&u.scale(-1.0));
        let mut r = q.solve(&p).expect("Padé denominator is nonsingular for these norms");
        for _ in 0..squarings {
            r = r.matmul(&r, exec);
        }
        r
    }
}

const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        Ok(())
    }
}
