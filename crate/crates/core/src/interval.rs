//! Closed intervals and interval matrices used for certified curvature and
//! Lipschitz bounds.
//!
//! Every arithmetic result is widened outward by a relative slack of
//! [`OUTWARD_SLACK`]. This is not ULP-rigorous directed rounding, but it keeps
//! enclosures conservative against ordinary floating point error without
//! touching the FPU rounding mode.

use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};

/// Relative outward widening applied after every interval operation.
pub const OUTWARD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

#[inline]
fn widen(lo: f64, hi: f64) -> Interval {
    Interval {
        lo: lo - OUTWARD_SLACK * libm::fabs(lo),
        hi: hi + OUTWARD_SLACK * libm::fabs(hi),
    }
}

impl Interval {
    /// Returns `None` when `lo > hi` or either bound is NaN.
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        if lo <= hi {
            Some(Self { lo, hi })
        } else {
            None
        }
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Largest absolute value attained on the interval.
    pub fn mag(&self) -> f64 {
        libm::fmax(libm::fabs(self.lo), libm::fabs(self.hi))
    }

    pub fn abs(self) -> Self {
        if self.lo >= 0.0 {
            self
        } else if self.hi <= 0.0 {
            -self
        } else {
            Self {
                lo: 0.0,
                hi: self.mag(),
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn hull(&self, other: &Interval) -> Self {
        Self {
            lo: libm::fmin(self.lo, other.lo),
            hi: libm::fmax(self.hi, other.hi),
        }
    }

    /// Symmetric enlargement by `r >= 0` on both sides.
    pub fn inflate(&self, r: f64) -> Self {
        Self {
            lo: self.lo - r,
            hi: self.hi + r,
        }
    }

    pub fn scale(self, s: f64) -> Self {
        if s >= 0.0 {
            widen(self.lo * s, self.hi * s)
        } else {
            widen(self.hi * s, self.lo * s)
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl From<f64> for Interval {
    fn from(x: f64) -> Self {
        Interval::point(x)
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        widen(self.lo + rhs.lo, self.hi + rhs.hi)
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        widen(self.lo - rhs.hi, self.hi - rhs.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let a = self.lo * rhs.lo;
        let b = self.lo * rhs.hi;
        let c = self.hi * rhs.lo;
        let d = self.hi * rhs.hi;
        widen(
            libm::fmin(libm::fmin(a, b), libm::fmin(c, d)),
            libm::fmax(libm::fmax(a, b), libm::fmax(c, d)),
        )
    }
}

impl Mul<f64> for Interval {
    type Output = Interval;
    fn mul(self, rhs: f64) -> Interval {
        self.scale(rhs)
    }
}

/// Interval enclosure of `Σ_i a_i x_i` for a point row `a` and interval
/// vector `x`.
pub fn dot_point_interval(a: impl IntoIterator<Item = f64>, x: &[Interval]) -> Interval {
    a.into_iter()
        .zip(x)
        .filter(|(ai, _)| *ai != 0.0)
        .fold(Interval::ZERO, |acc, (ai, xi)| acc + xi.scale(ai))
}

/// Dense row-major matrix of intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Interval>,
}

impl IntervalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![Interval::ZERO; rows * cols],
        }
    }

    pub fn from_point(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.set(i, j, Interval::point(m[(i, j)]));
            }
        }
        out
    }

    /// Column interval vector.
    pub fn from_intervals(v: &[Interval]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Interval {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Interval) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Interval] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Interval matrix product. Panics on inner-dimension mismatch.
    pub fn mul(&self, rhs: &IntervalMatrix) -> IntervalMatrix {
        assert_eq!(self.cols, rhs.rows, "interval matrix product shape");
        let mut out = IntervalMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = Interval::ZERO;
                for k in 0..self.cols {
                    acc = acc + self.get(i, k) * rhs.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Enclosure of `P · self` for a point matrix `P`.
    pub fn left_mul_point(&self, p: &DMatrix<f64>) -> IntervalMatrix {
        assert_eq!(p.ncols(), self.rows, "point-interval product shape");
        let mut out = IntervalMatrix::zeros(p.nrows(), self.cols);
        for i in 0..p.nrows() {
            for j in 0..self.cols {
                let col: Vec<Interval> = (0..self.rows).map(|k| self.get(k, j)).collect();
                out.set(i, j, dot_point_interval(p.row(i).iter().copied(), &col));
            }
        }
        out
    }

    /// Upper bound on `Σ_j |m_ij|` over every member matrix, per row.
    pub fn abs_row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.rows,
            (0..self.rows).map(|i| self.row(i).iter().map(Interval::mag).sum::<f64>()),
        )
    }

    /// Upper bound on the entrywise absolute sum over every member matrix.
    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(Interval::mag).sum()
    }

    pub fn contains_point(&self, m: &DMatrix<f64>) -> bool {
        m.nrows() == self.rows
            && m.ncols() == self.cols
            && (0..self.rows).all(|i| (0..self.cols).all(|j| self.get(i, j).contains(m[(i, j)])))
    }
}
