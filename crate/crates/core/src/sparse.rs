//! Compressed-row sparse operators for assembled stencils.

/// Anything that maps a vector to a vector of the same length.
pub trait LinearMap {
    fn dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Row-by-row accumulator; duplicate columns within a row are summed.
#[derive(Debug, Clone)]
pub struct StencilBuilder {
    rows: Vec<Vec<(usize, f64)>>,
}

impl StencilBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n],
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        self.rows[row].push((col, val));
    }

    pub fn build(self) -> SparseOperator {
        let n = self.rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in self.rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator {
            n,
            row_ptr,
            cols,
            vals,
        }
    }
}

impl SparseOperator {
    pub fn zero(n: usize) -> Self {
        StencilBuilder::new(n).build()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = StencilBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 1.0);
        }
        b.build()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    /// `y = Aᵀ x`.
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, xi) in x.iter().enumerate() {
            for (c, v) in self.row(i) {
                y[c] += v * xi;
            }
        }
    }

    /// `I + s A`.
    pub fn shifted_identity(&self, s: f64) -> SparseOperator {
        let mut b = StencilBuilder::new(self.n);
        for i in 0..self.n {
            b.add(i, i, 1.0);
            for (c, v) in self.row(i) {
                b.add(i, c, s * v);
            }
        }
        b.build()
    }

    /// Entrywise symmetry test with tolerance relative to the largest entry.
    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
        for i in 0..self.n {
            for (c, v) in self.row(i) {
                let mirrored = self.row(c).find(|&(cc, _)| cc == i).map_or(0.0, |(_, vv)| vv);
                if (v - mirrored).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

impl LinearMap for SparseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }
}
