use super::d2q9::{equilibrium, moments, Q};

/// Nine densities per cell plus the cached macroscopic fields, all in
/// lattice units. Cell `(r, c)` lives at index `r * cols + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    pub rows: usize,
    pub cols: usize,
    pub f: Vec<f64>,
    pub rho: Vec<f64>,
    pub u: Vec<[f64; 2]>,
}

impl LatticeState {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            f: vec![0.0; n * Q],
            rho: vec![0.0; n],
            u: vec![[0.0; 2]; n],
        }
    }

    /// Every cell at `equilibrium(rho, u)`.
    pub fn uniform(rows: usize, cols: usize, rho: f64, u: [f64; 2]) -> Self {
        let mut s = Self::zeros(rows, cols);
        let feq = equilibrium(rho, u);
        for cell in s.f.chunks_exact_mut(Q) {
            cell.copy_from_slice(&feq);
        }
        s.rho.fill(rho);
        s.u.fill(u);
        s
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let k = self.index(row, col) * Q;
        &self.f[k..k + Q]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let k = self.index(row, col) * Q;
        &mut self.f[k..k + Q]
    }

    pub fn set_equilibrium(&mut self, row: usize, col: usize, rho: f64, u: [f64; 2]) {
        let k = self.index(row, col);
        self.f[k * Q..(k + 1) * Q].copy_from_slice(&equilibrium(rho, u));
        self.rho[k] = rho;
        self.u[k] = u;
    }

    /// Refresh `rho` and `u` from the densities.
    pub fn recompute_moments(&mut self) {
        for ((cell, rho), u) in self.f.chunks_exact(Q).zip(&mut self.rho).zip(&mut self.u) {
            let (r, j) = moments(cell);
            *rho = r;
            *u = if r != 0.0 { [j[0] / r, j[1] / r] } else { [0.0; 2] };
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.f.iter().sum()
    }

    pub fn same_shape(&self, other: &LatticeState) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}
