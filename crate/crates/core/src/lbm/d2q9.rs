//! D2Q9 velocity set.
//!
//! Direction 0 is at rest; odd directions are axis-aligned, even non-zero
//! directions are diagonals, numbered counter-clockwise from `+x`.

pub const Q: usize = 9;

pub const E: [[i32; 2]; Q] = [
    [0, 0],
    [1, 0],
    [1, 1],
    [0, 1],
    [-1, 1],
    [-1, 0],
    [-1, -1],
    [0, -1],
    [1, -1],
];

pub const W: [f64; Q] = [
    4.0 / 9.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 9.0,
    1.0 / 36.0,
    1.0 / 9.0,
    1.0 / 36.0,
];

pub const OPPOSITE: [usize; Q] = [0, 5, 6, 7, 8, 1, 2, 3, 4];

const EX: [f64; Q] = [0.0, 1.0, 1.0, 0.0, -1.0, -1.0, -1.0, 0.0, 1.0];
const EY: [f64; Q] = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, -1.0, -1.0, -1.0];

/// Second-order equilibrium `w_i rho [1 + 3 e.u - 3/2 u.u + 9/2 (e.u)^2]`.
#[inline]
pub fn equilibrium(rho: f64, u: [f64; 2]) -> [f64; Q] {
    let usq = 1.5 * (u[0] * u[0] + u[1] * u[1]);
    let mut feq = [0.0; Q];
    for i in 0..Q {
        let eu = EX[i] * u[0] + EY[i] * u[1];
        feq[i] = W[i] * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - usq);
    }
    feq
}

/// Density and momentum `(sum f, sum f e)`.
#[inline]
pub fn moments(f: &[f64]) -> (f64, [f64; 2]) {
    let rho = f[0] + f[1] + f[2] + f[3] + f[4] + f[5] + f[6] + f[7] + f[8];
    let jx = (f[1] + f[2] + f[8]) - (f[4] + f[5] + f[6]);
    let jy = (f[2] + f[3] + f[4]) - (f[6] + f[7] + f[8]);
    (rho, [jx, jy])
}
