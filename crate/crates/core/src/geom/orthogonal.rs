//! Sampling from O(3) for equivariance tests.

use crate::geom::rng::Rng;
use crate::geom::tensor::Mat3;
use crate::scalar::Scalar;

/// Parameterization of an orthogonal matrix: a unit quaternion for the
/// rotation part and a flag that multiplies the result by `-I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthogonalParams {
    pub quat: [f64; 4],
    pub reflect: bool,
}

impl OrthogonalParams {
    pub const IDENTITY: Self = Self {
        quat: [1.0, 0.0, 0.0, 0.0],
        reflect: false,
    };

    /// Haar-uniform rotation part; reflection with probability one half.
    pub fn sample(rng: &mut Rng) -> Self {
        let mut q = [0.0; 4];
        loop {
            for x in q.iter_mut() {
                *x = rng.normal();
            }
            let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                q.iter_mut().for_each(|x| *x /= n);
                break;
            }
        }
        Self {
            quat: q,
            reflect: rng.coin(),
        }
    }

    pub fn matrix<T: Scalar>(&self) -> Mat3<T> {
        let [w, x, y, z] = self.quat;
        let n2 = w * w + x * x + y * y + z * z;
        let s = 2.0 / n2;
        let m = [
            [1.0 - s * (y * y + z * z), s * (x * y - w * z), s * (x * z + w * y)],
            [s * (x * y + w * z), 1.0 - s * (x * x + z * z), s * (y * z - w * x)],
            [s * (x * z - w * y), s * (y * z + w * x), 1.0 - s * (x * x + y * y)],
        ];
        let sign = if self.reflect { -1.0 } else { 1.0 };
        m.map(|row| row.map(|v| T::of(sign * v)))
    }
}

/// Random orthogonal 3x3 matrix; both determinant branches are reachable.
pub fn sample_orthogonal<T: Scalar>(rng: &mut Rng) -> Mat3<T> {
    OrthogonalParams::sample(rng).matrix()
}

pub fn det3<T: Scalar>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `max |(M^T M - I)_{ij}|`.
pub fn orthogonality_defect<T: Scalar>(m: &Mat3<T>) -> T {
    let mut worst = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            let mut s = T::zero();
            for k in 0..3 {
                s += m[k][i] * m[k][j];
            }
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

pub fn mat_vec<T: Scalar>(m: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}
