//! Small dense 2x2 real-matrix toolbox.
//!
//! Everything the moment flows and ergodicity constants need: spectra,
//! matrix exponentials, operator norms. Kept hand-rolled because the whole
//! crate only ever sees 2x2 systems.

use num_complex::Complex64;

/// Row-major 2x2 real matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);

    pub fn diag(a: f64, b: f64) -> Mat2 {
        Mat2([[a, 0.0], [0.0, b]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Discriminant of the characteristic polynomial,
    /// `(h11 - h22)^2 + 4 h12 h21 = tr^2 - 4 det`.
    pub fn discriminant(&self) -> f64 {
        let d = self.0[0][0] - self.0[1][1];
        d * d + 4.0 * self.0[0][1] * self.0[1][0]
    }

    /// Eigenvalues ordered by descending real part.
    pub fn eigenvalues(&self) -> (Complex64, Complex64) {
        let tr = self.trace();
        let delta = self.discriminant();
        if delta >= 0.0 {
            let s = delta.sqrt();
            (
                Complex64::new(0.5 * (tr + s), 0.0),
                Complex64::new(0.5 * (tr - s), 0.0),
            )
        } else {
            let b = 0.5 * (-delta).sqrt();
            (
                Complex64::new(0.5 * tr, b),
                Complex64::new(0.5 * tr, -b),
            )
        }
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2([
            [self.0[0][0], self.0[1][0]],
            [self.0[0][1], self.0[1][1]],
        ])
    }

    pub fn scale(&self, c: f64) -> Mat2 {
        Mat2([
            [c * self.0[0][0], c * self.0[0][1]],
            [c * self.0[1][0], c * self.0[1][1]],
        ])
    }

    pub fn add(&self, other: &Mat2) -> Mat2 {
        Mat2([
            [self.0[0][0] + other.0[0][0], self.0[0][1] + other.0[0][1]],
            [self.0[1][0] + other.0[1][0], self.0[1][1] + other.0[1][1]],
        ])
    }

    pub fn mul(&self, other: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &other.0;
        Mat2([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 {
            return None;
        }
        Some(Mat2([
            [self.0[1][1] / d, -self.0[0][1] / d],
            [-self.0[1][0] / d, self.0[0][0] / d],
        ]))
    }

    /// Operator 2-norm (largest singular value).
    pub fn norm2(&self) -> f64 {
        // Largest eigenvalue of the symmetric matrix A^T A.
        let m = self.transpose().mul(self);
        let a = m.0[0][0];
        let b = 0.5 * (m.0[0][1] + m.0[1][0]);
        let c = m.0[1][1];
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (mid + rad).max(0.0).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        let r0 = self.0[0][0].abs() + self.0[0][1].abs();
        let r1 = self.0[1][0].abs() + self.0[1][1].abs();
        r0.max(r1)
    }
}

/// `exp(tH)` by the explicit 2x2 spectral formula when the discriminant is
/// safely away from zero, scaling-and-squaring of the order-13 Taylor series
/// in the near-defective case.
pub fn expm(h: &Mat2, t: f64) -> Mat2 {
    let delta = h.discriminant();
    if delta.abs() > 1e-10 {
        expm_spectral(h, t, delta)
    } else {
        expm_series(&h.scale(t))
    }
}

fn expm_spectral(h: &Mat2, t: f64, delta: f64) -> Mat2 {
    let tr = h.trace();
    if delta > 0.0 {
        // exp(tH) = e^{m1 t}(H - m2 I)/(m1 - m2) + e^{m2 t}(H - m1 I)/(m2 - m1)
        let s = delta.sqrt();
        let m1 = 0.5 * (tr + s);
        let m2 = 0.5 * (tr - s);
        let p1 = h.add(&Mat2::diag(-m2, -m2)).scale(1.0 / s);
        let p2 = h.add(&Mat2::diag(-m1, -m1)).scale(-1.0 / s);
        p1.scale((m1 * t).exp()).add(&p2.scale((m2 * t).exp()))
    } else {
        // Complex pair a +- ib: exp(tH) = e^{at}[cos(bt) I + sin(bt)(H - aI)/b]
        let a = 0.5 * tr;
        let b = 0.5 * (-delta).sqrt();
        let n = h.add(&Mat2::diag(-a, -a)).scale(1.0 / b);
        Mat2::IDENTITY
            .scale((b * t).cos())
            .add(&n.scale((b * t).sin()))
            .scale((a * t).exp())
    }
}

/// Order-13 truncated Taylor series with scaling and squaring.
fn expm_series(a: &Mat2) -> Mat2 {
    let norm = a.norm_inf();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings as i32));
    let mut sum = Mat2::IDENTITY;
    let mut term = Mat2::IDENTITY;
    for k in 1..=13u32 {
        term = term.mul(&scaled).scale(1.0 / k as f64);
        sum = sum.add(&term);
    }
    for _ in 0..squarings {
        sum = sum.mul(&sum);
    }
    sum
}

/// `int_0^t exp(sH) ds`, via `H^{-1}(exp(tH) - I)` when H is invertible,
/// composite Simpson quadrature otherwise.
pub fn integral_expm(h: &Mat2, t: f64) -> Mat2 {
    if t == 0.0 {
        return Mat2::ZERO;
    }
    if let Some(hinv) = h.inverse() {
        if h.det().abs() > 1e-12 {
            return hinv.mul(&expm(h, t).add(&Mat2::IDENTITY.scale(-1.0)));
        }
    }
    // Simpson with an even number of panels.
    let n = 2 * ((t / 1e-3).ceil() as usize).clamp(1, 20_000);
    let hstep = t / n as f64;
    let mut acc = Mat2::ZERO;
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc = acc.add(&expm(h, i as f64 * hstep).scale(w));
    }
    acc.scale(hstep / 3.0)
}
