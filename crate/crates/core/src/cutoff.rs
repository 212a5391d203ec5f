//! Smooth radial cut-off u(x) = h(|x|^2) built from the compact exponential bump
//! g(s) = exp(ĥ^2 / ((s - ĥ/2)(s - ĥ))) on (ĥ/2, ĥ), with ĥ = ρ^2.
//!
//! u is exactly 1 for |x| ≤ ρ/√2 and exactly 0 for |x| ≥ ρ (Euclidean norm).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];
const PANELS: usize = 4096;

/// exp(1/((t-1/2)(t-1))) on (1/2, 1): the bump in normalised variable t = s/ĥ.
fn bump(t: f64) -> f64 {
    if t <= 0.5 || t >= 1.0 {
        return 0.0;
    }
    (1.0 / ((t - 0.5) * (t - 1.0))).exp()
}

/// (G, G', G'') in the normalised variable.
fn bump_derivs(t: f64) -> [f64; 3] {
    if t <= 0.5 || t >= 1.0 {
        return [0.0; 3];
    }
    let q = (t - 0.5) * (t - 1.0);
    let dq = 2.0 * t - 1.5;
    let g = (1.0 / q).exp();
    let p1 = -dq / (q * q);
    let p2 = -2.0 / (q * q) + 2.0 * dq * dq / (q * q * q);
    [g, p1 * g, (p2 + p1 * p1) * g]
}

fn gauss(a: f64, b: f64) -> f64 {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * bump(m + r * x)).sum::<f64>() * r
}

/// tail[k] = ∫_{t_k}^1 G with t_k = 1/2 + k/(2·PANELS).
fn tail_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let dt = 0.5 / PANELS as f64;
        let mut tail = vec![0.0; PANELS + 1];
        for k in (0..PANELS).rev() {
            let a = 0.5 + k as f64 * dt;
            tail[k] = tail[k + 1] + gauss(a, a + dt);
        }
        tail
    })
}

/// ∫_{t}^{1} G for t in [1/2, 1].
fn tail_integral(t: f64) -> f64 {
    if t <= 0.5 {
        return tail_table()[0];
    }
    if t >= 1.0 {
        return 0.0;
    }
    let dt = 0.5 / PANELS as f64;
    let k = (((t - 0.5) / dt) as usize).min(PANELS - 1);
    let right = 0.5 + (k + 1) as f64 * dt;
    tail_table()[k + 1] + gauss(t, right)
}

/// Closed-form constant C_u = 6(4e^-4 + 9/2 e^-3 + 8e^-2)(1/16 - 1/(ln2+16))^(-1/2) e^16.
pub fn closed_form_c_u() -> f64 {
    let k = (1.0 / 16.0 - 1.0 / (std::f64::consts::LN_2 + 16.0)).powf(-0.5);
    6.0 * (4.0 * (-4.0f64).exp() + 4.5 * (-3.0f64).exp() + 8.0 * (-2.0f64).exp()) * k * 16.0f64.exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub rho: f64,
}

impl CutoffSpec {
    pub fn new(rho: f64) -> Self {
        Self { rho }
    }

    /// Radius of the ball on which u ≡ 1.
    pub fn inner_radius(&self) -> f64 {
        self.rho / std::f64::consts::SQRT_2
    }

    pub fn outer_radius(&self) -> f64 {
        self.rho
    }

    pub fn c_u(&self) -> f64 {
        closed_form_c_u()
    }

    /// h and its first three derivatives at s = |x|^2.
    pub fn profile(&self, s: f64) -> [f64; 4] {
        let hh = self.rho * self.rho;
        let t = s / hh;
        if t <= 0.5 {
            return [1.0, 0.0, 0.0, 0.0];
        }
        if t >= 1.0 {
            return [0.0; 4];
        }
        let z = tail_table()[0];
        let [g, g1, g2] = bump_derivs(t);
        [
            tail_integral(t) / z,
            -g / (hh * z),
            -g1 / (hh * hh * z),
            -g2 / (hh * hh * hh * z),
        ]
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.profile(x.norm_squared())[0]
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let [_, h1, _, _] = self.profile(x.norm_squared());
        x * (2.0 * h1)
    }

    pub fn hessian(&self, x: &Vector) -> Matrix {
        let [_, h1, h2, _] = self.profile(x.norm_squared());
        let d = x.len();
        x * x.transpose() * (4.0 * h2) + Matrix::identity(d, d) * (2.0 * h1)
    }

    /// Operator norms of D u, D^2 u, D^3 u at x (the third as a symmetric trilinear form).
    pub fn derivative_norms(&self, x: &Vector) -> [f64; 3] {
        let s = x.norm_squared();
        let r = s.sqrt();
        let [_, h1, h2, h3] = self.profile(s);
        let n1 = 2.0 * h1.abs() * r;
        let n2 = (2.0 * h1).abs().max((4.0 * h2 * s + 2.0 * h1).abs());
        // D^3u[v,v,v] = 8h'''c^3 + 12h''c with c = <x,v>, |c| ≤ r for unit v.
        let cubic = |c: f64| (8.0 * h3 * c * c * c + 12.0 * h2 * c).abs();
        let mut n3 = cubic(r);
        if h3 != 0.0 {
            let c2 = -12.0 * h2 / (24.0 * h3);
            if c2 > 0.0 && c2 < s {
                n3 = n3.max(cubic(c2.sqrt()));
            }
        }
        [n1, n2, n3]
    }

    /// max over `radii` of ρ^r |D^r u| for r = 1, 2, 3 (radial scan suffices by symmetry).
    pub fn scaled_bounds_on(&self, radii: &[f64]) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for &r in radii {
            let x = Vector::from_vec(vec![r]);
            let n = self.derivative_norms(&x);
            for k in 0..3 {
                out[k] = out[k].max(self.rho.powi(k as i32 + 1) * n[k]);
            }
        }
        out
    }
}
