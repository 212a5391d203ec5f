//! Random maps F(ω,x) = Λ(ω)x + f(ω,x) with a fixed point at 0, their cut-off
//! extensions and cocycle iteration.
//!
//! Everything downstream talks to a map through the [`Cocycle`] trait, where
//! the driving point is an integer time index `t` (meaning θ^t ω).

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffSpec;
use crate::driving::{DrivingSpec, DrivingState, DrivingSystem};
use crate::error::{Error, Result};
use crate::linalg::{inverse, op_norm, Matrix, Vector};
use crate::sampling::halton_ball;

/// Coordinate blocks X_1, …, X_p of R^d in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for d in &dims {
            offsets.push(acc);
            acc += d;
        }
        Self { dims, offsets }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn count(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn indices(&self, block: usize) -> Vec<usize> {
        (self.offsets[block]..self.offsets[block] + self.dims[block]).collect()
    }

    /// Concatenated coordinates of several blocks, sorted.
    pub fn indices_of(&self, blocks: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = blocks.iter().flat_map(|&b| self.indices(b)).collect();
        out.sort_unstable();
        out
    }

    pub fn block_of(&self, coord: usize) -> usize {
        self.offsets.iter().rposition(|&o| o <= coord).unwrap_or(0)
    }
}

/// Anything that behaves like a family of maps along a driving orbit.
pub trait Cocycle: Sync {
    fn dim(&self) -> usize;
    fn layout(&self) -> &BlockLayout;
    /// Λ at time t (block diagonal).
    fn linear(&self, t: i64) -> Matrix;
    fn map(&self, t: i64, x: &Vector) -> Vector;
    fn jacobian(&self, t: i64, x: &Vector) -> Matrix;

    fn linear_inverse(&self, t: i64) -> Matrix {
        inverse(&self.linear(t)).expect("linear part is invertible")
    }

    /// f = F - Λx.
    fn nonlinear(&self, t: i64, x: &Vector) -> Vector {
        self.map(t, x) - self.linear(t) * x
    }

    fn nonlinear_jacobian(&self, t: i64, x: &Vector) -> Matrix {
        self.jacobian(t, x) - self.linear(t)
    }

    /// Solves F(t, y) = x for y.
    fn inverse_map(&self, t: i64, x: &Vector) -> Result<Vector> {
        newton_inverse(self, t, x)
    }

    /// ∂²F_k(t, x) for k = 0..d; central differences of the Jacobian unless overridden.
    fn hessians(&self, t: i64, x: &Vector) -> Vec<Matrix> {
        let d = self.dim();
        let h = 1e-5 * (1.0 + x.amax());
        let mut out = vec![Matrix::zeros(d, d); d];
        for c in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += h;
            xm[c] -= h;
            let dj = (self.jacobian(t, &xp) - self.jacobian(t, &xm)) / (2.0 * h);
            for (k, hk) in out.iter_mut().enumerate() {
                hk.column_mut(c).copy_from(&dj.row(k).transpose());
            }
        }
        for hk in &mut out {
            let sym = (&*hk + hk.transpose()) * 0.5;
            *hk = sym;
        }
        out
    }
}

/// Damped Newton inversion of F(t,·), started from Λ^{-1}x.
pub fn newton_inverse<C: Cocycle + ?Sized>(c: &C, t: i64, x: &Vector) -> Result<Vector> {
    let mut y = c.linear_inverse(t) * x;
    let scale = x.norm();
    if scale == 0.0 {
        return Ok(y);
    }
    let mut r = c.map(t, &y) - x;
    let mut rn = r.norm();
    // at least two Newton steps, so small components are resolved to their own precision
    for it in 0..100 {
        if it >= 2 && rn <= 1e-15 * scale {
            return Ok(y);
        }
        let j = c.jacobian(t, &y);
        let step = match j.lu().solve(&r) {
            Some(s) => s,
            None => break,
        };
        let mut alpha = 1.0;
        loop {
            let cand = &y - &step * alpha;
            let rc = c.map(t, &cand) - x;
            let rcn = rc.norm();
            if rcn < rn || alpha < 1e-4 {
                let moved = (&step * alpha).norm();
                y = cand;
                r = rc;
                let stalled = rcn >= rn;
                rn = rcn;
                if it >= 2 && (moved <= 1e-16 * y.norm() || stalled) {
                    return finish(y, rn, scale);
                }
                break;
            }
            alpha *= 0.5;
        }
    }
    finish(y, rn, scale)
}

fn finish(y: Vector, rn: f64, scale: f64) -> Result<Vector> {
    if rn <= 1e-12 * scale.max(1e-300) || rn <= 1e-14 {
        Ok(y)
    } else {
        Err(Error::NoConvergence { what: "inverse map", iterations: 100, last: rn })
    }
}

/// F(n, θ^t ω, x) together with its Jacobian, for any sign of n.
pub fn iterate<C: Cocycle + ?Sized>(c: &C, t: i64, n: i64, x: &Vector) -> Result<(Vector, Matrix)> {
    let d = c.dim();
    let mut y = x.clone();
    let mut jac = Matrix::identity(d, d);
    if n >= 0 {
        for k in 0..n {
            let j = c.jacobian(t + k, &y);
            y = c.map(t + k, &y);
            jac = j * jac;
        }
    } else {
        for k in 1..=(-n) {
            y = c.inverse_map(t - k, &y)?;
            let j = c.jacobian(t - k, &y);
            jac = inverse(&j)? * jac;
        }
    }
    Ok((y, jac))
}

/// Points F(k, θ^t ω, x) for k = 0..=n (n ≥ 0) or k = 0, -1, …, n (n < 0), in that order.
pub fn trajectory<C: Cocycle + ?Sized>(c: &C, t: i64, n: i64, x: &Vector) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(n.unsigned_abs() as usize + 1);
    out.push(x.clone());
    let mut y = x.clone();
    if n >= 0 {
        for k in 0..n {
            y = c.map(t + k, &y);
            out.push(y.clone());
        }
    } else {
        for k in 1..=(-n) {
            y = c.inverse_map(t - k, &y)?;
            out.push(y.clone());
        }
    }
    Ok(out)
}

/// A monomial c·Π x_i^{p_i} contributing to component `out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub out: usize,
    pub coeff: f64,
    pub powers: Vec<u32>,
}

/// Built-in nonlinearities, each with analytic first and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum Nonlinearity {
    Zero,
    Polynomial(Vec<PolyTerm>),
    /// f_target += scale · s² · b(s/width) with s = x_source and b the compact bump profile.
    Bump { source: usize, target: usize, scale: f64, width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl Nonlinearity {
    pub fn from_spec(spec: &NonlinearitySpec, d: usize) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("nonlinearity.params: {m}"));
        let nl = match spec.name.as_str() {
            "zero" => Nonlinearity::Zero,
            "quadratic" => {
                let terms: Vec<(usize, usize, usize, f64)> =
                    serde_json::from_value(spec.params.get("terms").cloned().unwrap_or_default())
                        .map_err(|e| bad(&format!("terms: {e}")))?;
                let mut poly = Vec::new();
                for (out, i, j, coeff) in terms {
                    if out >= d || i >= d || j >= d {
                        return Err(bad("quadratic term index out of range"));
                    }
                    let mut powers = vec![0; d];
                    powers[i] += 1;
                    powers[j] += 1;
                    poly.push(PolyTerm { out, coeff, powers });
                }
                Nonlinearity::Polynomial(poly)
            }
            "polynomial" => {
                let terms: Vec<PolyTerm> =
                    serde_json::from_value(spec.params.get("terms").cloned().unwrap_or_default())
                        .map_err(|e| bad(&format!("terms: {e}")))?;
                for t in &terms {
                    if t.out >= d || t.powers.len() != d {
                        return Err(bad("polynomial term has wrong dimension"));
                    }
                    if t.powers.iter().sum::<u32>() < 2 {
                        return Err(bad("polynomial terms need total degree >= 2"));
                    }
                }
                Nonlinearity::Polynomial(terms)
            }
            "bump_coupling" => {
                let get = |k: &str| {
                    spec.params.get(k).and_then(|v| v.as_f64()).ok_or_else(|| bad(&format!("missing {k}")))
                };
                let (source, target) = (get("source")? as usize, get("target")? as usize);
                let (scale, width) = (get("scale")?, get("width")?);
                if source >= d || target >= d || !(width > 0.0) {
                    return Err(bad("bump_coupling indices or width invalid"));
                }
                Nonlinearity::Bump { source, target, scale, width }
            }
            other => return Err(Error::Invalid(format!("unknown nonlinearity {other:?}"))),
        };
        Ok(nl)
    }

    pub fn to_spec(&self) -> NonlinearitySpec {
        match self {
            Nonlinearity::Zero => NonlinearitySpec { name: "zero".into(), params: serde_json::json!({}) },
            Nonlinearity::Polynomial(terms) => NonlinearitySpec {
                name: "polynomial".into(),
                params: serde_json::json!({ "terms": terms }),
            },
            Nonlinearity::Bump { source, target, scale, width } => NonlinearitySpec {
                name: "bump_coupling".into(),
                params: serde_json::json!({"source": source, "target": target, "scale": scale, "width": width}),
            },
        }
    }

    fn bump_profile(s: f64, width: f64) -> [f64; 3] {
        // b(s) = H(s²/w²) with H the unit-radius cut-off profile.
        let unit = CutoffSpec::new(1.0);
        let w2 = width * width;
        let [h, h1, h2, _] = unit.profile(s * s / w2);
        let b1 = h1 * 2.0 * s / w2;
        let b2 = h2 * 4.0 * s * s / (w2 * w2) + h1 * 2.0 / w2;
        [h, b1, b2]
    }

    /// (value, Jacobian, Hessians) with `order` controlling how much is computed.
    pub fn eval(&self, x: &Vector, order: u8) -> (Vector, Option<Matrix>, Option<Vec<Matrix>>) {
        let d = x.len();
        let mut v = Vector::zeros(d);
        let mut j = (order >= 1).then(|| Matrix::zeros(d, d));
        let mut h = (order >= 2).then(|| vec![Matrix::zeros(d, d); d]);
        match self {
            Nonlinearity::Zero => {}
            Nonlinearity::Polynomial(terms) => {
                for t in terms {
                    let mono = |skip: &[usize]| -> f64 {
                        let mut p = t.coeff;
                        let mut pw: Vec<i32> = t.powers.iter().map(|&q| q as i32).collect();
                        for &s in skip {
                            p *= pw[s] as f64;
                            pw[s] -= 1;
                        }
                        if p == 0.0 || pw.iter().any(|&q| q < 0) {
                            return 0.0;
                        }
                        for (i, &q) in pw.iter().enumerate() {
                            if q > 0 {
                                p *= x[i].powi(q);
                            }
                        }
                        p
                    };
                    v[t.out] += mono(&[]);
                    if let Some(j) = j.as_mut() {
                        for a in 0..d {
                            if t.powers[a] > 0 {
                                j[(t.out, a)] += mono(&[a]);
                            }
                        }
                    }
                    if let Some(h) = h.as_mut() {
                        for a in 0..d {
                            for b in a..d {
                                if t.powers[a] > 0 && t.powers[b] > 0 {
                                    let m = mono(&[a, b]);
                                    h[t.out][(a, b)] += m;
                                    if a != b {
                                        h[t.out][(b, a)] += m;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Nonlinearity::Bump { source, target, scale, width } => {
                let s = x[*source];
                let [b, b1, b2] = Self::bump_profile(s, *width);
                v[*target] += scale * s * s * b;
                if let Some(j) = j.as_mut() {
                    j[(*target, *source)] += scale * (2.0 * s * b + s * s * b1);
                }
                if let Some(h) = h.as_mut() {
                    h[*target][(*source, *source)] += scale * (2.0 * b + 4.0 * s * b1 + s * s * b2);
                }
            }
        }
        (v, j, h)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Nonlinearity::Zero => true,
            Nonlinearity::Polynomial(t) => t.iter().all(|t| t.coeff == 0.0),
            Nonlinearity::Bump { scale, .. } => *scale == 0.0,
        }
    }
}

/// `{"constant": [[..]]}` or `{"per_symbol": [[[..]], ..]}`, matrices as row lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPartSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_symbol: Option<Vec<Vec<Vec<f64>>>>,
}

/// The on-disk system description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default)]
    pub name: String,
    pub dimension: usize,
    pub blocks: Vec<usize>,
    pub driving: DrivingSpec,
    pub linear_part: LinearPartSpec,
    pub nonlinearity: NonlinearitySpec,
    pub rho: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Invalid(format!("system file at `{}`: {}", e.path(), e.inner())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("system file serializes")
    }
}

/// Which sample-point order `evaluate` should return.
#[derive(Clone, Debug, PartialEq)]
pub enum Evaluation {
    Value(Vector),
    Jacobian(Matrix),
    Hessian(Vec<Matrix>),
}

#[derive(Clone, Debug)]
pub struct RandomMapSystem {
    name: String,
    layout: BlockLayout,
    driving: DrivingSystem,
    linear: Vec<Matrix>,
    linear_inv: Vec<Matrix>,
    nonlinearity: Nonlinearity,
    cutoff: CutoffSpec,
    alpha: f64,
    extended: bool,
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Matrix> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Invalid(format!("{what}: expected a {d}x{d} matrix")));
    }
    Ok(Matrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl RandomMapSystem {
    /// Validates a system description. The result is the raw map; call [`extend`](Self::extend)
    /// for the cut-off version used by the solvers.
    pub fn from_file(file: &SystemFile) -> Result<Self> {
        let d = file.dimension;
        if d == 0 {
            return Err(Error::Invalid("dimension must be positive".into()));
        }
        if file.blocks.iter().sum::<usize>() != d || file.blocks.contains(&0) {
            return Err(Error::Invalid(format!(
                "blocks {:?} do not sum to dimension {d}",
                file.blocks
            )));
        }
        let layout = BlockLayout::new(file.blocks.clone());
        let driving = DrivingSystem::new(file.driving.clone())?;
        let linear = match (&file.linear_part.constant, &file.linear_part.per_symbol) {
            (Some(m), None) => vec![matrix_from_rows(m, d, "linear_part.constant")?],
            (None, Some(ms)) if !ms.is_empty() => ms
                .iter()
                .enumerate()
                .map(|(k, m)| matrix_from_rows(m, d, &format!("linear_part.per_symbol[{k}]")))
                .collect::<Result<Vec<_>>>()?,
            _ => {
                return Err(Error::Invalid(
                    "linear_part needs exactly one of `constant` or `per_symbol`".into(),
                ))
            }
        };
        if let crate::driving::DrivingKind::Bernoulli { alphabet, .. } = &file.driving.kind {
            if linear.len() != 1 && linear.len() != *alphabet {
                return Err(Error::Invalid(format!(
                    "linear_part.per_symbol has {} matrices for a {alphabet}-symbol shift",
                    linear.len()
                )));
            }
        }
        for (k, m) in linear.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    if layout.block_of(i) != layout.block_of(j) && m[(i, j)] != 0.0 {
                        return Err(Error::Invalid(format!(
                            "linear_part matrix {k} is not block diagonal at ({i},{j})"
                        )));
                    }
                }
            }
        }
        let linear_inv = linear
            .iter()
            .map(|m| inverse(m).map_err(|_| Error::Invalid("linear part is singular".into())))
            .collect::<Result<Vec<_>>>()?;
        let nonlinearity = Nonlinearity::from_spec(&file.nonlinearity, d)?;
        if !(file.rho > 0.0) {
            return Err(Error::Invalid("rho must be positive".into()));
        }
        if !(file.alpha > 0.0 && file.alpha <= 1.0) {
            return Err(Error::Invalid("alpha must lie in (0,1]".into()));
        }
        Ok(Self {
            name: file.name.clone(),
            layout,
            driving,
            linear,
            linear_inv,
            nonlinearity,
            cutoff: CutoffSpec::new(file.rho),
            alpha: file.alpha,
            extended: false,
        })
    }

    pub fn to_file(&self) -> SystemFile {
        let rows = |m: &Matrix| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        let linear_part = if self.linear.len() == 1 {
            LinearPartSpec { constant: Some(rows(&self.linear[0])), per_symbol: None }
        } else {
            LinearPartSpec { constant: None, per_symbol: Some(self.linear.iter().map(rows).collect()) }
        };
        SystemFile {
            name: self.name.clone(),
            dimension: self.dim(),
            blocks: self.layout.dims().to_vec(),
            driving: self.driving.spec().clone(),
            linear_part,
            nonlinearity: self.nonlinearity.to_spec(),
            rho: self.cutoff.rho,
            alpha: self.alpha,
        }
    }

    /// F̃(ω,x) = Λ(ω)x + u(x)f(ω,x).
    pub fn extend(&self) -> Self {
        Self { extended: true, ..self.clone() }
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { cutoff: CutoffSpec::new(rho), ..self.clone() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn driving(&self) -> &DrivingSystem {
        &self.driving
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn cutoff(&self) -> &CutoffSpec {
        &self.cutoff
    }

    pub fn rho(&self) -> f64 {
        self.cutoff.rho
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_zero()
    }

    pub fn linear_at_state(&self, s: &DrivingState) -> &Matrix {
        &self.linear[s.symbol(self.linear.len())]
    }

    fn linear_index(&self, t: i64) -> usize {
        if self.linear.len() == 1 {
            0
        } else {
            self.driving.state(t).symbol(self.linear.len())
        }
    }

    pub fn linear_ref(&self, t: i64) -> &Matrix {
        &self.linear[self.linear_index(t)]
    }

    /// f (cut off when extended) with derivatives up to `order`.
    pub fn f_eval(&self, x: &Vector, order: u8) -> (Vector, Option<Matrix>, Option<Vec<Matrix>>) {
        if !self.extended {
            return self.nonlinearity.eval(x, order);
        }
        let s = x.norm_squared();
        let r = self.cutoff.outer_radius();
        if s >= r * r {
            let d = x.len();
            return (
                Vector::zeros(d),
                (order >= 1).then(|| Matrix::zeros(d, d)),
                (order >= 2).then(|| vec![Matrix::zeros(d, d); d]),
            );
        }
        let (f, df, d2f) = self.nonlinearity.eval(x, order);
        let [u, ..] = self.cutoff.profile(s);
        if u == 1.0 {
            return (f, df, d2f);
        }
        let du = self.cutoff.gradient(x);
        let value = &f * u;
        let jac = df.as_ref().map(|df| df * u + &f * du.transpose());
        let hess = d2f.map(|h| {
            let d2u = self.cutoff.hessian(x);
            let df = df.as_ref().expect("order 2 implies order 1");
            (0..x.len())
                .map(|k| {
                    let g = df.row(k).transpose();
                    let cross = &g * du.transpose();
                    &h[k] * u + (&cross + cross.transpose()) + &d2u * f[k]
                })
                .collect()
        });
        (value, jac, hess)
    }

    pub fn evaluate(&self, state: &DrivingState, x: &Vector, order: u8) -> Result<Evaluation> {
        let lin = self.linear_at_state(state);
        let (f, df, d2f) = self.f_eval(x, order);
        Ok(match order {
            0 => Evaluation::Value(lin * x + f),
            1 => Evaluation::Jacobian(lin + df.expect("jacobian")),
            2 => Evaluation::Hessian(d2f.expect("hessian")),
            o => return Err(Error::Invalid(format!("derivative order {o} not in 0..=2"))),
        })
    }

    /// Hessians ∂²F_k at time t.
    pub fn hessian(&self, _t: i64, x: &Vector) -> Vec<Matrix> {
        self.f_eval(x, 2).2.expect("hessian")
    }

    /// Measured sup of |D²f| and |DF̃ − Λ| over a Halton sample of the closed ρ-ball.
    pub fn measured_bounds(&self, samples: usize) -> MeasuredBounds {
        let d = self.dim();
        let ext = self.extend();
        let mut m = 0.0f64;
        let mut delta = 0.0f64;
        for x in halton_ball(samples, d, self.rho()) {
            let (_, _, h) = self.nonlinearity.eval(&x, 2);
            for hk in h.expect("hessian") {
                m = m.max(op_norm(&hk));
            }
            let (_, dj, _) = ext.f_eval(&x, 1);
            delta = delta.max(op_norm(&dj.expect("jacobian")));
        }
        MeasuredBounds { m, delta }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasuredBounds {
    /// sup |D²f| on the ρ-ball.
    pub m: f64,
    /// sup |DF̃ − Λ| on the ρ-ball.
    pub delta: f64,
}

impl Cocycle for RandomMapSystem {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn linear(&self, t: i64) -> Matrix {
        self.linear_ref(t).clone()
    }

    fn linear_inverse(&self, t: i64) -> Matrix {
        self.linear_inv[self.linear_index(t)].clone()
    }

    fn map(&self, t: i64, x: &Vector) -> Vector {
        self.linear_ref(t) * x + self.f_eval(x, 0).0
    }

    fn jacobian(&self, t: i64, x: &Vector) -> Matrix {
        self.linear_ref(t) + self.f_eval(x, 1).1.expect("jacobian")
    }

    fn nonlinear(&self, _t: i64, x: &Vector) -> Vector {
        self.f_eval(x, 0).0
    }

    fn nonlinear_jacobian(&self, _t: i64, x: &Vector) -> Matrix {
        self.f_eval(x, 1).1.expect("jacobian")
    }

    fn hessians(&self, _t: i64, x: &Vector) -> Vec<Matrix> {
        self.f_eval(x, 2).2.expect("hessian")
    }
}
