//! The linearizing conjugacy: one-sided limits ψ = lim Λ^{∓k}F^{±k} for contracting
//! and expanding block maps, the decoupler φ(x) = x + π_s p_0(x,0) + π_u q_0(x,0),
//! Φ = ψ ∘ φ, and escape times from the unit half-ball.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::foliation::{intermediate_leaf, leaf_chart, LpConfig, Side};
use crate::linalg::{embed, inverse, submatrix, subvector, Matrix, Vector};
use crate::sampling::halton_ball;
use crate::spectrum::{ConstantsBudget, Spectrum};
use crate::system::{newton_inverse, Cocycle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// ψ(t,z) = lim Λ(k,t)⁻¹ F(k,t,z).
    Contracting,
    /// ψ(t,z) = lim Λ(k,t−k) F(−k,t,z).
    Expanding,
}

type MapFn<'a> = Box<dyn Fn(i64, &Vector) -> Result<Vector> + Send + Sync + 'a>;
type LinFn<'a> = Box<dyn Fn(i64) -> Matrix + Send + Sync + 'a>;

/// A map of one invariant subspace together with its linear part.
pub struct BlockMap<'a> {
    pub dim: usize,
    pub direction: Direction,
    forward: MapFn<'a>,
    backward: MapFn<'a>,
    linear: LinFn<'a>,
    pub k_max: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitValue {
    pub value: Vector,
    pub steps: usize,
    pub last_diff: f64,
}

impl<'a> BlockMap<'a> {
    pub fn new(
        dim: usize,
        direction: Direction,
        forward: impl Fn(i64, &Vector) -> Result<Vector> + Send + Sync + 'a,
        backward: impl Fn(i64, &Vector) -> Result<Vector> + Send + Sync + 'a,
        linear: impl Fn(i64) -> Matrix + Send + Sync + 'a,
    ) -> Self {
        Self {
            dim,
            direction,
            forward: Box::new(forward),
            backward: Box::new(backward),
            linear: Box::new(linear),
            k_max: 400,
            abs_tol: 1e-16,
            rel_tol: 1e-14,
        }
    }

    pub fn map(&self, t: i64, z: &Vector) -> Result<Vector> {
        (self.forward)(t, z)
    }

    pub fn linear(&self, t: i64) -> Matrix {
        (self.linear)(t)
    }

    fn limit(&self, mut step: impl FnMut(usize) -> Result<Vector>) -> Result<LimitValue> {
        let mut prev = step(0)?;
        let mut calm = 0;
        let mut diff = f64::INFINITY;
        for k in 1..=self.k_max {
            let cur = step(k)?;
            diff = (&cur - &prev).norm();
            if !diff.is_finite() {
                break;
            }
            calm = if diff <= self.abs_tol + self.rel_tol * cur.norm() { calm + 1 } else { 0 };
            prev = cur;
            if calm >= 3 {
                return Ok(LimitValue { value: prev, steps: k, last_diff: diff });
            }
        }
        Err(Error::NoConvergence { what: "one-sided linearization limit", iterations: self.k_max, last: diff })
    }

    /// ψ(t, z).
    pub fn linearize(&self, t: i64, z: &Vector) -> Result<LimitValue> {
        let mut y = z.clone();
        let mut acc = Matrix::identity(self.dim, self.dim);
        match self.direction {
            Direction::Contracting => self.limit(|k| {
                if k > 0 {
                    let s = t + k as i64 - 1;
                    y = (self.forward)(s, &y)?;
                    acc = &acc * inverse(&(self.linear)(s))?;
                }
                Ok(&acc * &y)
            }),
            Direction::Expanding => self.limit(|k| {
                if k > 0 {
                    let s = t - k as i64;
                    y = (self.backward)(s, &y)?;
                    acc = &acc * (self.linear)(s);
                }
                Ok(&acc * &y)
            }),
        }
    }

    /// ψ⁻¹(t, w) = lim F(∓k) Λ(±k) w.
    pub fn unlinearize(&self, t: i64, w: &Vector) -> Result<LimitValue> {
        match self.direction {
            Direction::Contracting => self.limit(|k| {
                let mut y = w.clone();
                for s in t..t + k as i64 {
                    y = (self.linear)(s) * y;
                }
                for s in (t..t + k as i64).rev() {
                    y = (self.backward)(s, &y)?;
                }
                Ok(y)
            }),
            Direction::Expanding => self.limit(|k| {
                let mut y = w.clone();
                for s in (t - k as i64..t).rev() {
                    y = inverse(&(self.linear)(s))? * y;
                }
                for s in t - k as i64..t {
                    y = (self.forward)(s, &y)?;
                }
                Ok(y)
            }),
        }
    }

    /// ‖ψ(t+1, F(t,z)) − Λ(t)ψ(t,z)‖.
    pub fn residual(&self, t: i64, z: &Vector) -> Result<f64> {
        let lhs = self.linearize(t + 1, &self.map(t, z)?)?.value;
        let rhs = self.linear(t) * self.linearize(t, z)?.value;
        Ok((lhs - rhs).norm())
    }
}

/// The restriction of a cocycle to an invariant coordinate subspace.
pub fn restricted_block<'a, C: Cocycle + ?Sized>(c: &'a C, coords: Vec<usize>, direction: Direction) -> BlockMap<'a> {
    let d = c.dim();
    let (cf, cb, cl) = (coords.clone(), coords.clone(), coords.clone());
    BlockMap::new(
        coords.len(),
        direction,
        move |t, z| Ok(subvector(&c.map(t, &embed(d, &cf, z)), &cf)),
        move |t, z| Ok(subvector(&newton_inverse(c, t, &embed(d, &cb, z))?, &cb)),
        move |t| submatrix(&c.linear(t), &cl, &cl),
    )
}

/// F̄_i(t, x_i) = π_i F̄(t, x_i + γ_i(t, x_i)) on the invariant manifold tangent to X_i at 0.
pub fn block_chart<'a, C: Cocycle + ?Sized>(
    c: &'a C,
    spec: &'a Spectrum,
    budget: &'a ConstantsBudget,
    i: usize,
) -> Result<BlockMap<'a>> {
    if i >= spec.tau {
        return Err(Error::Invalid(format!("block {i} is not expanding")));
    }
    let d = c.dim();
    let ci = spec.coords[i].clone();
    if ci.len() == d {
        return Ok(restricted_block(c, ci, Direction::Expanding));
    }
    let zero = Vector::zeros(d);
    let base = LpConfig::new(Side::Stable);
    let lift = move |t: i64, z: &Vector| -> Result<Vector> {
        intermediate_leaf(c, spec, budget, t, &zero, i, &base)?.point(z)
    };
    let lift = std::sync::Arc::new(lift);
    let (lf, lb) = (lift.clone(), lift);
    let (cf, cb, cl) = (ci.clone(), ci.clone(), ci);
    Ok(BlockMap::new(
        cf.len(),
        Direction::Expanding,
        move |t, z| Ok(subvector(&c.map(t, &lf(t, z)?), &cf)),
        move |t, z| {
            // Newton on z ↦ F̄_i(t, z) with the image leaf fixed.
            let target = lb(t + 1, z)?;
            Ok(subvector(&newton_inverse(c, t, &target)?, &cb))
        },
        move |t| submatrix(&c.linear(t), &cl, &cl),
    ))
}

/// Largest ‖π_s F(t, x_u)‖ + ‖π_u F(t, x_s)‖ over sampled points of the two coordinate subspaces.
pub fn flatness_defect<C: Cocycle + ?Sized>(c: &C, spec: &Spectrum, t: i64, radius: f64) -> f64 {
    let d = c.dim();
    let (u, s) = (spec.unstable_coords(), spec.stable_coords());
    let mut worst = 0.0f64;
    for (own, other) in [(&u, &s), (&s, &u)] {
        for z in halton_ball(32, own.len(), radius) {
            let fx = c.map(t, &embed(d, own, &z));
            worst = worst.max(subvector(&fx, other).amax());
        }
    }
    worst
}

/// φ and its inverse from the stable and unstable leaves.
pub struct Decoupler<'a, C: Cocycle + ?Sized> {
    sys: &'a C,
    spec: &'a Spectrum,
    budget: &'a ConstantsBudget,
    pub tol: f64,
    pub max_iter: usize,
}

pub fn decouple<'a, C: Cocycle + ?Sized>(
    sys: &'a C,
    spec: &'a Spectrum,
    budget: &'a ConstantsBudget,
) -> Result<Decoupler<'a, C>> {
    if !spec.is_aligned() {
        return Err(Error::Precondition("coordinate blocks are not aligned with the spectrum".into()));
    }
    let defect = flatness_defect(sys, spec, 0, 1.0);
    if defect > 1e-12 {
        return Err(Error::Precondition(format!(
            "stable and unstable manifolds of 0 are not the coordinate subspaces (defect {defect:e})"
        )));
    }
    Ok(Decoupler { sys, spec, budget, tol: 1e-14, max_iter: 100 })
}

impl<'a, C: Cocycle + ?Sized> Decoupler<'a, C> {
    /// x + q_0(t,x,0): where the stable leaf through x meets X_u.
    pub fn stable_foot(&self, t: i64, x: &Vector) -> Result<Vector> {
        let leaf = leaf_chart(self.sys, self.spec, self.budget, t, x, &LpConfig::new(Side::Stable))?;
        leaf.point(&Vector::zeros(leaf.graph_coords().len()))
    }

    /// x + p_0(t,x,0): where the unstable leaf through x meets X_s.
    pub fn unstable_foot(&self, t: i64, x: &Vector) -> Result<Vector> {
        let leaf = leaf_chart(self.sys, self.spec, self.budget, t, x, &LpConfig::new(Side::Unstable))?;
        leaf.point(&Vector::zeros(leaf.graph_coords().len()))
    }

    pub fn phi(&self, t: i64, x: &Vector) -> Result<Vector> {
        let d = x.len();
        let (u, s) = (self.spec.unstable_coords(), self.spec.stable_coords());
        let mut out = Vector::zeros(d);
        if !u.is_empty() && !s.is_empty() {
            let fs = self.stable_foot(t, x)?;
            let fu = self.unstable_foot(t, x)?;
            for &k in &u {
                out[k] = fs[k];
            }
            for &k in &s {
                out[k] = fu[k];
            }
            Ok(out)
        } else {
            Ok(x.clone())
        }
    }

    /// φ⁻¹ as the fixed point of x ↦ w − (φ(x) − x).
    pub fn phi_inverse(&self, t: i64, w: &Vector) -> Result<Vector> {
        let mut x = w.clone();
        let mut last = f64::INFINITY;
        for _ in 0..self.max_iter {
            let next = w - (self.phi(t, &x)? - &x);
            let step = (&next - &x).norm();
            x = next;
            if step <= self.tol * (1.0 + w.norm()) {
                return Ok(x);
            }
            if step > last && step > 1e-10 {
                return Err(Error::Contraction { what: "decoupler inverse", ratio: step / last });
            }
            last = step;
        }
        if last < 1e-12 {
            Ok(x)
        } else {
            Err(Error::NoConvergence { what: "decoupler inverse", iterations: self.max_iter, last })
        }
    }

    pub fn stable_block(&self) -> BlockMap<'a> {
        restricted_block(self.sys, self.spec.stable_coords(), Direction::Contracting)
    }

    pub fn unstable_block(&self) -> BlockMap<'a> {
        restricted_block(self.sys, self.spec.unstable_coords(), Direction::Expanding)
    }

    /// max over the grid of the variation of π_u(φ∘F∘φ⁻¹) in π_s z (and of π_s in π_u z).
    pub fn cross_coupling(&self, t: i64, fixed: &Vector, scan: &[Vector]) -> Result<f64> {
        let (u, s) = (self.spec.unstable_coords(), self.spec.stable_coords());
        let conj = |z: &Vector| -> Result<Vector> { self.phi(t + 1, &self.sys.map(t, &self.phi_inverse(t, z)?)) };
        let base = conj(fixed)?;
        let mut worst = 0.0f64;
        for v in scan {
            for (keep, vary) in [(&u, &s), (&s, &u)] {
                let mut z = fixed.clone();
                for &k in vary.iter() {
                    z[k] += v[k];
                }
                let img = conj(&z)?;
                worst = worst.max((subvector(&img, keep) - subvector(&base, keep)).amax());
            }
        }
        Ok(worst)
    }
}

/// Φ = ψ ∘ φ with ψ = ψ_s ⊕ ψ_u.
pub struct Conjugacy<'a, C: Cocycle + ?Sized> {
    sys: &'a C,
    spec: &'a Spectrum,
    pub decoupler: Decoupler<'a, C>,
    pub psi_s: BlockMap<'a>,
    pub psi_u: BlockMap<'a>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjugacyReport {
    pub radius: f64,
    pub points: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub derivative_deviation: f64,
    pub max_round_trip: f64,
}

pub fn full_conjugacy<'a, C: Cocycle + ?Sized>(
    sys: &'a C,
    spec: &'a Spectrum,
    budget: &'a ConstantsBudget,
) -> Result<Conjugacy<'a, C>> {
    if spec.resonance_defect() < crate::spectrum::RESONANCE_TOL {
        return Err(Error::Precondition("spectrum violates the non-resonance condition".into()));
    }
    topological_conjugacy(sys, spec, budget)
}

/// Φ = ψ∘φ without the non-resonance check. On a resonant spectrum the block
/// limits still converge but Φ need not be C¹; use for escape-time estimates.
pub fn topological_conjugacy<'a, C: Cocycle + ?Sized>(
    sys: &'a C,
    spec: &'a Spectrum,
    budget: &'a ConstantsBudget,
) -> Result<Conjugacy<'a, C>> {
    let decoupler = decouple(sys, spec, budget)?;
    let psi_s = decoupler.stable_block();
    let psi_u = decoupler.unstable_block();
    Ok(Conjugacy { sys, spec, decoupler, psi_s, psi_u })
}

impl<'a, C: Cocycle + ?Sized> Conjugacy<'a, C> {
    fn psi(&self, t: i64, z: &Vector) -> Result<Vector> {
        let d = z.len();
        let (u, s) = (self.spec.unstable_coords(), self.spec.stable_coords());
        let mut out = Vector::zeros(d);
        if !s.is_empty() {
            out += embed(d, &s, &self.psi_s.linearize(t, &subvector(z, &s))?.value);
        }
        if !u.is_empty() {
            out += embed(d, &u, &self.psi_u.linearize(t, &subvector(z, &u))?.value);
        }
        Ok(out)
    }

    fn psi_inverse(&self, t: i64, w: &Vector) -> Result<Vector> {
        let d = w.len();
        let (u, s) = (self.spec.unstable_coords(), self.spec.stable_coords());
        let mut out = Vector::zeros(d);
        if !s.is_empty() {
            out += embed(d, &s, &self.psi_s.unlinearize(t, &subvector(w, &s))?.value);
        }
        if !u.is_empty() {
            out += embed(d, &u, &self.psi_u.unlinearize(t, &subvector(w, &u))?.value);
        }
        Ok(out)
    }

    pub fn eval(&self, t: i64, x: &Vector) -> Result<Vector> {
        self.psi(t, &self.decoupler.phi(t, x)?)
    }

    pub fn inverse(&self, t: i64, w: &Vector) -> Result<Vector> {
        self.decoupler.phi_inverse(t, &self.psi_inverse(t, w)?)
    }

    /// ‖Φ(t+1, F(t,x)) − Λ(t)Φ(t,x)‖.
    pub fn residual(&self, t: i64, x: &Vector) -> Result<f64> {
        let lhs = self.eval(t + 1, &self.sys.map(t, x))?;
        let rhs = self.sys.linear(t) * self.eval(t, x)?;
        Ok((lhs - rhs).norm())
    }

    /// max |DΦ(t,0) − id| by central differences.
    pub fn derivative_deviation(&self, t: i64, h: f64) -> Result<f64> {
        let d = self.sys.dim();
        let mut worst = 0.0f64;
        for c in 0..d {
            let mut e = Vector::zeros(d);
            e[c] = h;
            let col = (self.eval(t, &e)? - self.eval(t, &-&e)?) / (2.0 * h);
            for r in 0..d {
                let id = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((col[r] - id).abs());
            }
        }
        Ok(worst)
    }

    /// Residual, round-trip and DΦ(t,0) statistics on Halton points of the radius ball.
    pub fn verify(&self, t: i64, radius: f64, points: usize) -> Result<(ConjugacyReport, Vec<(Vector, f64, f64)>)> {
        let grid = halton_ball(points, self.sys.dim(), radius);
        let rows: Vec<(Vector, f64, f64)> = grid
            .par_iter()
            .map(|x| -> Result<(Vector, f64, f64)> {
                let res = self.residual(t, x)?;
                let back = self.inverse(t, &self.eval(t, x)?)?;
                Ok((x.clone(), res, (back - x).norm()))
            })
            .collect::<Result<_>>()?;
        let max_residual = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let mean_residual = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
        let max_round_trip = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        let derivative_deviation = self.derivative_deviation(t, 1e-4)?;
        Ok((
            ConjugacyReport { radius, points, max_residual, mean_residual, derivative_deviation, max_round_trip },
            rows,
        ))
    }
}

/// Least n ≥ 0 with ‖π_u F(n,t,x)‖ ≥ 1/2; None when that does not happen within `max_steps`.
pub fn escape_time<C: Cocycle + ?Sized>(c: &C, spec: &Spectrum, t: i64, x: &Vector, max_steps: usize) -> Option<usize> {
    let u = spec.unstable_coords();
    let mut y = x.clone();
    for n in 0..=max_steps {
        if subvector(&y, &u).norm() >= 0.5 {
            return Some(n);
        }
        y = c.map(t + n as i64, &y);
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

/// Measured constants entering the escape-time bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EscapeConstants {
    /// ‖Λ_u(n,t)v‖ ≥ K⁻¹e^{(λ_τ−3ε)n}‖v‖ over the window.
    pub k_eps: f64,
    /// ‖ψ_u(z)‖ ≤ L̂‖z‖ and ‖ψ_u⁻¹(z)‖ ≤ L̂‖z‖ for ‖z‖ ≤ 1/2, at every time of the window.
    pub l_hat: f64,
    /// ‖π_u x‖ ≤ L_3‖π_u Φ(x)‖ on the sample.
    pub l3: f64,
    pub rate: f64,
}

impl EscapeConstants {
    /// The closed-form time with Hölder exponent one; escape holds for every integer n ≥ this value.
    pub fn bound(&self, pu_x: f64, pu_y: f64) -> f64 {
        if pu_y < 1.0 / self.l_hat {
            (self.k_eps * self.l_hat * self.l3 / pu_x).ln() / self.rate
        } else {
            (self.k_eps * self.l_hat * self.l_hat).ln() / self.rate
        }
    }
}

pub fn escape_constants<C: Cocycle + ?Sized>(
    conj: &Conjugacy<'_, C>,
    budget: &ConstantsBudget,
    t: i64,
    samples: &[Vector],
    window: usize,
) -> Result<EscapeConstants> {
    let spec = conj.spec;
    let u = spec.unstable_coords();
    let rate = spec.exponents[spec.tau - 1] - 3.0 * budget.epsilon;
    let mut k_eps = 1.0f64;
    let mut acc = Matrix::identity(u.len(), u.len());
    for n in 1..=window {
        acc = submatrix(&conj.sys.linear(t + n as i64 - 1), &u, &u) * acc;
        let smin = acc.clone().svd(false, false).singular_values.min();
        k_eps = k_eps.max((rate * n as f64).exp() / smin);
    }
    // ψ_u at every time of the window, since escape is certified against L̂(θⁿω).
    let zs = halton_ball(64, u.len(), 0.5);
    let l_hat = (0..=window as i64)
        .into_par_iter()
        .map(|n| -> Result<f64> {
            let mut worst = 1.0f64;
            for z in &zs {
                if z.norm() == 0.0 {
                    continue;
                }
                let a = conj.psi_u.linearize(t + n, z)?.value.norm() / z.norm();
                let b = conj.psi_u.unlinearize(t + n, z)?.value.norm() / z.norm();
                worst = worst.max(a).max(b);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(1.0, f64::max);
    let mut l3 = 1.0f64;
    for x in samples {
        let pu = subvector(x, &u).norm();
        if pu == 0.0 {
            continue;
        }
        let py = subvector(&conj.eval(t, x)?, &u).norm();
        l3 = l3.max(pu / py);
    }
    Ok(EscapeConstants { k_eps, l_hat, l3, rate })
}
