//! Second-order normal form along an orbit: the recentred map F̂, the bilinear
//! coefficients a_{i,κ,j} removing the mixed unstable × stable terms, and the
//! transformed map F̄ = N ∘ F̂ ∘ N⁻¹.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::cutoff::CutoffSpec;
use crate::error::{Error, Result};
use crate::linalg::{submatrix, Matrix, Vector};
use crate::spectrum::{block_diagonalize, FrameChain, Spectrum, RESONANCE_TOL};
use crate::system::{BlockLayout, Cocycle};

/// F̂(n, x) = P(n+1) F(t+n, P⁻¹(n) x + x̄_n) − P(n+1) x̄_{n+1}.
pub struct HatSystem<'a, C: Cocycle + ?Sized> {
    base: &'a C,
    t: i64,
    chain: Option<FrameChain>,
    /// x̄_n for n in the chain window.
    xbar: Vec<Vector>,
}

impl<'a, C: Cocycle + ?Sized> HatSystem<'a, C> {
    /// x̄ = 0: the frames are the identity and F̂ = F at every time.
    pub fn at_fixed_point(base: &'a C, t: i64) -> Self {
        Self { base, t, chain: None, xbar: Vec::new() }
    }

    /// Frames along the orbit of x̄ for n in [n0, n1]; F̂(n, ·) exists for n in [n0, n1).
    pub fn along_orbit(
        base: &'a C,
        spec: &Spectrum,
        t: i64,
        xbar: &Vector,
        n0: i64,
        n1: i64,
        horizon: usize,
    ) -> Result<Self> {
        let chain = block_diagonalize(base, spec, t, xbar, n0, n1, horizon)?;
        let xs = chain.splittings.iter().map(|s| s.x.clone()).collect();
        Ok(Self { base, t, chain: Some(chain), xbar: xs })
    }

    pub fn chain(&self) -> Option<&FrameChain> {
        self.chain.as_ref()
    }

    /// Times n at which F̂(n, ·) is defined.
    pub fn window(&self) -> Option<(i64, i64)> {
        self.chain.as_ref().map(|c| (c.start, c.end() - 1))
    }

    fn frame(&self, n: i64) -> (Matrix, Matrix) {
        match &self.chain {
            None => {
                let d = self.base.dim();
                (Matrix::identity(d, d), Matrix::identity(d, d))
            }
            Some(c) => {
                assert!(n >= c.start && n <= c.end(), "time {n} outside the frame window");
                let s = c.splitting(n);
                (s.frame.clone(), s.frame_inv.clone())
            }
        }
    }

    fn point(&self, n: i64) -> Vector {
        match &self.chain {
            None => Vector::zeros(self.base.dim()),
            Some(c) => self.xbar[(n - c.start) as usize].clone(),
        }
    }

    /// Largest off-block norm of DF̂(n, 0) over the window (zero at the fixed point).
    pub fn off_block_residual(&self) -> f64 {
        self.chain.as_ref().map_or(0.0, |c| c.off_block_residual)
    }
}

impl<'a, C: Cocycle + ?Sized> Cocycle for HatSystem<'a, C> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn layout(&self) -> &BlockLayout {
        self.base.layout()
    }

    fn linear(&self, n: i64) -> Matrix {
        match &self.chain {
            None => self.base.linear(self.t + n),
            Some(c) => {
                assert!(n >= c.start && n < c.end(), "time {n} outside the frame window");
                c.block(n).clone()
            }
        }
    }

    fn map(&self, n: i64, x: &Vector) -> Vector {
        if self.chain.is_none() {
            return self.base.map(self.t + n, x);
        }
        let (_, pinv) = self.frame(n);
        let (p1, _) = self.frame(n + 1);
        p1 * (self.base.map(self.t + n, &(pinv * x + self.point(n))) - self.point(n + 1))
    }

    fn jacobian(&self, n: i64, x: &Vector) -> Matrix {
        if self.chain.is_none() {
            return self.base.jacobian(self.t + n, x);
        }
        let (_, pinv) = self.frame(n);
        let (p1, _) = self.frame(n + 1);
        &p1 * self.base.jacobian(self.t + n, &(&pinv * x + self.point(n))) * pinv
    }

    fn hessians(&self, n: i64, x: &Vector) -> Vec<Matrix> {
        if self.chain.is_none() {
            return self.base.hessians(self.t + n, x);
        }
        let (_, pinv) = self.frame(n);
        let (p1, _) = self.frame(n + 1);
        let raw: Vec<Matrix> =
            self.base.hessians(self.t + n, &(&pinv * x + self.point(n))).iter().map(|h| pinv.transpose() * h * &pinv).collect();
        let d = self.dim();
        (0..d)
            .map(|l| {
                let mut acc = Matrix::zeros(d, d);
                for (k, h) in raw.iter().enumerate() {
                    acc += h * p1[(l, k)];
                }
                acc
            })
            .collect()
    }
}

/// A bilinear map X_i × X_κ → X_j stored as one d_i × d_κ matrix per output coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor(pub Vec<Matrix>);

impl Tensor {
    pub fn zeros(dj: usize, di: usize, dk: usize) -> Self {
        Tensor(vec![Matrix::zeros(di, dk); dj])
    }

    /// (u, v) ↦ T[A u, B v].
    pub fn compose(&self, a: &Matrix, b: &Matrix) -> Self {
        Tensor(self.0.iter().map(|t| a.transpose() * t * b).collect())
    }

    /// M applied to the output.
    pub fn left(&self, m: &Matrix) -> Self {
        let (di, dk) = self.0.first().map_or((0, 0), |t| (t.nrows(), t.ncols()));
        let mut out = vec![Matrix::zeros(di, dk); m.nrows()];
        for (l, o) in out.iter_mut().enumerate() {
            for (k, t) in self.0.iter().enumerate() {
                *o += t * m[(l, k)];
            }
        }
        Tensor(out)
    }

    pub fn add_scaled(&mut self, other: &Tensor, s: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b * s;
        }
    }

    /// Frobenius norm over all entries.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|t| t.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn apply(&self, u: &Vector, v: &Vector) -> Vector {
        Vector::from_iterator(self.0.len(), self.0.iter().map(|t| (u.transpose() * t * v)[(0, 0)]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// λ_i + λ_κ > λ_j: summed over the past of the orbit.
    Forward,
    /// λ_i + λ_κ < λ_j: summed over the future of the orbit.
    Backward,
}

/// Spectral blocks (0-based) of a mixed term x_i x_κ feeding block j.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Triple {
    pub i: usize,
    pub k: usize,
    pub j: usize,
    pub branch: Branch,
    /// λ_i + λ_κ − λ_j.
    pub defect: f64,
}

#[derive(Clone, Debug)]
pub struct TripleValue {
    pub tensor: Tensor,
    /// Number of series terms used.
    pub kstar: usize,
    pub tail: f64,
    /// Geometric mean ratio of successive term norms.
    pub ratio: f64,
}

/// Source term c(n) = −½ ∂²_{x_i x_κ}(π_j F̂)(n, 0).
fn source(hess: &[Matrix], ci: &[usize], ck: &[usize], cj: &[usize]) -> Tensor {
    Tensor(cj.iter().map(|&l| submatrix(&hess[l], ci, ck) * -0.5).collect())
}

/// Orbit-indexed coefficients a_{i,κ,j}(n), computed lazily per time.
pub struct NormalFormCoeffs<'h, H: Cocycle + ?Sized> {
    hat: &'h H,
    pub spec: Spectrum,
    pub triples: Vec<Triple>,
    /// Times at which F̂ may be queried.
    valid: Option<(i64, i64)>,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_terms: usize,
    cache: Mutex<HashMap<i64, Arc<Vec<TripleValue>>>>,
    hess: Mutex<HashMap<i64, Arc<Vec<Matrix>>>>,
}

const MIN_TERMS: usize = 10;

pub fn homological_coeffs<'h, H: Cocycle + ?Sized>(
    hat: &'h H,
    spec: &Spectrum,
    valid: Option<(i64, i64)>,
) -> Result<NormalFormCoeffs<'h, H>> {
    let mut all = Vec::new();
    for i in 0..spec.tau {
        for k in spec.tau..spec.p() {
            for j in 0..spec.p() {
                all.push((i, k, j));
            }
        }
    }
    homological_coeffs_for(hat, spec, valid, &all)
}

/// Coefficients for the listed (i, κ, j) only; the other mixed terms are left in F̂.
pub fn homological_coeffs_for<'h, H: Cocycle + ?Sized>(
    hat: &'h H,
    spec: &Spectrum,
    valid: Option<(i64, i64)>,
    selected: &[(usize, usize, usize)],
) -> Result<NormalFormCoeffs<'h, H>> {
    if !spec.is_aligned() {
        return Err(Error::Precondition("coordinate blocks are not aligned with the spectrum".into()));
    }
    let lam = &spec.exponents;
    let mut triples = Vec::new();
    for &(i, k, j) in selected {
        if i >= spec.tau || k < spec.tau || k >= spec.p() || j >= spec.p() {
            return Err(Error::Invalid(format!("({i}, {k}, {j}) is not an unstable-stable-any triple")));
        }
        let defect = lam[i] + lam[k] - lam[j];
        if defect.abs() < RESONANCE_TOL {
            return Err(Error::Resonant { i: i + 1, k: k + 1, j: j + 1, defect });
        }
        let branch = if defect > 0.0 { Branch::Forward } else { Branch::Backward };
        triples.push(Triple { i, k, j, branch, defect });
    }
    Ok(NormalFormCoeffs {
        hat,
        spec: spec.clone(),
        triples,
        valid,
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_terms: 200,
        cache: Mutex::new(HashMap::new()),
        hess: Mutex::new(HashMap::new()),
    })
}

impl<'h, H: Cocycle + ?Sized> NormalFormCoeffs<'h, H> {
    fn check_time(&self, m: i64) -> Result<()> {
        match self.valid {
            Some((lo, hi)) if m < lo || m > hi => Err(Error::NoConvergence {
                what: "normal-form series (orbit window exhausted)",
                iterations: (m - lo).unsigned_abs() as usize,
                last: f64::NAN,
            }),
            _ => Ok(()),
        }
    }

    fn hessians_at(&self, m: i64) -> Result<Arc<Vec<Matrix>>> {
        self.check_time(m)?;
        if let Some(h) = self.hess.lock().expect("poisoned").get(&m) {
            return Ok(h.clone());
        }
        let h = Arc::new(self.hat.hessians(m, &Vector::zeros(self.hat.dim())));
        self.hess.lock().expect("poisoned").insert(m, h.clone());
        Ok(h)
    }

    fn block(&self, m: i64, b: usize) -> Result<Matrix> {
        self.check_time(m)?;
        let c = &self.spec.coords[b];
        Ok(submatrix(&self.hat.linear(m), c, c))
    }

    pub fn source(&self, n: i64, tr: &Triple) -> Result<Tensor> {
        let h = self.hessians_at(n)?;
        let c = &self.spec.coords;
        Ok(source(&h, &c[tr.i], &c[tr.k], &c[tr.j]))
    }

    fn series(&self, n: i64, tr: &Triple) -> Result<TripleValue> {
        let c = &self.spec.coords;
        let (di, dk, dj) = (c[tr.i].len(), c[tr.k].len(), c[tr.j].len());
        let mut sum = Tensor::zeros(dj, di, dk);
        let mut norms = Vec::new();
        let mut out_map = Matrix::identity(dj, dj);
        let mut in_i = Matrix::identity(di, di);
        let mut in_k = Matrix::identity(dk, dk);
        for m in 0..self.max_terms {
            let term = match tr.branch {
                Branch::Backward => {
                    // −Λ̄_j(n)⁻¹⋯Λ̄_j(n+m)⁻¹ c(n+m)[Λ̄_i(m,n)·, Λ̄_κ(m,n)·]
                    let tm = n + m as i64;
                    if m > 0 {
                        in_i = self.block(tm - 1, tr.i)? * &in_i;
                        in_k = self.block(tm - 1, tr.k)? * &in_k;
                    }
                    out_map = &out_map * self.block(tm, tr.j)?.try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))?;
                    let mut t = self.source(tm, tr)?.compose(&in_i, &in_k).left(&out_map);
                    for mat in &mut t.0 {
                        mat.neg_mut();
                    }
                    t
                }
                Branch::Forward => {
                    // Λ̄_j(n−1)⋯Λ̄_j(n−m') c(n−m'−1)[Λ̄_i(−m'−1,n)·, Λ̄_κ(−m'−1,n)·], m' = m
                    let tm = n - m as i64 - 1;
                    if m > 0 {
                        out_map = &out_map * self.block(tm + 1, tr.j)?;
                    }
                    in_i = &in_i * self.block(tm, tr.i)?.try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))?;
                    in_k = &in_k * self.block(tm, tr.k)?.try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))?;
                    self.source(tm, tr)?.compose(&in_i, &in_k).left(&out_map)
                }
            };
            let tn = term.norm();
            sum.add_scaled(&term, 1.0);
            norms.push(tn);
            if m + 1 >= MIN_TERMS && (tn < self.abs_tol || tn < self.rel_tol * sum.norm()) {
                let nz: Vec<f64> = norms.iter().copied().filter(|v| *v > 0.0).collect();
                let ratio = if nz.len() >= 2 {
                    (nz[nz.len() - 1] / nz[0]).powf(1.0 / (nz.len() - 1) as f64)
                } else {
                    0.0
                };
                let tail = if ratio < 1.0 { tn * ratio / (1.0 - ratio) } else { f64::INFINITY };
                return Ok(TripleValue { tensor: sum, kstar: m + 1, tail, ratio });
            }
            if m > MIN_TERMS && norms[m] > norms[m - MIN_TERMS] && norms[m] > self.abs_tol {
                return Err(Error::Contraction { what: "normal-form series (wrong branch)", ratio: norms[m] / norms[m - 1] });
            }
        }
        Err(Error::NoConvergence { what: "normal-form series", iterations: self.max_terms, last: *norms.last().unwrap_or(&f64::NAN) })
    }

    /// Coefficients of every triple at time n.
    pub fn at(&self, n: i64) -> Result<Arc<Vec<TripleValue>>> {
        if let Some(v) = self.cache.lock().expect("poisoned").get(&n) {
            return Ok(v.clone());
        }
        let vals: Result<Vec<TripleValue>> = self.triples.iter().map(|tr| self.series(n, tr)).collect();
        let vals = Arc::new(vals?);
        self.cache.lock().expect("poisoned").insert(n, vals.clone());
        Ok(vals)
    }

    /// |Λ̄_j(n) a(n) + c(n) − a(n+1)[Λ̄_i(n)·, Λ̄_κ(n)·]| per triple.
    pub fn residuals(&self, n: i64) -> Result<Vec<f64>> {
        let now = self.at(n)?;
        let next = self.at(n + 1)?;
        self.triples
            .iter()
            .enumerate()
            .map(|(q, tr)| {
                let mut r = now[q].tensor.left(&self.block(n, tr.j)?);
                r.add_scaled(&self.source(n, tr)?, 1.0);
                r.add_scaled(&next[q].tensor.compose(&self.block(n, tr.i)?, &self.block(n, tr.k)?), -1.0);
                Ok(r.norm())
            })
            .collect()
    }

    /// Bound A with |a(n)[x,x]| ≤ A|x|² for the symmetric quadratic form built from all triples.
    pub fn quadratic_bound(&self, n: i64) -> Result<f64> {
        Ok(self.at(n)?.iter().map(|v| 2.0 * v.tensor.norm()).sum())
    }

    /// a(n)[x,x] (mixed terms counted twice) and its derivative in x.
    pub fn quadratic(&self, n: i64, x: &Vector) -> Result<(Vector, Matrix)> {
        let d = x.len();
        let mut q = Vector::zeros(d);
        let mut dq = Matrix::zeros(d, d);
        let vals = self.at(n)?;
        let c = &self.spec.coords;
        for (tr, v) in self.triples.iter().zip(vals.iter()) {
            let (ci, ck, cj) = (&c[tr.i], &c[tr.k], &c[tr.j]);
            let xi = crate::linalg::subvector(x, ci);
            let xk = crate::linalg::subvector(x, ck);
            for (l, &row) in cj.iter().enumerate() {
                let a = &v.tensor.0[l];
                q[row] += 2.0 * (xi.transpose() * a * &xk)[(0, 0)];
                let gi = a * &xk * 2.0;
                let gk = a.transpose() * &xi * 2.0;
                for (r, &col) in ci.iter().enumerate() {
                    dq[(row, col)] += gi[r];
                }
                for (r, &col) in ck.iter().enumerate() {
                    dq[(row, col)] += gk[r];
                }
            }
        }
        Ok((q, dq))
    }
}

/// N(n, x) = x + u_ρ̃(x) a(n)[x, x] and the transformed map F̄.
pub struct NormalForm<'h, H: Cocycle + ?Sized> {
    pub coeffs: NormalFormCoeffs<'h, H>,
    pub rho_tilde: f64,
    cutoff: CutoffSpec,
}

/// sup_x ρ|∇u_ρ(x)|, independent of ρ.
pub fn cutoff_gradient_constant() -> f64 {
    let unit = CutoffSpec::new(1.0);
    let radii: Vec<f64> = (0..=4000).map(|k| 0.7 + 0.3 * k as f64 / 4000.0).collect();
    unit.scaled_bounds_on(&radii)[0]
}

/// Builds N with ρ̃ = target / (A (2 + C₁)), so that ‖DN − id‖ ≤ target; `cap` bounds ρ̃.
pub fn apply_normal_form<'h, H: Cocycle + ?Sized>(
    coeffs: NormalFormCoeffs<'h, H>,
    sample_times: &[i64],
    target: f64,
    cap: f64,
) -> Result<NormalForm<'h, H>> {
    let mut a = 0.0f64;
    for &n in sample_times {
        a = a.max(coeffs.quadratic_bound(n)?);
    }
    let rho_tilde = if a == 0.0 { cap } else { (target / (a * (2.0 + cutoff_gradient_constant()))).min(cap) };
    Ok(NormalForm { coeffs, rho_tilde, cutoff: CutoffSpec::new(rho_tilde) })
}

impl<'h, H: Cocycle + ?Sized> NormalForm<'h, H> {
    pub fn hat(&self) -> &'h H {
        self.coeffs.hat
    }

    pub fn transform(&self, n: i64, x: &Vector) -> Result<Vector> {
        let u = self.cutoff.value(x);
        if u == 0.0 {
            return Ok(x.clone());
        }
        let (q, _) = self.coeffs.quadratic(n, x)?;
        Ok(x + q * u)
    }

    pub fn transform_jacobian(&self, n: i64, x: &Vector) -> Result<Matrix> {
        let d = x.len();
        let u = self.cutoff.value(x);
        if u == 0.0 {
            return Ok(Matrix::identity(d, d));
        }
        let (q, dq) = self.coeffs.quadratic(n, x)?;
        Ok(Matrix::identity(d, d) + dq * u + q * self.cutoff.gradient(x).transpose())
    }

    /// N⁻¹ by Newton from z = x.
    pub fn inverse(&self, n: i64, x: &Vector) -> Result<Vector> {
        let mut z = x.clone();
        for _ in 0..60 {
            let r = self.transform(n, &z)? - x;
            if r.amax() <= 1e-16 * (1.0 + x.amax()) {
                return Ok(z);
            }
            let j = self.transform_jacobian(n, &z)?;
            let step = j.lu().solve(&r).ok_or_else(|| Error::IllConditioned("normal-form chart".into()))?;
            z -= step;
        }
        let r = (self.transform(n, &z)? - x).amax();
        if r < 1e-14 {
            Ok(z)
        } else {
            Err(Error::NoConvergence { what: "normal-form inverse", iterations: 60, last: r })
        }
    }

    pub fn bar_map(&self, n: i64, x: &Vector) -> Result<Vector> {
        let z = self.inverse(n, x)?;
        self.transform(n + 1, &self.hat().map(n, &z))
    }

    pub fn bar_jacobian(&self, n: i64, x: &Vector) -> Result<Matrix> {
        let z = self.inverse(n, x)?;
        let fz = self.hat().map(n, &z);
        let dn_inv = self
            .transform_jacobian(n, &z)?
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned("normal-form chart".into()))?;
        Ok(self.transform_jacobian(n + 1, &fz)? * self.hat().jacobian(n, &z) * dn_inv)
    }

    /// ∂²_{x_a x_b} of F̄(n, ·) at 0 by the four-point central difference, per output coordinate.
    pub fn mixed_derivative_fd(&self, n: i64, a: usize, b: usize, h: f64) -> Result<Vector> {
        fd_mixed(|x| self.bar_map(n, x), self.hat().dim(), a, b, h)
    }
}

/// Four-point central difference of ∂²_{x_a x_b} g at 0.
pub fn fd_mixed(g: impl Fn(&Vector) -> Result<Vector>, d: usize, a: usize, b: usize, h: f64) -> Result<Vector> {
    let at = |sa: f64, sb: f64| {
        let mut x = Vector::zeros(d);
        x[a] += sa * h;
        x[b] += sb * h;
        g(&x)
    };
    Ok((at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * h * h))
}

/// F̄ as a cocycle (panics on times outside the coefficient window or on chart failures).
impl<'h, H: Cocycle + ?Sized> Cocycle for NormalForm<'h, H> {
    fn dim(&self) -> usize {
        self.hat().dim()
    }

    fn layout(&self) -> &BlockLayout {
        self.hat().layout()
    }

    fn linear(&self, n: i64) -> Matrix {
        self.hat().linear(n)
    }

    fn map(&self, n: i64, x: &Vector) -> Vector {
        self.bar_map(n, x).expect("normal-form map")
    }

    fn jacobian(&self, n: i64, x: &Vector) -> Matrix {
        self.bar_jacobian(n, x).expect("normal-form Jacobian")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::linalg::op_norm;
    use crate::spectrum::lyapunov_exponents;
    use crate::system::RandomMapSystem;

    fn spectrum(s: &RandomMapSystem) -> Spectrum {
        lyapunov_exponents(s, 2000, 0).unwrap()
    }

    /// 2-D constant cocycle diag(r_u, r_s) with a single mixed term into `out`.
    fn scalar_system(ru: f64, rs: f64, out: usize, c: f64) -> RandomMapSystem {
        let mut f = catalog::coupled_2d(1.0).to_file();
        f.linear_part.constant = Some(vec![vec![ru, 0.0], vec![0.0, rs]]);
        f.nonlinearity = crate::system::NonlinearitySpec {
            name: "quadratic".into(),
            params: serde_json::json!({"terms": [[out, 0, 1, c]]}),
        };
        RandomMapSystem::from_file(&f).unwrap()
    }

    #[test]
    fn zero_nonlinearity_gives_zero_coefficients() {
        let s = catalog::linear_diag(&[2.0, 0.5]);
        let spec = spectrum(&s);
        let hat = HatSystem::at_fixed_point(&s, 0);
        let co = homological_coeffs(&hat, &spec, None).unwrap();
        assert!(co.at(0).unwrap().iter().all(|v| v.tensor.norm() == 0.0));
    }

    #[test]
    fn sylvester_oracle_both_branches() {
        // x_s' = r_s x_s + x_u x_s: ∂² = 1, c = −1/2, a = c/(r_u r_s − r_s).
        for (ru, rs) in [(4.0, 0.5), (2.0, 0.25)] {
            let s = scalar_system(ru, rs, 1, 1.0);
            let spec = spectrum(&s);
            let hat = HatSystem::at_fixed_point(&s, 0);
            let co = homological_coeffs(&hat, &spec, None).unwrap();
            let q = co.triples.iter().position(|t| t.j == 1).unwrap();
            let a = co.at(0).unwrap()[q].tensor.0[0][(0, 0)];
            assert!((a - (-0.5) / (ru * rs - rs)).abs() < 1e-10, "{a}");
            let res = co.residuals(0).unwrap();
            assert!(res.iter().all(|r| *r < 1e-12), "{res:?}");
        }
        // output into the unstable block: r_j = r_u
        let s = scalar_system(3.0, 0.5, 0, 1.0);
        let spec = spectrum(&s);
        let hat = HatSystem::at_fixed_point(&s, 0);
        let co = homological_coeffs(&hat, &spec, None).unwrap();
        let q = co.triples.iter().position(|t| t.j == 0).unwrap();
        assert_eq!(co.triples[q].branch, Branch::Backward);
        let a = co.at(0).unwrap()[q].tensor.0[0][(0, 0)];
        assert!((a - (-0.5) / (1.5 - 3.0)).abs() < 1e-10);
    }

    #[test]
    fn mixed_term_is_removed() {
        let s = catalog::coupled_2d(1.0).extend();
        let spec = spectrum(&s);
        let hat = HatSystem::at_fixed_point(&s, 0);
        let before = fd_mixed(|x| Ok(hat.map(0, x)), 2, 0, 1, 1e-4).unwrap();
        assert!((before[1] - 1.0).abs() < 1e-6);
        let co = homological_coeffs(&hat, &spec, None).unwrap();
        let nf = apply_normal_form(co, &[0], 0.25, s.rho()).unwrap();
        let after = nf.mixed_derivative_fd(0, 0, 1, 1e-4).unwrap();
        assert!(after.amax() < 1e-7, "{after}");
        let x = Vector::from_vec(vec![0.3 * nf.rho_tilde, -0.2 * nf.rho_tilde]);
        assert!((nf.inverse(0, &nf.transform(0, &x).unwrap()).unwrap() - &x).amax() < 1e-15);
        assert!((nf.bar_jacobian(0, &Vector::zeros(2)).unwrap() - s.linear(0)).amax() < 1e-15);
        for x in crate::sampling::halton_ball(50, 2, nf.rho_tilde) {
            let dn = nf.transform_jacobian(0, &x).unwrap();
            assert!(op_norm(&(dn - Matrix::identity(2, 2))) <= 0.25);
        }
    }

    #[test]
    fn hat_map_along_orbit_is_block_diagonal() {
        let s = catalog::bump_3d().extend();
        let spec = spectrum(&s);
        let xbar = Vector::from_vec(vec![0.02, 0.01, -0.015]);
        let hat = HatSystem::along_orbit(&s, &spec, 0, &xbar, 0, 10, 60).unwrap();
        assert!(hat.off_block_residual() < 1e-9, "{}", hat.off_block_residual());
        let z = Vector::zeros(3);
        for n in 0..10 {
            assert!(hat.map(n, &z).amax() < 1e-15);
        }
    }

    #[test]
    fn selected_triples_skip_unrelated_resonance() {
        // {2, 1/2, 1/4} is resonant through (2, 1/4, 1/2) but not through (2, 1/2, 1/4).
        let mut f = catalog::linear_diag(&[2.0, 0.5, 0.25]).to_file();
        f.nonlinearity = crate::system::NonlinearitySpec {
            name: "quadratic".into(),
            params: serde_json::json!({"terms": [[2, 0, 1, -2.0]]}),
        };
        let s = RandomMapSystem::from_file(&f).unwrap();
        let spec = spectrum(&s);
        let hat = HatSystem::at_fixed_point(&s, 0);
        assert!(matches!(homological_coeffs(&hat, &spec, None), Err(Error::Resonant { .. })));
        assert!(matches!(homological_coeffs_for(&hat, &spec, None, &[(0, 2, 1)]), Err(Error::Resonant { .. })));
        let co = homological_coeffs_for(&hat, &spec, None, &[(0, 1, 2)]).unwrap();
        assert_eq!(co.triples[0].branch, Branch::Forward);
        let a = co.at(0).unwrap()[0].tensor.0[0][(0, 0)];
        assert!((a - 4.0 / 3.0).abs() < 1e-10, "{a}");
        assert!(homological_coeffs_for(&hat, &spec, None, &[(1, 2, 0)]).is_err());
    }
}
