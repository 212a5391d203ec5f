//! The decomposed cohomological equation: Lyapunov norms, the operators
//! T_{i,j}η(n,x) = η(n,x) − Λ̄_j(n)⁻¹η(n+1, Λ̄_i(n)x) and their Neumann-series
//! inverses, the stable frame recursion ψ_ℓ = T⁻¹𝓑ψ_{ℓ−1} and the canonical frame ζ.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::foliation::{intermediate_leaf, leaf_chart, LpConfig, Side};
use crate::linalg::{embed, submatrix, subvector, Matrix, Vector};
use crate::spectrum::{ConstantsBudget, Spectrum, RESONANCE_TOL};
use crate::system::Cocycle;

/// ‖x‖_{n,j} = Σ_m ‖Λ_j(m, n)x‖ e^{−λ_j m − ε|m|}.
pub struct LyapunovNorm<'a> {
    block: Box<dyn Fn(i64) -> Matrix + 'a>,
    pub lambda: f64,
    pub eps: f64,
    pub max_half_width: usize,
    /// Relative tail tolerance.
    pub tol: f64,
}

/// Σ_{m∈ℤ} e^{−ε|m|}.
pub fn geometric_weight_sum(eps: f64) -> f64 {
    (1.0 + (-eps).exp()) / (1.0 - (-eps).exp())
}

impl<'a> LyapunovNorm<'a> {
    pub fn new(block: impl Fn(i64) -> Matrix + 'a, lambda: f64, eps: f64) -> Self {
        Self { block: Box::new(block), lambda, eps, max_half_width: 5_000_000, tol: 1e-12 }
    }

    /// Block j of a cocycle's linear part.
    pub fn of_block<C: Cocycle + ?Sized>(c: &'a C, spec: &Spectrum, j: usize, eps: f64) -> Self {
        let idx = spec.coords[j].clone();
        Self::new(move |n| submatrix(&c.linear(n), &idx, &idx), spec.exponents[j], eps)
    }

    /// One direction of the sum, returning (sum, last term, last ratio estimate).
    fn half(&self, n: i64, x: &Vector, forward: bool) -> Result<(f64, usize)> {
        let mut u = x.clone();
        let mut log = 0.0;
        let mut sum = 0.0;
        let mut prev = 1.0;
        for m in 1..=self.max_half_width {
            let a = if forward {
                (self.block)(n + m as i64 - 1)
            } else {
                (self.block)(n - m as i64).try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))?
            };
            u = a * u;
            let s = u.norm();
            log += s.ln();
            u /= s;
            let sign = if forward { 1.0 } else { -1.0 };
            let term = (log - sign * self.lambda * m as f64 - self.eps * m as f64).exp();
            sum += term;
            let r = term / prev;
            prev = term;
            // tail ≤ term·r/(1−r) once the ratio is reliably below one
            if m > 16 && r < 1.0 && term * r / (1.0 - r) < self.tol * sum {
                return Ok((sum, m));
            }
        }
        Err(Error::NoConvergence { what: "Lyapunov norm tail", iterations: self.max_half_width, last: prev })
    }

    pub fn norm(&self, n: i64, x: &Vector) -> Result<f64> {
        let x0 = x.norm();
        if x0 == 0.0 {
            return Ok(0.0);
        }
        let xu = x / x0;
        let (f, _) = self.half(n, &xu, true)?;
        let (b, _) = self.half(n, &xu, false)?;
        Ok(x0 * (1.0 + f + b))
    }
}

/// Which Neumann series inverts T_{i,j}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Neumann {
    /// η(n,x) = Σ_{m≥0} Λ_j(m,n)⁻¹ h(n+m, Λ_i(m,n)x).
    Future,
    /// η(n,x) = −Σ_{m≥1} Λ_j(−m,n)⁻¹ h(n−m, Λ_i(−m,n)x).
    Past,
}

/// Future converges when λ_κ + bλ_i − λ_j < 0, Past when it is > 0.
pub fn branch_for(lambda_i: f64, lambda_j: f64, lambda_kappa: f64, b: f64) -> Result<Neumann> {
    let g = lambda_kappa + b * lambda_i - lambda_j;
    if g.abs() < RESONANCE_TOL {
        return Err(Error::Precondition(format!("neither Neumann series contracts (growth {g:e})")));
    }
    Ok(if g < 0.0 { Neumann::Future } else { Neumann::Past })
}

pub type BlockFn<'a> = &'a dyn Fn(i64) -> Matrix;
pub type SeqFn<'a> = &'a dyn Fn(i64, &Vector) -> Vector;

/// T_{i,j} acting on maps X_i → X_j along a linear cocycle pair.
pub struct CohomologicalOperator<'a> {
    pub lam_i: BlockFn<'a>,
    pub lam_j: BlockFn<'a>,
    pub branch: Neumann,
    pub max_terms: usize,
    pub tol: f64,
}

impl<'a> CohomologicalOperator<'a> {
    pub fn new(lam_i: BlockFn<'a>, lam_j: BlockFn<'a>, branch: Neumann) -> Self {
        Self { lam_i, lam_j, branch, max_terms: 4000, tol: 1e-17 }
    }

    pub fn apply(&self, eta: SeqFn<'_>, n: i64, x: &Vector) -> Vector {
        let inv = (self.lam_j)(n).try_inverse().expect("invertible block");
        eta(n, x) - inv * eta(n + 1, &((self.lam_i)(n) * x))
    }

    pub fn invert(&self, h: SeqFn<'_>, n: i64, x: &Vector) -> Result<Vector> {
        let dj = (self.lam_j)(n).nrows();
        let mut out = Matrix::identity(dj, dj);
        let mut y = x.clone();
        let mut sum = Vector::zeros(dj);
        let mut small = 0;
        for m in 0..self.max_terms {
            let term = match self.branch {
                Neumann::Future => {
                    let t = n + m as i64;
                    if m > 0 {
                        y = (self.lam_i)(t - 1) * &y;
                        out *= (self.lam_j)(t - 1).try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))?;
                    }
                    &out * h(t, &y)
                }
                Neumann::Past => {
                    if m == 0 {
                        continue;
                    }
                    let t = n - m as i64;
                    y = (self.lam_i)(t).try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))? * &y;
                    out *= (self.lam_j)(t);
                    -(&out * h(t, &y))
                }
            };
            sum += &term;
            let tn = term.norm();
            small = if tn <= self.tol * (1.0 + sum.norm()) { small + 1 } else { 0 };
            if small >= 5 {
                return Ok(sum);
            }
            if !tn.is_finite() {
                break;
            }
        }
        Err(Error::NoConvergence { what: "cohomological Neumann series", iterations: self.max_terms, last: f64::NAN })
    }

    /// Weighted sup of T(T⁻¹h) − h over the samples, in the weights ‖x‖^{-b} for each b.
    pub fn round_trip(&self, h: SeqFn<'_>, n: i64, samples: &[Vector], weights: &[f64]) -> Result<Vec<f64>> {
        let eta = |t: i64, x: &Vector| self.invert(h, t, x).expect("convergent series");
        let mut out = vec![0.0f64; weights.len()];
        for x in samples {
            let r = (self.apply(&eta, n, x) - h(n, x)).norm();
            for (o, b) in out.iter_mut().zip(weights) {
                *o = o.max(r / x.norm().powf(*b));
            }
        }
        Ok(out)
    }
}

/// T⁻¹ on values along one orbit window [lo, hi]; η beyond hi is taken as zero (Future)
/// and η(lo) as zero (Past).
pub fn invert_on_window(blocks_j: &[Matrix], h: &[Vector], branch: Neumann) -> Vec<Vector> {
    let n = h.len();
    let mut eta = vec![Vector::zeros(h[0].len()); n];
    match branch {
        Neumann::Future => {
            eta[n - 1] = h[n - 1].clone();
            for t in (0..n - 1).rev() {
                let inv = blocks_j[t].clone().try_inverse().expect("invertible block");
                eta[t] = &h[t] + inv * &eta[t + 1];
            }
        }
        Neumann::Past => {
            for t in 1..n {
                eta[t] = &blocks_j[t - 1] * (&eta[t - 1] - &h[t - 1]);
            }
        }
    }
    eta
}

#[derive(Clone, Debug)]
pub struct FrameConfig {
    /// Unstable block (0-based, spectral order).
    pub i: usize,
    /// Stable block.
    pub kappa: usize,
    pub iota: usize,
    /// Steps before time 0 at which the orbit starts.
    pub past: usize,
    /// Steps after the orbit leaves the cut-off ball.
    pub overshoot: usize,
    /// Radius beyond which DF̄ = Λ̄.
    pub linear_radius: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl FrameConfig {
    pub fn new(i: usize, kappa: usize, linear_radius: f64) -> Self {
        Self { i, kappa, iota: 0, past: 40, overshoot: 4, linear_radius, tol: 1e-10, max_iter: 60 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameSolution {
    pub i: usize,
    pub kappa: usize,
    pub iota: usize,
    pub times: Vec<i64>,
    /// Linear-orbit coordinate x_t ∈ X_i.
    pub x: Vec<Vector>,
    /// Point on the invariant manifold tangent to X_i.
    pub y: Vec<Vector>,
    /// v̄(t, x_t) = Λ̄_κ(t,0)e + η(t, x_t).
    pub v: Vec<Vector>,
    pub branches: Vec<Neumann>,
    pub iterations: usize,
    /// Successive-difference ratios of the recursion, in the larger of the two weighted norms.
    pub ratios: Vec<f64>,
    /// max_t ‖DF̄(t, y_t)v̄_t − v̄_{t+1}‖ / ‖v̄_{t+1}‖.
    pub residual: f64,
}

impl FrameSolution {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    pub fn at_zero(&self) -> usize {
        self.times.iter().position(|&t| t == 0).expect("time 0 in window")
    }
}

/// Solves DF̄(t, y_t)v̄_t = v̄_{t+1} on the orbit through x0·e_i of the manifold tangent to
/// X_i, with v̄_t − Λ̄_κ(t,0)e_{κ,ι} vanishing to order 1+β at the fixed point.
pub fn solve_stable_frame<C: Cocycle + ?Sized>(
    fbar: &C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    x0: f64,
    cfg: &FrameConfig,
) -> Result<FrameSolution> {
    let (i, kappa) = (cfg.i, cfg.kappa);
    if i >= spec.tau || kappa < spec.tau || kappa >= spec.p() {
        return Err(Error::Invalid(format!("need unstable i and stable κ, got ({i}, {kappa})")));
    }
    if spec.multiplicities[i] != 1 {
        return Err(Error::Precondition("frame recursion implemented for one-dimensional unstable blocks".into()));
    }
    if cfg.iota >= spec.multiplicities[kappa] {
        return Err(Error::Invalid(format!("ι = {} out of range", cfg.iota)));
    }
    let d = fbar.dim();
    let ci = spec.coords[i].clone();
    let ck = spec.coords[kappa].clone();
    let lo = -(cfg.past as i64);
    let blk = |t: i64, c: &[usize]| submatrix(&fbar.linear(t), c, c);

    // linear orbit back to lo
    let mut xs = vec![Vector::from_element(1, x0)];
    for t in (lo..0).rev() {
        let prev = blk(t, &ci).try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))? * xs.last().unwrap();
        xs.push(prev);
    }
    xs.reverse();

    // manifold orbit, re-projected on the leaf at each time
    let base = LpConfig::new(Side::Stable);
    let zero = Vector::zeros(d);
    let on_leaf = |t: i64, xi: &Vector| -> Result<Vector> {
        intermediate_leaf(fbar, spec, budget, t, &zero, i, &base)?.point(xi)
    };
    let mut ys = Vec::new();
    let mut xi = xs[0].clone();
    let mut t = lo;
    let mut outside = 0;
    loop {
        let y = on_leaf(t, &xi)?;
        if t > 0 {
            xs.push(blk(t - 1, &ci) * xs.last().unwrap());
        }
        let far = y.norm() >= cfg.linear_radius;
        ys.push(y.clone());
        if far && t >= 0 {
            outside += 1;
            if outside > cfg.overshoot {
                break;
            }
        }
        if t - lo > 2000 {
            return Err(Error::NoConvergence { what: "manifold orbit escape", iterations: 2000, last: y.norm() });
        }
        xi = subvector(&fbar.map(t, &y), &ci);
        t += 1;
    }
    let n = ys.len();
    let times: Vec<i64> = (0..n as i64).map(|k| lo + k).collect();

    // Λ̄_κ(t,0)e along the window
    let mut ek = Vector::zeros(ck.len());
    ek[cfg.iota] = 1.0;
    let mut lk = vec![Vector::zeros(ck.len()); n];
    let z = (-lo) as usize;
    lk[z] = ek;
    for k in z + 1..n {
        lk[k] = blk(times[k - 1], &ck) * &lk[k - 1];
    }
    for k in (0..z).rev() {
        lk[k] = blk(times[k], &ck).try_inverse().ok_or_else(|| Error::IllConditioned("block".into()))? * &lk[k + 1];
    }
    let base_v: Vec<Vector> = lk.iter().map(|v| embed(d, &ck, v)).collect();

    // −Λ̄(t)⁻¹ Df̄(t, y_t) along the orbit
    let coupling: Vec<Matrix> = times
        .iter()
        .zip(&ys)
        .map(|(&t, y)| {
            let lin = fbar.linear(t);
            let df = fbar.jacobian(t, y) - &lin;
            -(fbar.linear_inverse(t) * df)
        })
        .collect();

    let b_hi = 1.0 + budget.beta;
    let weights = [b_hi, budget.varsigma];
    let lam = &spec.exponents;
    let branches: Vec<Neumann> =
        (0..spec.p()).map(|j| branch_for(lam[i], lam[j], lam[kappa], b_hi)).collect::<Result<_>>()?;
    let block_seq: Vec<Vec<Matrix>> =
        (0..spec.p()).map(|j| times.iter().map(|&t| blk(t, &spec.coords[j])).collect()).collect();

    let scale: Vec<f64> = times
        .iter()
        .zip(&xs)
        .map(|(&t, x)| (-lam[kappa] * t as f64 - 10.0 * budget.epsilon * (t as f64).abs()).exp() / x.norm().max(1e-300))
        .collect();
    let wnorm = |a: &[Vector], b: &[Vector]| -> f64 {
        let mut best = 0.0f64;
        for k in 0..n {
            let diff = (&a[k] - &b[k]).norm();
            if diff == 0.0 {
                continue;
            }
            let xn = xs[k].norm();
            for &w in &weights {
                best = best.max(diff * scale[k] * xn / xn.powf(w));
            }
        }
        best
    };

    let mut psi = vec![Vector::zeros(d); n];
    let mut diffs = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=cfg.max_iter {
        let h: Vec<Vector> = (0..n).map(|k| &coupling[k] * (&base_v[k] + &psi[k])).collect();
        let mut next = vec![Vector::zeros(d); n];
        for j in 0..spec.p() {
            let cj = &spec.coords[j];
            let hj: Vec<Vector> = h.iter().map(|v| subvector(v, cj)).collect();
            let ej = invert_on_window(&block_seq[j], &hj, branches[j]);
            for k in 0..n {
                for (r, &c) in cj.iter().enumerate() {
                    next[k][c] = ej[k][r];
                }
            }
        }
        let dl = wnorm(&next, &psi);
        psi = next;
        diffs.push(dl);
        iterations = it;
        let ref_scale = wnorm(&psi, &vec![Vector::zeros(d); n]).max(1.0);
        if dl <= cfg.tol * ref_scale {
            converged = true;
            break;
        }
        if it > 6 && dl > diffs[it - 4] {
            return Err(Error::Contraction { what: "stable frame recursion (shrink the radius)", ratio: dl / diffs[it - 2] });
        }
    }
    if !converged {
        return Err(Error::NoConvergence { what: "stable frame recursion", iterations, last: *diffs.last().unwrap() });
    }
    let floor = 1e-13 * diffs.iter().copied().fold(0.0, f64::max);
    let ratios: Vec<f64> = diffs.windows(2).filter(|w| w[0] > floor && w[1] > floor).map(|w| w[1] / w[0]).collect();

    let v: Vec<Vector> = (0..n).map(|k| &base_v[k] + &psi[k]).collect();
    let mut residual = 0.0f64;
    for k in 0..n - 1 {
        let r = (fbar.jacobian(times[k], &ys[k]) * &v[k] - &v[k + 1]).norm() / v[k + 1].norm();
        residual = residual.max(r);
    }
    Ok(FrameSolution { i, kappa, iota: cfg.iota, times, x: xs, y: ys, v, branches, iterations, ratios, residual })
}

/// ζ_{κ,ι}(t, x): unit vectors of E_s(x) ∩ (X_{κ,ι} ⊕ X_u) from the stable leaf through x.
pub fn canonical_frame<C: Cocycle + ?Sized>(
    c: &C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    t: i64,
    x: &Vector,
) -> Result<Matrix> {
    let leaf = leaf_chart(c, spec, budget, t, x, &LpConfig::new(Side::Stable))?;
    let dq = leaf.derivative(&leaf.base_coordinate())?;
    let mut z = dq;
    for mut col in z.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }
    Ok(z)
}

/// Solves (id + Δ)c = δ for frame vectors `v` (columns spanning E_s(x)) and returns the
/// resulting unit vectors, one per stable coordinate, together with the Gram determinant.
pub fn reconstruct_frame(spec: &Spectrum, v: &Matrix) -> Result<(Matrix, f64)> {
    let s = spec.stable_coords();
    let ps = submatrix(v, &s, &(0..v.ncols()).collect::<Vec<_>>());
    let gram = (v.transpose() * v).determinant();
    if gram.abs() < 1e-12 {
        return Err(Error::IllConditioned("frame fails to span E_s".into()));
    }
    let cmat = ps.try_inverse().ok_or_else(|| Error::IllConditioned("frame correction system".into()))?;
    let mut z = v * cmat;
    for mut col in z.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }
    Ok((z, gram))
}
