//! Lyapunov spectra, Oseledets splittings, block-diagonalizing frames and the
//! constants derived from the spectrum.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{condition, inclusion, inverse, op_norm, orthonormalize, projector, Matrix, Vector};
use crate::system::{trajectory, Cocycle};

/// Relative gap above which two exponents belong to different blocks.
pub const CLUSTER_GAP: f64 = 1e-6;
/// Exponents closer than this to zero break hyperbolicity.
pub const HYPERBOLICITY_TOL: f64 = 1e-2;
/// Tolerance for λ_j = λ_i + λ_κ.
pub const RESONANCE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    /// λ_1 > … > λ_p.
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// Number of positive exponents.
    pub tau: usize,
    /// Coordinates spanning X_j for each spectral block; empty when the
    /// coordinate blocks do not align with the spectrum.
    pub coords: Vec<Vec<usize>>,
}

impl Spectrum {
    /// A spectrum given directly, with spectral block j living on coordinates `coords[j]`.
    pub fn new(exponents: Vec<f64>, multiplicities: Vec<usize>, coords: Vec<Vec<usize>>) -> Result<Self> {
        if exponents.is_empty() || exponents.len() != multiplicities.len() {
            return Err(Error::Invalid("exponents and multiplicities must match".into()));
        }
        if exponents.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Invalid("exponents must be strictly decreasing".into()));
        }
        if let Some(&e) = exponents.iter().find(|e| e.abs() < HYPERBOLICITY_TOL) {
            return Err(Error::NotHyperbolic { exponent: e, tol: HYPERBOLICITY_TOL });
        }
        if !coords.is_empty() && coords.len() != exponents.len() {
            return Err(Error::Invalid("one coordinate set per block expected".into()));
        }
        let tau = exponents.iter().filter(|&&e| e > 0.0).count();
        Ok(Self { exponents, multiplicities, tau, coords })
    }

    /// Scalar blocks on coordinates 0..p in the given order.
    pub fn scalar(exponents: &[f64]) -> Result<Self> {
        let p = exponents.len();
        Self::new(exponents.to_vec(), vec![1; p], (0..p).map(|k| vec![k]).collect())
    }

    pub fn p(&self) -> usize {
        self.exponents.len()
    }

    pub fn dim(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    pub fn is_aligned(&self) -> bool {
        !self.coords.is_empty()
    }

    fn require_aligned(&self) -> Result<()> {
        if self.is_aligned() {
            Ok(())
        } else {
            Err(Error::Precondition("coordinate blocks are not aligned with the spectrum".into()))
        }
    }

    /// Coordinates of the spectral blocks in `blocks`, sorted.
    pub fn coords_of(&self, blocks: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut out: Vec<usize> = blocks.into_iter().flat_map(|b| self.coords[b].iter().copied()).collect();
        out.sort_unstable();
        out
    }

    pub fn unstable_coords(&self) -> Vec<usize> {
        self.coords_of(0..self.tau)
    }

    pub fn stable_coords(&self) -> Vec<usize> {
        self.coords_of(self.tau..self.p())
    }

    pub fn lambda_max(&self) -> f64 {
        (2.0 * self.exponents[0]).max(-2.0 * self.exponents[self.p() - 1])
    }

    pub fn min_gap(&self) -> f64 {
        self.exponents.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min)
    }

    /// min over i ≤ τ < κ and all j of |λ_i + λ_κ − λ_j|.
    pub fn resonance_defect(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.tau {
            for k in self.tau..self.p() {
                for j in 0..self.p() {
                    best = best.min((self.exponents[i] + self.exponents[k] - self.exponents[j]).abs());
                }
            }
        }
        best
    }
}

/// QR growth rates of a product of matrices `step(k)` for k in 0..n.
fn qr_growth(d: usize, n: usize, transient: usize, mut step: impl FnMut(usize) -> Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut q = Matrix::identity(d, d);
    let mut sums = vec![0.0; d];
    let mut half = vec![0.0; d];
    for k in 0..transient + n {
        let m = step(k) * &q;
        let qr = m.qr();
        let r = qr.r();
        let mut qq = qr.q();
        for i in 0..d {
            if r[(i, i)] < 0.0 {
                let mut c = qq.column_mut(i);
                c.neg_mut();
            }
            if k >= transient {
                sums[i] += r[(i, i)].abs().ln();
            }
        }
        q = qq;
        if k + 1 == transient + n / 2 {
            half.clone_from(&sums);
        }
    }
    let full = sums.iter().map(|s| s / n as f64).collect();
    let halfway = half.iter().map(|s| s / (n / 2) as f64).collect();
    (full, halfway)
}

/// Groups descending values into blocks separated by relative gaps > CLUSTER_GAP.
fn cluster(values: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &k in &order {
        match groups.last_mut() {
            Some(g) => {
                let prev = values[*g.last().unwrap()];
                let scale = prev.abs().max(values[k].abs()).max(f64::MIN_POSITIVE);
                if (prev - values[k]) / scale > CLUSTER_GAP {
                    groups.push(vec![k]);
                } else {
                    g.push(k);
                }
            }
            None => groups.push(vec![k]),
        }
    }
    groups
}

/// Lyapunov exponents of DF(n, ω, 0) by per-step QR re-orthonormalization.
///
/// The returned spectrum is attached to coordinate blocks when each
/// coordinate block of the layout carries a single exponent.
pub fn lyapunov_exponents<C: Cocycle + ?Sized>(
    c: &C,
    n_steps: usize,
    n_transient: usize,
) -> Result<Spectrum> {
    if n_steps < 1000 {
        return Err(Error::Invalid(format!("n_steps = {n_steps} < 1000")));
    }
    let d = c.dim();
    let zero = Vector::zeros(d);
    let (full, half) = qr_growth(d, n_steps, n_transient, |k| c.jacobian(k as i64, &zero));
    let drift = full.iter().zip(&half).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if drift > 0.05 {
        return Err(Error::NoConvergence { what: "Lyapunov exponents", iterations: n_steps, last: drift });
    }
    let groups = cluster(&full);
    let exponents: Vec<f64> = groups.iter().map(|g| g.iter().map(|&k| full[k]).sum::<f64>() / g.len() as f64).collect();
    let multiplicities: Vec<usize> = groups.iter().map(|g| g.len()).collect();

    // Per coordinate block growth rates, used to attach coordinates to spectral blocks.
    let layout = c.layout();
    let mut coords: Vec<Vec<usize>> = vec![Vec::new(); exponents.len()];
    let mut aligned = true;
    for b in 0..layout.count() {
        let idx = layout.indices(b);
        let (rates, _) = qr_growth(idx.len(), n_steps.min(20_000), 0, |k| {
            crate::linalg::submatrix(&c.jacobian(k as i64, &zero), &idx, &idx)
        });
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let spread = rates.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
        let nearest = exponents
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
            .map(|(j, _)| j)
            .unwrap();
        if spread > 1e-3 * (1.0 + mean.abs()) {
            aligned = false;
        }
        coords[nearest].extend(idx);
    }
    for (j, cs) in coords.iter_mut().enumerate() {
        cs.sort_unstable();
        if cs.len() != multiplicities[j] {
            aligned = false;
        }
    }
    if !aligned {
        coords.clear();
    }
    Spectrum::new(exponents, multiplicities, coords)
}

/// Distance between subspaces: max of the two one-sided operator norms ‖(I−P̃)P‖, ‖(I−P)P̃‖.
pub fn subspace_distance(e: &Matrix, f: &Matrix) -> Result<f64> {
    let qe = orthonormalize(e)?;
    let qf = orthonormalize(f)?;
    let d = qe.nrows();
    let pe = projector(&qe);
    let pf = projector(&qf);
    let id = Matrix::identity(d, d);
    Ok(op_norm(&((&id - &pf) * &pe)).max(op_norm(&((&id - &pe) * &pf))))
}

/// Fibers E_j(θ^t ω, x) and the block-diagonalizing frame.
#[derive(Clone, Debug)]
pub struct Splitting {
    pub t: i64,
    pub x: Vector,
    /// Orthonormal bases of E_1, …, E_p (spectral order).
    pub fibers: Vec<Matrix>,
    /// Columns are unit vectors of the fibers placed at their block coordinates (P⁻¹).
    pub frame_inv: Matrix,
    /// P: original coordinates to block coordinates.
    pub frame: Matrix,
}

/// Horizon for which e^{-gap·h} is below `tol`.
pub fn default_horizon(spec: &Spectrum, tol: f64) -> usize {
    ((1.0 / tol).ln() / spec.min_gap()).ceil().clamp(10.0, 400.0) as usize
}

fn push(q: &Matrix, m: &Matrix) -> Matrix {
    let qr = (m * q).qr();
    qr.q().columns(0, q.ncols()).into_owned()
}

/// Oseledets splitting at (θ^t ω, x) from forward and backward subspace iteration.
pub fn oseledets_splitting<C: Cocycle + ?Sized>(
    c: &C,
    spec: &Spectrum,
    t: i64,
    x: &Vector,
    horizon: usize,
) -> Result<Splitting> {
    spec.require_aligned()?;
    let d = c.dim();
    let p = spec.p();
    let h = horizon as i64;
    let back = trajectory(c, t, -h, x)?;
    let fwd = trajectory(c, t, h, x)?;
    // fast[g] = E_{≤g}, slow[g] = E_{≥g+1}
    let mut fast = Vec::with_capacity(p.saturating_sub(1));
    let mut slow = Vec::with_capacity(p.saturating_sub(1));
    for g in 0..p.saturating_sub(1) {
        let mut q = inclusion(d, &spec.coords_of(0..=g));
        for k in (1..=h).rev() {
            // from time t-k at point back[k] to t-k+1
            q = push(&q, &c.jacobian(t - k, &back[k as usize]));
        }
        fast.push(q);
        let mut q = inclusion(d, &spec.coords_of(g + 1..p));
        for k in (1..=h).rev() {
            let j = c.jacobian(t + k - 1, &fwd[(k - 1) as usize]);
            q = push(&q, &inverse(&j)?);
        }
        slow.push(q);
    }
    let mut fibers = Vec::with_capacity(p);
    for j in 0..p {
        let e = match (j, p) {
            (_, 1) => Matrix::identity(d, d),
            (0, _) => fast[0].clone(),
            (j, p) if j == p - 1 => slow[p - 2].clone(),
            _ => intersect(&fast[j], &slow[j - 1], spec.multiplicities[j])?,
        };
        fibers.push(e);
    }
    let frame_inv = frame_from_fibers(spec, &fibers, d);
    let cond = condition(&frame_inv);
    if !(cond < 1e8) {
        return Err(Error::IllConditioned(format!("splitting frame condition {cond:.3e}")));
    }
    let frame = inverse(&frame_inv)?;
    Ok(Splitting { t, x: x.clone(), fibers, frame_inv, frame })
}

/// Basis of span(a) ∩ span(b) for orthonormal a, b with expected dimension k.
fn intersect(a: &Matrix, b: &Matrix, k: usize) -> Result<Matrix> {
    let d = a.nrows();
    let residual = (Matrix::identity(d, d) - projector(b)) * a;
    let svd = residual.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[i].total_cmp(&s[j]));
    if order.len() > k && s[order[k]] < 1e-6 {
        return Err(Error::IllConditioned(format!(
            "subspace intersection is not transversal (σ = {:.3e})",
            s[order[k]]
        )));
    }
    let mut coeffs = Matrix::zeros(a.ncols(), k);
    for (c, &i) in order.iter().take(k).enumerate() {
        coeffs.set_column(c, &vt.row(i).transpose());
    }
    orthonormalize(&(a * coeffs))
}

/// Unit vectors of each fiber nearest the standard basis vectors of its block.
fn frame_from_fibers(spec: &Spectrum, fibers: &[Matrix], d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for (j, e) in fibers.iter().enumerate() {
        let pe = projector(e);
        for &i in &spec.coords[j] {
            let mut v = pe.column(i).into_owned();
            v /= v.norm();
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v.neg_mut();
            }
            m.set_column(i, &v);
        }
    }
    m
}

/// Frames P(ϑⁿϖ) and blocks Λ̄(ϑⁿϖ) = P(ϑⁿ⁺¹ϖ) DF P⁻¹(ϑⁿϖ) along the orbit of x̄.
#[derive(Clone, Debug)]
pub struct FrameChain {
    /// Orbit index of the first stored splitting.
    pub start: i64,
    pub splittings: Vec<Splitting>,
    /// Block-diagonal parts of the conjugated Jacobians, one fewer than splittings.
    pub blocks: Vec<Matrix>,
    /// Largest off-block entry norm before truncation.
    pub off_block_residual: f64,
}

impl FrameChain {
    pub fn splitting(&self, n: i64) -> &Splitting {
        &self.splittings[(n - self.start) as usize]
    }

    pub fn block(&self, n: i64) -> &Matrix {
        &self.blocks[(n - self.start) as usize]
    }

    pub fn end(&self) -> i64 {
        self.start + self.splittings.len() as i64 - 1
    }
}

/// Zeroes entries coupling different spectral blocks; returns the removed norm.
pub fn block_part(spec: &Spectrum, m: &Matrix) -> (Matrix, f64) {
    let d = m.nrows();
    let mut owner = vec![0; d];
    for (j, cs) in spec.coords.iter().enumerate() {
        for &i in cs {
            owner[i] = j;
        }
    }
    let mut out = m.clone();
    let mut off = Matrix::zeros(d, d);
    for r in 0..d {
        for col in 0..d {
            if owner[r] != owner[col] {
                off[(r, col)] = m[(r, col)];
                out[(r, col)] = 0.0;
            }
        }
    }
    (out, op_norm(&off))
}

/// Splittings at x̄_n = F(n, θ^t ω, x̄) for n in [n0, n1] and the conjugated blocks.
pub fn block_diagonalize<C: Cocycle + ?Sized>(
    c: &C,
    spec: &Spectrum,
    t: i64,
    xbar: &Vector,
    n0: i64,
    n1: i64,
    horizon: usize,
) -> Result<FrameChain> {
    assert!(n0 <= 0 && n1 >= 0);
    let back = trajectory(c, t, n0, xbar)?;
    let fwd = trajectory(c, t, n1, xbar)?;
    let point = |n: i64| if n >= 0 { &fwd[n as usize] } else { &back[(-n) as usize] };
    let mut splittings = Vec::new();
    if xbar.iter().all(|v| *v == 0.0) && c.dim() > 0 {
        // The orbit of the fixed point: fibers are the coordinate blocks.
        let d = c.dim();
        for n in n0..=n1 {
            let fibers = (0..spec.p()).map(|j| inclusion(d, &spec.coords[j])).collect();
            splittings.push(Splitting {
                t: t + n,
                x: point(n).clone(),
                fibers,
                frame_inv: Matrix::identity(d, d),
                frame: Matrix::identity(d, d),
            });
        }
    } else {
        for n in n0..=n1 {
            splittings.push(oseledets_splitting(c, spec, t + n, point(n), horizon)?);
        }
    }
    let mut blocks = Vec::new();
    let mut worst = 0.0f64;
    for n in n0..n1 {
        let a = &splittings[(n - n0) as usize];
        let b = &splittings[(n + 1 - n0) as usize];
        let m = &b.frame * c.jacobian(t + n, point(n)) * &a.frame_inv;
        let (bd, off) = block_part(spec, &m);
        worst = worst.max(off);
        blocks.push(bd);
    }
    Ok(FrameChain { start: n0, splittings, blocks, off_block_residual: worst })
}

/// Least-squares slope of log(value distance) against log(x distance).
pub fn holder_estimate(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 20 {
        return Err(Error::Invalid(format!("need at least 20 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|&(a, b)| !(a > 0.0) || !(b > 0.0)) {
        return Err(Error::Invalid("degenerate pair with zero distance".into()));
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("all x distances coincide".into()));
    }
    Ok(sxy / sxx)
}

/// Constants derived from the spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantsBudget {
    pub lambda_max: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub beta_e: f64,
    pub varsigma: f64,
    pub beta_n: f64,
    pub beta_v: f64,
    pub beta_alpha: f64,
}

impl ConstantsBudget {
    /// ε is half of its admissible upper bound, β and β_E follow their closed forms,
    /// ς is half of its upper bound.
    pub fn new(spec: &Spectrum, alpha: f64) -> Result<Self> {
        let defect = spec.resonance_defect();
        if defect < RESONANCE_TOL {
            return Err(resonant_error(spec).unwrap_or(Error::Precondition("resonant spectrum".into())));
        }
        Ok(Self::build(spec, alpha, defect))
    }

    /// Budget for the leaf and escape-time constructions, which need only the
    /// spectral gaps. Equals `new` on a non-resonant spectrum; otherwise the
    /// resonance defect is dropped from ε and β, β_α are set to 0.
    pub fn gaps_only(spec: &Spectrum, alpha: f64) -> Self {
        let defect = spec.resonance_defect();
        if defect >= RESONANCE_TOL {
            return Self::build(spec, alpha, defect);
        }
        let mut b = Self::build(spec, alpha, f64::INFINITY);
        b.beta = 0.0;
        b.beta_alpha = 0.0;
        b
    }

    fn build(spec: &Spectrum, alpha: f64, defect: f64) -> Self {
        let lam = &spec.exponents;
        let p = spec.p();
        let tau = spec.tau;
        let lmax = spec.lambda_max();
        let gap = spec.min_gap();
        let side = match (tau, p - tau) {
            (0, _) => -lam[0],
            (_, 0) => lam[p - 1],
            _ => lam[tau - 1].min(-lam[tau]),
        };
        let bound = 0.01 * 1f64.min(gap * side / (2.0 * lmax)).min(defect);
        let epsilon = 0.5 * bound;
        let beta = 1f64.min(gap / lmax).min(defect / (2.0 * lmax));
        let beta_e = lam
            .windows(2)
            .map(|w| (w[0] - w[1] - 3.0 * epsilon) / (6.0 * lmax))
            .fold(f64::INFINITY, f64::min)
            .min(0.5);
        let mut sg = f64::INFINITY;
        if tau > 0 {
            sg = sg.min(lam[tau - 1] / lmax);
        }
        if tau < p {
            sg = sg.min(-lam[tau] / lmax);
        }
        for k in tau..p {
            for j in 0..p {
                let diff = (lam[k] - lam[j]).abs();
                if diff > 0.0 {
                    sg = sg.min(diff / lam[0].abs());
                }
            }
        }
        let varsigma = 0.5 * 0.1 * sg;
        let e = epsilon / lmax;
        Self {
            lambda_max: lmax,
            epsilon,
            beta,
            beta_e,
            varsigma,
            beta_n: e.min(alpha),
            beta_v: beta_e.min(e).min(alpha),
            beta_alpha: beta.min(beta_e).min(e).min(alpha),
        }
    }
}

fn resonant_error(spec: &Spectrum) -> Option<Error> {
    resonant_triples(spec).first().map(|&(i, k, j, defect)| Error::Resonant { i, k, j, defect })
}

/// 1-based (i, κ, j, defect) with i ≤ τ < κ and |λ_i + λ_κ − λ_j| < RESONANCE_TOL.
pub fn resonant_triples(spec: &Spectrum) -> Vec<(usize, usize, usize, f64)> {
    let lam = &spec.exponents;
    let mut out = Vec::new();
    for i in 0..spec.tau {
        for k in spec.tau..spec.p() {
            for j in 0..spec.p() {
                let defect = lam[i] + lam[k] - lam[j];
                if defect.abs() < RESONANCE_TOL {
                    out.push((i + 1, k + 1, j + 1, defect));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResonanceReport {
    pub exponents: Vec<f64>,
    pub tau: usize,
    pub belitskii_ok: bool,
    /// 1-based triples (i, κ, j) with λ_j = λ_i + λ_κ.
    pub violating_triples: Vec<(usize, usize, usize)>,
    pub bunching_ok: bool,
    pub budget: Option<ConstantsBudget>,
}

pub fn resonance_report(spec: &Spectrum, alpha: f64) -> ResonanceReport {
    let lam = &spec.exponents;
    let (p, tau) = (spec.p(), spec.tau);
    let triples: Vec<_> = resonant_triples(spec).into_iter().map(|(i, k, j, _)| (i, k, j)).collect();
    let bunching_ok = if tau == 0 || tau == p {
        true
    } else {
        lam[0] - lam[tau - 1] < -lam[tau] && lam[tau] - lam[p - 1] < lam[tau - 1]
    };
    ResonanceReport {
        exponents: lam.clone(),
        tau,
        belitskii_ok: triples.is_empty(),
        violating_triples: triples,
        bunching_ok,
        budget: ConstantsBudget::new(spec, alpha).ok(),
    }
}
