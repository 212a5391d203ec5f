//! Lyapunov–Perron solvers for stable, unstable, pseudo and intermediate leaves.
//!
//! A leaf through the base point x is described by the difference sequence
//! w_n = F(n, x + w_0) − F(n, x). For a forward (q-type) leaf the coordinates
//! of the slow blocks are prescribed at n = 0 and propagated forward while the
//! fast coordinates are summed backward from the truncation horizon; a
//! backward (p-type) leaf is the mirror image along the backward orbit.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{inclusion, inverse, op_norm, scatter, solve, submatrix, subvector, Matrix, Vector};
use crate::spectrum::{ConstantsBudget, Spectrum};
use crate::system::{trajectory, Cocycle};

pub const DEFAULT_HORIZON: usize = 80;

/// Which leaf family; block indices are 0-based in spectral order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Side {
    Stable,
    Unstable,
    /// 𝒲^{ps}_{≥j}: graph over X_j ⊕ … ⊕ X_p.
    PseudoStable(usize),
    /// 𝒲^{pu}_{≤j}: graph over X_1 ⊕ … ⊕ X_j.
    PseudoUnstable(usize),
}

impl Side {
    /// (number of fast blocks, forward?) for the dichotomy split.
    fn split(self, spec: &Spectrum) -> (usize, bool) {
        match self {
            Side::Stable => (spec.tau, true),
            Side::Unstable => (spec.tau, false),
            Side::PseudoStable(j) => (j, true),
            Side::PseudoUnstable(j) => (j + 1, false),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LpConfig {
    pub side: Side,
    /// Defaults to the middle of the admissible window.
    pub weight: Option<f64>,
    /// Defaults to max(80, tail requirement); an explicit value is checked against the tail bound.
    pub horizon: Option<usize>,
    pub tol: f64,
    pub max_iter: usize,
}

impl LpConfig {
    pub fn new(side: Side) -> Self {
        Self { side, weight: None, horizon: None, tol: 1e-13, max_iter: 300 }
    }
}

/// Coordinates and rates of a dichotomy split.
#[derive(Clone, Debug)]
pub struct Dichotomy {
    pub forward: bool,
    /// Coordinates of the fast blocks.
    pub plus: Vec<usize>,
    /// Coordinates of the slow blocks.
    pub minus: Vec<usize>,
    pub weight: f64,
    pub horizon: usize,
}

impl Dichotomy {
    pub fn new(spec: &Spectrum, budget: &ConstantsBudget, config: &LpConfig) -> Result<Self> {
        let (g, forward) = config.side.split(spec);
        let p = spec.p();
        if g > p || (!forward && g == 0) {
            return Err(Error::Invalid(format!("split {g} out of range for {p} blocks")));
        }
        let lam = &spec.exponents;
        let eps = budget.epsilon;
        let hi = if g == 0 { f64::INFINITY } else { lam[g - 1] - 3.0 * eps };
        let lo = if g == p { f64::NEG_INFINITY } else { lam[g] + 3.0 * eps };
        let weight = match config.weight {
            Some(w) => {
                if !(w > lo && w < hi) {
                    return Err(Error::Invalid(format!("weight {w} outside ({lo}, {hi})")));
                }
                w
            }
            None => match (g, g == p) {
                (0, _) => lam[0] + 1.0,
                (_, true) => lam[p - 1] - 1.0,
                _ => 0.5 * (lam[g - 1] + lam[g]),
            },
        };
        // Decay rate of the neglected tail: distance from the weight to the nearer side.
        let rate = if forward {
            if g == 0 { 1.0 } else { lam[g - 1] - eps - weight }
        } else if g == p {
            1.0
        } else {
            weight - lam[g] - eps
        };
        let needed = (config.tol.ln() / -rate).ceil().max(1.0) as usize;
        let horizon = match config.horizon {
            Some(n) if n < needed => {
                return Err(Error::Horizon { bound: (-rate * n as f64).exp(), tol: config.tol });
            }
            Some(n) => n,
            None => needed.max(DEFAULT_HORIZON),
        };
        Ok(Self {
            forward,
            plus: spec.coords_of(0..g),
            minus: spec.coords_of(g..p),
            weight,
            horizon,
        })
    }

    /// Coordinates over which the leaf is a graph.
    pub fn graph(&self) -> &[usize] {
        if self.forward {
            &self.minus
        } else {
            &self.plus
        }
    }

    pub fn complement(&self) -> &[usize] {
        if self.forward {
            &self.plus
        } else {
            &self.minus
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LpSolution {
    pub side: Side,
    pub t: i64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// w_n for n = 0, ±1, …, ±N (sign + for forward leaves).
    #[serde(skip)]
    pub seq: Vec<Vector>,
    pub iterations: usize,
    /// Weighted sup-norm change of one extra sweep at the fixed point.
    pub residual: f64,
    /// Largest ratio of successive weighted differences after the first few sweeps.
    pub ratio: f64,
}

impl LpSolution {
    pub fn q0(&self) -> &Vector {
        &self.seq[0]
    }

    pub fn point(&self) -> Vector {
        Vector::from_column_slice(&self.x) + &self.seq[0]
    }
}

/// Data along the base orbit shared by the value and derivative sweeps.
struct Orbit {
    /// Base points x_{±k}.
    xs: Vec<Vector>,
    fx: Vec<Vector>,
    /// Fast block inverse and slow block of Λ at the step leaving (forward) or entering (backward) each point.
    plus_inv: Vec<Matrix>,
    minus: Vec<Matrix>,
    times: Vec<i64>,
}

fn build_orbit<C: Cocycle + ?Sized>(c: &C, dich: &Dichotomy, t: i64, x: &Vector) -> Result<Orbit> {
    let n = dich.horizon as i64;
    let xs = trajectory(c, t, if dich.forward { n } else { -n }, x)?;
    let times: Vec<i64> = (0..=n).map(|k| if dich.forward { t + k } else { t - k }).collect();
    let mut plus_inv = Vec::with_capacity(xs.len());
    let mut minus = Vec::with_capacity(xs.len());
    let mut fx = Vec::with_capacity(xs.len());
    for (k, &tk) in times.iter().enumerate() {
        let lam = c.linear(tk);
        plus_inv.push(inverse(&submatrix(&lam, &dich.plus, &dich.plus))?);
        minus.push(submatrix(&lam, &dich.minus, &dich.minus));
        fx.push(c.nonlinear(tk, &xs[k]));
    }
    Ok(Orbit { xs, fx, plus_inv, minus, times })
}

/// One application of the truncated L-P operator to `w`.
fn sweep<C: Cocycle + ?Sized>(c: &C, dich: &Dichotomy, orb: &Orbit, w: &[Vector], y_graph: &Vector) -> Vec<Vector> {
    let n = orb.xs.len();
    let d = c.dim();
    let xi: Vec<Vector> = (0..n).map(|k| c.nonlinear(orb.times[k], &(&orb.xs[k] + &w[k])) - &orb.fx[k]).collect();
    let mut out = vec![Vector::zeros(d); n];
    let (plus, minus) = (&dich.plus, &dich.minus);
    if dich.forward {
        // slow part forward from the prescribed value
        let mut m = y_graph - subvector(&orb.xs[0], minus);
        scatter(&mut out[0], minus, &m);
        for k in 0..n - 1 {
            m = &orb.minus[k] * &m + subvector(&xi[k], minus);
            scatter(&mut out[k + 1], minus, &m);
        }
        // fast part backward from the horizon
        let mut q = -(&orb.plus_inv[n - 1] * subvector(&xi[n - 1], plus));
        scatter(&mut out[n - 1], plus, &q);
        for k in (0..n - 1).rev() {
            q = &orb.plus_inv[k] * (&q - subvector(&xi[k], plus));
            scatter(&mut out[k], plus, &q);
        }
    } else {
        // index k is time t - k; the step from k+1 to k uses Λ(t-k-1)
        let mut q = y_graph - subvector(&orb.xs[0], plus);
        scatter(&mut out[0], plus, &q);
        for k in 0..n - 1 {
            q = &orb.plus_inv[k + 1] * (&q - subvector(&xi[k + 1], plus));
            scatter(&mut out[k + 1], plus, &q);
        }
        let mut m = Vector::zeros(minus.len());
        scatter(&mut out[n - 1], minus, &m);
        for k in (0..n - 1).rev() {
            m = &orb.minus[k + 1] * &m + subvector(&xi[k + 1], minus);
            scatter(&mut out[k], minus, &m);
        }
    }
    out
}

fn weighted_diff(dich: &Dichotomy, a: &[Vector], b: &[Vector]) -> f64 {
    // n ≥ 0 forward: e^{-ϱn}; backward index k is n = -k: e^{ϱk}
    let s = if dich.forward { -dich.weight } else { dich.weight };
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(k, (u, v))| (s * k as f64).exp() * (u - v).amax())
        .fold(0.0, f64::max)
}

fn picard(
    mut step: impl FnMut(&[Vector]) -> Vec<Vector>,
    diff: impl Fn(&[Vector], &[Vector]) -> f64,
    init: Vec<Vector>,
    tol: f64,
    max_iter: usize,
    what: &'static str,
) -> Result<(Vec<Vector>, usize, f64, f64)> {
    let mut w = init;
    let mut prev = f64::INFINITY;
    let mut worst: f64 = 0.0;
    for it in 1..=max_iter {
        let next = step(&w);
        let dl = diff(&next, &w);
        w = next;
        if it > 3 && prev > 1e3 * tol {
            worst = worst.max(dl / prev);
        }
        if !dl.is_finite() || (it > 8 && dl > prev && dl > 1e3 * tol) {
            return Err(Error::Contraction { what, ratio: dl / prev });
        }
        if dl < tol {
            let check = step(&w);
            let residual = diff(&check, &w);
            return Ok((check, it, residual, worst));
        }
        prev = dl;
    }
    Err(Error::NoConvergence { what, iterations: max_iter, last: prev })
}

/// Solves the L-P equation for the leaf through (θ^t ω, x) at graph coordinate `y`
/// (a vector on the graph coordinates of the chosen side).
pub fn solve_lp<C: Cocycle + ?Sized>(
    c: &C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    t: i64,
    x: &Vector,
    y: &Vector,
    config: &LpConfig,
) -> Result<LpSolution> {
    let dich = Dichotomy::new(spec, budget, config)?;
    let orb = build_orbit(c, &dich, t, x)?;
    solve_on_orbit(c, &dich, &orb, config, t, x, y)
}

fn solve_on_orbit<C: Cocycle + ?Sized>(
    c: &C,
    dich: &Dichotomy,
    orb: &Orbit,
    config: &LpConfig,
    t: i64,
    x: &Vector,
    y: &Vector,
) -> Result<LpSolution> {
    if y.len() != dich.graph().len() {
        return Err(Error::Invalid(format!("graph coordinate has {} entries, expected {}", y.len(), dich.graph().len())));
    }
    let d = c.dim();
    let init = vec![Vector::zeros(d); orb.xs.len()];
    let (seq, iterations, residual, ratio) = picard(
        |w| sweep(c, dich, orb, w, y),
        |a, b| weighted_diff(dich, a, b),
        init,
        config.tol,
        config.max_iter,
        "Lyapunov-Perron",
    )?;
    Ok(LpSolution {
        side: config.side,
        t,
        x: x.iter().copied().collect(),
        y: y.iter().copied().collect(),
        seq,
        iterations,
        residual,
        ratio,
    })
}

/// ∂_y w_n from the differentiated L-P equation, as d×m matrices.
fn derivative_on_orbit<C: Cocycle + ?Sized>(
    c: &C,
    dich: &Dichotomy,
    orb: &Orbit,
    sol: &LpSolution,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<Matrix>> {
    let n = orb.xs.len();
    let d = c.dim();
    let graph = dich.graph();
    let m = graph.len();
    let dxi: Vec<Matrix> =
        (0..n).map(|k| c.nonlinear_jacobian(orb.times[k], &(&orb.xs[k] + &sol.seq[k]))).collect();
    let (plus, minus) = (&dich.plus, &dich.minus);
    let rows = |a: &Matrix, idx: &[usize]| -> Matrix { Matrix::from_fn(idx.len(), a.ncols(), |r, col| a[(idx[r], col)]) };
    let put = |dst: &mut Matrix, idx: &[usize], src: &Matrix| {
        for (r, &i) in idx.iter().enumerate() {
            dst.row_mut(i).copy_from(&src.row(r));
        }
    };
    let step = |v: &[Vector]| -> Vec<Vector> {
        // matrices are flattened column-major into vectors so `picard` can be reused
        let v: Vec<Matrix> = v.iter().map(|f| Matrix::from_column_slice(d, m, f.as_slice())).collect();
        let xi: Vec<Matrix> = (0..n).map(|k| &dxi[k] * &v[k]).collect();
        let mut out = vec![Matrix::zeros(d, m); n];
        if dich.forward {
            let mut a = Matrix::identity(m, m);
            put(&mut out[0], minus, &a);
            for k in 0..n - 1 {
                a = &orb.minus[k] * &a + rows(&xi[k], minus);
                put(&mut out[k + 1], minus, &a);
            }
            let mut b = -(&orb.plus_inv[n - 1] * rows(&xi[n - 1], plus));
            put(&mut out[n - 1], plus, &b);
            for k in (0..n - 1).rev() {
                b = &orb.plus_inv[k] * (&b - rows(&xi[k], plus));
                put(&mut out[k], plus, &b);
            }
        } else {
            let mut a = Matrix::identity(m, m);
            put(&mut out[0], plus, &a);
            for k in 0..n - 1 {
                a = &orb.plus_inv[k + 1] * (&a - rows(&xi[k + 1], plus));
                put(&mut out[k + 1], plus, &a);
            }
            let mut b = Matrix::zeros(minus.len(), m);
            put(&mut out[n - 1], minus, &b);
            for k in (0..n - 1).rev() {
                b = &orb.minus[k + 1] * &b + rows(&xi[k + 1], minus);
                put(&mut out[k], minus, &b);
            }
        }
        out.into_iter().map(|mm| Vector::from_column_slice(mm.as_slice())).collect()
    };
    let init = vec![Vector::zeros(d * m); n];
    let (seq, ..) = picard(step, |a, b| weighted_diff(dich, a, b), init, tol, max_iter, "differentiated Lyapunov-Perron")?;
    Ok(seq.into_iter().map(|f| Matrix::from_column_slice(d, m, f.as_slice())).collect())
}

/// A leaf chart y ↦ x + w_0(y) with memoized solves.
pub struct Leaf<'a, C: Cocycle + ?Sized> {
    sys: &'a C,
    pub side: Side,
    pub t: i64,
    pub x: Vector,
    dich: Dichotomy,
    orbit: Orbit,
    config: LpConfig,
    cache: Mutex<HashMap<Vec<u64>, LpSolution>>,
}

impl<'a, C: Cocycle + ?Sized> Leaf<'a, C> {
    pub fn graph_coords(&self) -> &[usize] {
        self.dich.graph()
    }

    pub fn dichotomy(&self) -> &Dichotomy {
        &self.dich
    }

    /// π_graph x: the graph coordinate of the base point.
    pub fn base_coordinate(&self) -> Vector {
        subvector(&self.x, self.dich.graph())
    }

    pub fn solve(&self, y: &Vector) -> Result<LpSolution> {
        let key: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
        if let Some(s) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(s.clone());
        }
        let sol = solve_on_orbit(self.sys, &self.dich, &self.orbit, &self.config, self.t, &self.x, y)?;
        self.cache.lock().expect("cache poisoned").insert(key, sol.clone());
        Ok(sol)
    }

    /// The leaf point with graph coordinate y.
    pub fn point(&self, y: &Vector) -> Result<Vector> {
        Ok(self.solve(y)?.point())
    }

    /// ∂_y of the leaf point (d × graph dimension).
    pub fn derivative(&self, y: &Vector) -> Result<Matrix> {
        let sol = self.solve(y)?;
        let seq = derivative_on_orbit(self.sys, &self.dich, &self.orbit, &sol, self.config.tol, self.config.max_iter)?;
        Ok(seq.into_iter().next().expect("non-empty sequence"))
    }

    /// ∂_y of the whole sequence w_n, used for forward pushes of tangent vectors.
    pub fn derivative_sequence(&self, y: &Vector) -> Result<Vec<Matrix>> {
        let sol = self.solve(y)?;
        derivative_on_orbit(self.sys, &self.dich, &self.orbit, &sol, self.config.tol, self.config.max_iter)
    }
}

pub fn leaf_chart<'a, C: Cocycle + ?Sized>(
    c: &'a C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    t: i64,
    x: &Vector,
    config: &LpConfig,
) -> Result<Leaf<'a, C>> {
    let dich = Dichotomy::new(spec, budget, config)?;
    let orbit = build_orbit(c, &dich, t, x)?;
    Ok(Leaf {
        sys: c,
        side: config.side,
        t,
        x: x.clone(),
        dich,
        orbit,
        config: config.clone(),
        cache: Mutex::new(HashMap::new()),
    })
}

/// 𝒲_j = 𝒲^{pu}_{≤j} ∩ 𝒲^{ps}_{≥j} as a graph over X_j.
pub struct IntermediateLeaf<'a, C: Cocycle + ?Sized> {
    pub j: usize,
    unstable: Leaf<'a, C>,
    stable: Leaf<'a, C>,
    /// Coordinates of X_j, of the faster blocks and of the slower blocks.
    own: Vec<usize>,
    fast: Vec<usize>,
    slow: Vec<usize>,
    d: usize,
}

pub fn intermediate_leaf<'a, C: Cocycle + ?Sized>(
    c: &'a C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    t: i64,
    x: &Vector,
    j: usize,
    base: &LpConfig,
) -> Result<IntermediateLeaf<'a, C>> {
    if j >= spec.p() {
        return Err(Error::Invalid(format!("block {j} out of range")));
    }
    let mut cu = base.clone();
    cu.side = Side::PseudoUnstable(j);
    let mut cs = base.clone();
    cs.side = Side::PseudoStable(j);
    Ok(IntermediateLeaf {
        j,
        unstable: leaf_chart(c, spec, budget, t, x, &cu)?,
        stable: leaf_chart(c, spec, budget, t, x, &cs)?,
        own: spec.coords[j].clone(),
        fast: spec.coords_of(0..j),
        slow: spec.coords_of(j + 1..spec.p()),
        d: c.dim(),
    })
}

impl<'a, C: Cocycle + ?Sized> IntermediateLeaf<'a, C> {
    pub fn base(&self) -> &Vector {
        &self.unstable.x
    }

    pub fn own_coords(&self) -> &[usize] {
        &self.own
    }

    fn assemble(&self, first: &[usize], a: &Vector, second: &[usize], b: &Vector, graph: &[usize]) -> Vector {
        let mut v = Vector::zeros(graph.len());
        for (k, &g) in graph.iter().enumerate() {
            if let Some(p) = first.iter().position(|&i| i == g) {
                v[k] = a[p];
            } else if let Some(p) = second.iter().position(|&i| i == g) {
                v[k] = b[p];
            }
        }
        v
    }

    /// Point and ∂_{y_j} of the leaf point at X_j-coordinate y.
    pub fn point_and_derivative(&self, y: &Vector) -> Result<(Vector, Matrix)> {
        let (nf, ns) = (self.fast.len(), self.slow.len());
        let mut a = subvector(self.base(), &self.fast);
        let mut b = subvector(self.base(), &self.slow);
        let gu = self.unstable.graph_coords().to_vec();
        let gs = self.stable.graph_coords().to_vec();
        let cols = |m: &Matrix, graph: &[usize], idx: &[usize]| -> Matrix {
            let pos: Vec<usize> = idx.iter().map(|i| graph.iter().position(|g| g == i).expect("coordinate in graph")).collect();
            Matrix::from_fn(m.nrows(), pos.len(), |r, c| m[(r, pos[c])])
        };
        for it in 0..50 {
            let yu = self.assemble(&self.fast, &a, &self.own, y, &gu);
            let ys = self.assemble(&self.own, y, &self.slow, &b, &gs);
            let pu = self.unstable.point(&yu)?;
            let ps = self.stable.point(&ys)?;
            let ra = &a - subvector(&ps, &self.fast);
            let rb = &b - subvector(&pu, &self.slow);
            let du = self.unstable.derivative(&yu)?;
            let ds = self.stable.derivative(&ys)?;
            let dps_b = submatrix(&cols(&ds, &gs, &self.slow), &self.fast, &(0..ns).collect::<Vec<_>>());
            let dpu_a = submatrix(&cols(&du, &gu, &self.fast), &self.slow, &(0..nf).collect::<Vec<_>>());
            let mut jac = Matrix::identity(nf + ns, nf + ns);
            jac.view_mut((0, nf), (nf, ns)).copy_from(&(-dps_b.clone()));
            jac.view_mut((nf, 0), (ns, nf)).copy_from(&(-dpu_a.clone()));
            let mut r = Vector::zeros(nf + ns);
            r.rows_mut(0, nf).copy_from(&ra);
            r.rows_mut(nf, ns).copy_from(&rb);
            let rn = r.amax();
            if rn < 1e-15 * (1.0 + y.amax()) || (it > 0 && rn < 1e-14) {
                // implicit derivative in y_j
                let dps_y = submatrix(&cols(&ds, &gs, &self.own), &self.fast, &(0..self.own.len()).collect::<Vec<_>>());
                let dpu_y = submatrix(&cols(&du, &gu, &self.own), &self.slow, &(0..self.own.len()).collect::<Vec<_>>());
                let mut rhs = Matrix::zeros(nf + ns, self.own.len());
                rhs.view_mut((0, 0), (nf, self.own.len())).copy_from(&dps_y);
                rhs.view_mut((nf, 0), (ns, self.own.len())).copy_from(&dpu_y);
                let sol = jac.clone().lu().solve(&rhs).ok_or_else(|| Error::IllConditioned("intermediate leaf Jacobian".into()))?;
                let mut point = Vector::zeros(self.d);
                scatter(&mut point, &self.own, y);
                scatter(&mut point, &self.fast, &a);
                scatter(&mut point, &self.slow, &b);
                let mut der = Matrix::zeros(self.d, self.own.len());
                for (k, &i) in self.own.iter().enumerate() {
                    der[(i, k)] = 1.0;
                }
                for (r, &i) in self.fast.iter().enumerate() {
                    der.row_mut(i).copy_from(&sol.row(r));
                }
                for (r, &i) in self.slow.iter().enumerate() {
                    der.row_mut(i).copy_from(&sol.row(nf + r));
                }
                return Ok((point, der));
            }
            let delta = solve(&jac, &r).map_err(|_| Error::IllConditioned("intermediate leaf Jacobian".into()))?;
            a -= delta.rows(0, nf);
            b -= delta.rows(nf, ns);
        }
        Err(Error::NoConvergence { what: "intermediate leaf", iterations: 50, last: f64::NAN })
    }

    pub fn point(&self, y: &Vector) -> Result<Vector> {
        Ok(self.point_and_derivative(y)?.0)
    }
}

/// Max over sampled leaf points z of the distance from F(z) to the leaf of the
/// same type through F(x), using the image leaf's chart.
pub fn invariance_residual<C: Cocycle + ?Sized>(
    c: &C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    leaf: &Leaf<'_, C>,
    offsets: &[Vector],
) -> Result<f64> {
    let fx = c.map(leaf.t, &leaf.x);
    let image = leaf_chart(c, spec, budget, leaf.t + 1, &fx, &leaf.config)?;
    let graph = leaf.graph_coords().to_vec();
    let mut worst: f64 = 0.0;
    for off in offsets {
        let y = leaf.base_coordinate() + off;
        let z = leaf.point(&y)?;
        let fz = c.map(leaf.t, &z);
        let on_image = image.point(&subvector(&fz, &graph))?;
        worst = worst.max((fz - on_image).amax());
    }
    Ok(worst)
}

/// Same check for an intermediate leaf.
pub fn intermediate_invariance_residual<C: Cocycle + ?Sized>(
    c: &C,
    spec: &Spectrum,
    budget: &ConstantsBudget,
    leaf: &IntermediateLeaf<'_, C>,
    offsets: &[Vector],
) -> Result<f64> {
    let t = leaf.unstable.t;
    let fx = c.map(t, leaf.base());
    let image = intermediate_leaf(c, spec, budget, t + 1, &fx, leaf.j, &leaf.unstable.config)?;
    let mut worst: f64 = 0.0;
    for off in offsets {
        let y = subvector(leaf.base(), &leaf.own) + off;
        let z = leaf.point(&y)?;
        let fz = c.map(t, &z);
        let on_image = image.point(&subvector(&fz, &leaf.own))?;
        worst = worst.max((fz - on_image).amax());
    }
    Ok(worst)
}

/// ‖∂_y w_0 − inclusion of the graph coordinates‖ at the base point.
pub fn tangency_defect<C: Cocycle + ?Sized>(leaf: &Leaf<'_, C>) -> Result<f64> {
    let der = leaf.derivative(&leaf.base_coordinate())?;
    let d = der.nrows();
    Ok(op_norm(&(der - inclusion(d, leaf.graph_coords()))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::sampling::halton_ball;
    use crate::spectrum::lyapunov_exponents;

    fn setup(s: &crate::system::RandomMapSystem) -> (Spectrum, ConstantsBudget) {
        let spec = lyapunov_exponents(s, 2000, 0).unwrap();
        let budget = ConstantsBudget::new(&spec, s.alpha()).unwrap();
        (spec, budget)
    }

    #[test]
    fn linear_leaves_are_affine() {
        let s = catalog::linear_diag(&[2.0, 0.5]);
        let (spec, budget) = setup(&s);
        let x = Vector::from_vec(vec![0.03, -0.02]);
        for side in [Side::Stable, Side::Unstable] {
            let leaf = leaf_chart(&s, &spec, &budget, 0, &x, &LpConfig::new(side)).unwrap();
            let y = Vector::from_vec(vec![0.011]);
            let sol = leaf.solve(&y).unwrap();
            let g = leaf.graph_coords()[0];
            let other = 1 - g;
            assert!((sol.q0()[g] - (0.011 - x[g])).abs() < 1e-15);
            assert_eq!(sol.q0()[other], 0.0);
            // forward sequence is Λ_s^n (y − π_s x)
            if side == Side::Stable {
                for (n, w) in sol.seq.iter().take(10).enumerate() {
                    assert!((w[1] - 0.5f64.powi(n as i32) * (0.011 - x[1])).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn base_point_identity_and_stable_axis() {
        let s = catalog::bump_3d().extend();
        let (spec, budget) = setup(&s);
        let zero = Vector::zeros(3);
        let leaf = leaf_chart(&s, &spec, &budget, 0, &zero, &LpConfig::new(Side::Stable)).unwrap();
        let sol = leaf.solve(&Vector::zeros(1)).unwrap();
        assert!(sol.seq.iter().all(|w| w.amax() == 0.0));
        let p = leaf.point(&Vector::from_vec(vec![0.04])).unwrap();
        assert!(p[1].abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn residuals_and_invariance_on_example() {
        let s = catalog::bump_3d().extend();
        let (spec, budget) = setup(&s);
        let offsets: Vec<Vector> = (0..5).map(|k| Vector::from_vec(vec![0.01 * (k as f64 - 2.0)])).collect();
        for x in halton_ball(4, 3, 0.05) {
            let leaf = leaf_chart(&s, &spec, &budget, 0, &x, &LpConfig::new(Side::Stable)).unwrap();
            let sol = leaf.solve(&(leaf.base_coordinate() + &offsets[0])).unwrap();
            assert!(sol.residual < 1e-10, "{}", sol.residual);
            let r = invariance_residual(&s, &spec, &budget, &leaf, &offsets).unwrap();
            assert!(r < 1e-10, "{r}");
            assert!(tangency_defect(&leaf).unwrap() < 0.5);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let s = catalog::saddle_2d().extend();
        let (spec, budget) = setup(&s);
        let x = Vector::from_vec(vec![0.02, 0.03]);
        for side in [Side::Stable, Side::Unstable] {
            let leaf = leaf_chart(&s, &spec, &budget, 0, &x, &LpConfig::new(side)).unwrap();
            let y = leaf.base_coordinate().add_scalar(0.01);
            let der = leaf.derivative(&y).unwrap();
            let h = 1e-6;
            let fd = (leaf.point(&y.add_scalar(h)).unwrap() - leaf.point(&y.add_scalar(-h)).unwrap()) / (2.0 * h);
            assert!((fd - der.column(0)).amax() < 1e-6);
        }
    }

    #[test]
    fn last_intermediate_leaf_is_strong_stable() {
        let s = catalog::bump_3d().extend();
        let (spec, budget) = setup(&s);
        let x = Vector::from_vec(vec![0.02, -0.01, 0.015]);
        let base = LpConfig::new(Side::Stable);
        let p = spec.p() - 1;
        let inter = intermediate_leaf(&s, &spec, &budget, 0, &x, p, &base).unwrap();
        let mut cs = base.clone();
        cs.side = Side::PseudoStable(p);
        let strong = leaf_chart(&s, &spec, &budget, 0, &x, &cs).unwrap();
        let y = Vector::from_vec(vec![0.03]);
        assert!((inter.point(&y).unwrap() - strong.point(&y).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn explicit_short_horizon_is_rejected() {
        let s = catalog::saddle_2d().extend();
        let (spec, budget) = setup(&s);
        let mut cfg = LpConfig::new(Side::Stable);
        cfg.horizon = Some(5);
        assert!(matches!(Dichotomy::new(&spec, &budget, &cfg), Err(Error::Horizon { .. })));
    }
}
