//! Binary soft-margin SVMs.
//!
//! The linear solver minimizes `0.5 |w|^2 + C sum hinge(y (w.x + b))` with an
//! unregularized bias: for a fixed `b` the problem in `w` is solved by dual
//! coordinate descent, and `b` is found by bisection on the derivative of the
//! resulting convex function of `b`, which is `-sum(alpha_i y_i)`.
//!
//! The kernel solver is SMO with second-order working-set selection on a
//! precomputed kernel matrix.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::ngram::LineReader;

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;
pub const SMO_EPS: f64 = 1e-3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maps a decision value to a label; exact zero is `Original`.
pub fn label_of(decision: f64) -> Label {
    if decision > 0.0 {
        Label::Translated
    } else {
        Label::Original
    }
}

fn check_labels(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
    }
    let pos = y.iter().any(|&v| v > 0.0);
    let neg = y.iter().any(|&v| v < 0.0);
    if !(pos && neg) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearSvmOptions {
    pub c: f64,
    pub seed: u64,
    /// Projected-gradient tolerance of the inner solver.
    pub tol: f64,
    pub max_epochs: usize,
}

impl LinearSvmOptions {
    pub fn new(c: f64) -> Self {
        LinearSvmOptions {
            c,
            seed: 0,
            tol: 1e-6,
            max_epochs: 10_000,
        }
    }
}

/// Primal objective `0.5 |w|^2 + C sum hinge`.
pub fn primal_objective(w: &[f64], b: f64, c: f64, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi * (dot(w, xi) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

struct FixedBiasSolver<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    sq_norms: Vec<f64>,
    alpha: Vec<f64>,
    w: Vec<f64>,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    opts: LinearSvmOptions,
}

impl<'a> FixedBiasSolver<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [f64], opts: LinearSvmOptions) -> Self {
        let d = x[0].len();
        FixedBiasSolver {
            x,
            y,
            sq_norms: x.iter().map(|xi| dot(xi, xi)).collect(),
            alpha: vec![0.0; x.len()],
            w: vec![0.0; d],
            order: (0..x.len()).collect(),
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            opts,
        }
    }

    /// Coordinate descent on the dual for bias `b`, warm-started from the
    /// current alphas, with shrinking of bound variables whose gradient
    /// points outward. Converged once every projected gradient over the full
    /// set is below the tolerance. Returns `sum(alpha_i y_i)`.
    fn solve(&mut self, b: f64) -> f64 {
        let c = self.opts.c;
        let n = self.x.len();
        let mut active = n;
        self.order.sort_unstable();
        let (mut pg_max_old, mut pg_min_old) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..self.opts.max_epochs {
            self.order[..active].shuffle(&mut self.rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut k = 0;
            while k < active {
                let i = self.order[k];
                let xi = &self.x[i];
                let yi = self.y[i];
                let g = yi * (dot(&self.w, xi) + b) - 1.0;
                let a = self.alpha[i];
                let pg = if a <= 0.0 {
                    if g > pg_max_old {
                        active -= 1;
                        self.order.swap(k, active);
                        continue;
                    }
                    g.min(0.0)
                } else if a >= c {
                    if g < pg_min_old {
                        active -= 1;
                        self.order.swap(k, active);
                        continue;
                    }
                    g.max(0.0)
                } else {
                    g
                };
                k += 1;
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg == 0.0 {
                    continue;
                }
                let q = self.sq_norms[i];
                let new = if q > 0.0 {
                    (a - g / q).clamp(0.0, c)
                } else if g < 0.0 {
                    c
                } else {
                    0.0
                };
                let delta = (new - a) * yi;
                if delta != 0.0 {
                    for (wj, xj) in self.w.iter_mut().zip(xi) {
                        *wj += delta * xj;
                    }
                    self.alpha[i] = new;
                }
            }
            if pg_max.max(-pg_min) < self.opts.tol {
                if active == n {
                    break;
                }
                // converged on the shrunk set: recheck everything
                active = n;
                pg_max_old = f64::INFINITY;
                pg_min_old = f64::NEG_INFINITY;
                continue;
            }
            pg_max_old = if pg_max <= 0.0 { f64::INFINITY } else { pg_max };
            pg_min_old = if pg_min >= 0.0 { f64::NEG_INFINITY } else { pg_min };
        }
        self.alpha.iter().zip(self.y).map(|(a, y)| a * y).sum()
    }
}

pub fn train_linear_svm(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<LinearSvmModel> {
    train_linear_svm_with(x, y, LinearSvmOptions::new(c))
}

pub fn train_linear_svm_with(x: &[Vec<f64>], y: &[f64], opts: LinearSvmOptions) -> Result<LinearSvmModel> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            op: "train_linear_svm",
            shapes: format!("{} rows vs {} labels", x.len(), y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two training points".into()));
    }
    check_labels(y)?;
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", opts.c)));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape {
            op: "train_linear_svm",
            shapes: "rows have different lengths".into(),
        });
    }

    let mut solver = FixedBiasSolver::new(x, y, opts);
    // derivative of the objective in b is -sum(alpha y): find its sign change
    let slope = |s: &mut FixedBiasSolver, b: f64| -s.solve(b);
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut s_lo = slope(&mut solver, lo);
    let mut step = 1.0;
    while s_lo > 0.0 {
        hi = lo;
        step *= 2.0;
        lo -= step;
        s_lo = slope(&mut solver, lo);
    }
    let mut s_hi = slope(&mut solver, hi);
    step = 1.0;
    while s_hi < 0.0 {
        lo = hi;
        s_lo = s_hi;
        step *= 2.0;
        hi += step;
        s_hi = slope(&mut solver, hi);
    }
    // Illinois false position: the slope is monotone and piecewise linear in b
    let mut last_side = 0i8;
    for _ in 0..100 {
        if hi - lo <= 1e-10 * (1.0 + lo.abs().max(hi.abs())) || s_lo == 0.0 || s_hi == 0.0 {
            break;
        }
        let mut mid = lo - s_lo * (hi - lo) / (s_hi - s_lo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let s = slope(&mut solver, mid);
        if s < 0.0 {
            lo = mid;
            s_lo = s;
            if last_side == -1 {
                s_hi *= 0.5;
            }
            last_side = -1;
        } else if s > 0.0 {
            hi = mid;
            s_hi = s;
            if last_side == 1 {
                s_lo *= 0.5;
            }
            last_side = 1;
        } else {
            lo = mid;
            hi = mid;
        }
    }
    let bias = if s_lo == 0.0 {
        lo
    } else if s_hi == 0.0 {
        hi
    } else {
        0.5 * (lo + hi)
    };
    solver.solve(bias);
    Ok(LinearSvmModel {
        weights: solver.w,
        bias,
        c: opts.c,
    })
}

impl LinearSvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        label_of(self.decision(x))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("\\linear-svm v1\n");
        writeln!(s, "dim {}", self.weights.len()).unwrap();
        writeln!(s, "c {}", self.c).unwrap();
        writeln!(s, "bias {}", self.bias).unwrap();
        for w in &self.weights {
            writeln!(s, "{w}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = text.as_bytes();
        let mut lines = LineReader { r: &mut r, line: 0 };
        lines.expect_exact("\\linear-svm v1")?;
        let dim: usize = lines.keyed("dim")?;
        let c: f64 = lines.keyed("c")?;
        let bias: f64 = lines.keyed("bias")?;
        let mut weights = Vec::with_capacity(dim);
        for _ in 0..dim {
            let l = lines.next_line()?;
            weights.push(l.parse().map_err(|_| lines.err("bad weight"))?);
        }
        Ok(LinearSvmModel { weights, bias, c })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSvmModel {
    pub support_indices: Vec<usize>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    /// Number of training points the indices refer to.
    pub n_train: usize,
}

/// Largest |K_ij - K_ji|.
pub fn asymmetry(k: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..k.len() {
        for j in 0..i {
            worst = worst.max((k[i][j] - k[j][i]).abs());
        }
    }
    worst
}

/// Symmetrizes `k` and clips negative eigenvalues to zero. Matrices that are
/// positive semi-definite up to a relative 1e-10 are returned unchanged apart
/// from symmetrization.
pub fn make_psd(k: &[Vec<f64>]) -> DMatrix<f64> {
    let n = k.len();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (k[i][j] + k[j][i]));
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let jittered = &m + DMatrix::identity(n, n) * (1e-10 * scale);
    if nalgebra::Cholesky::new(jittered).is_some() {
        return m;
    }
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    // restore exact symmetry lost to rounding
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

pub fn train_kernel_svm(k: &[Vec<f64>], y: &[f64], c: f64) -> Result<KernelSvmModel> {
    let n = k.len();
    if y.len() != n || k.iter().any(|r| r.len() != n) {
        return Err(Error::Shape {
            op: "train_kernel_svm",
            shapes: format!("kernel {n}x? with {} labels", y.len()),
        });
    }
    check_labels(y)?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    let dev = asymmetry(k);
    if dev > SYMMETRY_TOLERANCE {
        return Err(Error::AsymmetricKernel(dev));
    }
    let km = make_psd(k);
    let (alpha, bias) = smo(&km, y, c, SMO_EPS);
    let mut support_indices = Vec::new();
    let mut dual_coefs = Vec::new();
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            support_indices.push(i);
            dual_coefs.push(a * y[i]);
        }
    }
    Ok(KernelSvmModel {
        support_indices,
        dual_coefs,
        bias,
        c,
        n_train: n,
    })
}

const TAU: f64 = 1e-12;

/// Solves `min 0.5 a'Qa - e'a, 0 <= a <= C, y'a = 0` with `Q_ij = y_i y_j K_ij`.
fn smo(k: &DMatrix<f64>, y: &[f64], c: f64, eps: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let q = |i: usize, j: usize| y[i] * y[j] * k[(i, j)];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let max_iter = 10_000_000usize.max(100 * n);

    for _ in 0..max_iter {
        // first index: maximal violation in I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i_sel == usize::MAX {
                continue;
            }
            let b = gmax - v;
            if b > 0.0 {
                let mut a = k[(i_sel, i_sel)] + k[(t, t)] - 2.0 * k[(i_sel, t)];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        if gmax - gmin < eps || i_sel == usize::MAX || j_sel == usize::MAX {
            break;
        }
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // bias from free support vectors, else the middle of the feasible range
    let mut sum = 0.0;
    let mut n_free = 0usize;
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += yg;
            n_free += 1;
        } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if n_free > 0 {
        sum / n_free as f64
    } else {
        0.5 * (ub + lb)
    };
    (alpha, -rho)
}

impl KernelSvmModel {
    /// Decision value from the kernel row between a point and every training point.
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.support_indices
            .iter()
            .zip(&self.dual_coefs)
            .map(|(&i, &a)| a * kernel_row[i])
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, kernel_row: &[f64]) -> Label {
        label_of(self.decision(kernel_row))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("\\kernel-svm v1\n");
        writeln!(s, "n-train {}", self.n_train).unwrap();
        writeln!(s, "c {}", self.c).unwrap();
        writeln!(s, "bias {}", self.bias).unwrap();
        writeln!(s, "support {}", self.support_indices.len()).unwrap();
        for (i, a) in self.support_indices.iter().zip(&self.dual_coefs) {
            writeln!(s, "{i}\t{a}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = text.as_bytes();
        let mut lines = LineReader { r: &mut r, line: 0 };
        lines.expect_exact("\\kernel-svm v1")?;
        let n_train: usize = lines.keyed("n-train")?;
        let c: f64 = lines.keyed("c")?;
        let bias: f64 = lines.keyed("bias")?;
        let n_sv: usize = lines.keyed("support")?;
        let mut support_indices = Vec::with_capacity(n_sv);
        let mut dual_coefs = Vec::with_capacity(n_sv);
        for _ in 0..n_sv {
            let l = lines.next_line()?;
            let (i, a) = l.split_once('\t').ok_or_else(|| lines.err("bad support line"))?;
            let i: usize = i.parse().map_err(|_| lines.err("bad index"))?;
            if i >= n_train {
                return Err(lines.err("support index out of range"));
            }
            support_indices.push(i);
            dual_coefs.push(a.parse().map_err(|_| lines.err("bad coefficient"))?);
        }
        Ok(KernelSvmModel {
            support_indices,
            dual_coefs,
            bias,
            c,
            n_train,
        })
    }
}

/// Picks the grid value with the best score; ties go to the smaller value.
pub fn select_c<F>(grid: &[f64], mut score: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty C grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, sorted[0]);
    for &c in &sorted {
        let s = score(c)?;
        if s > best.0 {
            best = (s, c);
        }
    }
    Ok(best.1)
}

pub fn accuracy<I: IntoIterator<Item = (Label, Label)>>(pairs: I) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, g) in pairs {
        hit += usize::from(p == g);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Linear SVM C selection on a dev set.
pub fn tune_c(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    dev_x: &[Vec<f64>],
    dev_y: &[f64],
    grid: &[f64],
) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    select_c(grid, |c| {
        let m = train_linear_svm(train_x, train_y, c)?;
        Ok(accuracy(
            dev_x
                .iter()
                .zip(dev_y)
                .map(|(x, &y)| (m.predict(x), if y > 0.0 { Label::Translated } else { Label::Original })),
        ))
    })
}
