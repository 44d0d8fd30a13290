//! Direct minimisation of the capacity objective, independent of the scaling solver.
//!
//! The PD constraint is removed by writing `Y_j = exp(Z_j)` with `Z_j`
//! symmetric; in these coordinates the log objective is
//! `F(Z) = sum_i logdet M_i(exp Z) - sum_j p_j tr Z_j`.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objective::{m_matrices, objective_value, tuple_norm, Capacity, NumericConfig};
use crate::quiver::{check_perp, validate_datum, QuiverDatum};
use crate::spd::{random_symmetric, sym_eig, PdTuple};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub restarts: usize,
    pub max_steps: usize,
    /// A restart stops once the Frobenius norm of the gradient in `Z` is below this.
    pub gradient_tol: f64,
    pub seed: u64,
    /// Scale of the random symmetric starting points (restart 0 starts at `Z = 0`).
    pub init_spread: f64,
    /// Use central finite differences instead of the analytic gradient.
    pub finite_difference: bool,
    pub fd_step: f64,
    /// A restart is abandoned once some `|eig Z_j|` exceeds this.
    pub divergence_radius: f64,
    pub numeric: NumericConfig,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            restarts: 8,
            max_steps: 5000,
            gradient_tol: 1e-10,
            seed: 0,
            init_spread: 1.0,
            finite_difference: false,
            fd_step: 1e-6,
            divergence_radius: 30.0,
            numeric: NumericConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub best_y: PdTuple,
    /// Objective at `best_y`.
    pub best: Capacity,
    pub restarts_used: usize,
    /// Gradient norm (in `Z` coordinates) at the best point.
    pub converged_gradient_norm: f64,
    /// Capacity-zero evidence: `M` is singular for every `Y`, a descent path
    /// reached a `Y` where some `M_i` is numerically singular, or every restart
    /// ran off to infinity with the objective below `1e-10`.
    pub collapsed: bool,
}

impl OracleResult {
    pub fn best_value(&self) -> f64 {
        self.best.value
    }

    /// The best value, or zero when the run produced capacity-zero evidence.
    pub fn capacity_estimate(&self) -> f64 {
        if self.collapsed {
            0.0
        } else {
            self.best.value
        }
    }
}

fn exp_tuple(z: &[DMatrix<f64>]) -> Result<PdTuple> {
    let mats = z
        .iter()
        .map(crate::spd::sym_exp)
        .collect::<Result<Vec<_>>>()?;
    PdTuple::with_floor(mats, 0.0)
}

/// `F(Z)`; `-inf` when some `M_i` is singular.
pub fn log_objective_z(datum: &QuiverDatum, z: &[DMatrix<f64>], cfg: &NumericConfig) -> Result<f64> {
    let y = exp_tuple(z)?;
    let mut f = 0.0;
    for m in m_matrices(datum, &y) {
        let e = sym_eig(&m)?;
        if !e.is_positive_definite(cfg.singularity_floor) {
            return Ok(f64::NEG_INFINITY);
        }
        f += e.logdet(cfg.singularity_floor)?;
    }
    for (j, zj) in z.iter().enumerate() {
        f -= datum.p(j) * zj.trace();
    }
    Ok(f)
}

/// Analytic gradient of `F` in `Z`: `U (Gamma o U^T P_j U) U^T - p_j I` with
/// `P_j = p_j sum V_a M^{-1} V_a^T` and `Gamma` the divided differences of `exp`
/// at the eigenvalues of `Z_j`.
pub fn z_gradient(
    datum: &QuiverDatum,
    z: &[DMatrix<f64>],
    cfg: &NumericConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let y = exp_tuple(z)?;
    let m = m_matrices(datum, &y);
    let mut m_inv = Vec::with_capacity(m.len());
    for mi in &m {
        let e = sym_eig(mi)?;
        if !e.is_positive_definite(cfg.singularity_floor) {
            return Err(Error::SingularMatrix {
                min_eigenvalue: e.min(),
                floor: e.floor(cfg.singularity_floor),
            });
        }
        m_inv.push(e.inverse(cfg.singularity_floor)?);
    }
    let mut p: Vec<DMatrix<f64>> = z.iter().map(|zj| DMatrix::zeros(zj.nrows(), zj.nrows())).collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        p[arrow.head] += datum.p(arrow.head) * v * &m_inv[arrow.tail] * v.transpose();
    }
    z.iter()
        .zip(p)
        .enumerate()
        .map(|(j, (zj, pj))| {
            let e = sym_eig(zj)?;
            let n = e.dim();
            let lam = &e.values;
            let gamma = DMatrix::from_fn(n, n, |r, s| {
                let (a, b) = (lam[r], lam[s]);
                if (a - b).abs() < 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    (0.5 * (a + b)).exp()
                } else {
                    b.exp() * (a - b).exp_m1() / (a - b)
                }
            });
            let inner = e.vectors.transpose() * pj * &e.vectors;
            let g = &e.vectors * gamma.component_mul(&inner) * e.vectors.transpose();
            Ok(crate::spd::symmetrize(&g) - datum.p(j) * DMatrix::identity(n, n))
        })
        .collect()
}

/// Central differences of `F` along the symmetric directions `(E_rc + E_cr) / 2`.
pub fn z_gradient_fd(
    datum: &QuiverDatum,
    z: &[DMatrix<f64>],
    h: f64,
    cfg: &NumericConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        let n = z[j].nrows();
        let mut g = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let mut plus = z.to_vec();
                let mut minus = z.to_vec();
                for (zz, sign) in [(&mut plus, 1.0), (&mut minus, -1.0)] {
                    zz[j][(r, c)] += sign * 0.5 * h;
                    zz[j][(c, r)] += sign * 0.5 * h;
                }
                let d = (log_objective_z(datum, &plus, cfg)? - log_objective_z(datum, &minus, cfg)?)
                    / (2.0 * h);
                g[(r, c)] = d;
                g[(c, r)] = d;
            }
        }
        out.push(g);
    }
    Ok(out)
}

fn axpy(z: &[DMatrix<f64>], alpha: f64, g: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    z.iter().zip(g).map(|(a, b)| a + alpha * b).collect()
}

fn dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn spectral_radius(z: &[DMatrix<f64>]) -> Result<f64> {
    let mut r: f64 = 0.0;
    for zj in z {
        let e = sym_eig(zj)?;
        r = r.max(e.max().abs()).max(e.min().abs());
    }
    Ok(r)
}

/// Largest Frobenius-norm change of `Z` in one step.
const MAX_STEP_NORM: f64 = 2.0;

/// Shift every `Z_j` by the same multiple of the identity so that the total trace is zero.
fn recentre(z: &mut [DMatrix<f64>]) {
    let n: usize = z.iter().map(|zj| zj.nrows()).sum();
    if n == 0 {
        return;
    }
    let shift = z.iter().map(|zj| zj.trace()).sum::<f64>() / n as f64;
    for zj in z.iter_mut() {
        for i in 0..zj.nrows() {
            zj[(i, i)] -= shift;
        }
    }
}

struct RestartOutcome {
    best_z: Vec<DMatrix<f64>>,
    best_f: f64,
    grad_norm: f64,
    diverged: bool,
    /// The descent reached a point where some `M_i` is numerically singular.
    singular: bool,
}

fn descend(
    datum: &QuiverDatum,
    z0: Vec<DMatrix<f64>>,
    cfg: &OracleConfig,
) -> Result<RestartOutcome> {
    let nc = &cfg.numeric;
    let grad = |z: &[DMatrix<f64>]| {
        if cfg.finite_difference {
            z_gradient_fd(datum, z, cfg.fd_step, nc)
        } else {
            z_gradient(datum, z, nc)
        }
    };
    // F(Z + sI) = F(Z) for balanced data; pinning the mean eigenvalue stops
    // round-off from drifting along that flat direction.
    let balanced = check_perp(&datum.dims, &datum.weights, nc.perp_tol).holds;
    let mut z = z0;
    if balanced {
        recentre(&mut z);
    }
    let mut f = log_objective_z(datum, &z, nc)?;
    let mut g = grad(&z)?;
    let mut gn = tuple_norm(&g);
    let mut out = RestartOutcome {
        best_z: z.clone(),
        best_f: f,
        grad_norm: gn,
        diverged: false,
        singular: false,
    };
    let mut alpha = 1.0 / gn.max(1.0);
    for _ in 0..cfg.max_steps {
        if gn <= cfg.gradient_tol {
            break;
        }
        // Armijo backtracking from the current trial step. Trial points where
        // exp(Z) over- or underflows are rejected like any other bad step.
        let mut step = alpha.min(MAX_STEP_NORM / gn);
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = axpy(&z, -step, &g);
            if balanced {
                recentre(&mut trial);
            }
            // -inf (some M_i numerically singular) is accepted: it witnesses capacity 0
            let ft = log_objective_z(datum, &trial, nc).unwrap_or(f64::NAN);
            if !ft.is_nan() && ft < f64::INFINITY && ft <= f - 1e-4 * step * gn * gn {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((z_new, f_new)) = accepted else {
            break;
        };
        if f_new == f64::NEG_INFINITY {
            out.best_f = f_new;
            out.best_z = z_new;
            out.grad_norm = f64::NAN;
            out.singular = true;
            break;
        }
        let g_new = grad(&z_new)?;
        // Barzilai-Borwein step for the next iteration.
        let s: Vec<DMatrix<f64>> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let yv: Vec<DMatrix<f64>> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        alpha = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-8, 1e4)
        } else {
            (2.0 * step).min(1e4)
        };
        z = z_new;
        f = f_new;
        g = g_new;
        gn = tuple_norm(&g);
        if f < out.best_f {
            out.best_f = f;
            out.best_z = z.clone();
            out.grad_norm = gn;
        }
        if spectral_radius(&z)? > cfg.divergence_radius {
            out.diverged = true;
            break;
        }
    }
    Ok(out)
}

pub fn oracle_minimize(datum: &QuiverDatum, cfg: &OracleConfig) -> Result<OracleResult> {
    validate_datum(datum).into_result()?;
    let dims = datum.dims.sinks.clone();
    let zero: Vec<DMatrix<f64>> = dims.iter().map(|&n| DMatrix::zeros(n, n)).collect();

    // M_i(Y) is singular for one PD Y iff it is for all of them.
    if log_objective_z(datum, &zero, &cfg.numeric)? == f64::NEG_INFINITY {
        return Ok(OracleResult {
            best_y: PdTuple::identity(&dims),
            best: Capacity::zero(),
            restarts_used: 0,
            converged_gradient_norm: f64::NAN,
            collapsed: true,
        });
    }

    let mut best: Option<RestartOutcome> = None;
    let mut all_diverged = true;
    let restarts = cfg.restarts.max(1);
    for r in 0..restarts {
        let z0 = if r == 0 {
            zero.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            dims.iter()
                .map(|&n| random_symmetric(n, cfg.init_spread, &mut rng))
                .collect()
        };
        let out = descend(datum, z0, cfg)?;
        all_diverged &= out.diverged;
        if best.as_ref().is_none_or(|b| out.best_f < b.best_f) {
            best = Some(out);
        }
    }
    let best = best.expect("at least one restart");
    let best_y = exp_tuple(&best.best_z)?;
    let value = objective_value(datum, &best_y, &cfg.numeric)?;
    Ok(OracleResult {
        best_y,
        best: value,
        restarts_used: restarts,
        converged_gradient_norm: best.grad_norm,
        collapsed: best.singular || (all_diverged && value.value < 1e-10),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridConfig {
    /// Grid covers `t_j` in `[10^-r, 10^r]`.
    pub log_range: f64,
    pub points: usize,
    pub refinements: usize,
    pub max_sinks: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            log_range: 3.0,
            points: 25,
            refinements: 1,
            max_sinks: 4,
        }
    }
}

/// Exhaustive minimisation over a log-uniform grid of scalar `Y_j = t_j`.
///
/// Returns an upper bound on the capacity.
pub fn grid_min_rank_one(datum: &QuiverDatum, grid: &GridConfig) -> Result<f64> {
    validate_datum(datum).into_result()?;
    if datum.dims.sinks.iter().any(|&n| n != 1) {
        return Err(Error::WrongShape(format!(
            "grid search needs one-dimensional sinks, got {:?}",
            datum.dims.sinks
        )));
    }
    let m = datum.dims.sinks.len();
    if m > grid.max_sinks {
        return Err(Error::BudgetExceeded {
            needed: m,
            budget: grid.max_sinks,
        });
    }
    if grid.points < 2 {
        return Err(Error::InvalidInput("grid needs at least two points per axis".into()));
    }
    // B_ij = p_j sum_{a: i -> j} V_a^T V_a, so M_i(t) = sum_j t_j B_ij.
    let k = datum.dims.sources.len();
    let mut b: Vec<Vec<DMatrix<f64>>> = datum
        .dims
        .sources
        .iter()
        .map(|&d| (0..m).map(|_| DMatrix::zeros(d, d)).collect())
        .collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        b[arrow.tail][arrow.head] += datum.p(arrow.head) * v.transpose() * v;
    }
    let eval = |logt: &[f64]| -> f64 {
        let mut f = 0.0;
        for bi in b.iter().take(k) {
            let mut mi = DMatrix::zeros(bi[0].nrows(), bi[0].ncols());
            for (bij, &lt) in bi.iter().zip(logt) {
                mi += 10f64.powf(lt) * bij;
            }
            match Cholesky::new(mi) {
                Some(ch) => f += 2.0 * ch.l_dirty().diagonal().map(|x| x.ln()).sum(),
                None => return f64::NEG_INFINITY,
            }
        }
        f - logt
            .iter()
            .enumerate()
            .map(|(j, lt)| datum.p(j) * lt * std::f64::consts::LN_10)
            .sum::<f64>()
    };

    let mut center = vec![0.0; m];
    let mut half_width = grid.log_range;
    let mut best = f64::INFINITY;
    for _ in 0..=grid.refinements {
        let step = 2.0 * half_width / (grid.points - 1) as f64;
        let mut idx = vec![0usize; m];
        let mut arg = center.clone();
        loop {
            let logt: Vec<f64> = idx
                .iter()
                .zip(&center)
                .map(|(&i, c)| c - half_width + step * i as f64)
                .collect();
            let f = eval(&logt);
            if f < best {
                best = f;
                arg = logt;
            }
            // Odometer increment over the m-dimensional grid.
            let mut axis = 0;
            while axis < m {
                idx[axis] += 1;
                if idx[axis] < grid.points {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
            if axis == m {
                break;
            }
        }
        if best == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        center = arg;
        half_width = step;
    }
    Ok(best.exp())
}
