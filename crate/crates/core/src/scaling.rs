//! Alternating scaling towards geometric position.
//!
//! Each sweep normalises the sinks (`sum_i sum_a W_a W_a^T = I`) and then the
//! sources (`sum_j p_j sum_a W_a^T W_a = I`), or the reverse. The applied
//! factors are accumulated into `H_j` and `G_i` so that `W_a = H_head V_a G_tail^{-1}`,
//! and the log-capacity `2 sum log|det G_i| - 2 sum p_j log|det H_j|` is
//! accumulated from each factor's log-determinant.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::objective::{geometric_residual, Capacity, NumericConfig};
use crate::quiver::{act, check_perp, validate_datum, GroupElement, QuiverDatum};
use crate::spd::{sym_eig, PdTuple};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepOrder {
    SinksFirst,
    SourcesFirst,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingConfig {
    /// Stop once the geometric residual after a sweep drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relative (to `trace / dim`) eigenvalue floor that signals collapse.
    pub singularity_floor: f64,
    pub order: SweepOrder,
    /// Stop early when the residual improved by less than `stall_threshold`
    /// over the last `stall_window` sweeps.
    pub stall_window: usize,
    pub stall_threshold: f64,
    /// Stop when `W` drifts from `H V G^{-1}` by more than this (relative, per
    /// arrow): rounding has been amplified enough that `W` no longer lies on
    /// the orbit of the input.
    pub drift_tolerance: f64,
    pub numeric: NumericConfig,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig {
            tolerance: 1e-10,
            max_iterations: 10_000,
            singularity_floor: 1e-12,
            order: SweepOrder::SinksFirst,
            stall_window: 100,
            stall_threshold: 1e-14,
            drift_tolerance: 1e-6,
            numeric: NumericConfig::default(),
        }
    }
}

impl ScalingConfig {
    pub fn with_tolerance(tolerance: f64) -> Self {
        ScalingConfig {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingStatus {
    Converged,
    MaxIterations,
    Collapsed,
}

impl fmt::Display for ScalingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingStatus::Converged => "Converged",
            ScalingStatus::MaxIterations => "MaxIterations",
            ScalingStatus::Collapsed => "Collapsed",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ScalingResult {
    /// The scaled datum `W`.
    pub final_datum: QuiverDatum,
    /// Accumulated source transforms `G_i`.
    pub g: Vec<DMatrix<f64>>,
    /// Accumulated sink transforms `H_j`.
    pub h: Vec<DMatrix<f64>>,
    /// Geometric residual of the input, then after every sweep.
    pub residual_history: Vec<f64>,
    /// Number of completed sweeps.
    pub iterations: usize,
    pub log_cap: f64,
    pub status: ScalingStatus,
    /// The run stopped because progress stagnated (status is then `MaxIterations`).
    pub stalled: bool,
    /// The run stopped because `W` left the orbit of the input numerically
    /// (status is then `MaxIterations`). Typical when `G` or `H` blow up, as
    /// they do when the capacity is zero without a singular `S_j` or `T_i`.
    pub left_orbit: bool,
}

impl ScalingResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }

    /// Capacity read-out: `exp(log_cap)` unless the run collapsed.
    pub fn capacity(&self) -> Capacity {
        match self.status {
            ScalingStatus::Collapsed => Capacity::zero(),
            _ => Capacity::from_log(self.log_cap),
        }
    }

    /// The accumulated transform as a group element (`g_i = G_i`, `h_j = H_j`).
    pub fn group_element(&self) -> GroupElement {
        GroupElement::new(self.g.clone(), self.h.clone())
    }
}

/// Runs the alternating scaling iteration on a structurally valid, balanced datum.
pub fn scale(datum: &QuiverDatum, config: &ScalingConfig) -> Result<ScalingResult> {
    let report = validate_datum(datum);
    if !report.is_empty() {
        return Err(Error::InvalidInput(report.to_string()));
    }
    let perp = check_perp(&datum.dims, &datum.weights, config.numeric.perp_tol);
    if !perp.holds {
        return Err(Error::InvalidInput(format!(
            "dimension balance fails: sum d_i - sum p_j n_j = {}",
            perp.residual
        )));
    }
    if !(config.tolerance > 0.0) || config.max_iterations == 0 {
        return Err(Error::InvalidInput(
            "tolerance must be positive and max_iterations at least 1".into(),
        ));
    }

    let mut state = State {
        w: datum.clone(),
        g: datum.dims.sources.iter().map(|&d| DMatrix::identity(d, d)).collect(),
        h: datum.dims.sinks.iter().map(|&n| DMatrix::identity(n, n)).collect(),
        log_cap: 0.0,
    };
    let mut history = vec![geometric_residual(datum).max];
    let mut status = ScalingStatus::MaxIterations;
    let mut stalled = false;
    let mut left_orbit = false;
    let mut iterations = 0;

    if history[0] < config.tolerance {
        status = ScalingStatus::Converged;
    } else {
        for it in 1..=config.max_iterations {
            let ok = match config.order {
                SweepOrder::SinksFirst => {
                    state.sink_step(config.singularity_floor, it)?
                        && state.source_step(config.singularity_floor, it)?
                }
                SweepOrder::SourcesFirst => {
                    state.source_step(config.singularity_floor, it)?
                        && state.sink_step(config.singularity_floor, it)?
                }
            };
            iterations = it;
            if !ok {
                status = ScalingStatus::Collapsed;
                break;
            }
            let r = geometric_residual(&state.w).max;
            if !r.is_finite() || !state.log_cap.is_finite() {
                return Err(Error::NumericError {
                    context: "scaling produced non-finite values".into(),
                    iteration: Some(it),
                });
            }
            history.push(r);
            if orbit_drift(datum, &state) > config.drift_tolerance {
                left_orbit = true;
                break;
            }
            if r < config.tolerance {
                status = ScalingStatus::Converged;
                break;
            }
            if it >= config.stall_window
                && history[it - config.stall_window] - r < config.stall_threshold
            {
                stalled = true;
                break;
            }
        }
    }

    Ok(ScalingResult {
        final_datum: state.w,
        g: state.g,
        h: state.h,
        residual_history: history,
        iterations,
        log_cap: state.log_cap,
        status,
        stalled,
        left_orbit,
    })
}

/// Largest relative deviation of `W_a` from `H_head V_a G_tail^{-1}`; infinite
/// when some `G_i` cannot be inverted.
fn orbit_drift(original: &QuiverDatum, state: &State) -> f64 {
    let mut g_inv = Vec::with_capacity(state.g.len());
    for g in &state.g {
        match g.clone().lu().try_inverse() {
            Some(x) => g_inv.push(x),
            None => return f64::INFINITY,
        }
    }
    let mut worst: f64 = 0.0;
    for ((arrow, v), w) in original.quiver.arrows.iter().zip(&original.matrices).zip(&state.w.matrices) {
        let rebuilt = &state.h[arrow.head] * v * &g_inv[arrow.tail];
        let e = (rebuilt - w).norm() / w.norm().max(f64::MIN_POSITIVE);
        if !e.is_finite() {
            return f64::INFINITY;
        }
        worst = worst.max(e);
    }
    worst
}

struct State {
    w: QuiverDatum,
    g: Vec<DMatrix<f64>>,
    h: Vec<DMatrix<f64>>,
    log_cap: f64,
}

impl State {
    /// Normalises every sink. Returns `false` when some `S_j` is below the floor.
    fn sink_step(&mut self, floor: f64, it: usize) -> Result<bool> {
        let w = &mut self.w;
        let mut s: Vec<DMatrix<f64>> = w.dims.sinks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
        for (arrow, v) in w.quiver.arrows.iter().zip(&w.matrices) {
            s[arrow.head] += v * v.transpose();
        }
        let mut factors = Vec::with_capacity(s.len());
        for (j, sj) in s.iter().enumerate() {
            let e = sym_eig(sj).map_err(|e| at_iteration(e, it))?;
            if !e.is_positive_definite(floor) {
                return Ok(false);
            }
            self.log_cap += w.p(j) * e.logdet(floor)?;
            factors.push(e.inv_sqrt(floor)?);
        }
        for (arrow, v) in w.quiver.arrows.iter().zip(w.matrices.iter_mut()) {
            *v = &factors[arrow.head] * &*v;
        }
        for (hj, f) in self.h.iter_mut().zip(&factors) {
            *hj = f * &*hj;
        }
        Ok(true)
    }

    /// Normalises every source. Returns `false` when some `T_i` is below the floor.
    fn source_step(&mut self, floor: f64, it: usize) -> Result<bool> {
        let w = &mut self.w;
        let mut t: Vec<DMatrix<f64>> =
            w.dims.sources.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        for (arrow, v) in w.quiver.arrows.iter().zip(&w.matrices) {
            t[arrow.tail] += w.weights.0[arrow.head] * v.transpose() * v;
        }
        let mut inv = Vec::with_capacity(t.len());
        let mut fwd = Vec::with_capacity(t.len());
        for ti in &t {
            let e = sym_eig(ti).map_err(|e| at_iteration(e, it))?;
            if !e.is_positive_definite(floor) {
                return Ok(false);
            }
            self.log_cap += e.logdet(floor)?;
            inv.push(e.inv_sqrt(floor)?);
            fwd.push(e.sqrt(floor)?);
        }
        for (arrow, v) in w.quiver.arrows.iter().zip(w.matrices.iter_mut()) {
            *v = &*v * &inv[arrow.tail];
        }
        for (gi, f) in self.g.iter_mut().zip(&fwd) {
            *gi = f * &*gi;
        }
        Ok(true)
    }
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::NumericError { context, .. } => Error::NumericError {
            context,
            iteration: Some(it),
        },
        other => other,
    }
}

/// Capacity estimate from a scaling run.
#[derive(Clone, Debug)]
pub struct CapacityRun {
    /// Exact up to the residual on `Converged`, zero on `Collapsed`, the last
    /// (inconclusive) estimate on `MaxIterations`.
    pub estimate: Capacity,
    pub status: ScalingStatus,
    pub result: ScalingResult,
}

impl CapacityRun {
    pub fn is_inconclusive(&self) -> bool {
        self.status == ScalingStatus::MaxIterations
    }
}

pub fn capacity(datum: &QuiverDatum, config: &ScalingConfig) -> Result<CapacityRun> {
    let result = scale(datum, config)?;
    Ok(CapacityRun {
        estimate: result.capacity(),
        status: result.status,
        result,
    })
}

/// The extremizer `Y_j = H_j^T H_j` of a converged run.
pub fn extremizer_from_scaling(result: &ScalingResult) -> Result<PdTuple> {
    if result.status != ScalingStatus::Converged {
        return Err(Error::NotConverged {
            status: result.status.to_string(),
        });
    }
    PdTuple::new(result.h.iter().map(|h| h.transpose() * h).collect())
}

/// Largest `||H_head V_a G_tail^{-1} - W_a||_F / ||W_a||_F` over arrows.
pub fn bookkeeping_error(original: &QuiverDatum, result: &ScalingResult) -> Result<f64> {
    let rebuilt = act(&result.group_element(), original)?;
    Ok(rebuilt
        .matrices
        .iter()
        .zip(&result.final_datum.matrices)
        .map(|(a, b)| (a - b).norm() / b.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceReport {
    pub cap_v: f64,
    pub cap_av: f64,
    /// `cap_v * prod_j |det h_j|^{2 p_j} / prod_i |det g_i|^2`
    pub predicted: f64,
    pub relative_error: f64,
}

/// Compares `cap(A . V)` with the group-covariance prediction from `cap(V)`.
pub fn group_covariance_check(
    datum: &QuiverDatum,
    a: &GroupElement,
    config: &ScalingConfig,
) -> Result<CovarianceReport> {
    let moved = act(a, datum)?;
    let run_v = capacity(datum, config)?;
    let run_av = capacity(&moved, config)?;
    if run_v.status != ScalingStatus::Converged || run_av.status != ScalingStatus::Converged {
        return Err(Error::Inconclusive(format!(
            "capacity runs ended as {} (V) and {} (A.V)",
            run_v.status, run_av.status
        )));
    }
    let (lg, lh) = a.log_abs_dets();
    let shift: f64 = 2.0 * lh.iter().enumerate().map(|(j, x)| datum.p(j) * x).sum::<f64>()
        - 2.0 * lg.iter().sum::<f64>();
    let log_pred = run_v.estimate.log + shift;
    Ok(CovarianceReport {
        cap_v: run_v.estimate.value,
        cap_av: run_av.estimate.value,
        predicted: log_pred.exp(),
        relative_error: (run_av.estimate.log - log_pred).exp_m1().abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{sink_residual, source_residual};
    use crate::quiver::{random_datum, BipartiteQuiver, DimVector, RandomMode, Weights};
    use approx::assert_relative_eq;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    fn lines(a: &[f64], b: &[f64]) -> QuiverDatum {
        QuiverDatum::subspace(vec![row(a), row(b)], vec![1.0, 1.0])
    }

    #[test]
    fn geometric_input_converges_immediately() {
        let r = scale(&lines(&[1.0, 0.0], &[0.0, 1.0]), &ScalingConfig::default()).unwrap();
        assert_eq!(r.status, ScalingStatus::Converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.log_cap, 0.0);
        assert_eq!(r.capacity().value, 1.0);
        assert_eq!(extremizer_from_scaling(&r).unwrap(), PdTuple::identity(&[1, 1]));
    }

    #[test]
    fn one_sweep_example() {
        let d = lines(&[1.0, 0.0], &[0.0, 2.0]);
        let r = scale(&d, &ScalingConfig::default()).unwrap();
        assert_eq!(r.status, ScalingStatus::Converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.h, vec![row(&[1.0]), row(&[0.5])]);
        assert_relative_eq!(r.capacity().value, 4.0, max_relative = 1e-14);
        let y = extremizer_from_scaling(&r).unwrap();
        assert_eq!(y, PdTuple::from_scalars(&[1.0, 0.25]).unwrap());
    }

    #[test]
    fn scalar_capacity() {
        let d = QuiverDatum::subspace(vec![row(&[3.0])], vec![1.0]);
        let run = capacity(&d, &ScalingConfig::default()).unwrap();
        assert_eq!(run.status, ScalingStatus::Converged);
        assert_relative_eq!(run.estimate.value, 9.0, max_relative = 1e-14);
        let y = extremizer_from_scaling(&run.result).unwrap();
        assert_relative_eq!(y.get(0)[(0, 0)], 1.0 / 9.0, max_relative = 1e-14);
    }

    #[test]
    fn rank_deficient_collapses() {
        let run = capacity(&lines(&[1.0, 0.0], &[2.0, 0.0]), &ScalingConfig::default()).unwrap();
        assert_eq!(run.status, ScalingStatus::Collapsed);
        assert_eq!(run.estimate.value, 0.0);
        assert!(matches!(
            extremizer_from_scaling(&run.result),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn unbalanced_weights_rejected() {
        let mut d = lines(&[1.0, 0.0], &[0.0, 1.0]);
        d.weights = Weights::new(vec![0.5, 0.5]);
        assert!(matches!(scale(&d, &ScalingConfig::default()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn half_steps_zero_their_own_residual() {
        let q = BipartiteQuiver::complete(2, 2, 1);
        let dims = DimVector::new(vec![2, 1], vec![1, 2]);
        let w = Weights::new(vec![1.0, 1.0]);
        let d = random_datum(&q, &dims, &w, 11, &RandomMode::Generic).unwrap();
        let mut st = State {
            w: d.clone(),
            g: vec![DMatrix::identity(2, 2), DMatrix::identity(1, 1)],
            h: vec![DMatrix::identity(1, 1), DMatrix::identity(2, 2)],
            log_cap: 0.0,
        };
        for it in 1..20 {
            assert!(st.sink_step(1e-12, it).unwrap());
            assert!(sink_residual(&st.w) < 1e-12);
            assert!(st.source_step(1e-12, it).unwrap());
            assert!(source_residual(&st.w) < 1e-12);
        }
    }

    #[test]
    fn bookkeeping_identity_along_the_run() {
        let q = BipartiteQuiver::complete(2, 2, 1);
        let dims = DimVector::new(vec![2, 2], vec![2, 2]);
        let w = Weights::new(vec![1.0, 1.0]);
        let d = random_datum(&q, &dims, &w, 5, &RandomMode::Generic).unwrap();
        for n in [1, 2, 5, 20, 200] {
            let cfg = ScalingConfig {
                max_iterations: n,
                ..ScalingConfig::with_tolerance(1e-13)
            };
            let r = scale(&d, &cfg).unwrap();
            assert!(bookkeeping_error(&d, &r).unwrap() < 1e-8);
            // The accumulated log-capacity matches the determinants of G and H.
            let (lg, lh) = r.group_element().log_abs_dets();
            let direct = 2.0 * lg.iter().sum::<f64>()
                - 2.0 * lh.iter().enumerate().map(|(j, x)| w.0[j] * x).sum::<f64>();
            assert!((direct - r.log_cap).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_orders_agree() {
        let q = BipartiteQuiver::subspace(3);
        let dims = DimVector::new(vec![2], vec![1, 1, 1]);
        let w = Weights::new(vec![2.0 / 3.0; 3]);
        let d = random_datum(&q, &dims, &w, 2, &RandomMode::Generic).unwrap();
        let a = scale(&d, &ScalingConfig::with_tolerance(1e-12)).unwrap();
        let cfg = ScalingConfig {
            order: SweepOrder::SourcesFirst,
            ..ScalingConfig::with_tolerance(1e-12)
        };
        let b = scale(&d, &cfg).unwrap();
        assert_eq!(a.status, ScalingStatus::Converged);
        assert_eq!(b.status, ScalingStatus::Converged);
        assert_relative_eq!(a.log_cap, b.log_cap, epsilon = 1e-9);
    }

    #[test]
    fn non_attained_infimum_runs_out_of_sweeps() {
        // [[1, 1], [0, 1]] between two sources and two sinks: feasible, not extremizable.
        let q = BipartiteQuiver::new(
            2,
            2,
            vec![
                crate::quiver::Arrow::new(0, 0, "a"),
                crate::quiver::Arrow::new(1, 0, "b"),
                crate::quiver::Arrow::new(1, 1, "d"),
            ],
        );
        let d = QuiverDatum::new(
            q,
            DimVector::new(vec![1, 1], vec![1, 1]),
            Weights::new(vec![1.0, 1.0]),
            vec![row(&[1.0]), row(&[1.0]), row(&[1.0])],
        );
        let cfg = ScalingConfig {
            max_iterations: 500,
            ..ScalingConfig::default()
        };
        let run = capacity(&d, &cfg).unwrap();
        assert_eq!(run.status, ScalingStatus::MaxIterations);
        assert!(run.is_inconclusive());
        // The estimate decreases towards the infimum a^2 d^2 = 1.
        assert!(run.estimate.value > 1.0 && run.estimate.value < 1.05);
        assert!(!run.result.left_orbit);
    }

    #[test]
    fn amplified_rounding_is_not_reported_as_convergence() {
        // Two parallel lines plus a free one, p = 2/3: capacity zero with
        // invertible S_j, T_i. Rounding splits the parallel rows and would
        // otherwise be scaled into a spurious geometric datum.
        let d = QuiverDatum::subspace(
            vec![row(&[0.0, 1.5636131231398425]), row(&[0.0, 1.1988825834344152]), row(&[1.5487148640120976, 0.5902567484512575])],
            vec![2.0 / 3.0; 3],
        );
        let run = scale(&d, &ScalingConfig::default()).unwrap();
        assert_eq!(run.status, ScalingStatus::MaxIterations);
        assert!(run.left_orbit);
        assert!(bookkeeping_error(&d, &run).unwrap() > 1e-6);
    }

    #[test]
    fn covariance_scalar_example() {
        let d = QuiverDatum::subspace(vec![row(&[1.0])], vec![1.0]);
        let a = GroupElement::new(vec![row(&[2.0])], vec![row(&[1.0])]);
        let rep = group_covariance_check(&d, &a, &ScalingConfig::default()).unwrap();
        assert_relative_eq!(rep.cap_v, 1.0);
        assert_relative_eq!(rep.predicted, 0.25, max_relative = 1e-14);
        assert_relative_eq!(rep.cap_av, 0.25, max_relative = 1e-14);
        assert!(rep.relative_error < 1e-14);
    }

    #[test]
    fn covariance_identity() {
        let d = lines(&[1.0, 0.0], &[0.0, 2.0]);
        let a = GroupElement::identity(&d.dims);
        let rep = group_covariance_check(&d, &a, &ScalingConfig::default()).unwrap();
        assert_eq!(rep.relative_error, 0.0);
    }
}
