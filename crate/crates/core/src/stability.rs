//! Semi-stability evidence, feasibility classification, and degenerations
//! along block-triangular filtrations.
//!
//! Coordinate indices are 0-based throughout.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::objective::Capacity;
use crate::quiver::{
    act, check_perp, validate_datum, DimVector, GroupElement, QuiverDatum, GROUP_SINGULARITY_FLOOR,
};
use crate::scaling::{capacity, scale, ScalingConfig, ScalingResult, ScalingStatus};

/// Entries at most this large count as zero when testing closure.
pub const CLOSURE_TOL: f64 = 1e-12;
/// Default bound on `sum d_i + sum n_j` for the coordinate scan.
pub const DEFAULT_SCAN_BUDGET: usize = 20;
/// A coordinate subrepresentation violates semi-stability when its slack is below `-SLACK_TOL`.
pub const SLACK_TOL: f64 = 1e-12;

/// A coordinate subrepresentation: for every arrow `i -> j`, the columns
/// `source_subsets[i]` of `V_a` are supported in the rows `sink_subsets[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubrepCertificate {
    pub source_subsets: Vec<Vec<usize>>,
    pub sink_subsets: Vec<Vec<usize>>,
    /// `sum_i |S_i|`
    pub lhs: f64,
    /// `sum_j p_j |T_j|`
    pub rhs: f64,
    /// `rhs - lhs`; negative means semi-stability fails.
    pub slack: f64,
}

impl SubrepCertificate {
    pub fn dims(&self) -> DimVector {
        DimVector::new(
            self.source_subsets.iter().map(Vec::len).collect(),
            self.sink_subsets.iter().map(Vec::len).collect(),
        )
    }
}

fn bits(mask: u64) -> Vec<usize> {
    (0..64).filter(|b| mask >> b & 1 == 1).collect()
}

/// Every source coordinate subset together with its smallest closing sink subsets.
///
/// Any closed tuple `(S, T)` has `T` containing the minimal closure of `S`,
/// so its slack is at least the minimal tuple's; listing minimal tuples loses
/// no violations.
fn enumerate_minimal(datum: &QuiverDatum, budget: usize) -> Result<Vec<SubrepCertificate>> {
    validate_datum(datum).into_result()?;
    let total = datum.dims.total_source() + datum.dims.total_sink();
    if total > budget {
        return Err(Error::BudgetExceeded {
            needed: total,
            budget,
        });
    }
    let m = datum.dims.sinks.len();
    // support[c][j]: rows of sink j hit by global source coordinate c.
    let mut coord_source = Vec::new();
    for (i, &d) in datum.dims.sources.iter().enumerate() {
        for c in 0..d {
            coord_source.push((i, c));
        }
    }
    let mut support = vec![vec![0u64; m]; coord_source.len()];
    for (g, &(i, c)) in coord_source.iter().enumerate() {
        for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
            if arrow.tail != i {
                continue;
            }
            for r in 0..v.nrows() {
                if v[(r, c)].abs() > CLOSURE_TOL {
                    support[g][arrow.head] |= 1 << r;
                }
            }
        }
    }
    let dsum = coord_source.len();
    let mut out = Vec::with_capacity(1 << dsum);
    for mask in 0u64..(1u64 << dsum) {
        let mut t = vec![0u64; m];
        let mut s = vec![Vec::new(); datum.dims.sources.len()];
        for g in bits(mask) {
            let (i, c) = coord_source[g];
            s[i].push(c);
            for (tj, sup) in t.iter_mut().zip(&support[g]) {
                *tj |= sup;
            }
        }
        let lhs = mask.count_ones() as f64;
        let rhs: f64 = t
            .iter()
            .enumerate()
            .map(|(j, tj)| datum.p(j) * tj.count_ones() as f64)
            .sum();
        out.push(SubrepCertificate {
            source_subsets: s,
            sink_subsets: t.into_iter().map(bits).collect(),
            lhs,
            rhs,
            slack: rhs - lhs,
        });
    }
    Ok(out)
}

/// Coordinate subrepresentations violating semi-stability, most negative slack first.
///
/// An empty result is a necessary-condition pass only: non-coordinate
/// subspaces are never examined.
pub fn coordinate_subrep_scan(datum: &QuiverDatum, budget: usize) -> Result<Vec<SubrepCertificate>> {
    let mut v: Vec<SubrepCertificate> = enumerate_minimal(datum, budget)?
        .into_iter()
        .filter(|c| c.slack < -SLACK_TOL)
        .collect();
    v.sort_by(|a, b| a.slack.total_cmp(&b.slack));
    Ok(v)
}

/// Re-checks closure and the sign of the slack from scratch.
pub fn verify_certificate(datum: &QuiverDatum, cert: &SubrepCertificate, tol: f64) -> bool {
    let k = datum.dims.sources.len();
    let m = datum.dims.sinks.len();
    if cert.source_subsets.len() != k || cert.sink_subsets.len() != m {
        return false;
    }
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        let t = &cert.sink_subsets[arrow.head];
        for &c in &cert.source_subsets[arrow.tail] {
            if c >= v.ncols() {
                return false;
            }
            for r in 0..v.nrows() {
                if !t.contains(&r) && v[(r, c)].abs() > tol {
                    return false;
                }
            }
        }
    }
    let lhs: usize = cert.source_subsets.iter().map(Vec::len).sum();
    let rhs: f64 = cert
        .sink_subsets
        .iter()
        .enumerate()
        .map(|(j, t)| datum.p(j) * t.len() as f64)
        .sum();
    rhs - (lhs as f64) < -SLACK_TOL
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub enum Evidence {
    /// `sum d_i != sum p_j n_j`.
    Unbalanced { residual: f64 },
    Certificate(SubrepCertificate),
    Scaling(Box<ScalingResult>),
}

#[derive(Clone, Debug)]
pub struct FeasibilityReport {
    pub class: Feasibility,
    pub evidence: Evidence,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyConfig {
    pub scaling: ScalingConfig,
    /// Stalled runs whose estimate stays above this count as feasible.
    pub feasible_floor: f64,
    /// Collapsed runs count as infeasible when the estimate is below this.
    pub collapse_ceiling: f64,
    pub scan_budget: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            scaling: ScalingConfig::default(),
            feasible_floor: 1e-6,
            collapse_ceiling: 1e-10,
            scan_budget: DEFAULT_SCAN_BUDGET,
        }
    }
}

pub fn classify_feasibility(datum: &QuiverDatum, cfg: &ClassifyConfig) -> Result<FeasibilityReport> {
    validate_datum(datum).into_result()?;
    let perp = check_perp(&datum.dims, &datum.weights, cfg.scaling.numeric.perp_tol);
    if !perp.holds {
        return Ok(FeasibilityReport {
            class: Feasibility::Infeasible,
            evidence: Evidence::Unbalanced {
                residual: perp.residual,
            },
        });
    }
    match coordinate_subrep_scan(datum, cfg.scan_budget) {
        Ok(certs) => {
            if let Some(c) = certs.into_iter().next() {
                return Ok(FeasibilityReport {
                    class: Feasibility::Infeasible,
                    evidence: Evidence::Certificate(c),
                });
            }
        }
        Err(Error::BudgetExceeded { .. }) => {}
        Err(e) => return Err(e),
    }
    let result = scale(datum, &cfg.scaling)?;
    let estimate = result.capacity().value;
    let class = match result.status {
        ScalingStatus::Converged => Feasibility::Feasible,
        ScalingStatus::Collapsed if estimate < cfg.collapse_ceiling => Feasibility::Infeasible,
        ScalingStatus::MaxIterations if result.stalled && estimate > cfg.feasible_floor => {
            Feasibility::Feasible
        }
        _ => Feasibility::Inconclusive,
    };
    Ok(FeasibilityReport {
        class,
        evidence: Evidence::Scaling(Box::new(result)),
    })
}

/// A filtration by subrepresentations, given as one basis per vertex and the
/// composition type `(d^s, ..., d^1)`.
///
/// Basis columns are ordered so that `blocks[0]` spans the smallest nonzero
/// subrepresentation; in these bases every arrow matrix is block upper
/// triangular with diagonal block sizes `blocks[0], blocks[1], ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Filtration {
    pub source_bases: Vec<DMatrix<f64>>,
    pub sink_bases: Vec<DMatrix<f64>>,
    pub blocks: Vec<DimVector>,
}

impl Filtration {
    /// Standard bases with the given type.
    pub fn standard(dims: &DimVector, blocks: Vec<DimVector>) -> Self {
        let id = GroupElement::identity(dims);
        Filtration {
            source_bases: id.sources,
            sink_bases: id.sinks,
            blocks,
        }
    }

    /// The basis change `A_x = B_x^{-1}` taking the datum into block-triangular form.
    pub fn group_element(&self) -> Result<GroupElement> {
        GroupElement::new(self.source_bases.clone(), self.sink_bases.clone()).inverse()
    }

    /// Checks the type against the datum's dimensions and weights and the bases for invertibility.
    pub fn validate(&self, datum: &QuiverDatum, perp_tol: f64) -> Result<()> {
        check_type(&datum.dims, &self.blocks).map_err(|e| match e {
            Error::WrongShape(s) => Error::InvalidFiltration(s),
            other => other,
        })?;
        for (l, b) in self.blocks.iter().enumerate() {
            let perp = check_perp(b, &datum.weights, perp_tol);
            if !perp.holds {
                return Err(Error::InvalidFiltration(format!(
                    "block {l} is not balanced against the weights (residual {})",
                    perp.residual
                )));
            }
        }
        GroupElement::new(self.source_bases.clone(), self.sink_bases.clone())
            .check(&datum.dims, GROUP_SINGULARITY_FLOOR)
            .map_err(|e| Error::InvalidFiltration(e.to_string()))
    }
}

fn check_type(dims: &DimVector, blocks: &[DimVector]) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::WrongShape("type has no blocks".into()));
    }
    let k = dims.sources.len();
    let m = dims.sinks.len();
    let mut sum = DimVector::zeros(k, m);
    for (l, b) in blocks.iter().enumerate() {
        if b.sources.len() != k || b.sinks.len() != m {
            return Err(Error::WrongShape(format!(
                "block {l} has {} source and {} sink entries, expected {k} and {m}",
                b.sources.len(),
                b.sinks.len()
            )));
        }
        for (s, x) in sum.sources.iter_mut().zip(&b.sources) {
            *s += x;
        }
        for (s, x) in sum.sinks.iter_mut().zip(&b.sinks) {
            *s += x;
        }
    }
    if &sum != dims {
        return Err(Error::WrongShape(format!(
            "type sums to {:?}/{:?}, expected {:?}/{:?}",
            sum.sources, sum.sinks, dims.sources, dims.sinks
        )));
    }
    Ok(())
}

/// Block index of each coordinate at every vertex.
fn block_maps(blocks: &[DimVector]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let k = blocks[0].sources.len();
    let m = blocks[0].sinks.len();
    let mut src = vec![Vec::new(); k];
    let mut snk = vec![Vec::new(); m];
    for (l, b) in blocks.iter().enumerate() {
        for (i, &d) in b.sources.iter().enumerate() {
            src[i].extend(std::iter::repeat_n(l, d));
        }
        for (j, &n) in b.sinks.iter().enumerate() {
            snk[j].extend(std::iter::repeat_n(l, n));
        }
    }
    (src, snk)
}

/// Largest below-diagonal-block entry: `(magnitude, arrow, row block, col block)`.
fn worst_below(datum: &QuiverDatum, blocks: &[DimVector]) -> (f64, usize, usize, usize) {
    let (src, snk) = block_maps(blocks);
    let mut worst = (0.0, 0, 0, 0);
    for (a, (arrow, v)) in datum.quiver.arrows.iter().zip(&datum.matrices).enumerate() {
        for r in 0..v.nrows() {
            for c in 0..v.ncols() {
                let (rb, cb) = (snk[arrow.head][r], src[arrow.tail][c]);
                if rb > cb && v[(r, c)].abs() > worst.0 {
                    worst = (v[(r, c)].abs(), a, rb, cb);
                }
            }
        }
    }
    worst
}

fn check_triangular(datum: &QuiverDatum, blocks: &[DimVector], tol: f64) -> Result<f64> {
    check_type(&datum.dims, blocks)?;
    let (mag, a, rb, cb) = worst_below(datum, blocks);
    if mag > tol {
        return Err(Error::NonInvariantFiltration {
            label: datum.arrow(a).label.clone(),
            row_block: rb,
            col_block: cb,
            magnitude: mag,
        });
    }
    Ok(mag)
}

/// Default absolute tolerance for below-diagonal-block entries.
pub const TRIANGULAR_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Triangularization {
    pub a: GroupElement,
    pub datum: QuiverDatum,
    /// Largest below-diagonal-block magnitude (at most the tolerance).
    pub max_below: f64,
}

pub fn triangularize_with_filtration(
    datum: &QuiverDatum,
    filtration: &Filtration,
    tol: f64,
) -> Result<Triangularization> {
    validate_datum(datum).into_result()?;
    check_type(&datum.dims, &filtration.blocks).map_err(|e| match e {
        Error::WrongShape(s) => Error::InvalidFiltration(s),
        other => other,
    })?;
    let a = filtration.group_element()?;
    let moved = act(&a, datum)?;
    let max_below = check_triangular(&moved, &filtration.blocks, tol)?;
    Ok(Triangularization {
        a,
        datum: moved,
        max_below,
    })
}

/// The block-diagonal part of a block upper-triangular datum.
pub fn diag_part(datum: &QuiverDatum, blocks: &[DimVector], tol: f64) -> Result<QuiverDatum> {
    check_triangular(datum, blocks, tol)?;
    let (src, snk) = block_maps(blocks);
    let matrices = datum
        .quiver
        .arrows
        .iter()
        .zip(&datum.matrices)
        .map(|(arrow, v)| {
            DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| {
                if snk[arrow.head][r] == src[arrow.tail][c] {
                    v[(r, c)]
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(datum.with_matrices(matrices))
}

/// `lambda(t)_x = blockdiag(t^{s-1} I, ..., t I, I)` at every vertex.
pub fn lambda_element(dims: &DimVector, blocks: &[DimVector], t: f64) -> Result<GroupElement> {
    check_type(dims, blocks)?;
    if t == 0.0 || !t.is_finite() {
        return Err(Error::InvalidInput(format!("t must be finite and nonzero, got {t}")));
    }
    let s = blocks.len();
    let (src, snk) = block_maps(blocks);
    let part = |map: &Vec<usize>| {
        DMatrix::from_fn(map.len(), map.len(), |r, c| {
            if r == c {
                t.powi((s - 1 - map[r]) as i32)
            } else {
                0.0
            }
        })
    };
    Ok(GroupElement::new(
        src.iter().map(part).collect(),
        snk.iter().map(part).collect(),
    ))
}

/// `lambda(t) . W`: block `(r, c)` of every arrow matrix is scaled by `t^{c - r}`.
pub fn lambda_act(datum: &QuiverDatum, blocks: &[DimVector], t: f64, tol: f64) -> Result<QuiverDatum> {
    if t == 0.0 || !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "t must be finite and nonzero, got {t}; the t -> 0 limit is diag_part"
        )));
    }
    check_triangular(datum, blocks, tol)?;
    let (src, snk) = block_maps(blocks);
    let matrices = datum
        .quiver
        .arrows
        .iter()
        .zip(&datum.matrices)
        .map(|(arrow, v)| {
            DMatrix::from_fn(v.nrows(), v.ncols(), |r, c| {
                let e = src[arrow.tail][c] as i32 - snk[arrow.head][r] as i32;
                v[(r, c)] * t.powi(e)
            })
        })
        .collect();
    Ok(datum.with_matrices(matrices))
}

/// `|sum_x 2 log|det lambda(t)_x| - sum_y 2 p_y log|det lambda(t)_y||`.
pub fn det_balance_residual(datum: &QuiverDatum, blocks: &[DimVector], t: f64) -> Result<f64> {
    let (lg, lh) = lambda_element(&datum.dims, blocks, t)?.log_abs_dets();
    let src: f64 = lg.iter().sum();
    let snk: f64 = lh.iter().enumerate().map(|(j, x)| datum.p(j) * x).sum();
    Ok((2.0 * src - 2.0 * snk).abs())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegenerationConfig {
    pub ts: Vec<f64>,
    pub scaling: ScalingConfig,
    pub triangular_tol: f64,
}

impl Default for DegenerationConfig {
    fn default() -> Self {
        DegenerationConfig {
            ts: vec![1.0, 0.5, 0.1],
            scaling: ScalingConfig::default(),
            triangular_tol: TRIANGULAR_TOL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DegenerationReport {
    /// `(t, cap(lambda(t) . A . V))` for every sampled `t`.
    pub caps: Vec<(f64, Capacity)>,
    pub cap_diag: Capacity,
    /// Capacity of the untransformed input.
    pub cap_input: Capacity,
    /// Largest det-balance residual over the sampled `t`.
    pub det_balance_residual: f64,
    /// Largest pairwise relative deviation among the sampled and diagonal capacities.
    pub max_deviation: f64,
    pub triangularization: Triangularization,
}

pub fn degeneration_check(
    datum: &QuiverDatum,
    filtration: &Filtration,
    cfg: &DegenerationConfig,
) -> Result<DegenerationReport> {
    validate_datum(datum).into_result()?;
    filtration.validate(datum, cfg.scaling.numeric.perp_tol)?;
    let tri = triangularize_with_filtration(datum, filtration, cfg.triangular_tol)?;
    let blocks = &filtration.blocks;

    let mut det_balance: f64 = 0.0;
    let mut runs = Vec::with_capacity(cfg.ts.len() + 2);
    for &t in &cfg.ts {
        det_balance = det_balance.max(det_balance_residual(&tri.datum, blocks, t)?);
        let w = lambda_act(&tri.datum, blocks, t, cfg.triangular_tol)?;
        runs.push((format!("t={t}"), capacity(&w, &cfg.scaling)?));
    }
    let diag = diag_part(&tri.datum, blocks, cfg.triangular_tol)?;
    runs.push(("diag".to_string(), capacity(&diag, &cfg.scaling)?));
    runs.push(("input".to_string(), capacity(datum, &cfg.scaling)?));

    if runs.iter().any(|(_, r)| r.status != ScalingStatus::Converged) {
        let statuses: Vec<String> = runs.iter().map(|(n, r)| format!("{n}: {}", r.status)).collect();
        return Err(Error::Inconclusive(format!(
            "capacity runs did not all converge ({})",
            statuses.join(", ")
        )));
    }
    let input = runs.pop().expect("input run").1.estimate;
    let cap_diag = runs.last().expect("diag run").1.estimate;
    let logs: Vec<f64> = runs.iter().map(|(_, r)| r.estimate.log).collect();
    let mut max_deviation: f64 = 0.0;
    for (a, la) in logs.iter().enumerate() {
        for lb in &logs[a + 1..] {
            max_deviation = max_deviation.max((la - lb).abs().exp_m1());
        }
    }
    let caps = cfg
        .ts
        .iter()
        .zip(&runs)
        .map(|(&t, (_, r))| (t, r.estimate))
        .collect();
    Ok(DegenerationReport {
        caps,
        cap_diag,
        cap_input: input,
        det_balance_residual: det_balance,
        max_deviation,
        triangularization: tri,
    })
}

/// A two-step filtration from a proper, nonzero coordinate subrepresentation
/// with zero slack, if one exists. Coordinates of the subrepresentation come
/// first in every basis.
pub fn tight_coordinate_filtration(datum: &QuiverDatum, budget: usize) -> Result<Option<Filtration>> {
    let dims = &datum.dims;
    let candidate = enumerate_minimal(datum, budget)?.into_iter().find(|c| {
        let sub = c.dims();
        c.slack.abs() <= SLACK_TOL && sub.total_source() > 0 && &sub != dims
    });
    let Some(c) = candidate else {
        return Ok(None);
    };
    let perm = |n: usize, first: &[usize]| {
        let mut order: Vec<usize> = first.to_vec();
        order.extend((0..n).filter(|x| !first.contains(x)));
        DMatrix::from_fn(n, n, |r, col| if order[col] == r { 1.0 } else { 0.0 })
    };
    let sub = c.dims();
    let rest = DimVector::new(
        dims.sources.iter().zip(&sub.sources).map(|(a, b)| a - b).collect(),
        dims.sinks.iter().zip(&sub.sinks).map(|(a, b)| a - b).collect(),
    );
    Ok(Some(Filtration {
        source_bases: dims
            .sources
            .iter()
            .zip(&c.source_subsets)
            .map(|(&d, s)| perm(d, s))
            .collect(),
        sink_bases: dims
            .sinks
            .iter()
            .zip(&c.sink_subsets)
            .map(|(&n, t)| perm(n, t))
            .collect(),
        blocks: vec![sub, rest],
    }))
}
