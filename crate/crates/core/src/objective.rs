//! The capacity objective and the identities that certify its value.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quiver::{validate_datum, QuiverDatum};
use crate::spd::{sym_eig, PdTuple};

/// Tolerances shared by the numeric checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericConfig {
    /// A datum is geometric when both residuals are below this.
    pub geometric_tol: f64,
    /// Fixed-point membership threshold on the sink residual.
    pub fixed_point_tol: f64,
    /// Relative (to `trace / dim`) eigenvalue floor below which `M_i` counts as singular.
    pub singularity_floor: f64,
    /// Relative eigenvalue floor for accepting `Y_j` as positive definite.
    pub pd_floor: f64,
    /// Absolute tolerance of the dimension balance check.
    pub perp_tol: f64,
}

impl Default for NumericConfig {
    fn default() -> Self {
        NumericConfig {
            geometric_tol: 1e-8,
            fixed_point_tol: 1e-8,
            singularity_floor: 1e-12,
            pd_floor: 1e-12,
            perp_tol: 1e-12,
        }
    }
}

/// A capacity value kept alongside its logarithm; `value = 0` pairs with `log = -inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capacity {
    pub log: f64,
    pub value: f64,
}

impl Capacity {
    pub fn from_log(log: f64) -> Self {
        Capacity {
            log,
            value: log.exp(),
        }
    }

    pub fn zero() -> Self {
        Capacity {
            log: f64::NEG_INFINITY,
            value: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0.0
    }

    pub fn bl_constant(&self) -> f64 {
        (-0.5 * self.log).exp()
    }
}

/// `1 / sqrt(cap)`, infinite at `cap = 0`.
pub fn bl_constant(cap: f64) -> Result<f64> {
    if cap.is_nan() || cap < 0.0 {
        return Err(Error::InvalidInput(format!("capacity must be non-negative, got {cap}")));
    }
    if cap == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / cap.sqrt())
}

fn check_tuple(datum: &QuiverDatum, y: &PdTuple, cfg: &NumericConfig) -> Result<()> {
    validate_datum(datum).into_result()?;
    if y.dims() != datum.dims.sinks {
        return Err(Error::WrongShape(format!(
            "PD tuple dims {:?} do not match sink dims {:?}",
            y.dims(),
            datum.dims.sinks
        )));
    }
    for (j, yj) in y.matrices().iter().enumerate() {
        let e = sym_eig(yj)?;
        if !e.is_positive_definite(cfg.pd_floor) {
            return Err(Error::NotPositiveDefinite {
                sink: j,
                min_eigenvalue: e.min(),
            });
        }
    }
    Ok(())
}

/// `M_i = sum_j p_j sum_{a: i -> j} V_a^T Y_j V_a` for every source.
pub fn m_matrices(datum: &QuiverDatum, y: &PdTuple) -> Vec<DMatrix<f64>> {
    let mut m: Vec<DMatrix<f64>> =
        datum.dims.sources.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        m[arrow.tail] += datum.p(arrow.head) * v.transpose() * y.get(arrow.head) * v;
    }
    m
}

/// The objective ratio at `y`, evaluated in log space. Singular `M_i` gives capacity zero.
pub fn objective_value(datum: &QuiverDatum, y: &PdTuple, cfg: &NumericConfig) -> Result<Capacity> {
    check_tuple(datum, y, cfg)?;
    let mut log = 0.0;
    for m in m_matrices(datum, y) {
        let e = sym_eig(&m)?;
        if !e.is_positive_definite(cfg.singularity_floor) {
            return Ok(Capacity::zero());
        }
        log += e.logdet(cfg.singularity_floor)?;
    }
    for (j, yj) in y.matrices().iter().enumerate() {
        log -= datum.p(j) * sym_eig(yj)?.logdet(cfg.pd_floor)?;
    }
    Ok(Capacity::from_log(log))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricResidual {
    /// `max_i || sum_j p_j sum_a V_a^T V_a - I ||_F`
    pub source: f64,
    /// `max_j || sum_i sum_a V_a V_a^T - I ||_F`
    pub sink: f64,
    pub max: f64,
}

fn source_sums(datum: &QuiverDatum) -> Vec<DMatrix<f64>> {
    let mut t: Vec<DMatrix<f64>> =
        datum.dims.sources.iter().map(|&d| DMatrix::zeros(d, d)).collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        t[arrow.tail] += datum.p(arrow.head) * v.transpose() * v;
    }
    t
}

fn sink_sums(datum: &QuiverDatum) -> Vec<DMatrix<f64>> {
    let mut s: Vec<DMatrix<f64>> = datum.dims.sinks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        s[arrow.head] += v * v.transpose();
    }
    s
}

pub(crate) fn source_residual(datum: &QuiverDatum) -> f64 {
    source_sums(datum)
        .into_iter()
        .map(|t| {
            let n = t.nrows();
            (t - DMatrix::identity(n, n)).norm()
        })
        .fold(0.0, f64::max)
}

pub(crate) fn sink_residual(datum: &QuiverDatum) -> f64 {
    sink_sums(datum)
        .into_iter()
        .map(|s| {
            let n = s.nrows();
            (s - DMatrix::identity(n, n)).norm()
        })
        .fold(0.0, f64::max)
}

/// Distance from the two geometric identities. Assumes a structurally valid datum.
pub fn geometric_residual(datum: &QuiverDatum) -> GeometricResidual {
    let source = source_residual(datum);
    let sink = sink_residual(datum);
    GeometricResidual {
        source,
        sink,
        max: source.max(sink),
    }
}

pub fn is_geometric(datum: &QuiverDatum, cfg: &NumericConfig) -> bool {
    geometric_residual(datum).max < cfg.geometric_tol
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResidual {
    /// `|| sum_i sum_a V_a M_i^{-1} V_a^T - Y_j^{-1} ||_F` per sink; infinite when some `M_i` is singular.
    pub per_sink: Vec<f64>,
    pub m_min_eigenvalues: Vec<f64>,
    /// Whether every `M_i` cleared the singularity floor.
    pub m_invertible: bool,
}

impl FixedPointResidual {
    pub fn max_residual(&self) -> f64 {
        self.per_sink.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_m_eigenvalue(&self) -> f64 {
        self.m_min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_member(&self, tol: f64) -> bool {
        self.m_invertible && self.max_residual() < tol
    }
}

/// `sum_i sum_{a: i -> j} V_a M_i^{-1} V_a^T` per sink, or `None` when some `M_i` is singular.
fn pulled_back_inverses(
    datum: &QuiverDatum,
    m: &[DMatrix<f64>],
    floor: f64,
) -> Result<(Option<Vec<DMatrix<f64>>>, Vec<f64>)> {
    let mut mins = Vec::with_capacity(m.len());
    let mut inverses = Vec::with_capacity(m.len());
    let mut singular = false;
    for mi in m {
        let e = sym_eig(mi)?;
        mins.push(e.min());
        if e.is_positive_definite(floor) {
            inverses.push(e.inverse(floor)?);
        } else {
            singular = true;
        }
    }
    if singular {
        return Ok((None, mins));
    }
    let mut p: Vec<DMatrix<f64>> = datum.dims.sinks.iter().map(|&n| DMatrix::zeros(n, n)).collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        p[arrow.head] += v * &inverses[arrow.tail] * v.transpose();
    }
    Ok((Some(p), mins))
}

pub fn fixed_point_residual(
    datum: &QuiverDatum,
    y: &PdTuple,
    cfg: &NumericConfig,
) -> Result<FixedPointResidual> {
    check_tuple(datum, y, cfg)?;
    let m = m_matrices(datum, y);
    let (p, mins) = pulled_back_inverses(datum, &m, cfg.singularity_floor)?;
    let per_sink = match p {
        None => vec![f64::INFINITY; datum.dims.sinks.len()],
        Some(p) => p
            .iter()
            .zip(y.matrices())
            .map(|(pj, yj)| Ok((pj - sym_eig(yj)?.inverse(cfg.pd_floor)?).norm()))
            .collect::<Result<_>>()?,
    };
    let m_invertible = per_sink.iter().all(|r| r.is_finite());
    Ok(FixedPointResidual {
        per_sink,
        m_min_eigenvalues: mins,
        m_invertible,
    })
}

/// Gradient of the log objective with respect to each `Y_j`:
/// `p_j (sum_i sum_a V_a M_i^{-1} V_a^T - Y_j^{-1})`.
pub fn log_objective_gradient(
    datum: &QuiverDatum,
    y: &PdTuple,
    cfg: &NumericConfig,
) -> Result<Vec<DMatrix<f64>>> {
    check_tuple(datum, y, cfg)?;
    let m = m_matrices(datum, y);
    let (p, mins) = pulled_back_inverses(datum, &m, cfg.singularity_floor)?;
    let p = p.ok_or(Error::SingularMatrix {
        min_eigenvalue: mins.iter().copied().fold(f64::INFINITY, f64::min),
        floor: cfg.singularity_floor,
    })?;
    p.into_iter()
        .zip(y.matrices())
        .enumerate()
        .map(|(j, (pj, yj))| Ok(datum.p(j) * (pj - sym_eig(yj)?.inverse(cfg.pd_floor)?)))
        .collect()
}

/// Frobenius norm of a tuple of matrices.
pub fn tuple_norm(g: &[DMatrix<f64>]) -> f64 {
    g.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

/// A datum together with a candidate extremizer and its `M_i`.
#[derive(Clone, Debug)]
pub struct FixedPointPair {
    pub datum: QuiverDatum,
    pub y: PdTuple,
    pub m: Vec<DMatrix<f64>>,
}

impl FixedPointPair {
    pub fn new(datum: QuiverDatum, y: PdTuple) -> Self {
        let m = m_matrices(&datum, &y);
        FixedPointPair { datum, y, m }
    }
}

/// `prod_i det M_i / prod_j det(Y_j)^{p_j}` for a pair on the fixed-point locus.
pub fn capacity_at_fixed_point(pair: &FixedPointPair, cfg: &NumericConfig) -> Result<Capacity> {
    let res = fixed_point_residual(&pair.datum, &pair.y, cfg)?;
    if !res.is_member(cfg.fixed_point_tol) {
        return Err(Error::NotAFixedPoint {
            residual: res.max_residual(),
            min_m_eigenvalue: res.min_m_eigenvalue(),
        });
    }
    let mut log = 0.0;
    for mi in &pair.m {
        log += sym_eig(mi)?.logdet(cfg.singularity_floor)?;
    }
    for (j, yj) in pair.y.matrices().iter().enumerate() {
        log -= pair.datum.p(j) * sym_eig(yj)?.logdet(cfg.pd_floor)?;
    }
    Ok(Capacity::from_log(log))
}

/// Spectral data of `R(t) = sum_j t_j R_j` witnessing `det R(t) >= prod_j t_j^{p_j}`
/// for a geometric datum with one-dimensional sinks.
#[derive(Clone, Debug)]
pub struct AmgmCertificate {
    /// Eigenvalues of `R(t)`, descending.
    pub sigma: Vec<f64>,
    /// `a[(l, j)] = u_l^T R_j u_l`.
    pub a: DMatrix<f64>,
    pub row_sums: Vec<f64>,
    pub col_sums: Vec<f64>,
    /// `sum_l log sigma_l = log det R(t)`.
    pub log_det: f64,
    /// `sum_j p_j log t_j`.
    pub log_bound: f64,
}

impl AmgmCertificate {
    /// Smallest entry of `a`; non-negative up to rounding since each `R_j` is PSD.
    pub fn min_entry(&self) -> f64 {
        self.a.min()
    }
}

pub fn amgm_certificate(
    datum: &QuiverDatum,
    t: &[f64],
    cfg: &NumericConfig,
) -> Result<AmgmCertificate> {
    validate_datum(datum).into_result()?;
    if datum.dims.sinks.iter().any(|&n| n != 1) {
        return Err(Error::WrongShape(format!(
            "all sinks must be one-dimensional, got {:?}",
            datum.dims.sinks
        )));
    }
    let m = datum.dims.sinks.len();
    if t.len() != m {
        return Err(Error::WrongShape(format!("{} values of t for {m} sinks", t.len())));
    }
    if let Some(&bad) = t.iter().find(|&&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::InvalidInput(format!("t must be positive, got {bad}")));
    }
    let residual = geometric_residual(datum).max;
    if residual >= cfg.geometric_tol {
        return Err(Error::NotGeometric { residual });
    }

    let mut offsets = Vec::with_capacity(datum.dims.sources.len());
    let mut total = 0;
    for &d in &datum.dims.sources {
        offsets.push(total);
        total += d;
    }
    let mut r: Vec<DMatrix<f64>> = (0..m).map(|_| DMatrix::zeros(total, total)).collect();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        let o = offsets[arrow.tail];
        let d = v.ncols();
        let block = datum.p(arrow.head) * v.transpose() * v;
        let mut view = r[arrow.head].view_mut((o, o), (d, d));
        view += block;
    }
    let mut rt = DMatrix::zeros(total, total);
    for (rj, &tj) in r.iter().zip(t) {
        rt += tj * rj;
    }
    let e = sym_eig(&rt)?;
    let a = DMatrix::from_fn(total, m, |l, j| {
        let u = e.vectors.column(l);
        (u.transpose() * &r[j] * u)[(0, 0)]
    });
    let row_sums = (0..total).map(|l| a.row(l).sum()).collect();
    let col_sums = (0..m).map(|j| a.column(j).sum()).collect();
    let sigma: Vec<f64> = e.values.iter().copied().collect();
    let log_det = sigma.iter().map(|s| s.ln()).sum();
    let log_bound = t.iter().enumerate().map(|(j, tj)| datum.p(j) * tj.ln()).sum();
    Ok(AmgmCertificate {
        sigma,
        a,
        row_sums,
        col_sums,
        log_det,
        log_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quiver::{random_datum, BipartiteQuiver, DimVector, RandomMode, Weights};
    use crate::scaling::ScalingConfig;
    use approx::assert_relative_eq;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    fn lines(a: &[f64], b: &[f64]) -> QuiverDatum {
        QuiverDatum::subspace(vec![row(a), row(b)], vec![1.0, 1.0])
    }

    fn cfg() -> NumericConfig {
        NumericConfig::default()
    }

    #[test]
    fn objective_examples() {
        let d = QuiverDatum::subspace(vec![row(&[1.0])], vec![1.0]);
        let y = PdTuple::from_scalars(&[3.0]).unwrap();
        assert_relative_eq!(objective_value(&d, &y, &cfg()).unwrap().value, 1.0, epsilon = 1e-15);

        let d = lines(&[1.0, 0.0], &[0.0, 1.0]);
        let y = PdTuple::from_scalars(&[2.0, 5.0]).unwrap();
        assert_relative_eq!(objective_value(&d, &y, &cfg()).unwrap().value, 1.0, epsilon = 1e-14);

        let d = lines(&[1.0, 0.0], &[0.0, 2.0]);
        let y = PdTuple::identity(&[1, 1]);
        assert_relative_eq!(objective_value(&d, &y, &cfg()).unwrap().value, 4.0, epsilon = 1e-13);
    }

    #[test]
    fn singular_m_gives_zero() {
        let d = lines(&[1.0, 0.0], &[2.0, 0.0]);
        let c = objective_value(&d, &PdTuple::identity(&[1, 1]), &cfg()).unwrap();
        assert!(c.is_zero());
        assert_eq!(c.log, f64::NEG_INFINITY);
    }

    #[test]
    fn bl_constant_examples() {
        assert_eq!(bl_constant(1.0).unwrap(), 1.0);
        assert_eq!(bl_constant(4.0).unwrap(), 0.5);
        assert_eq!(bl_constant(0.0).unwrap(), f64::INFINITY);
        assert!(matches!(bl_constant(-1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn geometric_residual_examples() {
        let r = geometric_residual(&lines(&[1.0, 0.0], &[0.0, 1.0]));
        assert_eq!((r.source, r.sink, r.max), (0.0, 0.0, 0.0));
        let r = geometric_residual(&lines(&[1.0, 0.0], &[0.0, 2.0]));
        assert_eq!((r.source, r.sink), (3.0, 3.0));
        for c in [0.5, 2.0, -3.0] {
            let r = geometric_residual(&QuiverDatum::subspace(vec![row(&[c])], vec![1.0]));
            assert_relative_eq!(r.source, (c * c - 1.0f64).abs());
            assert_relative_eq!(r.sink, (c * c - 1.0f64).abs());
        }
    }

    #[test]
    fn fixed_point_examples() {
        let d = lines(&[1.0, 0.0], &[0.0, 1.0]);
        let r = fixed_point_residual(&d, &PdTuple::identity(&[1, 1]), &cfg()).unwrap();
        assert!(r.is_member(1e-12));
        assert_eq!(r.max_residual(), 0.0);

        let d = lines(&[1.0, 0.0], &[0.0, 2.0]);
        let y = PdTuple::from_scalars(&[1.0, 0.25]).unwrap();
        let r = fixed_point_residual(&d, &y, &cfg()).unwrap();
        assert!(r.max_residual() < 1e-14);
        let cap = capacity_at_fixed_point(&FixedPointPair::new(d, y), &cfg()).unwrap();
        assert_relative_eq!(cap.value, 4.0, epsilon = 1e-13);

        let d = lines(&[1.0, 0.0], &[2.0, 0.0]);
        let r = fixed_point_residual(&d, &PdTuple::identity(&[1, 1]), &cfg()).unwrap();
        assert!(!r.m_invertible);
        assert_eq!(r.min_m_eigenvalue(), 0.0);
    }

    #[test]
    fn scalar_fixed_point_capacity() {
        for c in [0.3, 1.0, 3.0] {
            let d = QuiverDatum::subspace(vec![row(&[c])], vec![1.0]);
            let y = PdTuple::from_scalars(&[1.0 / (c * c)]).unwrap();
            let cap = capacity_at_fixed_point(&FixedPointPair::new(d, y), &cfg()).unwrap();
            assert_relative_eq!(cap.value, c * c, max_relative = 1e-14);
        }
    }

    #[test]
    fn off_locus_pair_rejected() {
        let d = random_geometric_rank_one(6);
        let pair = FixedPointPair::new(d, PdTuple::from_scalars(&[1.0, 2.0, 3.0]).unwrap());
        assert!(matches!(
            capacity_at_fixed_point(&pair, &cfg()),
            Err(Error::NotAFixedPoint { .. })
        ));
    }

    #[test]
    fn mismatched_tuple_rejected() {
        let d = lines(&[1.0, 0.0], &[0.0, 1.0]);
        let y = PdTuple::identity(&[2]);
        assert!(matches!(objective_value(&d, &y, &cfg()), Err(Error::WrongShape(_))));
    }

    #[test]
    fn amgm_coordinate_lines() {
        let d = lines(&[1.0, 0.0], &[0.0, 1.0]);
        let c = amgm_certificate(&d, &[2.0, 5.0], &cfg()).unwrap();
        assert_eq!(c.sigma, vec![5.0, 2.0]);
        assert_eq!(c.row_sums, vec![1.0, 1.0]);
        assert_eq!(c.col_sums, vec![1.0, 1.0]);
        for l in 0..2 {
            let mut r: Vec<f64> = c.a.row(l).iter().copied().collect();
            r.sort_by(f64::total_cmp);
            assert_eq!(r, vec![0.0, 1.0]);
        }
    }

    #[test]
    fn amgm_rejects_bad_inputs() {
        let d = lines(&[1.0, 0.0], &[0.0, 2.0]);
        assert!(matches!(
            amgm_certificate(&d, &[1.0, 1.0], &cfg()),
            Err(Error::NotGeometric { .. })
        ));
        let d = QuiverDatum::subspace(vec![DMatrix::identity(2, 2)], vec![1.0]);
        assert!(matches!(amgm_certificate(&d, &[1.0], &cfg()), Err(Error::WrongShape(_))));
    }

    fn random_geometric_rank_one(seed: u64) -> QuiverDatum {
        let q = BipartiteQuiver::subspace(3);
        let dims = DimVector::new(vec![2], vec![1, 1, 1]);
        let w = Weights::new(vec![2.0 / 3.0; 3]);
        let mode = RandomMode::GeometricAttempt(ScalingConfig::with_tolerance(1e-12));
        random_datum(&q, &dims, &w, seed, &mode).unwrap()
    }

    #[test]
    fn amgm_all_ones_gives_identity_spectrum() {
        let d = random_geometric_rank_one(4);
        let c = amgm_certificate(&d, &[1.0; 3], &cfg()).unwrap();
        for s in c.sigma {
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn amgm_det_matches_objective() {
        let d = random_geometric_rank_one(5);
        let t = [0.3, 2.0, 7.0];
        let c = amgm_certificate(&d, &t, &cfg()).unwrap();
        // det R(t) is the numerator of the objective at Y = t.
        let y = PdTuple::from_scalars(&t).unwrap();
        let obj = objective_value(&d, &y, &cfg()).unwrap();
        assert_relative_eq!(c.log_det - c.log_bound, obj.log, epsilon = 1e-10);
        assert!(c.log_det >= c.log_bound - 1e-12);
    }

    /// Central differences of the log objective along symmetric directions.
    fn fd_gradient(d: &QuiverDatum, y: &PdTuple, h: f64) -> Vec<DMatrix<f64>> {
        let f = |mats: Vec<DMatrix<f64>>| {
            objective_value(d, &PdTuple::new(mats).unwrap(), &cfg()).unwrap().log
        };
        let mut out = Vec::new();
        for j in 0..y.len() {
            let n = y.get(j).nrows();
            let mut g = DMatrix::zeros(n, n);
            for r in 0..n {
                for c in r..n {
                    let mut e = DMatrix::zeros(n, n);
                    e[(r, c)] += 0.5;
                    e[(c, r)] += 0.5;
                    let mut plus = y.matrices().to_vec();
                    let mut minus = y.matrices().to_vec();
                    plus[j] += h * &e;
                    minus[j] -= h * &e;
                    // Directional derivative <G, E> = G_rc for symmetric G.
                    let dd = (f(plus) - f(minus)) / (2.0 * h);
                    g[(r, c)] = dd;
                    g[(c, r)] = dd;
                }
            }
            out.push(g);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = BipartiteQuiver::complete(2, 2, 1);
        let dims = DimVector::new(vec![2, 1], vec![2, 1]);
        let w = Weights::new(vec![0.5, 2.0]);
        for seed in 0..5 {
            let d = random_datum(&q, &dims, &w, seed, &RandomMode::Generic).unwrap();
            let y = PdTuple::random(&dims.sinks, 0.5, 100 + seed);
            let g = log_objective_gradient(&d, &y, &cfg()).unwrap();
            let fd = fd_gradient(&d, &y, 1e-6);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).amax() < 1e-5, "{a} vs {b}");
            }
        }
    }
}
