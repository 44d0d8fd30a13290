//! Bipartite quivers, weighted quiver data, and the change-of-base group.
//!
//! Arrows are kept in canonical order, lexicographic by `(tail, head, label)`;
//! every per-arrow vector in this crate (matrices, reports) follows it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scaling::{scale, ScalingConfig, ScalingStatus};
use crate::spd::{sym_eig, PdTuple};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Arrow {
    pub tail: usize,
    pub head: usize,
    pub label: String,
}

impl Arrow {
    pub fn new(tail: usize, head: usize, label: impl Into<String>) -> Self {
        Arrow {
            tail,
            head,
            label: label.into(),
        }
    }
}

/// Sources `0..sources`, sinks `0..sinks`, arrows from sources to sinks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BipartiteQuiver {
    pub sources: usize,
    pub sinks: usize,
    pub arrows: Vec<Arrow>,
}

impl BipartiteQuiver {
    pub fn new(sources: usize, sinks: usize, mut arrows: Vec<Arrow>) -> Self {
        arrows.sort();
        BipartiteQuiver {
            sources,
            sinks,
            arrows,
        }
    }

    /// One source with a single arrow `a{j}` into each of `m` sinks.
    pub fn subspace(m: usize) -> Self {
        Self::new(1, m, (0..m).map(|j| Arrow::new(0, j, format!("a{j}"))).collect())
    }

    /// `multiplicity` arrows from every source to every sink, labelled `i-j`
    /// (or `i-j.r` when `multiplicity > 1`).
    pub fn complete(k: usize, m: usize, multiplicity: usize) -> Self {
        let mut arrows = Vec::new();
        for i in 0..k {
            for j in 0..m {
                for r in 0..multiplicity {
                    let label = if multiplicity == 1 {
                        format!("{i}-{j}")
                    } else {
                        format!("{i}-{j}.{r}")
                    };
                    arrows.push(Arrow::new(i, j, label));
                }
            }
        }
        Self::new(k, m, arrows)
    }

    pub fn arrow_index(&self, label: &str) -> Option<usize> {
        self.arrows.iter().position(|a| a.label == label)
    }
}

/// Dimensions at the sources (`d_i`) and sinks (`n_j`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimVector {
    pub sources: Vec<usize>,
    pub sinks: Vec<usize>,
}

impl DimVector {
    pub fn new(sources: Vec<usize>, sinks: Vec<usize>) -> Self {
        DimVector { sources, sinks }
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        DimVector::new(vec![0; k], vec![0; m])
    }

    pub fn total_source(&self) -> usize {
        self.sources.iter().sum()
    }

    pub fn total_sink(&self) -> usize {
        self.sinks.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.total_source() == 0 && self.total_sink() == 0
    }
}

/// Positive sink weights `p_1..p_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights(pub Vec<f64>);

impl Weights {
    pub fn new(p: Vec<f64>) -> Self {
        Weights(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Outcome of the dimension balance check `sum d_i = sum p_j n_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerpCheck {
    pub holds: bool,
    /// `sum d_i - sum p_j n_j`
    pub residual: f64,
}

pub fn check_perp(dims: &DimVector, weights: &Weights, tol: f64) -> PerpCheck {
    let lhs = dims.total_source() as f64;
    let rhs: f64 = dims
        .sinks
        .iter()
        .zip(weights.as_slice())
        .map(|(&n, &p)| p * n as f64)
        .sum();
    let residual = lhs - rhs;
    PerpCheck {
        holds: residual.abs() <= tol && dims.sinks.len() == weights.len(),
        residual,
    }
}

/// A weighted representation `(V, p)` of a bipartite quiver.
///
/// `matrices[a]` belongs to `quiver.arrows[a]` and has shape
/// `dims.sinks[head] x dims.sources[tail]`. Construction does not check
/// shapes; see [`validate_datum`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuiverDatum {
    pub quiver: BipartiteQuiver,
    pub dims: DimVector,
    pub weights: Weights,
    pub matrices: Vec<DMatrix<f64>>,
}

impl QuiverDatum {
    /// Pairs `matrices[a]` with `quiver.arrows[a]` and sorts both into canonical order.
    pub fn new(
        quiver: BipartiteQuiver,
        dims: DimVector,
        weights: Weights,
        matrices: Vec<DMatrix<f64>>,
    ) -> Self {
        let BipartiteQuiver {
            sources,
            sinks,
            arrows,
        } = quiver;
        let mut paired: Vec<(Arrow, DMatrix<f64>)> = arrows.into_iter().zip(matrices).collect();
        paired.sort_by(|a, b| a.0.cmp(&b.0));
        let (arrows, matrices) = paired.into_iter().unzip();
        QuiverDatum {
            quiver: BipartiteQuiver {
                sources,
                sinks,
                arrows,
            },
            dims,
            weights,
            matrices,
        }
    }

    /// Builds a datum from a label-keyed matrix map; every arrow needs exactly one entry.
    pub fn from_labelled(
        quiver: BipartiteQuiver,
        dims: DimVector,
        weights: Weights,
        mut matrices: BTreeMap<String, DMatrix<f64>>,
    ) -> Result<Self> {
        let mut ordered = Vec::with_capacity(quiver.arrows.len());
        for arrow in &quiver.arrows {
            let m = matrices.remove(&arrow.label).ok_or_else(|| {
                Error::InvalidInput(format!("missing matrix for arrow '{}'", arrow.label))
            })?;
            ordered.push(m);
        }
        if let Some(extra) = matrices.keys().next() {
            return Err(Error::InvalidInput(format!(
                "matrix '{extra}' does not belong to any arrow"
            )));
        }
        Ok(Self::new(quiver, dims, weights, ordered))
    }

    /// The `m`-subspace datum: one source of dimension `matrices[0].ncols()`
    /// and arrow `a{j}` carrying `matrices[j]`.
    pub fn subspace(matrices: Vec<DMatrix<f64>>, weights: Vec<f64>) -> Self {
        let d = matrices.first().map_or(0, |m| m.ncols());
        let sinks = matrices.iter().map(|m| m.nrows()).collect();
        Self::new(
            BipartiteQuiver::subspace(matrices.len()),
            DimVector::new(vec![d], sinks),
            Weights::new(weights),
            matrices,
        )
    }

    pub fn num_arrows(&self) -> usize {
        self.matrices.len()
    }

    pub fn arrow(&self, a: usize) -> &Arrow {
        &self.quiver.arrows[a]
    }

    pub fn matrix(&self, label: &str) -> Option<&DMatrix<f64>> {
        self.quiver.arrow_index(label).map(|a| &self.matrices[a])
    }

    pub fn p(&self, j: usize) -> f64 {
        self.weights.0[j]
    }

    /// Same quiver, dims and weights with new arrow matrices.
    pub fn with_matrices(&self, matrices: Vec<DMatrix<f64>>) -> Self {
        QuiverDatum {
            quiver: self.quiver.clone(),
            dims: self.dims.clone(),
            weights: self.weights.clone(),
            matrices,
        }
    }

    /// Largest absolute entry over all arrow matrices.
    pub fn max_abs(&self) -> f64 {
        self.matrices.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyQuiver,
    ArrowOutOfRange { label: String, tail: usize, head: usize },
    DuplicateLabel(String),
    DimLengthMismatch { expected_sources: usize, expected_sinks: usize, sources: usize, sinks: usize },
    ZeroDimension { vertex: String },
    WeightCountMismatch { expected: usize, found: usize },
    NonPositiveWeight { sink: usize, value: f64 },
    MatrixCountMismatch { arrows: usize, matrices: usize },
    ShapeMismatch { label: String, expected: (usize, usize), found: (usize, usize) },
    NonFinite { label: String, row: usize, col: usize },
    SinkWithoutArrows(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyQuiver => write!(f, "quiver needs at least one source, one sink and one arrow"),
            Violation::ArrowOutOfRange { label, tail, head } => {
                write!(f, "arrow '{label}' ({tail} -> {head}) is out of range")
            }
            Violation::DuplicateLabel(l) => write!(f, "duplicate arrow label '{l}'"),
            Violation::DimLengthMismatch { expected_sources, expected_sinks, sources, sinks } => write!(
                f,
                "dimension vector has {sources} source and {sinks} sink entries, \
                 expected {expected_sources} and {expected_sinks}"
            ),
            Violation::ZeroDimension { vertex } => write!(f, "{vertex} has dimension 0"),
            Violation::WeightCountMismatch { expected, found } => {
                write!(f, "{found} weights given, expected {expected}")
            }
            Violation::NonPositiveWeight { sink, value } => {
                write!(f, "weight p_{sink} = {value} is not a positive finite number")
            }
            Violation::MatrixCountMismatch { arrows, matrices } => {
                write!(f, "{matrices} matrices for {arrows} arrows")
            }
            Violation::ShapeMismatch { label, expected, found } => write!(
                f,
                "arrow '{label}' has a {}x{} matrix, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::NonFinite { label, row, col } => {
                write!(f, "arrow '{label}' has a non-finite entry at ({row}, {col})")
            }
            Violation::SinkWithoutArrows(j) => write!(f, "sink {j} receives no arrows"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidDatum(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

/// Structural checks on a datum. An empty report means every numeric
/// operation's shape preconditions hold.
pub fn validate_datum(datum: &QuiverDatum) -> ValidationReport {
    let mut v = Vec::new();
    let q = &datum.quiver;
    if q.sources == 0 || q.sinks == 0 || q.arrows.is_empty() {
        v.push(Violation::EmptyQuiver);
    }
    let mut seen = BTreeSet::new();
    for arrow in &q.arrows {
        if arrow.tail >= q.sources || arrow.head >= q.sinks {
            v.push(Violation::ArrowOutOfRange {
                label: arrow.label.clone(),
                tail: arrow.tail,
                head: arrow.head,
            });
        }
        if !seen.insert(arrow.label.as_str()) {
            v.push(Violation::DuplicateLabel(arrow.label.clone()));
        }
    }
    let dims_ok = datum.dims.sources.len() == q.sources && datum.dims.sinks.len() == q.sinks;
    if !dims_ok {
        v.push(Violation::DimLengthMismatch {
            expected_sources: q.sources,
            expected_sinks: q.sinks,
            sources: datum.dims.sources.len(),
            sinks: datum.dims.sinks.len(),
        });
    }
    for (i, &d) in datum.dims.sources.iter().enumerate() {
        if d == 0 {
            v.push(Violation::ZeroDimension { vertex: format!("source {i}") });
        }
    }
    for (j, &n) in datum.dims.sinks.iter().enumerate() {
        if n == 0 {
            v.push(Violation::ZeroDimension { vertex: format!("sink {j}") });
        }
    }
    if datum.weights.len() != q.sinks {
        v.push(Violation::WeightCountMismatch {
            expected: q.sinks,
            found: datum.weights.len(),
        });
    }
    for (j, &p) in datum.weights.as_slice().iter().enumerate() {
        if !(p.is_finite() && p > 0.0) {
            v.push(Violation::NonPositiveWeight { sink: j, value: p });
        }
    }
    if datum.matrices.len() != q.arrows.len() {
        v.push(Violation::MatrixCountMismatch {
            arrows: q.arrows.len(),
            matrices: datum.matrices.len(),
        });
    }
    for (arrow, m) in q.arrows.iter().zip(&datum.matrices) {
        if dims_ok && arrow.tail < q.sources && arrow.head < q.sinks {
            let expected = (datum.dims.sinks[arrow.head], datum.dims.sources[arrow.tail]);
            if m.shape() != expected {
                v.push(Violation::ShapeMismatch {
                    label: arrow.label.clone(),
                    expected,
                    found: m.shape(),
                });
            }
        }
        // Row-major scan so the reported position is the first one a reader finds.
        'scan: for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if !m[(r, c)].is_finite() {
                    v.push(Violation::NonFinite {
                        label: arrow.label.clone(),
                        row: r,
                        col: c,
                    });
                    break 'scan;
                }
            }
        }
    }
    for j in 0..q.sinks {
        if !q.arrows.iter().any(|a| a.head == j) {
            v.push(Violation::SinkWithoutArrows(j));
        }
    }
    ValidationReport { violations: v }
}

/// One invertible matrix per vertex: `g_i` at sources, `h_j` at sinks.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    pub sources: Vec<DMatrix<f64>>,
    pub sinks: Vec<DMatrix<f64>>,
}

/// Relative floor on `sigma_min / sigma_max` below which a group part counts as singular.
pub const GROUP_SINGULARITY_FLOOR: f64 = 1e-12;

impl GroupElement {
    pub fn new(sources: Vec<DMatrix<f64>>, sinks: Vec<DMatrix<f64>>) -> Self {
        GroupElement { sources, sinks }
    }

    pub fn identity(dims: &DimVector) -> Self {
        GroupElement {
            sources: dims.sources.iter().map(|&d| DMatrix::identity(d, d)).collect(),
            sinks: dims.sinks.iter().map(|&n| DMatrix::identity(n, n)).collect(),
        }
    }

    fn parts(&self) -> impl Iterator<Item = (String, &DMatrix<f64>)> {
        let src = self.sources.iter().enumerate().map(|(i, g)| (format!("source {i}"), g));
        let snk = self.sinks.iter().enumerate().map(|(j, h)| (format!("sink {j}"), h));
        src.chain(snk)
    }

    /// Checks part shapes against `dims` and rejects parts whose condition
    /// number exceeds `1 / floor`.
    pub fn check(&self, dims: &DimVector, floor: f64) -> Result<()> {
        if self.sources.len() != dims.sources.len() || self.sinks.len() != dims.sinks.len() {
            return Err(Error::InvalidGroupElement {
                vertex: "all".into(),
                reason: format!(
                    "{} source and {} sink parts for {} sources and {} sinks",
                    self.sources.len(),
                    self.sinks.len(),
                    dims.sources.len(),
                    dims.sinks.len()
                ),
            });
        }
        let expected = dims.sources.iter().chain(&dims.sinks);
        for ((vertex, m), &n) in self.parts().zip(expected) {
            if m.shape() != (n, n) {
                return Err(Error::InvalidGroupElement {
                    vertex,
                    reason: format!("part is {}x{}, expected {n}x{n}", m.nrows(), m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidGroupElement {
                    vertex,
                    reason: "non-finite entry".into(),
                });
            }
            if n == 0 {
                continue;
            }
            let sv = m.singular_values();
            let smax = sv.max();
            let smin = sv.min();
            if !(smin > floor * smax) {
                return Err(Error::InvalidGroupElement {
                    vertex,
                    reason: format!("singular part (sigma_min {smin:e}, sigma_max {smax:e})"),
                });
            }
        }
        Ok(())
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = |(vertex, m): (String, &DMatrix<f64>)| {
            m.clone().try_inverse().ok_or(Error::InvalidGroupElement {
                vertex,
                reason: "not invertible".into(),
            })
        };
        let k = self.sources.len();
        let all: Vec<DMatrix<f64>> = self.parts().map(inv).collect::<Result<_>>()?;
        let (sources, sinks) = all.split_at(k);
        Ok(GroupElement::new(sources.to_vec(), sinks.to_vec()))
    }

    /// Vertex-wise product `self * other`.
    pub fn compose(&self, other: &GroupElement) -> Self {
        GroupElement {
            sources: self.sources.iter().zip(&other.sources).map(|(a, b)| a * b).collect(),
            sinks: self.sinks.iter().zip(&other.sinks).map(|(a, b)| a * b).collect(),
        }
    }

    /// `log |det|` of every source part, then every sink part.
    pub fn log_abs_dets(&self) -> (Vec<f64>, Vec<f64>) {
        let lad = |m: &DMatrix<f64>| m.clone().lu().determinant().abs().ln();
        (
            self.sources.iter().map(lad).collect(),
            self.sinks.iter().map(lad).collect(),
        )
    }
}

/// Simultaneous conjugation `(A . V)_a = h_{head} V_a g_{tail}^{-1}`.
pub fn act(a: &GroupElement, datum: &QuiverDatum) -> Result<QuiverDatum> {
    a.check(&datum.dims, GROUP_SINGULARITY_FLOOR)?;
    let g_inv: Vec<DMatrix<f64>> = a
        .sources
        .iter()
        .enumerate()
        .map(|(i, g)| {
            g.clone().try_inverse().ok_or(Error::InvalidGroupElement {
                vertex: format!("source {i}"),
                reason: "not invertible".into(),
            })
        })
        .collect::<Result<_>>()?;
    let matrices = datum
        .quiver
        .arrows
        .iter()
        .zip(&datum.matrices)
        .map(|(arrow, v)| &a.sinks[arrow.head] * v * &g_inv[arrow.tail])
        .collect();
    Ok(datum.with_matrices(matrices))
}

/// The datum over the split quiver together with the eigenvalues used to split.
#[derive(Clone, Debug)]
pub struct TildeExpansion {
    /// Sink `(l, j)` of the original quiver becomes sink `offsets[j] + l`.
    pub datum: QuiverDatum,
    /// Eigenvalues `t_{lj}` of `Y_j`, descending, per original sink.
    pub eigenvalues: Vec<Vec<f64>>,
    pub offsets: Vec<usize>,
}

impl TildeExpansion {
    /// The eigenvalues as a tuple of `1 x 1` matrices over the split sinks.
    pub fn pd_tuple(&self) -> Result<PdTuple> {
        let flat: Vec<f64> = self.eigenvalues.iter().flatten().copied().collect();
        PdTuple::from_scalars(&flat)
    }
}

/// Splits every sink `j` into `n_j` one-dimensional sinks along the
/// orthonormal eigenbasis `u_{lj}` of `Y_j`; arrow `(l, a)` carries
/// `u_{lj}^T V_a` and sink `(l, j)` inherits weight `p_j`.
pub fn tilde_expand(datum: &QuiverDatum, y: &PdTuple) -> Result<TildeExpansion> {
    validate_datum(datum).into_result()?;
    if y.dims() != datum.dims.sinks {
        return Err(Error::WrongShape(format!(
            "PD tuple dims {:?} do not match sink dims {:?}",
            y.dims(),
            datum.dims.sinks
        )));
    }
    let mut eigs = Vec::with_capacity(y.len());
    for (j, yj) in y.matrices().iter().enumerate() {
        let e = sym_eig(yj)?;
        if !e.is_positive_definite(crate::spd::DEFAULT_REL_FLOOR) {
            return Err(Error::NotPositiveDefinite {
                sink: j,
                min_eigenvalue: e.min(),
            });
        }
        eigs.push(e);
    }
    let mut offsets = Vec::with_capacity(eigs.len());
    let mut total = 0;
    for &n in &datum.dims.sinks {
        offsets.push(total);
        total += n;
    }

    let mut pairs = Vec::new();
    for (arrow, v) in datum.quiver.arrows.iter().zip(&datum.matrices) {
        let e = &eigs[arrow.head];
        for l in 0..e.dim() {
            let u = e.vectors.column(l);
            pairs.push((
                Arrow::new(arrow.tail, offsets[arrow.head] + l, format!("{}#{l}", arrow.label)),
                DMatrix::from_row_slice(1, v.ncols(), (u.transpose() * v).as_slice()),
            ));
        }
    }
    // the quiver keeps its arrows sorted; matrices must follow the same order
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let (arrows, matrices): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let mut weights = Vec::with_capacity(total);
    for (j, &n) in datum.dims.sinks.iter().enumerate() {
        weights.extend(std::iter::repeat_n(datum.p(j), n));
    }
    let expanded = QuiverDatum::new(
        BipartiteQuiver::new(datum.quiver.sources, total, arrows),
        DimVector::new(datum.dims.sources.clone(), vec![1; total]),
        Weights::new(weights),
        matrices,
    );
    Ok(TildeExpansion {
        datum: expanded,
        eigenvalues: eigs.iter().map(|e| e.values.iter().copied().collect()).collect(),
        offsets,
    })
}

#[derive(Clone, Debug)]
pub enum RandomMode {
    /// Entries i.i.d. standard normal.
    Generic,
    /// Generic draw pushed into geometric position by the scaling solver.
    GeometricAttempt(ScalingConfig),
}

pub fn random_datum(
    quiver: &BipartiteQuiver,
    dims: &DimVector,
    weights: &Weights,
    seed: u64,
    mode: &RandomMode,
) -> Result<QuiverDatum> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = BipartiteQuiver::new(quiver.sources, quiver.sinks, quiver.arrows.clone());
    let matrices = q
        .arrows
        .iter()
        .map(|arrow| {
            let rows = dims.sinks.get(arrow.head).copied().unwrap_or(0);
            let cols = dims.sources.get(arrow.tail).copied().unwrap_or(0);
            DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
        })
        .collect();
    let datum = QuiverDatum::new(q, dims.clone(), weights.clone(), matrices);
    match mode {
        RandomMode::Generic => Ok(datum),
        RandomMode::GeometricAttempt(cfg) => {
            let perp = check_perp(dims, weights, cfg.numeric.perp_tol);
            if !perp.holds {
                return Err(Error::InvalidInput(format!(
                    "dimension balance fails (residual {})",
                    perp.residual
                )));
            }
            let result = scale(&datum, cfg)?;
            if result.status == ScalingStatus::Converged {
                Ok(result.final_datum)
            } else {
                Err(Error::GenerationFailed {
                    iterations: result.iterations,
                    residual: result.final_residual(),
                    status: result.status.to_string(),
                })
            }
        }
    }
}

/// Random orthogonal `n x n` matrix (Q factor of a Gaussian matrix).
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    g.qr().q()
}

/// Random group element whose parts have condition number at most `max_cond`.
///
/// Each part is `Q1 diag(s) Q2` with orthogonal `Q1, Q2` and singular values
/// log-uniform in `[1, max_cond]`, times a random overall scale.
pub fn random_group_element(dims: &DimVector, max_cond: f64, seed: u64) -> GroupElement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part = |n: usize| {
        if n == 0 {
            return DMatrix::zeros(0, 0);
        }
        let q1 = random_orthogonal(n, &mut rng);
        let q2 = random_orthogonal(n, &mut rng);
        let z: f64 = StandardNormal.sample(&mut rng);
        let scale = (0.5 * z).exp();
        let s = DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                scale * max_cond.powf(rng.random::<f64>())
            } else {
                0.0
            }
        });
        q1 * s * q2
    };
    let sources = dims.sources.iter().map(|&d| part(d)).collect();
    let sinks = dims.sinks.iter().map(|&n| part(n)).collect();
    GroupElement::new(sources, sinks)
}
