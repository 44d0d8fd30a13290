#![allow(dead_code)]

use nalgebra::DMatrix;
use quiver_bl::objective::{objective_value, NumericConfig};
use quiver_bl::quiver::{random_datum, random_group_element, RandomMode};
use quiver_bl::scaling::ScalingConfig;
use quiver_bl::stability::Filtration;
use quiver_bl::quiver::act;
use quiver_bl::{BipartiteQuiver, DimVector, GroupElement, PdTuple, QuiverDatum, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Shape {
    pub name: &'static str,
    pub quiver: BipartiteQuiver,
    pub dims: DimVector,
    pub weights: Weights,
}

fn shape(name: &'static str, quiver: BipartiteQuiver, d: &[usize], n: &[usize], p: &[f64]) -> Shape {
    Shape {
        name,
        quiver,
        dims: DimVector::new(d.to_vec(), n.to_vec()),
        weights: Weights::new(p.to_vec()),
    }
}

const R2: f64 = std::f64::consts::SQRT_2;

/// Balanced shapes whose generic data are stable, hence extremizable.
/// At most three sources and three sinks, dimensions at most four.
pub fn stable_shapes() -> Vec<Shape> {
    vec![
        shape("three lines in the plane", BipartiteQuiver::subspace(3), &[2], &[1, 1, 1], &[2.0 / 3.0; 3]),
        shape("2x2 irrational", BipartiteQuiver::complete(2, 2, 1), &[1, 1], &[1, 1], &[R2, 2.0 - R2]),
        shape("three planes in 3-space", BipartiteQuiver::subspace(3), &[3], &[2, 2, 2], &[0.5; 3]),
        shape("complete 2x2 blocks", BipartiteQuiver::complete(2, 2, 1), &[2, 2], &[2, 2], &[1.0, 1.0]),
        shape("two planes irrational", BipartiteQuiver::subspace(2), &[2], &[2, 2], &[R2 - 1.0, 2.0 - R2]),
        shape("complete 2x3 rank one", BipartiteQuiver::complete(2, 3, 1), &[1, 2], &[1, 1, 1], &[1.0; 3]),
        shape("three-arrow Kronecker", BipartiteQuiver::complete(1, 1, 3), &[2], &[2], &[1.0]),
        shape("three lines irrational", BipartiteQuiver::subspace(3), &[2], &[1, 1, 1], &[R2 / 2.0, R2 / 2.0, 2.0 - R2]),
    ]
}

/// Stable shapes small enough for the direct oracle (`sum d <= 4`, `sum n <= 4`).
pub fn small_stable_shapes() -> Vec<Shape> {
    stable_shapes()
        .into_iter()
        .filter(|s| s.dims.total_source() <= 4 && s.dims.total_sink() <= 4)
        .collect()
}

/// Stable shapes with one-dimensional sinks.
pub fn rank_one_shapes() -> Vec<Shape> {
    let mut v: Vec<Shape> = stable_shapes()
        .into_iter()
        .filter(|s| s.dims.sinks.iter().all(|&n| n == 1))
        .collect();
    v.push(shape("four lines in 3-space", BipartiteQuiver::subspace(4), &[3], &[1, 1, 1, 1], &[0.75; 4]));
    v
}

pub fn generic(shape: &Shape, seed: u64) -> QuiverDatum {
    random_datum(&shape.quiver, &shape.dims, &shape.weights, seed, &RandomMode::Generic).unwrap()
}

/// Generic data scaled into geometric position with residual below `1e-12`.
pub fn geometric(shape: &Shape, seed: u64) -> QuiverDatum {
    let mode = RandomMode::GeometricAttempt(ScalingConfig::with_tolerance(1e-12));
    random_datum(&shape.quiver, &shape.dims, &shape.weights, seed, &mode)
        .unwrap_or_else(|e| panic!("{}: seed {seed}: {e}", shape.name))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Positive reals log-uniform in `[10^-r, 10^r]`.
pub fn log_uniform(rng: &mut ChaCha8Rng, count: usize, r: f64) -> Vec<f64> {
    (0..count).map(|_| 10f64.powf(rng.random_range(-r..r))).collect()
}

pub fn log_objective(datum: &QuiverDatum, y: &[DMatrix<f64>]) -> f64 {
    let y = PdTuple::new(y.to_vec()).unwrap();
    objective_value(datum, &y, &NumericConfig::default()).unwrap().log
}

/// Central differences of the log objective along `(E_rc + E_cr) / 2`; for a
/// symmetric gradient `G` the directional derivative is exactly `G_rc`.
pub fn fd_gradient(datum: &QuiverDatum, y: &PdTuple, h: f64) -> Vec<DMatrix<f64>> {
    let base = y.matrices().to_vec();
    let mut out = Vec::new();
    for j in 0..base.len() {
        let n = base[j].nrows();
        let step = h * (1.0 + base[j].amax());
        let mut g = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let mut plus = base.clone();
                let mut minus = base.clone();
                for (m, s) in [(&mut plus, 1.0), (&mut minus, -1.0)] {
                    m[j][(r, c)] += s * 0.5 * step;
                    m[j][(c, r)] += s * 0.5 * step;
                }
                let d = (log_objective(datum, &plus) - log_objective(datum, &minus)) / (2.0 * step);
                g[(r, c)] = d;
                g[(c, r)] = d;
            }
        }
        out.push(g);
    }
    out
}

pub fn max_abs_diff(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

/// A two-block degeneration instance.
pub struct SplitInstance {
    pub name: &'static str,
    /// The datum in its original coordinates.
    pub datum: QuiverDatum,
    /// Filtration recovering the triangular form `W`.
    pub filtration: Filtration,
    /// The block-triangular datum `W = U . (X2 + X1)`.
    pub triangular: QuiverDatum,
    /// `X2 + X1`.
    pub direct_sum: QuiverDatum,
}

fn block_diag(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, c1) = top.shape();
    let (r2, c2) = bottom.shape();
    let mut m = DMatrix::zeros(r1 + r2, c1 + c2);
    m.view_mut((0, 0), (r1, c1)).copy_from(top);
    m.view_mut((r1, c1), (r2, c2)).copy_from(bottom);
    m
}

fn unipotent(top: usize, bottom: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut u = DMatrix::identity(top + bottom, top + bottom);
    for r in 0..top {
        for c in top..top + bottom {
            u[(r, c)] = rng.random_range(-1.0..1.0);
        }
    }
    u
}

/// Two-block split extension of generic factors of types `top` (`d^2`) and
/// `bottom` (`d^1`), hidden behind a random change of basis.
pub fn split_instance(
    name: &'static str,
    quiver: &BipartiteQuiver,
    weights: &Weights,
    top: &DimVector,
    bottom: &DimVector,
    seed: u64,
) -> SplitInstance {
    // geometric factors keep the twisted sum well conditioned for the solver
    let mode = RandomMode::GeometricAttempt(ScalingConfig::with_tolerance(1e-12));
    let x2 = random_datum(quiver, top, weights, seed, &mode).unwrap();
    let x1 = random_datum(quiver, bottom, weights, seed + 7919, &mode).unwrap();
    split_from_factors(name, &x2, &x1, seed)
}

/// `U . (x2 + x1)` for a random block-unipotent `U`, then a random change of
/// basis of condition number at most 10.
pub fn split_from_factors(name: &'static str, x2: &QuiverDatum, x1: &QuiverDatum, seed: u64) -> SplitInstance {
    let (top, bottom) = (&x2.dims, &x1.dims);
    let matrices = x2.matrices.iter().zip(&x1.matrices).map(|(a, b)| block_diag(a, b)).collect();
    let total = DimVector::new(
        top.sources.iter().zip(&bottom.sources).map(|(a, b)| a + b).collect(),
        top.sinks.iter().zip(&bottom.sinks).map(|(a, b)| a + b).collect(),
    );
    let direct_sum = QuiverDatum::new(x2.quiver.clone(), total.clone(), x2.weights.clone(), matrices);
    let mut r = rng(seed ^ 0x5eed);
    let u = GroupElement::new(
        top.sources.iter().zip(&bottom.sources).map(|(&a, &b)| unipotent(a, b, &mut r)).collect(),
        top.sinks.iter().zip(&bottom.sinks).map(|(&a, &b)| unipotent(a, b, &mut r)).collect(),
    );
    let triangular = act(&u, &direct_sum).unwrap();
    let a = random_group_element(&total, 10.0, seed + 31);
    let a_inv = a.inverse().unwrap();
    let datum = act(&a_inv, &triangular).unwrap();
    SplitInstance {
        name,
        datum,
        filtration: Filtration {
            source_bases: a_inv.sources,
            sink_bases: a_inv.sinks,
            blocks: vec![top.clone(), bottom.clone()],
        },
        triangular,
        direct_sum,
    }
}

/// Scalar datum on the complete 2x2 quiver with weights 1 whose invariant
/// `a00 a11 / (a01 a10)` equals `cross`. Factors with cross ratios far apart
/// are far from isomorphic, which keeps their twisted sum well conditioned.
pub fn complete_2x2_scalar(cross: f64) -> QuiverDatum {
    let q = BipartiteQuiver::complete(2, 2, 1);
    // arrows sorted as 0-0, 0-1, 1-0, 1-1: entries a_{head, tail}
    let entries = [cross, 1.0, 1.0, 1.0];
    let matrices = entries.iter().map(|&x| DMatrix::from_element(1, 1, x)).collect();
    QuiverDatum::new(
        q,
        DimVector::new(vec![1, 1], vec![1, 1]),
        Weights::new(vec![1.0, 1.0]),
        matrices,
    )
}

/// Ten split instances over rational weights.
pub fn split_instances() -> Vec<SplitInstance> {
    let half = Weights::new(vec![0.5, 0.5]);
    let third = Weights::new(vec![1.0 / 3.0; 3]);
    let mut out = Vec::new();
    for s in 0..4 {
        out.push(split_instance(
            "two sinks, weights 1/2",
            &BipartiteQuiver::subspace(2),
            &half,
            &DimVector::new(vec![1], vec![1, 1]),
            &DimVector::new(vec![1], vec![1, 1]),
            100 + s,
        ));
    }
    let mut r = rng(200);
    for s in 0..3 {
        let x2 = complete_2x2_scalar(r.random_range(1.5..4.0));
        let x1 = complete_2x2_scalar(-r.random_range(0.25..4.0));
        out.push(split_from_factors("complete 2x2, weights 1", &x2, &x1, 200 + s));
    }
    for s in 0..3 {
        out.push(split_instance(
            "three sinks, weights 1/3",
            &BipartiteQuiver::subspace(3),
            &third,
            &DimVector::new(vec![1], vec![1, 1, 1]),
            &DimVector::new(vec![1], vec![1, 1, 1]),
            300 + s,
        ));
    }
    out
}
