//! JSON file formats for data, PD tuples and filtrations.
//!
//! Datum file:
//!
//! ```json
//! {
//!   "quiver": {"k": 1, "m": 2, "arrows": [{"tail": 0, "head": 0, "label": "a0"}, ...]},
//!   "dims": {"sources": [2], "sinks": [1, 1]},
//!   "weights": [1.0, 1.0],
//!   "matrices": {"a0": [[1.0, 0.0]], "a1": [[0.0, 1.0]]}
//! }
//! ```
//!
//! Matrices are row-major. A PD tuple file is `{"y": [matrix, ...]}`; a
//! filtration file is `{"bases": {"sources": [...], "sinks": [...]}, "blocks":
//! [{"sources": [...], "sinks": [...]}, ...]}` with `bases` optional
//! (standard bases when omitted).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quiver::{Arrow, BipartiteQuiver, DimVector, QuiverDatum, Weights};
use crate::spd::PdTuple;
use crate::stability::Filtration;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrowFile {
    pub tail: usize,
    pub head: usize,
    pub label: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuiverFile {
    pub k: usize,
    pub m: usize,
    pub arrows: Vec<ArrowFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsFile {
    pub sources: Vec<usize>,
    pub sinks: Vec<usize>,
}

impl From<&DimVector> for DimsFile {
    fn from(d: &DimVector) -> Self {
        DimsFile {
            sources: d.sources.clone(),
            sinks: d.sinks.clone(),
        }
    }
}

impl From<DimsFile> for DimVector {
    fn from(d: DimsFile) -> Self {
        DimVector::new(d.sources, d.sinks)
    }
}

pub type Rows = Vec<Vec<f64>>;

/// Label-to-matrix map that serializes in canonical arrow order.
#[derive(Clone, Debug, Deserialize)]
#[serde(transparent)]
pub struct MatrixMap(pub BTreeMap<String, Rows>);

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumFile {
    pub quiver: QuiverFile,
    pub dims: DimsFile,
    pub weights: Vec<f64>,
    pub matrices: MatrixMap,
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Builds a matrix from rows; `what` names the matrix in error messages.
pub fn matrix_from_rows(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::InvalidInput(format!(
                "{what}: row {r} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

impl DatumFile {
    pub fn into_datum(self) -> Result<QuiverDatum> {
        let quiver = BipartiteQuiver::new(
            self.quiver.k,
            self.quiver.m,
            self.quiver
                .arrows
                .into_iter()
                .map(|a| Arrow::new(a.tail, a.head, a.label))
                .collect(),
        );
        let matrices = self
            .matrices
            .0
            .iter()
            .map(|(label, rows)| Ok((label.clone(), matrix_from_rows(rows, &format!("matrix '{label}'"))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        QuiverDatum::from_labelled(
            quiver,
            self.dims.into(),
            Weights::new(self.weights),
            matrices,
        )
    }
}

/// Serializable view of a datum, arrows and matrices in canonical order.
pub struct DatumView<'a>(pub &'a QuiverDatum);

impl Serialize for DatumView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Out<'a> {
            quiver: QuiverFile,
            dims: DimsFile,
            weights: &'a [f64],
            matrices: Ordered<'a>,
        }
        struct Ordered<'a>(&'a QuiverDatum);
        impl Serialize for Ordered<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut map = s.serialize_map(Some(self.0.matrices.len()))?;
                for (arrow, m) in self.0.quiver.arrows.iter().zip(&self.0.matrices) {
                    map.serialize_entry(&arrow.label, &rows_of(m))?;
                }
                map.end()
            }
        }
        let d = self.0;
        Out {
            quiver: QuiverFile {
                k: d.quiver.sources,
                m: d.quiver.sinks,
                arrows: d
                    .quiver
                    .arrows
                    .iter()
                    .map(|a| ArrowFile {
                        tail: a.tail,
                        head: a.head,
                        label: a.label.clone(),
                    })
                    .collect(),
            },
            dims: (&d.dims).into(),
            weights: d.weights.as_slice(),
            matrices: Ordered(d),
        }
        .serialize(s)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn parse<'de, T: Deserialize<'de>>(text: &'de str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("{origin}: {e}")))
}

pub fn parse_datum(text: &str, origin: &str) -> Result<QuiverDatum> {
    parse::<DatumFile>(text, origin)?
        .into_datum()
        .map_err(|e| match e {
            Error::InvalidInput(s) => Error::InvalidInput(format!("{origin}: {s}")),
            other => other,
        })
}

pub fn read_datum(path: &Path) -> Result<QuiverDatum> {
    parse_datum(&read(path)?, &path.display().to_string())
}

pub fn datum_to_json(datum: &QuiverDatum) -> String {
    crate::json::to_string_pretty(&DatumView(datum)).expect("datum serializes")
}

pub fn write_datum(path: &Path, datum: &QuiverDatum) -> Result<()> {
    fs::write(path, datum_to_json(datum) + "\n")
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct YFile {
    y: Vec<Rows>,
}

pub fn parse_pd_tuple(text: &str, origin: &str) -> Result<PdTuple> {
    let f: YFile = parse(text, origin)?;
    let mats = f
        .y
        .iter()
        .enumerate()
        .map(|(j, rows)| matrix_from_rows(rows, &format!("{origin}: y[{j}]")))
        .collect::<Result<Vec<_>>>()?;
    PdTuple::new(mats)
}

pub fn read_pd_tuple(path: &Path) -> Result<PdTuple> {
    parse_pd_tuple(&read(path)?, &path.display().to_string())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BasesFile {
    sources: Vec<Rows>,
    sinks: Vec<Rows>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FiltrationFile {
    #[serde(default)]
    bases: Option<BasesFile>,
    blocks: Vec<DimsFile>,
}

/// Parses a filtration; omitted bases default to the standard bases of `dims`.
pub fn parse_filtration(text: &str, origin: &str, dims: &DimVector) -> Result<Filtration> {
    let f: FiltrationFile = parse(text, origin)?;
    let blocks: Vec<DimVector> = f.blocks.into_iter().map(Into::into).collect();
    match f.bases {
        None => Ok(Filtration::standard(dims, blocks)),
        Some(b) => {
            let conv = |list: &[Rows], kind: &str| {
                list.iter()
                    .enumerate()
                    .map(|(x, rows)| matrix_from_rows(rows, &format!("{origin}: bases.{kind}[{x}]")))
                    .collect::<Result<Vec<_>>>()
            };
            Ok(Filtration {
                source_bases: conv(&b.sources, "sources")?,
                sink_bases: conv(&b.sinks, "sinks")?,
                blocks,
            })
        }
    }
}

pub fn read_filtration(path: &Path, dims: &DimVector) -> Result<Filtration> {
    parse_filtration(&read(path)?, &path.display().to_string(), dims)
}

/// Serializable view of a filtration.
pub fn filtration_to_json(f: &Filtration) -> String {
    #[derive(Serialize)]
    struct Bases {
        sources: Vec<Rows>,
        sinks: Vec<Rows>,
    }
    #[derive(Serialize)]
    struct Out {
        bases: Bases,
        blocks: Vec<DimsFile>,
    }
    let out = Out {
        bases: Bases {
            sources: f.source_bases.iter().map(rows_of).collect(),
            sinks: f.sink_bases.iter().map(rows_of).collect(),
        },
        blocks: f.blocks.iter().map(Into::into).collect(),
    };
    crate::json::to_string_pretty(&out).expect("filtration serializes")
}
