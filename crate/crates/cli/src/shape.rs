//! `--shape` specs for `qbl random`.
//!
//! `sources=2;sinks=1,1,1;weights=2/3,2/3,2/3` describes the complete
//! bipartite quiver with the given dimensions; `mult=N` puts `N` parallel
//! arrows on every source-sink pair. Weights accept decimals and fractions.

use quiver_bl::{BipartiteQuiver, DimVector, Error, Result, Weights};

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub quiver: BipartiteQuiver,
    pub dims: DimVector,
    pub weights: Weights,
}

fn bad(spec: &str, why: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("shape '{spec}': {why}"))
}

fn parse_weight(spec: &str, s: &str) -> Result<f64> {
    let value = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| bad(spec, format!("bad weight '{s}'")))?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|_| bad(spec, format!("bad weight '{s}'")))?;
            a / b
        }
        None => s
            .trim()
            .parse()
            .map_err(|_| bad(spec, format!("bad weight '{s}'")))?,
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(bad(spec, format!("weight '{s}' must be positive")));
    }
    Ok(value)
}

fn parse_dims(spec: &str, key: &str, s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| bad(spec, format!("bad {key} entry '{x}'")))
        })
        .collect()
}

pub fn parse_shape(spec: &str) -> Result<Shape> {
    let mut sources = None;
    let mut sinks = None;
    let mut weights = None;
    let mut mult = 1usize;
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| bad(spec, format!("expected key=value, got '{part}'")))?;
        match key.trim() {
            "sources" => sources = Some(parse_dims(spec, "sources", value)?),
            "sinks" => sinks = Some(parse_dims(spec, "sinks", value)?),
            "weights" => {
                weights = Some(
                    value
                        .split(',')
                        .map(|w| parse_weight(spec, w))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            "mult" => {
                mult = value
                    .trim()
                    .parse()
                    .map_err(|_| bad(spec, format!("bad multiplicity '{value}'")))?;
                if mult == 0 {
                    return Err(bad(spec, "multiplicity must be at least 1"));
                }
            }
            other => return Err(bad(spec, format!("unknown key '{other}'"))),
        }
    }
    let sources = sources.ok_or_else(|| bad(spec, "missing sources="))?;
    let sinks = sinks.ok_or_else(|| bad(spec, "missing sinks="))?;
    let weights = weights.ok_or_else(|| bad(spec, "missing weights="))?;
    if weights.len() != sinks.len() {
        return Err(bad(
            spec,
            format!("{} weights for {} sinks", weights.len(), sinks.len()),
        ));
    }
    Ok(Shape {
        quiver: BipartiteQuiver::complete(sources.len(), sinks.len(), mult),
        dims: DimVector::new(sources, sinks),
        weights: Weights::new(weights),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_multiplicity() {
        let s = parse_shape("sources=2;sinks=1,1,1;weights=2/3,2/3,0.6666666666666666").unwrap();
        assert_eq!(s.dims.sources, vec![2]);
        assert_eq!(s.quiver.arrows.len(), 3);
        assert!((s.weights.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        let k = parse_shape("sources=2; sinks=2; weights=1; mult=3").unwrap();
        assert_eq!(k.quiver.arrows.len(), 3);
    }

    #[test]
    fn rejects_malformed_specs() {
        for spec in [
            "sources=2;sinks=1",
            "sources=2;sinks=1,1;weights=1",
            "sources=x;sinks=1;weights=1",
            "sources=1;sinks=1;weights=-1",
            "sources=1;sinks=1;weights=1;colour=red",
            "sources=1;sinks=1;weights=1;mult=0",
        ] {
            assert!(parse_shape(spec).is_err(), "{spec}");
        }
    }
}
