//! Line-oriented text form of a defect list.
//!
//! ```text
//! # kind x0 y0 [x1 y1] size intensity opacity seed [softness]
//! dust 12.5 40 2.25 0.8 0.9 17 0.3
//! scratch 30 0 30 127 1.5 -0.6 0.75 99
//! ```
//!
//! `size` is the radius of a dust speck or the width of a scratch. Dust takes
//! an optional trailing softness (default 0). Blank lines and `#` comments
//! are ignored. Numbers are written in shortest round-trip form, so
//! parse(format(x)) == x exactly.

use std::fmt::Write as _;

use crate::degrade::artifact::{DegradationSpec, Geometry};
use crate::error::{Error, Result};

pub fn format_specs(specs: &[DegradationSpec]) -> String {
    let mut out = String::from("# kind x0 y0 [x1 y1] size intensity opacity seed [softness]\n");
    for s in specs {
        match s.geometry {
            Geometry::Dust {
                x,
                y,
                radius,
                softness,
            } => {
                let _ = write!(out, "dust {x:?} {y:?} {radius:?} {:?} {:?} {}", s.intensity, s.opacity, s.seed);
                if softness != 0.0 {
                    let _ = write!(out, " {softness:?}");
                }
                out.push('\n');
            }
            Geometry::Scratch {
                x0,
                y0,
                x1,
                y1,
                width,
            } => {
                let _ = writeln!(
                    out,
                    "scratch {x0:?} {y0:?} {x1:?} {y1:?} {width:?} {:?} {:?} {}",
                    s.intensity, s.opacity, s.seed
                );
            }
        }
    }
    out
}

pub fn parse_specs(text: &str) -> Result<Vec<DegradationSpec>> {
    let mut specs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::SpecParse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |idx: usize| -> Result<f64> {
            let f = fields[idx];
            f.parse::<f64>()
                .map_err(|_| err(format!("field {} ({f:?}) is not a number", idx + 1)))
        };
        let seed = |idx: usize| -> Result<u64> {
            let f = fields[idx];
            f.parse::<u64>()
                .map_err(|_| err(format!("seed {f:?} is not a non-negative integer")))
        };
        let spec = match fields[0] {
            "dust" => {
                if !(7..=8).contains(&fields.len()) {
                    return Err(err(format!("dust needs 7 or 8 fields, got {}", fields.len())));
                }
                DegradationSpec {
                    geometry: Geometry::Dust {
                        x: num(1)?,
                        y: num(2)?,
                        radius: num(3)?,
                        softness: if fields.len() == 8 { num(7)? } else { 0.0 },
                    },
                    intensity: num(4)?,
                    opacity: num(5)?,
                    seed: seed(6)?,
                }
            }
            "scratch" => {
                if fields.len() != 9 {
                    return Err(err(format!("scratch needs 9 fields, got {}", fields.len())));
                }
                DegradationSpec {
                    geometry: Geometry::Scratch {
                        x0: num(1)?,
                        y0: num(2)?,
                        x1: num(3)?,
                        y1: num(4)?,
                        width: num(5)?,
                    },
                    intensity: num(6)?,
                    opacity: num(7)?,
                    seed: seed(8)?,
                }
            }
            other => return Err(err(format!("unknown kind {other:?}"))),
        };
        spec.validate().map_err(|e| err(e.to_string()))?;
        specs.push(spec);
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{sample_specs, Severity};
    use proptest::prelude::*;

    #[test]
    fn parses_documented_example() {
        let specs = parse_specs(
            "# comment\n\ndust 12.5 40 2.25 0.8 0.9 17 0.3\nscratch 30 0 30 127 1.5 -0.6 0.75 99 # trailing\n",
        )
        .unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].kind(), "dust");
        assert_eq!(specs[1].seed, 99);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_specs("dust 1 1 1 0.5 0.5 1\nblob 1 2 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_specs("scratch 1 1 1 1 1 0.5 0.5 3\n").unwrap_err();
        assert!(err.to_string().contains("zero length"), "{err}");
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(seed in any::<u64>(), sev in 0usize..3) {
            let sev = [Severity::Light, Severity::Medium, Severity::Heavy][sev];
            let specs = sample_specs(seed, 96, 80, sev);
            prop_assert_eq!(parse_specs(&format_specs(&specs)).unwrap(), specs);
        }
    }
}
