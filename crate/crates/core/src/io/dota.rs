//! DOTA-style text annotations: `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{quad_to_rbox, Point2, PolyQuad, RBox};
use crate::io::content_lines;

#[derive(Clone, Debug, PartialEq)]
pub struct DotaRecord {
    pub rbox: RBox,
    pub category: String,
    pub difficulty: u32,
}

impl DotaRecord {
    pub fn new(rbox: RBox, category: impl Into<String>, difficulty: u32) -> Self {
        Self { rbox, category: category.into(), difficulty }
    }
}

/// Parsed records plus degenerate lines that were skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DotaFile {
    pub records: Vec<DotaRecord>,
    /// `(line, reason)` for every skipped degenerate quad.
    pub skipped: Vec<(usize, String)>,
}

/// Parses DOTA text. Blank lines, `#` comments and the `imagesource:` /
/// `gsd:` header lines are ignored; the difficulty column is optional and
/// defaults to 0.
pub fn parse_dota(text: &str) -> Result<DotaFile> {
    let mut out = DotaFile::default();
    for (line, content) in content_lines(text) {
        if content.starts_with("imagesource:") || content.starts_with("gsd:") {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 9 && tokens.len() != 10 {
            return Err(Error::Parse { line, message: format!("expected 9 or 10 fields, found {}", tokens.len()) });
        }
        let mut coords = [0.0; 8];
        for (slot, tok) in coords.iter_mut().zip(&tokens[..8]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse { line, message: format!("bad coordinate {tok:?}") })?;
        }
        let difficulty = match tokens.get(9) {
            Some(t) => t
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("bad difficulty {t:?}") })?,
            None => 0,
        };
        let quad = PolyQuad::new(std::array::from_fn(|i| Point2::new(coords[2 * i], coords[2 * i + 1])));
        match quad_to_rbox(&quad) {
            Ok(rbox) => out.records.push(DotaRecord { rbox, category: tokens[8].to_string(), difficulty }),
            Err(e) => {
                log::warn!("line {line}: skipping degenerate quad ({e})");
                out.skipped.push((line, e.to_string()));
            }
        }
    }
    Ok(out)
}

fn fmt2(v: f64) -> String {
    // Adding 0.0 turns a rounded -0.0 into 0.0.
    format!("{:.2}", (v * 100.0).round() / 100.0 + 0.0)
}

pub fn format_dota_line(r: &DotaRecord) -> String {
    let mut s = String::new();
    for p in r.rbox.to_quad().corners {
        let _ = write!(s, "{} {} ", fmt2(p.x), fmt2(p.y));
    }
    let _ = write!(s, "{} {}", r.category, r.difficulty);
    s
}

pub fn format_dota(records: &[DotaRecord]) -> String {
    records.iter().map(|r| format_dota_line(r) + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_aligned_example() {
        let f = parse_dota("0 0 2 0 2 1 0 1 ship 0").unwrap();
        let r = &f.records[0];
        assert_eq!((r.rbox.cx, r.rbox.cy, r.rbox.w, r.rbox.h, r.rbox.theta), (1.0, 0.5, 2.0, 1.0, 0.0));
        assert_eq!((r.category.as_str(), r.difficulty), ("ship", 0));
    }

    #[test]
    fn empty_and_headers() {
        assert!(parse_dota("").unwrap().records.is_empty());
        let f = parse_dota("imagesource:GoogleEarth\ngsd:0.1\n\n# c\n0 0 2 0 2 1 0 1 car").unwrap();
        assert_eq!(f.records.len(), 1);
        assert_eq!(f.records[0].difficulty, 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        match parse_dota("0 0 2 0 2 1 0 1 ship 0\n0 0 x 0 2 1 0 1 ship 0") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_dota("1 2 3"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn degenerate_quad_skipped() {
        let f = parse_dota("0 0 0 0 0 0 0 0 ship 0\n0 0 2 0 2 1 0 1 ship 1").unwrap();
        assert_eq!(f.records.len(), 1);
        assert_eq!(f.skipped.len(), 1);
        assert_eq!(f.skipped[0].0, 1);
    }

    #[test]
    fn emit_parse_emit_is_stable() {
        let recs = vec![
            DotaRecord::new(RBox::new(40.123, 30.987, 20.5, 7.25, 0.4), "a", 0),
            DotaRecord::new(RBox::new(10.0, 10.0, 4.0, 2.0, -1.2), "b", 1),
            DotaRecord::new(RBox::new(0.001, 5.0, 0.5, 0.3, 0.0), "c", 2),
        ];
        let text = format_dota(&recs);
        let parsed = parse_dota(&text).unwrap().records;
        assert_eq!(format_dota(&parsed), text);
        for (a, b) in recs.iter().zip(&parsed) {
            assert!((a.rbox.cx - b.rbox.cx).abs() < 0.01 && (a.rbox.cy - b.rbox.cy).abs() < 0.01);
            assert_eq!(a.category, b.category);
        }
        assert!(!text.contains("-0.00"));
    }
}
