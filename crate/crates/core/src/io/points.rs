//! Point annotations: one `x y category` line per object.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fitter::{Instance, SceneAnnotation};
use crate::geometry::Point2;
use crate::grid::GrayImage;
use crate::io::content_lines;

#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub category: String,
}

pub fn parse_points(text: &str) -> Result<Vec<PointRecord>> {
    content_lines(text)
        .map(|(line, content)| {
            let tokens: Vec<&str> = content.split_whitespace().collect();
            if tokens.len() != 3 {
                return Err(Error::Parse { line, message: format!("expected 3 fields, found {}", tokens.len()) });
            }
            let num = |t: &str| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse { line, message: format!("bad coordinate {t:?}") })
            };
            Ok(PointRecord { x: num(tokens[0])?, y: num(tokens[1])?, category: tokens[2].to_string() })
        })
        .collect()
}

pub fn format_points(points: &[PointRecord]) -> String {
    let mut s = String::new();
    for p in points {
        let _ = writeln!(s, "{:.2} {:.2} {}", p.x, p.y, p.category);
    }
    s
}

/// Category tokens in order of first appearance; instance class ids index
/// into this list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassTable {
    tokens: Vec<String>,
}

impl ClassTable {
    pub fn id(&mut self, token: &str) -> u16 {
        match self.tokens.iter().position(|t| t == token) {
            Some(i) => i as u16,
            None => {
                self.tokens.push(token.to_string());
                (self.tokens.len() - 1) as u16
            }
        }
    }

    pub fn token(&self, id: u16) -> &str {
        &self.tokens[id as usize]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Pairs points with their image, checking bounds.
pub fn scene_from_points(image: GrayImage, points: &[PointRecord]) -> Result<(SceneAnnotation, ClassTable)> {
    let mut classes = ClassTable::default();
    let instances = points
        .iter()
        .map(|p| Instance { point: Point2::new(p.x, p.y), class_id: classes.id(&p.category) })
        .collect();
    Ok((SceneAnnotation::new(image, instances)?, classes))
}
