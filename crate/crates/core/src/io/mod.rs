//! File formats, configuration, overlays and evaluation.

pub mod config;
pub mod dota;
pub mod eval;
pub mod imageio;
pub mod points;
pub mod svg;

use crate::fitter::LossBreakdown;

/// Iterates over non-blank, non-comment lines with 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// One structured trace line: `iter=<n> total=<v> overlap=<v> ...`.
pub fn trace_line(iteration: usize, l: &LossBreakdown) -> String {
    format!(
        "iter={iteration} {}",
        loss_fields(l)
    )
}

/// `total=<v> overlap=<v> watershed=<v> edge=<v> consistency=<v>`.
pub fn loss_fields(l: &LossBreakdown) -> String {
    format!(
        "total={:.9e} overlap={:.9e} watershed={:.9e} edge={:.9e} consistency={:.9e}",
        l.total, l.overlap, l.watershed, l.edge, l.consistency
    )
}
