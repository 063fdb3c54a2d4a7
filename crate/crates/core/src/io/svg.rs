//! SVG overlays of predicted and ground-truth boxes.

use std::fmt::Write as _;

use crate::geometry::{Point2, RBox};

#[derive(Clone, Debug, Default)]
pub struct Overlay<'a> {
    pub width: usize,
    pub height: usize,
    /// Background image reference, embedded as an `<image>` element.
    pub image_href: Option<&'a str>,
    pub predicted: &'a [RBox],
    pub ground_truth: Option<&'a [RBox]>,
    pub points: &'a [Point2],
}

fn polygon(out: &mut String, b: &RBox, class: &str, color: &str) {
    let pts: Vec<String> = b.to_quad().corners.iter().map(|p| format!("{:.2},{:.2}", p.x, p.y)).collect();
    let _ = writeln!(
        out,
        r#"  <polygon class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="1"/>"#,
        pts.join(" ")
    );
}

/// One `<polygon>` per predicted box, one per GT box, and a `<circle>` per
/// annotated point.
pub fn render_svg(o: &Overlay<'_>) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="-0.5 -0.5 {w} {h}">"#,
        w = o.width,
        h = o.height
    );
    if let Some(href) = o.image_href {
        let _ = writeln!(
            s,
            r#"  <image x="-0.5" y="-0.5" width="{}" height="{}" xlink:href="{}"/>"#,
            o.width,
            o.height,
            escape(href)
        );
    }
    for b in o.ground_truth.unwrap_or(&[]) {
        polygon(&mut s, b, "gt", "#00c000");
    }
    for b in o.predicted {
        polygon(&mut s, b, "pred", "#ff3030");
    }
    for p in o.points {
        let _ = writeln!(s, r##"  <circle cx="{:.2}" cy="{:.2}" r="1.5" fill="#ffd000"/>"##, p.x, p.y);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}
