//! `key = value` configuration for the fitter. Blank lines and lines
//! starting with `#` are ignored; unknown keys are errors.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fitter::{FitConfig, GradientMode, OrientationInit};
use crate::gaussian::GwdForm;
use crate::io::content_lines;
use crate::watershed::{BarrierMode, SurfaceMode};

/// Every recognized key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("w_overlap", "weight of the Gaussian overlap term"),
    ("w_watershed", "weight of the Voronoi-watershed term"),
    ("w_edge", "weight of the edge term"),
    ("w_consistency", "weight of the view-consistency term (used with with_ss)"),
    ("iterations", "number of Adam steps"),
    ("step_size", "Adam step for the log sizes"),
    ("angle_step_size", "Adam step for the angle, radians"),
    ("adam_beta1", "first-moment decay"),
    ("adam_beta2", "second-moment decay"),
    ("adam_eps", "Adam denominator guard"),
    ("edge_k", "RoI half-resolution K"),
    ("edge_beta", "RoI enlargement factor"),
    ("edge_sigma", "width of the soft edge prior"),
    ("init_min", "lower clamp of the initial size, px"),
    ("init_max", "upper clamp of the initial size, px"),
    ("init_single", "initial size of a lone instance, px"),
    ("orientation_init", "zero | basin"),
    ("gradient", "analytic | finite-difference"),
    ("fd_step", "central-difference step"),
    ("gwd_form", "log | raw | inverse"),
    ("surface", "gradient | intensity"),
    ("barrier_mode", "background | wall"),
    ("seed_frame", "true | false: seed the image frame as background"),
    ("with_ss", "true | false: enable the view-consistency term"),
    ("prop_rotation", "probability of a rotation view"),
    ("prop_flip", "probability of a flip view"),
    ("prop_scale", "probability of a scale view"),
    ("seed", "RNG seed for view sampling"),
];

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, message: format!("{key}: cannot parse {v:?}") })
}

fn choice<T>(line: usize, key: &str, v: &str, parsed: Option<T>) -> Result<T> {
    parsed.ok_or_else(|| Error::Parse { line, message: format!("{key}: unknown value {v:?}") })
}

/// Applies the settings in `text` on top of `base`.
pub fn apply_config(text: &str, base: FitConfig) -> Result<FitConfig> {
    let mut c = base;
    for (line, content) in content_lines(text) {
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Parse { line, message: "expected `key = value`".into() })?;
        match key {
            "w_overlap" => c.weights.overlap = num(line, key, value)?,
            "w_watershed" => c.weights.watershed = num(line, key, value)?,
            "w_edge" => c.weights.edge = num(line, key, value)?,
            "w_consistency" => c.weights.consistency = num(line, key, value)?,
            "iterations" => c.iterations = num(line, key, value)?,
            "step_size" => c.step_size = num(line, key, value)?,
            "angle_step_size" => c.angle_step_size = num(line, key, value)?,
            "adam_beta1" => c.adam_beta1 = num(line, key, value)?,
            "adam_beta2" => c.adam_beta2 = num(line, key, value)?,
            "adam_eps" => c.adam_eps = num(line, key, value)?,
            "edge_k" => c.edge.k = num(line, key, value)?,
            "edge_beta" => c.edge.beta = num(line, key, value)?,
            "edge_sigma" => c.edge.sigma_e = num(line, key, value)?,
            "init_min" => c.init_min = num(line, key, value)?,
            "init_max" => c.init_max = num(line, key, value)?,
            "init_single" => c.init_single = num(line, key, value)?,
            "orientation_init" => c.orientation_init = choice(line, key, value, OrientationInit::parse(value))?,
            "gradient" => c.gradient = choice(line, key, value, GradientMode::parse(value))?,
            "fd_step" => c.fd_step = num(line, key, value)?,
            "gwd_form" => c.gwd_form = choice(line, key, value, GwdForm::parse(value))?,
            "surface" => c.surface = choice(line, key, value, SurfaceMode::parse(value))?,
            "barrier_mode" => c.watershed.barrier_mode = choice(line, key, value, BarrierMode::parse(value))?,
            "seed_frame" => c.watershed.seed_frame = num(line, key, value)?,
            "with_ss" => c.with_ss = num(line, key, value)?,
            "prop_rotation" => c.proportions.rotation = num(line, key, value)?,
            "prop_flip" => c.proportions.flip = num(line, key, value)?,
            "prop_scale" => c.proportions.scale = num(line, key, value)?,
            "seed" => c.seed = num(line, key, value)?,
            _ => return Err(Error::Parse { line, message: format!("unknown key {key:?}") }),
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn parse_config(text: &str) -> Result<FitConfig> {
    apply_config(text, FitConfig::default())
}

/// Renders every key; `parse_config(&format_config(c)) == c`.
pub fn format_config(c: &FitConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("w_overlap", c.weights.overlap.to_string());
    kv("w_watershed", c.weights.watershed.to_string());
    kv("w_edge", c.weights.edge.to_string());
    kv("w_consistency", c.weights.consistency.to_string());
    kv("iterations", c.iterations.to_string());
    kv("step_size", c.step_size.to_string());
    kv("angle_step_size", c.angle_step_size.to_string());
    kv("adam_beta1", c.adam_beta1.to_string());
    kv("adam_beta2", c.adam_beta2.to_string());
    kv("adam_eps", c.adam_eps.to_string());
    kv("edge_k", c.edge.k.to_string());
    kv("edge_beta", c.edge.beta.to_string());
    kv("edge_sigma", c.edge.sigma_e.to_string());
    kv("init_min", c.init_min.to_string());
    kv("init_max", c.init_max.to_string());
    kv("init_single", c.init_single.to_string());
    kv("orientation_init", c.orientation_init.name().into());
    kv("gradient", c.gradient.name().into());
    kv("fd_step", c.fd_step.to_string());
    kv("gwd_form", c.gwd_form.name().into());
    kv("surface", c.surface.name().into());
    kv("barrier_mode", c.watershed.barrier_mode.name().into());
    kv("seed_frame", c.watershed.seed_frame.to_string());
    kv("with_ss", c.with_ss.to_string());
    kv("prop_rotation", c.proportions.rotation.to_string());
    kv("prop_flip", c.proportions.flip.to_string());
    kv("prop_scale", c.proportions.scale.to_string());
    kv("seed", c.seed.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_defaults_and_overrides() {
        let d = FitConfig::default();
        assert_eq!(parse_config(&format_config(&d)).unwrap(), d);
        let c = parse_config("# tuned\niterations = 50\n w_edge=0.5 \ngradient = finite-difference\nwith_ss = true\n")
            .unwrap();
        assert_eq!(c.iterations, 50);
        assert_eq!(c.weights.edge, 0.5);
        assert_eq!(c.gradient, GradientMode::FiniteDifference);
        assert!(c.with_ss);
        assert_eq!(format_config(&d).lines().count(), CONFIG_KEYS.len());
    }

    #[test]
    fn bad_lines_rejected() {
        assert!(matches!(parse_config("nonsense"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("\nfoo = 1"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("iterations = -3"), Err(Error::Parse { .. })));
        assert!(matches!(parse_config("step_size = 0"), Err(Error::Config(_))));
        assert!(matches!(parse_config("prop_flip = 0.5"), Err(Error::Config(_))));
    }
}
