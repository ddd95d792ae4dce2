//! Checkpoints: a versioned flat-text format holding the trained
//! weights at full precision plus a verbatim echo of the run config.
//! Weights round-trip bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{EmrError, Result};
use crate::model::{ModelParams, Transform};
use crate::FeatureMatrix;

const VERSION_LINE: &str = "emr-gnn checkpoint v1";

/// Write `params` and the config echo to `path`.
pub fn save_checkpoint(path: &Path, params: &ModelParams, config_text: &str) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{VERSION_LINE}");
    let transform = match params.transform() {
        Transform::Relu => "relu",
        Transform::Linear => "linear",
    };
    let _ = writeln!(out, "transform = {transform}");
    let _ = writeln!(out, "shape_w = {} {}", params.w().nrows(), params.w().ncols());
    let _ = writeln!(
        out,
        "shape_theta = {} {}",
        params.theta().nrows(),
        params.theta().ncols()
    );
    write_matrix(&mut out, "w", params.w());
    write_vector(&mut out, "b_w", params.b_w());
    write_matrix(&mut out, "theta", params.theta());
    write_vector(&mut out, "b_theta", params.b_theta());
    let _ = writeln!(out, "[config]");
    out.push_str(config_text);
    std::fs::write(path, out).map_err(|source| EmrError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_matrix(out: &mut String, key: &str, m: &FeatureMatrix) {
    // Row-major so the text reads like the matrix.
    let _ = write!(out, "{key} =");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = write!(out, " {:.17e}", m[(i, j)]);
        }
    }
    out.push('\n');
}

fn write_vector(out: &mut String, key: &str, v: &DVector<f64>) {
    let _ = write!(out, "{key} =");
    for value in v.iter() {
        let _ = write!(out, " {value:.17e}");
    }
    out.push('\n');
}

/// Read a checkpoint back: the weights and the config echo.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String)> {
    let text = std::fs::read_to_string(path).map_err(|source| EmrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let parse = |line: usize, msg: String| EmrError::Parse {
        path: path.display().to_string(),
        line,
        col: 1,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, version) = lines
        .next()
        .ok_or_else(|| parse(1, "empty checkpoint file".to_string()))?;
    if version.trim() != VERSION_LINE {
        return Err(parse(
            1,
            format!("unsupported checkpoint header `{}`, expected `{VERSION_LINE}`", version.trim()),
        ));
    }

    let mut transform = None;
    let mut shape_w = None;
    let mut shape_theta = None;
    let mut w = None;
    let mut b_w = None;
    let mut theta = None;
    let mut b_theta = None;
    let mut config_text = String::new();
    let mut in_config = false;
    for (lineno, raw) in lines {
        let lineno = lineno + 1;
        if in_config {
            config_text.push_str(raw);
            config_text.push('\n');
            continue;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "[config]" {
            in_config = true;
            continue;
        }
        let eq = line
            .find('=')
            .ok_or_else(|| parse(lineno, format!("expected `key = value`, got `{line}`")))?;
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        match key {
            "transform" => {
                transform = Some(match value {
                    "relu" => Transform::Relu,
                    "linear" => Transform::Linear,
                    other => return Err(parse(lineno, format!("unknown transform `{other}`"))),
                })
            }
            "shape_w" => shape_w = Some(parse_shape(value).map_err(|m| parse(lineno, m))?),
            "shape_theta" => shape_theta = Some(parse_shape(value).map_err(|m| parse(lineno, m))?),
            "w" => w = Some(parse_floats(value).map_err(|m| parse(lineno, m))?),
            "b_w" => b_w = Some(parse_floats(value).map_err(|m| parse(lineno, m))?),
            "theta" => theta = Some(parse_floats(value).map_err(|m| parse(lineno, m))?),
            "b_theta" => b_theta = Some(parse_floats(value).map_err(|m| parse(lineno, m))?),
            other => return Err(parse(lineno, format!("unknown checkpoint key `{other}`"))),
        }
    }

    let missing = |what: &str| {
        EmrError::invalid(format!("checkpoint {} missing `{what}`", path.display()))
    };
    let transform = transform.ok_or_else(|| missing("transform"))?;
    let (w_rows, w_cols) = shape_w.ok_or_else(|| missing("shape_w"))?;
    let (t_rows, t_cols) = shape_theta.ok_or_else(|| missing("shape_theta"))?;
    let w = w.ok_or_else(|| missing("w"))?;
    let b_w = b_w.ok_or_else(|| missing("b_w"))?;
    let theta = theta.ok_or_else(|| missing("theta"))?;
    let b_theta = b_theta.ok_or_else(|| missing("b_theta"))?;

    let check = |what: &str, got: usize, want: usize| -> Result<()> {
        if got != want {
            return Err(EmrError::invalid(format!(
                "checkpoint {}: `{what}` has {got} values, expected {want}",
                path.display()
            )));
        }
        Ok(())
    };
    check("w", w.len(), w_rows * w_cols)?;
    check("b_w", b_w.len(), w_cols)?;
    check("theta", theta.len(), t_rows * t_cols)?;
    check("b_theta", b_theta.len(), t_cols)?;

    let w = FeatureMatrix::from_fn(w_rows, w_cols, |i, j| w[i * w_cols + j]);
    let theta = FeatureMatrix::from_fn(t_rows, t_cols, |i, j| theta[i * t_cols + j]);
    let params = ModelParams::from_parts(
        w,
        DVector::from_vec(b_w),
        theta,
        DVector::from_vec(b_theta),
        transform,
    )?;
    Ok((params, config_text))
}

fn parse_shape(value: &str) -> std::result::Result<(usize, usize), String> {
    let mut parts = value.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(r), Some(c), None) => {
            let rows = r.parse().map_err(|_| format!("invalid shape `{value}`"))?;
            let cols = c.parse().map_err(|_| format!("invalid shape `{value}`"))?;
            Ok((rows, cols))
        }
        _ => Err(format!("invalid shape `{value}`")),
    }
}

fn parse_floats(value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| format!("invalid number `{tok}`")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn some_params() -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        ModelParams::init(5, 4, 3, Transform::Relu, &mut rng).unwrap()
    }

    #[test]
    fn checkpoint_round_trips_bit_for_bit() {
        let params = some_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, "[data]\nsbm.n = 9\n").unwrap();
        let (loaded, config) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(config, "[data]\nsbm.n = 9\n");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, "emr-gnn checkpoint v9\n").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("v9"), "{err}");
    }

    #[test]
    fn truncated_checkpoint_names_the_missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let text = format!("{VERSION_LINE}\ntransform = relu\nshape_w = 2 2\n");
        std::fs::write(&path, text).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("shape_theta"), "{err}");
    }

    #[test]
    fn value_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let text = format!(
            "{VERSION_LINE}\ntransform = relu\nshape_w = 2 2\nshape_theta = 2 2\n\
             w = 1.0 2.0 3.0\nb_w = 0.0 0.0\ntheta = 1.0 0.0 0.0 1.0\nb_theta = 0.0 0.0\n"
        );
        std::fs::write(&path, text).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("`w` has 3 values, expected 4"), "{err}");
    }
}
