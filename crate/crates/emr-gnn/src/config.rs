//! Run configuration: a flat, sectioned `key = value` text format plus
//! `--set section.key=value` overrides. Every training and propagation
//! hyperparameter is addressable; [`RunConfig::render`] emits the
//! canonical form that reports and checkpoints echo.

use std::path::{Path, PathBuf};

use crate::coefficients::{CoefficientVector, RclSettings};
use crate::data::{RelationProbs, SbmSpec};
use crate::enmp::{CoefficientMode, EnmpHyper};
use crate::error::{EmrError, Result};
use crate::model::{DropoutPosition, ModelSettings, Propagation, TrainConfig, Transform};

/// Where the dataset comes from: a manifest on disk or an inline block
/// model specification.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Sbm(SbmSpec),
}

/// Which propagation the trained model uses.
#[derive(Debug, Clone, PartialEq)]
pub enum PropagationKind {
    /// Ensemble message passing (the full model).
    Enmp,
    /// Plain stacked averaging over all relations, same depth.
    Stack,
    /// Plain stacking over one relation, selected by name or index.
    Single(String),
}

/// Feature transform choice; `Auto` resolves to a rectifier for feature
/// datasets and a linear map for featureless ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformChoice {
    Auto,
    Relu,
    Linear,
}

impl TransformChoice {
    pub fn resolve(self, featureless: bool) -> Transform {
        match self {
            TransformChoice::Auto => {
                if featureless {
                    Transform::Linear
                } else {
                    Transform::Relu
                }
            }
            TransformChoice::Relu => Transform::Relu,
            TransformChoice::Linear => Transform::Linear,
        }
    }
}

/// The complete, addressable configuration of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub lambda1: f64,
    pub lambda2: f64,
    pub layers: usize,
    pub coefficient_mode: CoefficientMode,
    pub rcl: RclSettings,
    pub propagation: PropagationKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub early_stop_patience: usize,
    pub dropout: f64,
    pub dropout_position: DropoutPosition,
    pub transform: TransformChoice,
    /// Delivery destinations; not part of [`RunConfig::render`], so they
    /// never enter reports or checkpoints.
    pub report_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// True once any `sbm.relation` assignment replaced the stock list.
    relations_replaced: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::Sbm(SbmSpec::one_informative_two_noise(0)),
            lambda1: 2.0,
            lambda2: 1000.0,
            layers: 8,
            coefficient_mode: CoefficientMode::Learned,
            rcl: RclSettings::default(),
            propagation: PropagationKind::Enmp,
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            hidden_dim: 16,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 0,
            dropout: 0.5,
            dropout_position: DropoutPosition::Transform,
            transform: TransformChoice::Auto,
            report_path: None,
            checkpoint_path: None,
            relations_replaced: false,
        }
    }
}

impl RunConfig {
    /// Defaults overridden by assignments from a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| EmrError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = RunConfig::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    /// Apply a whole config file's worth of assignments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let eq = line.find('=').ok_or_else(|| EmrError::Parse {
                path: origin.to_string(),
                line: lineno,
                col: 1,
                msg: "expected `key = value` or `[section]`".to_string(),
            })?;
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if section.is_empty() {
                return Err(EmrError::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    col: 1,
                    msg: format!("key `{key}` before any `[section]` header"),
                });
            }
            self.apply(&section, key, value).map_err(|e| match e {
                EmrError::InvalidInput(msg) => EmrError::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    col: 1,
                    msg,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Apply one `section.key=value` override (the `--set` form).
    pub fn apply_set(&mut self, spec: &str) -> Result<()> {
        let eq = spec.find('=').ok_or_else(|| {
            EmrError::invalid(format!("--set expects `section.key=value`, got `{spec}`"))
        })?;
        let path = spec[..eq].trim();
        let value = spec[eq + 1..].trim();
        let dot = path.find('.').ok_or_else(|| {
            EmrError::invalid(format!("--set expects `section.key=value`, got `{spec}`"))
        })?;
        let (section, key) = (&path[..dot], &path[dot + 1..]);
        self.apply(section, key, value)
            .map_err(|e| EmrError::invalid(format!("--set {spec}: {e}")))
    }

    /// Apply one assignment. Sections: `data`, `hyper`, `train`, `output`.
    pub fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "data" => self.apply_data(key, value),
            "hyper" => self.apply_hyper(key, value),
            "train" => self.apply_train(key, value),
            "output" => self.apply_output(key, value),
            other => Err(EmrError::invalid(format!("unknown config section `[{other}]`"))),
        }
    }

    fn sbm_mut(&mut self, key: &str) -> Result<&mut SbmSpec> {
        match &mut self.data {
            DataSource::Sbm(spec) => Ok(spec),
            DataSource::Manifest(path) => Err(EmrError::invalid(format!(
                "`{key}` needs a block-model data source, but data.manifest = {} is set",
                path.display()
            ))),
        }
    }

    fn apply_data(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "manifest" => {
                self.data = DataSource::Manifest(PathBuf::from(value));
                Ok(())
            }
            "sbm.n" => {
                self.sbm_mut(key)?.n = parse_num(key, value)?;
                Ok(())
            }
            "sbm.classes" => {
                self.sbm_mut(key)?.classes = parse_num(key, value)?;
                Ok(())
            }
            "sbm.feature_dim" => {
                self.sbm_mut(key)?.feature_dim = parse_num(key, value)?;
                Ok(())
            }
            "sbm.separation" => {
                self.sbm_mut(key)?.separation = parse_num(key, value)?;
                Ok(())
            }
            "sbm.seed" => {
                self.sbm_mut(key)?.seed = parse_num(key, value)?;
                Ok(())
            }
            "sbm.relation" => {
                let (p_in, p_out) = parse_pair(key, value)?;
                let replaced = self.relations_replaced;
                let spec = self.sbm_mut(key)?;
                if !replaced {
                    spec.relations.clear();
                }
                spec.relations.push(RelationProbs { p_in, p_out });
                self.relations_replaced = true;
                Ok(())
            }
            other => Err(EmrError::invalid(format!("unknown key `data.{other}`"))),
        }
    }

    fn apply_hyper(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda1" => self.lambda1 = parse_num(key, value)?,
            "lambda2" => self.lambda2 = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "coefficient_mode" => self.coefficient_mode = parse_mode(value)?,
            "rcl_max_iters" => self.rcl.max_iters = parse_num(key, value)?,
            "rcl_tol" => self.rcl.tol = parse_num(key, value)?,
            "rcl_warm_start" => self.rcl.warm_start = parse_bool(key, value)?,
            other => return Err(EmrError::invalid(format!("unknown key `hyper.{other}`"))),
        }
        Ok(())
    }

    fn apply_train(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam_eps = parse_num(key, value)?,
            "early_stop_patience" => self.early_stop_patience = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "dropout_position" => {
                self.dropout_position = match value {
                    "transform" => DropoutPosition::Transform,
                    "after_propagation" => DropoutPosition::AfterPropagation,
                    other => {
                        return Err(EmrError::invalid(format!(
                            "dropout_position must be `transform` or `after_propagation`, got `{other}`"
                        )))
                    }
                }
            }
            "propagation" => {
                self.propagation = match value {
                    "enmp" => PropagationKind::Enmp,
                    "stack" => PropagationKind::Stack,
                    other => match other.strip_prefix("single:") {
                        Some(rel) if !rel.trim().is_empty() => {
                            PropagationKind::Single(rel.trim().to_string())
                        }
                        _ => {
                            return Err(EmrError::invalid(format!(
                                "propagation must be `enmp`, `stack`, or `single:<relation>`, got `{other}`"
                            )))
                        }
                    },
                }
            }
            "transform" => {
                self.transform = match value {
                    "auto" => TransformChoice::Auto,
                    "relu" => TransformChoice::Relu,
                    "linear" => TransformChoice::Linear,
                    other => {
                        return Err(EmrError::invalid(format!(
                            "transform must be `auto`, `relu`, or `linear`, got `{other}`"
                        )))
                    }
                }
            }
            other => return Err(EmrError::invalid(format!("unknown key `train.{other}`"))),
        }
        Ok(())
    }

    fn apply_output(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "report" => self.report_path = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint_path = Some(PathBuf::from(value)),
            other => return Err(EmrError::invalid(format!("unknown key `output.{other}`"))),
        }
        Ok(())
    }

    /// The propagation hyperparameters this config describes.
    pub fn enmp_hyper(&self) -> EnmpHyper {
        EnmpHyper {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            k: self.layers,
            rcl: self.rcl.clone(),
            coefficient_mode: self.coefficient_mode.clone(),
        }
    }

    /// Materialize the model settings. `Single` is resolved by the
    /// caller (it filters the relation set), so it maps to a stack here.
    pub fn model_settings(&self) -> ModelSettings {
        let propagation = match &self.propagation {
            PropagationKind::Enmp => Propagation::Enmp(self.enmp_hyper()),
            PropagationKind::Stack | PropagationKind::Single(_) => {
                Propagation::GcnStack { k: self.layers }
            }
        };
        ModelSettings {
            propagation,
            dropout_rate: self.dropout,
            dropout_position: self.dropout_position,
        }
    }

    /// Materialize the training configuration for a dataset.
    pub fn train_config(&self, featureless: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            early_stop_patience: self.early_stop_patience,
            transform: self.transform.resolve(featureless),
            settings: self.model_settings(),
        }
    }

    /// Canonical serialization: stable section and key order, every
    /// run-semantic field present. Parsing the result reproduces the
    /// config; output paths are delivery knobs and stay out.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[data]\n");
        match &self.data {
            DataSource::Manifest(path) => {
                out.push_str(&format!("manifest = {}\n", path.display()));
            }
            DataSource::Sbm(spec) => {
                out.push_str(&format!("sbm.n = {}\n", spec.n));
                out.push_str(&format!("sbm.classes = {}\n", spec.classes));
                out.push_str(&format!("sbm.feature_dim = {}\n", spec.feature_dim));
                out.push_str(&format!("sbm.separation = {}\n", spec.separation));
                out.push_str(&format!("sbm.seed = {}\n", spec.seed));
                for probs in &spec.relations {
                    out.push_str(&format!("sbm.relation = {}, {}\n", probs.p_in, probs.p_out));
                }
            }
        }
        out.push_str("\n[hyper]\n");
        out.push_str(&format!("lambda1 = {}\n", self.lambda1));
        out.push_str(&format!("lambda2 = {}\n", self.lambda2));
        out.push_str(&format!("layers = {}\n", self.layers));
        let mode = match &self.coefficient_mode {
            CoefficientMode::Learned => "learned".to_string(),
            CoefficientMode::Uniform => "uniform".to_string(),
            CoefficientMode::Fixed(mu) => {
                let weights: Vec<String> = mu.as_slice().iter().map(|w| w.to_string()).collect();
                format!("fixed: {}", weights.join(", "))
            }
        };
        out.push_str(&format!("coefficient_mode = {mode}\n"));
        out.push_str(&format!("rcl_max_iters = {}\n", self.rcl.max_iters));
        out.push_str(&format!("rcl_tol = {}\n", self.rcl.tol));
        out.push_str(&format!("rcl_warm_start = {}\n", self.rcl.warm_start));
        out.push_str("\n[train]\n");
        out.push_str(&format!("epochs = {}\n", self.epochs));
        out.push_str(&format!("learning_rate = {}\n", self.learning_rate));
        out.push_str(&format!("weight_decay = {}\n", self.weight_decay));
        out.push_str(&format!("hidden_dim = {}\n", self.hidden_dim));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("adam_beta1 = {}\n", self.adam_beta1));
        out.push_str(&format!("adam_beta2 = {}\n", self.adam_beta2));
        out.push_str(&format!("adam_eps = {}\n", self.adam_eps));
        out.push_str(&format!("early_stop_patience = {}\n", self.early_stop_patience));
        out.push_str(&format!("dropout = {}\n", self.dropout));
        let position = match self.dropout_position {
            DropoutPosition::Transform => "transform",
            DropoutPosition::AfterPropagation => "after_propagation",
        };
        out.push_str(&format!("dropout_position = {position}\n"));
        let propagation = match &self.propagation {
            PropagationKind::Enmp => "enmp".to_string(),
            PropagationKind::Stack => "stack".to_string(),
            PropagationKind::Single(rel) => format!("single:{rel}"),
        };
        out.push_str(&format!("propagation = {propagation}\n"));
        let transform = match self.transform {
            TransformChoice::Auto => "auto",
            TransformChoice::Relu => "relu",
            TransformChoice::Linear => "linear",
        };
        out.push_str(&format!("transform = {transform}\n"));
        out
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| EmrError::invalid(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(EmrError::invalid(format!(
            "invalid boolean `{other}` for `{key}` (use true/false)"
        ))),
    }
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let mut parts = value.split(',');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) => Ok((
            parse_num(key, a.trim())?,
            parse_num(key, b.trim())?,
        )),
        _ => Err(EmrError::invalid(format!(
            "`{key}` expects `p_in, p_out`, got `{value}`"
        ))),
    }
}

fn parse_mode(value: &str) -> Result<CoefficientMode> {
    match value {
        "learned" => Ok(CoefficientMode::Learned),
        "uniform" => Ok(CoefficientMode::Uniform),
        other => match other.strip_prefix("fixed:") {
            Some(list) => {
                let weights: Vec<f64> = list
                    .split(',')
                    .map(|w| parse_num("coefficient_mode", w.trim()))
                    .collect::<Result<_>>()?;
                Ok(CoefficientMode::Fixed(CoefficientVector::new(weights)?))
            }
            None => Err(EmrError::invalid(format!(
                "coefficient_mode must be `learned`, `uniform`, or `fixed: w, ...`, got `{other}`"
            ))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_render_round_trips() {
        let config = RunConfig::default();
        let text = config.render();
        let mut parsed = RunConfig::default();
        parsed.apply_text(&text, "test").unwrap();
        // The default relation list is re-applied, flipping the replaced
        // flag; everything observable must match.
        assert_eq!(parsed.render(), text);
        assert_eq!(parsed.data, config.data);
    }

    #[test]
    fn set_overrides_reach_every_section() {
        let mut config = RunConfig::default();
        config.apply_set("hyper.lambda1=0.5").unwrap();
        config.apply_set("hyper.coefficient_mode=fixed: 0.25, 0.75").unwrap();
        config.apply_set("train.epochs=7").unwrap();
        config.apply_set("train.propagation=single:rel1").unwrap();
        config.apply_set("data.sbm.seed=42").unwrap();
        config.apply_set("output.report=out.txt").unwrap();
        assert_eq!(config.lambda1, 0.5);
        assert_eq!(
            config.coefficient_mode,
            CoefficientMode::Fixed(CoefficientVector::new(vec![0.25, 0.75]).unwrap())
        );
        assert_eq!(config.epochs, 7);
        assert_eq!(config.propagation, PropagationKind::Single("rel1".to_string()));
        match &config.data {
            DataSource::Sbm(spec) => assert_eq!(spec.seed, 42),
            _ => panic!("expected sbm source"),
        }
        assert_eq!(config.report_path, Some(PathBuf::from("out.txt")));
    }

    #[test]
    fn first_relation_assignment_replaces_the_stock_list() {
        let mut config = RunConfig::default();
        config.apply_set("data.sbm.relation=0.2, 0.01").unwrap();
        config.apply_set("data.sbm.relation=0.05, 0.05").unwrap();
        match &config.data {
            DataSource::Sbm(spec) => {
                assert_eq!(
                    spec.relations,
                    vec![
                        RelationProbs { p_in: 0.2, p_out: 0.01 },
                        RelationProbs { p_in: 0.05, p_out: 0.05 },
                    ]
                );
            }
            _ => panic!("expected sbm source"),
        }
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let mut config = RunConfig::default();
        let err = config.apply_set("train.lr=0.1").unwrap_err();
        assert!(err.to_string().contains("train.lr"), "{err}");
        let err = config.apply_set("nope.epochs=1").unwrap_err();
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn file_errors_carry_line_numbers() {
        let mut config = RunConfig::default();
        let err = config
            .apply_text("[train]\nepochs = 5\nepochs = banana\n", "demo.cfg")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("demo.cfg:3:"), "{msg}");
    }

    #[test]
    fn sbm_keys_conflict_with_manifest_source() {
        let mut config = RunConfig::default();
        config.apply_set("data.manifest=somewhere/manifest.txt").unwrap();
        let err = config.apply_set("data.sbm.n=10").unwrap_err();
        assert!(err.to_string().contains("manifest"), "{err}");
    }

    #[test]
    fn train_config_resolves_transform_for_featureless_data() {
        let config = RunConfig::default();
        assert_eq!(config.train_config(false).transform, Transform::Relu);
        assert_eq!(config.train_config(true).transform, Transform::Linear);
        let tc = config.train_config(false);
        match tc.settings.propagation {
            Propagation::Enmp(h) => {
                assert_eq!(h.lambda1, 2.0);
                assert_eq!(h.k, 8);
            }
            _ => panic!("expected ensemble propagation"),
        }
    }
}
