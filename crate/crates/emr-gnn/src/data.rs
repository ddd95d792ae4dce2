//! Dataset handling: an in-memory dataset type, a deterministic
//! multi-relational stochastic block model generator, and plain-text
//! on-disk formats (manifest, edge lists, features, labels, splits) with
//! line/column error reporting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{EmrError, Result};
use crate::graph::{build_named_graph, RelationalGraph};
use crate::FeatureMatrix;

/// Train/validation/test node index sets. Indices are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Every index in range, no duplicates within a split, and the three
    /// splits pairwise disjoint.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![0u8; n];
        for (split, name) in [(&self.train, "train"), (&self.val, "val"), (&self.test, "test")] {
            for &i in split {
                if i >= n {
                    return Err(EmrError::invalid(format!(
                        "{name} split index {i} out of range for {n} nodes"
                    )));
                }
                if seen[i] != 0 {
                    return Err(EmrError::invalid(format!(
                        "node {i} appears in more than one split (or twice in {name})"
                    )));
                }
                seen[i] = 1;
            }
        }
        Ok(())
    }
}

/// A loaded or generated dataset. `featureless` marks identity features
/// synthesized for datasets that ship no feature table; callers switch
/// the feature transform to linear for those.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: RelationalGraph,
    pub features: FeatureMatrix,
    pub labels: Vec<i64>,
    pub splits: Splits,
    pub featureless: bool,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Number of classes: max label + 1.
    pub fn classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0)) as usize
    }
}

/// Per-relation edge probabilities of the block model: within-class
/// `p_in`, across-class `p_out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationProbs {
    pub p_in: f64,
    pub p_out: f64,
}

/// Multi-relational stochastic block model specification. Every random
/// choice (labels, edges, features, splits) is a pure function of `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    pub n: usize,
    pub classes: usize,
    pub relations: Vec<RelationProbs>,
    pub feature_dim: usize,
    /// Class-mean separation: class `c` has mean `separation` in feature
    /// coordinate `c mod feature_dim`, zero elsewhere; unit noise on top.
    pub separation: f64,
    pub seed: u64,
}

impl SbmSpec {
    /// The stock benchmark: one strongly informative relation plus two
    /// label-independent sparse noise relations, n=600, three classes,
    /// eight feature dimensions at separation 3.
    pub fn one_informative_two_noise(seed: u64) -> Self {
        SbmSpec {
            n: 600,
            classes: 3,
            relations: vec![
                RelationProbs { p_in: 0.05, p_out: 0.002 },
                RelationProbs { p_in: 0.0067, p_out: 0.0067 },
                RelationProbs { p_in: 0.0067, p_out: 0.0067 },
            ],
            feature_dim: 8,
            separation: 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(EmrError::invalid("block model needs at least 2 classes"));
        }
        if self.n < self.classes {
            return Err(EmrError::invalid(format!(
                "{} nodes cannot cover {} classes",
                self.n, self.classes
            )));
        }
        if self.relations.is_empty() {
            return Err(EmrError::invalid("block model needs at least one relation"));
        }
        for (r, probs) in self.relations.iter().enumerate() {
            let ok = (0.0..=1.0).contains(&probs.p_out)
                && probs.p_out <= probs.p_in
                && probs.p_in <= 1.0;
            if !ok {
                return Err(EmrError::invalid(format!(
                    "relation {r}: need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
                    probs.p_in, probs.p_out
                )));
            }
        }
        if self.feature_dim == 0 {
            return Err(EmrError::invalid("feature dimension must be positive"));
        }
        if !self.separation.is_finite() {
            return Err(EmrError::invalid("separation must be finite"));
        }
        Ok(())
    }
}

/// Sample a dataset from the block model. Labels are balanced
/// (`n mod classes` slack goes to the lowest labels), each relation is an
/// independent undirected Bernoulli graph over node pairs, features are
/// class means plus unit Gaussian noise, and the default splits are a
/// stratified 10/10/80 partition.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;

    let mut labels: Vec<i64> = (0..n).map(|i| (i % spec.classes) as i64).collect();
    labels.shuffle(&mut rng);

    let mut edge_lists = Vec::with_capacity(spec.relations.len());
    for probs in &spec.relations {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if labels[i] == labels[j] { probs.p_in } else { probs.p_out };
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        edge_lists.push(edges);
    }
    let names = (0..spec.relations.len()).map(|r| format!("rel{r}")).collect();
    let graph = build_named_graph(&edge_lists, n, names)?;

    let noise = Normal::new(0.0, 1.0).map_err(|e| EmrError::invalid(e.to_string()))?;
    let mut features = FeatureMatrix::zeros(n, spec.feature_dim);
    for i in 0..n {
        let mean_coord = (labels[i] as usize) % spec.feature_dim;
        for j in 0..spec.feature_dim {
            let mean = if j == mean_coord { spec.separation } else { 0.0 };
            features[(i, j)] = mean + noise.sample(&mut rng);
        }
    }

    let splits = stratified_splits(&labels, spec.classes, &mut rng);
    Ok(Dataset {
        name: format!("sbm-seed{}", spec.seed),
        graph,
        features,
        labels,
        splits,
        featureless: false,
    })
}

/// 10/10/80 train/val/test per class, shuffled then sorted ascending.
fn stratified_splits(labels: &[i64], classes: usize, rng: &mut ChaCha8Rng) -> Splits {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == c as i64)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(rng);
        let k = (0.1 * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        val.extend_from_slice(&idx[k..2 * k]);
        test.extend_from_slice(&idx[2 * k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Splits { train, val, test }
}

fn parse_err(path: &Path, line: usize, col: usize, msg: impl Into<String>) -> EmrError {
    EmrError::Parse {
        path: path.display().to_string(),
        line,
        col,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| EmrError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| EmrError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// 1-based column of a token inside a line.
fn col_of(line: &str, token_start: usize) -> usize {
    line[..token_start].chars().count() + 1
}

struct ManifestFields {
    name: Option<String>,
    nodes: Option<usize>,
    features: Option<PathBuf>,
    labels: Option<PathBuf>,
    splits: Option<PathBuf>,
    relations: Vec<(String, PathBuf)>,
}

/// Parse a dataset manifest: `key = value` lines, `#` comments, with
/// ordered repeated `relation = <name>, <path>` entries. Paths are
/// relative to the manifest's directory.
fn parse_manifest(path: &Path, text: &str) -> Result<ManifestFields> {
    let mut fields = ManifestFields {
        name: None,
        nodes: None,
        features: None,
        labels: None,
        splits: None,
        relations: Vec::new(),
    };
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let eq = raw
            .find('=')
            .ok_or_else(|| parse_err(path, lineno, 1, "expected `key = value`"))?;
        let key = raw[..eq].trim();
        let value = raw[eq + 1..].trim();
        let value_col = col_of(raw, eq + 1 + raw[eq + 1..].len() - raw[eq + 1..].trim_start().len());
        if value.is_empty() {
            return Err(parse_err(path, lineno, value_col, format!("empty value for `{key}`")));
        }
        match key {
            "name" => fields.name = Some(value.to_string()),
            "nodes" => {
                let n = value.parse::<usize>().map_err(|_| {
                    parse_err(path, lineno, value_col, format!("invalid node count `{value}`"))
                })?;
                fields.nodes = Some(n);
            }
            "features" => fields.features = Some(PathBuf::from(value)),
            "labels" => fields.labels = Some(PathBuf::from(value)),
            "splits" => fields.splits = Some(PathBuf::from(value)),
            "relation" => {
                let comma = value.find(',').ok_or_else(|| {
                    parse_err(path, lineno, value_col, "expected `relation = <name>, <path>`")
                })?;
                let rel_name = value[..comma].trim();
                let rel_path = value[comma + 1..].trim();
                if rel_name.is_empty() || rel_path.is_empty() {
                    return Err(parse_err(
                        path,
                        lineno,
                        value_col,
                        "expected `relation = <name>, <path>`",
                    ));
                }
                fields
                    .relations
                    .push((rel_name.to_string(), PathBuf::from(rel_path)));
            }
            other => {
                return Err(parse_err(
                    path,
                    lineno,
                    1,
                    format!("unknown manifest key `{other}`"),
                ))
            }
        }
    }
    Ok(fields)
}

/// One undirected edge per line (`u v`), `#` comments and blank lines
/// skipped. Endpoints must be in `0..n`.
fn parse_edge_file(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = raw.split_whitespace();
        let (u_tok, v_tok) = match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(u), Some(v), None) => (u, v),
            _ => return Err(parse_err(path, lineno, 1, "expected `<u> <v>`")),
        };
        let endpoint = |tok: &str| -> Result<usize> {
            let col = col_of(raw, raw.find(tok).unwrap_or(0));
            let v = tok
                .parse::<usize>()
                .map_err(|_| parse_err(path, lineno, col, format!("invalid node id `{tok}`")))?;
            if v >= n {
                return Err(parse_err(
                    path,
                    lineno,
                    col,
                    format!("node id {v} out of range for {n} nodes"),
                ));
            }
            Ok(v)
        };
        edges.push((endpoint(u_tok)?, endpoint(v_tok)?));
    }
    Ok(edges)
}

/// One comma-separated row of floats per node, exactly `n` rows with a
/// consistent column count.
fn parse_features_file(path: &Path, n: usize) -> Result<FeatureMatrix> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        let mut col = 1usize;
        for field in raw.split(',') {
            let v = field.trim().parse::<f64>().map_err(|_| {
                parse_err(path, lineno, col, format!("invalid number `{}`", field.trim()))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, col, "feature values must be finite"));
            }
            row.push(v);
            col += field.chars().count() + 1;
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(parse_err(
                    path,
                    lineno,
                    1,
                    format!("row has {} values, expected {w}", row.len()),
                ));
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(parse_err(
            path,
            text.lines().count() + 1,
            1,
            format!("{} feature rows for {n} nodes", rows.len()),
        ));
    }
    let width = width.unwrap_or(0);
    Ok(FeatureMatrix::from_fn(n, width, |i, j| rows[i][j]))
}

/// `node_id,label` per line; `-1` marks an unlabeled node. Nodes absent
/// from the file stay unlabeled; duplicates are rejected.
fn parse_labels_file(path: &Path, n: usize) -> Result<Vec<i64>> {
    let text = read_text(path)?;
    let mut labels = vec![-1i64; n];
    let mut assigned = vec![false; n];
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let comma = raw
            .find(',')
            .ok_or_else(|| parse_err(path, lineno, 1, "expected `<node_id>,<label>`"))?;
        let id_tok = raw[..comma].trim();
        let label_tok = raw[comma + 1..].trim();
        let id = id_tok
            .parse::<usize>()
            .map_err(|_| parse_err(path, lineno, 1, format!("invalid node id `{id_tok}`")))?;
        if id >= n {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("node id {id} out of range for {n} nodes"),
            ));
        }
        let label_col = col_of(raw, comma + 1);
        let label = label_tok.parse::<i64>().map_err(|_| {
            parse_err(path, lineno, label_col, format!("invalid label `{label_tok}`"))
        })?;
        if label < -1 {
            return Err(parse_err(
                path,
                lineno,
                label_col,
                format!("label {label} out of range; -1 marks unlabeled"),
            ));
        }
        if assigned[id] {
            return Err(parse_err(path, lineno, 1, format!("duplicate label for node {id}")));
        }
        assigned[id] = true;
        labels[id] = label;
    }
    Ok(labels)
}

/// Bracketed sections `[train]`, `[val]`, `[test]`, one node index per
/// line. All three sections must appear exactly once.
fn parse_splits_file(path: &Path, n: usize) -> Result<Splits> {
    let text = read_text(path)?;
    let mut sections: [Option<Vec<usize>>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(section) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let slot = match section {
                "train" => 0,
                "val" => 1,
                "test" => 2,
                other => {
                    return Err(parse_err(
                        path,
                        lineno,
                        1,
                        format!("unknown split section `[{other}]`"),
                    ))
                }
            };
            if sections[slot].is_some() {
                return Err(parse_err(path, lineno, 1, format!("duplicate section `[{section}]`")));
            }
            sections[slot] = Some(Vec::new());
            current = Some(slot);
            continue;
        }
        let slot = current
            .ok_or_else(|| parse_err(path, lineno, 1, "index before any `[section]` header"))?;
        let idx = line
            .parse::<usize>()
            .map_err(|_| parse_err(path, lineno, 1, format!("invalid node index `{line}`")))?;
        if idx >= n {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("node index {idx} out of range for {n} nodes"),
            ));
        }
        sections[slot].as_mut().expect("section started").push(idx);
    }
    let [train, val, test] = sections;
    let missing = |s: &str| EmrError::invalid(format!("splits file {} has no [{s}] section", path.display()));
    Ok(Splits {
        train: train.ok_or_else(|| missing("train"))?,
        val: val.ok_or_else(|| missing("val"))?,
        test: test.ok_or_else(|| missing("test"))?,
    })
}

/// Load a dataset from its manifest. Datasets without a `features` entry
/// get identity features and are flagged featureless. Splits must be
/// disjoint and point only at labeled nodes.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = read_text(manifest_path)?;
    let fields = parse_manifest(manifest_path, &text)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let n = fields.nodes.ok_or_else(|| {
        EmrError::invalid(format!("manifest {} missing `nodes`", manifest_path.display()))
    })?;
    if n == 0 {
        return Err(EmrError::invalid("manifest declares zero nodes"));
    }
    if fields.relations.is_empty() {
        return Err(EmrError::invalid(format!(
            "manifest {} declares no relations",
            manifest_path.display()
        )));
    }
    let labels_rel = fields.labels.ok_or_else(|| {
        EmrError::invalid(format!("manifest {} missing `labels`", manifest_path.display()))
    })?;
    let splits_rel = fields.splits.ok_or_else(|| {
        EmrError::invalid(format!("manifest {} missing `splits`", manifest_path.display()))
    })?;

    let mut edge_lists = Vec::with_capacity(fields.relations.len());
    let mut names = Vec::with_capacity(fields.relations.len());
    for (rel_name, rel_path) in &fields.relations {
        edge_lists.push(parse_edge_file(&dir.join(rel_path), n)?);
        names.push(rel_name.clone());
    }
    let graph = build_named_graph(&edge_lists, n, names)?;

    let (features, featureless) = match &fields.features {
        Some(feat_path) => (parse_features_file(&dir.join(feat_path), n)?, false),
        None => (FeatureMatrix::identity(n, n), true),
    };
    let labels = parse_labels_file(&dir.join(&labels_rel), n)?;
    let splits = parse_splits_file(&dir.join(&splits_rel), n)?;
    splits.validate(n)?;
    for (split, split_name) in [
        (&splits.train, "train"),
        (&splits.val, "val"),
        (&splits.test, "test"),
    ] {
        if let Some(&i) = split.iter().find(|&&i| labels[i] < 0) {
            return Err(EmrError::invalid(format!(
                "{split_name} split includes unlabeled node {i}"
            )));
        }
    }

    let name = fields.name.unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });
    Ok(Dataset {
        name,
        graph,
        features,
        labels,
        splits,
        featureless,
    })
}

/// Write a dataset into `dir` (created if needed) and return the path of
/// the manifest. Floats round-trip exactly; loading the result
/// reconstructs the dataset bit for bit.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| EmrError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let n = dataset.n();

    let mut manifest = String::new();
    let _ = writeln!(manifest, "name = {}", dataset.name);
    let _ = writeln!(manifest, "nodes = {n}");
    if !dataset.featureless {
        let _ = writeln!(manifest, "features = features.csv");
    }
    let _ = writeln!(manifest, "labels = labels.csv");
    let _ = writeln!(manifest, "splits = splits.txt");
    for (r, rel_name) in dataset.graph.relation_names().iter().enumerate() {
        let _ = writeln!(manifest, "relation = {rel_name}, relation_{r}.txt");
    }
    write_text(&dir.join("manifest.txt"), &manifest)?;

    for (r, rel) in dataset.graph.relations().iter().enumerate() {
        let mut text = String::new();
        for i in 0..n {
            for (j, _) in rel.row(i) {
                if i < j {
                    let _ = writeln!(text, "{i} {j}");
                }
            }
        }
        write_text(&dir.join(format!("relation_{r}.txt")), &text)?;
    }

    if !dataset.featureless {
        let mut text = String::new();
        for i in 0..n {
            for j in 0..dataset.features.ncols() {
                if j > 0 {
                    text.push(',');
                }
                let _ = write!(text, "{:.17e}", dataset.features[(i, j)]);
            }
            text.push('\n');
        }
        write_text(&dir.join("features.csv"), &text)?;
    }

    let mut labels_text = String::new();
    for (i, &label) in dataset.labels.iter().enumerate() {
        let _ = writeln!(labels_text, "{i},{label}");
    }
    write_text(&dir.join("labels.csv"), &labels_text)?;

    let mut splits_text = String::new();
    for (split, split_name) in [
        (&dataset.splits.train, "train"),
        (&dataset.splits.val, "val"),
        (&dataset.splits.test, "test"),
    ] {
        let _ = writeln!(splits_text, "[{split_name}]");
        for &i in split.iter() {
            let _ = writeln!(splits_text, "{i}");
        }
    }
    write_text(&dir.join("splits.txt"), &splits_text)?;

    Ok(dir.join("manifest.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SbmSpec {
        SbmSpec {
            n: 60,
            classes: 3,
            relations: vec![
                RelationProbs { p_in: 0.3, p_out: 0.02 },
                RelationProbs { p_in: 0.05, p_out: 0.05 },
            ],
            feature_dim: 4,
            separation: 2.0,
            seed,
        }
    }

    #[test]
    fn sbm_is_deterministic_in_the_seed() {
        let a = generate_sbm(&small_spec(9)).unwrap();
        let b = generate_sbm(&small_spec(9)).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.features, b.features);
        assert_eq!(a.splits, b.splits);
        for (ra, rb) in a.graph.relations().iter().zip(b.graph.relations()) {
            assert_eq!(ra.to_dense(), rb.to_dense());
        }
        let c = generate_sbm(&small_spec(10)).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn sbm_labels_are_balanced_and_splits_stratified() {
        let data = generate_sbm(&small_spec(1)).unwrap();
        for c in 0..3i64 {
            assert_eq!(data.labels.iter().filter(|&&y| y == c).count(), 20);
        }
        // 10/10/80 of 20 per class.
        assert_eq!(data.splits.train.len(), 6);
        assert_eq!(data.splits.val.len(), 6);
        assert_eq!(data.splits.test.len(), 48);
        for c in 0..3i64 {
            let in_train = data.splits.train.iter().filter(|&&i| data.labels[i] == c).count();
            assert_eq!(in_train, 2);
        }
        data.splits.validate(data.n()).unwrap();
        let mut sorted = data.splits.train.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, data.splits.train);
    }

    #[test]
    fn sbm_rejects_invalid_specs() {
        let mut spec = small_spec(0);
        spec.classes = 1;
        assert!(generate_sbm(&spec).is_err());
        let mut spec = small_spec(0);
        spec.relations[0] = RelationProbs { p_in: 0.1, p_out: 0.2 };
        assert!(generate_sbm(&spec).is_err());
        let mut spec = small_spec(0);
        spec.relations[0] = RelationProbs { p_in: 1.5, p_out: 0.2 };
        assert!(generate_sbm(&spec).is_err());
        let mut spec = small_spec(0);
        spec.feature_dim = 0;
        assert!(generate_sbm(&spec).is_err());
    }

    #[test]
    fn sbm_class_means_are_separated() {
        let mut spec = small_spec(3);
        spec.n = 300;
        let data = generate_sbm(&spec).unwrap();
        for c in 0..3usize {
            let coord = c % spec.feature_dim;
            let rows: Vec<usize> = (0..data.n()).filter(|&i| data.labels[i] == c as i64).collect();
            let mean: f64 =
                rows.iter().map(|&i| data.features[(i, coord)]).sum::<f64>() / rows.len() as f64;
            assert!(mean > spec.separation * 0.5, "class {c} mean {mean}");
        }
    }

    #[test]
    fn dataset_round_trips_through_disk_exactly() {
        let data = generate_sbm(&small_spec(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), &data).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded.name, data.name);
        assert_eq!(loaded.labels, data.labels);
        assert_eq!(loaded.splits, data.splits);
        assert_eq!(loaded.features, data.features);
        assert!(!loaded.featureless);
        assert_eq!(loaded.graph.relation_names(), data.graph.relation_names());
        for (ra, rb) in loaded.graph.relations().iter().zip(data.graph.relations()) {
            assert_eq!(ra.to_dense(), rb.to_dense());
        }
    }

    #[test]
    fn featureless_manifest_gets_identity_features() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "nodes = 3\nlabels = labels.csv\nsplits = splits.txt\nrelation = link, edges.txt\n",
        )
        .unwrap();
        fs::write(dir.path().join("edges.txt"), "0 1\n1 2\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "0,0\n1,1\n2,0\n").unwrap();
        fs::write(dir.path().join("splits.txt"), "[train]\n0\n[val]\n1\n[test]\n2\n").unwrap();
        let data = load_dataset(&dir.path().join("manifest.txt")).unwrap();
        assert!(data.featureless);
        assert_eq!(data.features, FeatureMatrix::identity(3, 3));
        assert_eq!(data.classes(), 2);
        assert_eq!(data.graph.relation_names(), ["link".to_string()]);
    }

    #[test]
    fn loader_rejects_overlapping_splits() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "nodes = 3\nlabels = labels.csv\nsplits = splits.txt\nrelation = link, edges.txt\n",
        )
        .unwrap();
        fs::write(dir.path().join("edges.txt"), "0 1\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "0,0\n1,1\n2,0\n").unwrap();
        fs::write(dir.path().join("splits.txt"), "[train]\n0\n1\n[val]\n1\n[test]\n2\n").unwrap();
        let err = load_dataset(&dir.path().join("manifest.txt")).unwrap_err();
        assert!(err.to_string().contains("more than one split"), "{err}");
    }

    #[test]
    fn loader_rejects_unlabeled_split_member() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "nodes = 3\nlabels = labels.csv\nsplits = splits.txt\nrelation = link, edges.txt\n",
        )
        .unwrap();
        fs::write(dir.path().join("edges.txt"), "0 1\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "0,0\n1,-1\n2,0\n").unwrap();
        fs::write(dir.path().join("splits.txt"), "[train]\n0\n[val]\n1\n[test]\n2\n").unwrap();
        let err = load_dataset(&dir.path().join("manifest.txt")).unwrap_err();
        assert!(err.to_string().contains("unlabeled node 1"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_and_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "nodes = 3\nlabels = labels.csv\nsplits = splits.txt\nrelation = link, edges.txt\n",
        )
        .unwrap();
        fs::write(dir.path().join("edges.txt"), "0 1\n# fine\n1 oops\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "0,0\n1,1\n2,0\n").unwrap();
        fs::write(dir.path().join("splits.txt"), "[train]\n0\n[val]\n1\n[test]\n2\n").unwrap();
        let err = load_dataset(&dir.path().join("manifest.txt")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("edges.txt:3:"), "{msg}");
    }

    #[test]
    fn manifest_errors_name_the_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.txt"), "nodes = 3\nrelation = a, e.txt\n").unwrap();
        let err = load_dataset(&dir.path().join("manifest.txt")).unwrap_err();
        assert!(err.to_string().contains("missing `labels`"), "{err}");
    }

    #[test]
    fn missing_relation_file_reports_the_path() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("manifest.txt"),
            "nodes = 2\nlabels = labels.csv\nsplits = splits.txt\nrelation = link, absent.txt\n",
        )
        .unwrap();
        let err = load_dataset(&dir.path().join("manifest.txt")).unwrap_err();
        assert!(err.to_string().contains("absent.txt"), "{err}");
    }

    #[test]
    fn splits_validate_rejects_out_of_range_and_duplicates() {
        let splits = Splits { train: vec![0, 5], val: vec![], test: vec![] };
        assert!(splits.validate(3).is_err());
        let splits = Splits { train: vec![0, 0], val: vec![], test: vec![] };
        assert!(splits.validate(3).is_err());
        let splits = Splits { train: vec![0], val: vec![1], test: vec![2] };
        splits.validate(3).unwrap();
    }
}
