//! Model persistence.
//!
//! Trained models are stored as line-oriented UTF-8 text starting with
//! `LSDS-MODEL v1 <kind>` where the kind is one of `rf`, `gb`, `mlp`,
//! `lstm`. Header fields follow as `key value` lines, then either tree
//! node lines or parameter tensor lines, then a literal `end`. All
//! floats are written with 17 significant digits, so a load followed by
//! a save reproduces the file byte for byte and a loaded model predicts
//! bit-identically to the one saved.

use super::boost::BoostModel;
use super::forest::ForestModel;
use super::lstm::LstmModel;
use super::mlp::MlpModel;
use super::tree::{Node, Tree};
use super::TreeHyperparams;
use crate::features::FeatureSet;
use crate::textio::{fmt_f64_exact, parse_f64, parse_usize, ParseError};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MODEL_MAGIC: &str = "LSDS-MODEL v1";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: ParseError },
    #[error("{path}: expected a {expected} model, found {found}")]
    WrongKind {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
}

/// Any trained model, tagged by kind.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Forest(ForestModel),
    Boost(BoostModel),
    Mlp(MlpModel),
    Lstm(LstmModel),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Forest(_) => "rf",
            AnyModel::Boost(_) => "gb",
            AnyModel::Mlp(_) => "mlp",
            AnyModel::Lstm(_) => "lstm",
        }
    }

    pub fn feature_set(&self) -> FeatureSet {
        match self {
            AnyModel::Forest(m) => m.feature_set,
            AnyModel::Boost(m) => m.feature_set,
            AnyModel::Mlp(m) => m.feature_set,
            AnyModel::Lstm(m) => m.feature_set,
        }
    }
}

fn write_hyperparams(out: &mut String, hp: &TreeHyperparams) {
    let _ = writeln!(out, "max_depth {}", hp.max_depth);
    let _ = writeln!(out, "max_features {}", hp.max_features);
    let _ = writeln!(out, "min_samples_leaf {}", hp.min_samples_leaf);
    let _ = writeln!(out, "min_samples_split {}", hp.min_samples_split);
    let _ = writeln!(out, "n_estimators {}", hp.n_estimators);
    let _ = writeln!(out, "learning_rate {}", fmt_f64_exact(hp.learning_rate));
    let _ = writeln!(out, "seed {}", hp.seed);
}

fn write_trees(out: &mut String, trees: &[Tree]) {
    let _ = writeln!(out, "trees {}", trees.len());
    for (i, tree) in trees.iter().enumerate() {
        let _ = writeln!(out, "tree {} {}", i, tree.nodes().len());
        for node in tree.nodes() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(
                        out,
                        "node split {} {} {} {}",
                        feature,
                        fmt_f64_exact(*threshold),
                        left,
                        right
                    );
                }
                Node::Leaf { value, n } => {
                    let _ = writeln!(out, "node leaf {} {}", fmt_f64_exact(*value), n);
                }
            }
        }
    }
}

fn write_tensors(out: &mut String, layout_entries: &[(String, usize)], params: &[f64]) {
    let total: usize = layout_entries.iter().map(|(_, n)| n).sum();
    let _ = writeln!(out, "params {total}");
    let mut offset = 0;
    for (name, numel) in layout_entries {
        let _ = writeln!(out, "tensor {name} {numel}");
        let mut line = String::new();
        for v in &params[offset..offset + numel] {
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&fmt_f64_exact(*v));
        }
        out.push_str(&line);
        out.push('\n');
        offset += numel;
    }
}

fn opt_loss_str(v: Option<f64>) -> String {
    match v {
        Some(x) => fmt_f64_exact(x),
        None => "none".to_string(),
    }
}

/// Serializes any model to its text form.
pub fn write_model_string(model: &AnyModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_MAGIC} {}", model.kind());
    let _ = writeln!(out, "feature_set {}", model.feature_set());
    match model {
        AnyModel::Forest(m) => {
            let _ = writeln!(out, "n_features {}", m.n_features);
            write_hyperparams(&mut out, &m.hp);
            write_trees(&mut out, m.trees());
        }
        AnyModel::Boost(m) => {
            let _ = writeln!(out, "n_features {}", m.n_features);
            write_hyperparams(&mut out, &m.hp);
            let _ = writeln!(out, "effective_max_features {}", m.effective_max_features);
            let _ = writeln!(out, "base_score {}", fmt_f64_exact(m.base_score));
            write_trees(&mut out, m.trees());
        }
        AnyModel::Mlp(m) => {
            let _ = writeln!(out, "input_dim {}", m.input_dim);
            let _ = writeln!(out, "hidden {} {}", m.hidden[0], m.hidden[1]);
            let _ = writeln!(out, "dropout {}", fmt_f64_exact(m.dropout));
            let _ = writeln!(out, "final_train_loss {}", opt_loss_str(m.final_train_loss));
            let entries: Vec<(String, usize)> = m
                .layout()
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.len()))
                .collect();
            write_tensors(&mut out, &entries, m.params());
        }
        AnyModel::Lstm(m) => {
            let _ = writeln!(out, "input_dim {}", m.input_dim);
            let _ = writeln!(out, "hidden {}", m.hidden);
            let _ = writeln!(out, "layers {}", m.layers);
            let _ = writeln!(out, "seq_len {}", m.seq_len);
            let _ = writeln!(out, "dropout {}", fmt_f64_exact(m.dropout));
            let _ = writeln!(out, "final_train_loss {}", opt_loss_str(m.final_train_loss));
            let entries: Vec<(String, usize)> = m
                .layout()
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.len()))
                .collect();
            write_tensors(&mut out, &entries, m.params());
        }
    }
    out.push_str("end\n");
    out
}

/// Sequential line reader with 1-based numbering and a hard error at
/// end of input, which is how truncation is detected.
struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines(),
            line_no: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str, ParseError> {
        self.line_no += 1;
        self.lines
            .next()
            .ok_or_else(|| ParseError::new(self.line_no, "unexpected end of file"))
    }

    /// Reads a `key value...` line, returning the value tokens.
    fn field(&mut self, key: &str) -> Result<Vec<&'a str>, ParseError> {
        let line = self.next()?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok(toks.collect()),
            _ => Err(ParseError::new(
                self.line_no,
                format!("expected `{key} ...`, found `{line}`"),
            )),
        }
    }

    fn field_one(&mut self, key: &str) -> Result<&'a str, ParseError> {
        let toks = self.field(key)?;
        if toks.len() != 1 {
            return Err(ParseError::new(
                self.line_no,
                format!("expected one value for `{key}`, found {}", toks.len()),
            ));
        }
        Ok(toks[0])
    }

    fn field_usize(&mut self, key: &str) -> Result<usize, ParseError> {
        let tok = self.field_one(key)?;
        parse_usize(tok, self.line_no, key)
    }

    fn field_f64(&mut self, key: &str) -> Result<f64, ParseError> {
        let tok = self.field_one(key)?;
        parse_f64(tok, self.line_no, key)
    }
}

fn parse_feature_set(tok: &str, line_no: usize) -> Result<FeatureSet, ParseError> {
    tok.parse()
        .map_err(|_| ParseError::new(line_no, format!("unknown feature set `{tok}`")))
}

fn read_hyperparams(r: &mut LineReader) -> Result<TreeHyperparams, ParseError> {
    Ok(TreeHyperparams {
        max_depth: r.field_usize("max_depth")?,
        max_features: r.field_usize("max_features")?,
        min_samples_leaf: r.field_usize("min_samples_leaf")?,
        min_samples_split: r.field_usize("min_samples_split")?,
        n_estimators: r.field_usize("n_estimators")?,
        learning_rate: r.field_f64("learning_rate")?,
        seed: {
            let tok = r.field_one("seed")?;
            tok.parse::<u64>()
                .map_err(|_| ParseError::new(r.line_no, format!("invalid seed `{tok}`")))?
        },
    })
}

fn read_trees(r: &mut LineReader, n_features: usize) -> Result<Vec<Tree>, ParseError> {
    let count = r.field_usize("trees")?;
    let mut trees = Vec::with_capacity(count);
    for i in 0..count {
        let toks = r.field("tree")?;
        if toks.len() != 2 {
            return Err(ParseError::new(r.line_no, "expected `tree <index> <nodes>`"));
        }
        let idx = parse_usize(toks[0], r.line_no, "tree index")?;
        if idx != i {
            return Err(ParseError::new(
                r.line_no,
                format!("expected tree {i}, found {idx}"),
            ));
        }
        let n_nodes = parse_usize(toks[1], r.line_no, "node count")?;
        if n_nodes == 0 {
            return Err(ParseError::new(r.line_no, "tree must hold at least one node"));
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let toks = r.field("node")?;
            let node = match toks.first().copied() {
                Some("split") if toks.len() == 5 => {
                    let feature = parse_usize(toks[1], r.line_no, "split feature")?;
                    let threshold = parse_f64(toks[2], r.line_no, "split threshold")?;
                    let left = parse_usize(toks[3], r.line_no, "left child")?;
                    let right = parse_usize(toks[4], r.line_no, "right child")?;
                    if feature >= n_features {
                        return Err(ParseError::new(
                            r.line_no,
                            format!("split feature {feature} out of range (dim {n_features})"),
                        ));
                    }
                    if left >= n_nodes || right >= n_nodes {
                        return Err(ParseError::new(r.line_no, "child index out of range"));
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left: left as u32,
                        right: right as u32,
                    }
                }
                Some("leaf") if toks.len() == 3 => {
                    let value = parse_f64(toks[1], r.line_no, "leaf value")?;
                    let n = parse_usize(toks[2], r.line_no, "leaf count")?;
                    Node::Leaf {
                        value,
                        n: n as u32,
                    }
                }
                _ => {
                    return Err(ParseError::new(
                        r.line_no,
                        "expected `node split ...` or `node leaf ...`",
                    ))
                }
            };
            nodes.push(node);
        }
        trees.push(Tree::from_nodes(nodes));
    }
    Ok(trees)
}

/// Reads the tensor block; names and sizes must match `expected` (the
/// model layout) exactly and in order.
fn read_tensors(
    r: &mut LineReader,
    expected: &[(String, usize)],
) -> Result<Vec<f64>, ParseError> {
    let total: usize = expected.iter().map(|(_, n)| n).sum();
    let declared = r.field_usize("params")?;
    if declared != total {
        return Err(ParseError::new(
            r.line_no,
            format!("expected {total} parameters, file declares {declared}"),
        ));
    }
    let mut params = Vec::with_capacity(total);
    for (name, numel) in expected {
        let toks = r.field("tensor")?;
        if toks.len() != 2 || toks[0] != name {
            return Err(ParseError::new(
                r.line_no,
                format!("expected `tensor {name} {numel}`"),
            ));
        }
        let n = parse_usize(toks[1], r.line_no, "tensor size")?;
        if n != *numel {
            return Err(ParseError::new(
                r.line_no,
                format!("tensor {name}: expected {numel} values, file declares {n}"),
            ));
        }
        let line = r.next()?;
        let mut got = 0;
        for tok in line.split_whitespace() {
            params.push(parse_f64(tok, r.line_no, "parameter")?);
            got += 1;
        }
        if got != *numel {
            return Err(ParseError::new(
                r.line_no,
                format!("tensor {name}: expected {numel} values, found {got}"),
            ));
        }
    }
    Ok(params)
}

fn read_opt_loss(r: &mut LineReader) -> Result<Option<f64>, ParseError> {
    let tok = r.field_one("final_train_loss")?;
    if tok == "none" {
        return Ok(None);
    }
    parse_f64(tok, r.line_no, "final_train_loss").map(Some)
}

/// Parses a model from its text form.
pub fn read_model_str(text: &str) -> Result<AnyModel, ParseError> {
    let mut r = LineReader::new(text);
    let first = r.next()?;
    let rest = crate::textio::expect_magic(first, MODEL_MAGIC, r.line_no)?;
    let kind = rest.to_string();

    let fs_tok = r.field_one("feature_set")?;
    let feature_set = parse_feature_set(fs_tok, r.line_no)?;

    let model = match kind.as_str() {
        "rf" => {
            let n_features = r.field_usize("n_features")?;
            let hp = read_hyperparams(&mut r)?;
            let trees = read_trees(&mut r, n_features)?;
            AnyModel::Forest(ForestModel::from_parts(hp, feature_set, n_features, trees))
        }
        "gb" => {
            let n_features = r.field_usize("n_features")?;
            let hp = read_hyperparams(&mut r)?;
            let effective_max_features = r.field_usize("effective_max_features")?;
            let base_score = r.field_f64("base_score")?;
            let trees = read_trees(&mut r, n_features)?;
            AnyModel::Boost(BoostModel::from_parts(
                hp,
                feature_set,
                n_features,
                effective_max_features,
                base_score,
                trees,
            ))
        }
        "mlp" => {
            let input_dim = r.field_usize("input_dim")?;
            let toks = r.field("hidden")?;
            if toks.len() != 2 {
                return Err(ParseError::new(r.line_no, "expected `hidden <h1> <h2>`"));
            }
            let hidden = [
                parse_usize(toks[0], r.line_no, "hidden width")?,
                parse_usize(toks[1], r.line_no, "hidden width")?,
            ];
            let dropout = r.field_f64("dropout")?;
            let loss = read_opt_loss(&mut r)?;
            let expected = entries_of(&super::mlp::layout_for(input_dim, hidden));
            let params = read_tensors(&mut r, &expected)?;
            let m = MlpModel::from_parts(feature_set, input_dim, hidden, dropout, loss, params)
                .map_err(|e| ParseError::new(r.line_no, e.to_string()))?;
            AnyModel::Mlp(m)
        }
        "lstm" => {
            let input_dim = r.field_usize("input_dim")?;
            let hidden = r.field_usize("hidden")?;
            let layers = r.field_usize("layers")?;
            let seq_len = r.field_usize("seq_len")?;
            let dropout = r.field_f64("dropout")?;
            let loss = read_opt_loss(&mut r)?;
            let expected = entries_of(&super::lstm::layout_for(input_dim, hidden, layers));
            let params = read_tensors(&mut r, &expected)?;
            let m = LstmModel::from_parts(
                feature_set,
                input_dim,
                hidden,
                layers,
                seq_len,
                dropout,
                loss,
                params,
            )
            .map_err(|e| ParseError::new(r.line_no, e.to_string()))?;
            AnyModel::Lstm(m)
        }
        other => {
            return Err(ParseError::new(
                1,
                format!("unknown model kind `{other}` (expected rf, gb, mlp, or lstm)"),
            ))
        }
    };

    let last = r.next()?;
    if last.trim() != "end" {
        return Err(ParseError::new(
            r.line_no,
            format!("expected `end`, found `{last}`"),
        ));
    }
    Ok(model)
}

fn entries_of(layout: &super::params::ParamLayout) -> Vec<(String, usize)> {
    layout
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.len()))
        .collect()
}

/// Writes a model artifact; the writer is deterministic, so saving the
/// same model twice yields identical bytes.
pub fn save_model(model: &AnyModel, path: &Path) -> Result<(), ModelIoError> {
    let text = write_model_string(model);
    std::fs::write(path, text).map_err(|e| ModelIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Loads any model artifact.
pub fn load_model(path: &Path) -> Result<AnyModel, ModelIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelIoError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    read_model_str(&text).map_err(|e| ModelIoError::Format {
        path: path.to_path_buf(),
        source: e,
    })
}

fn wrong_kind(path: &Path, expected: &'static str, got: &AnyModel) -> ModelIoError {
    ModelIoError::WrongKind {
        path: path.to_path_buf(),
        expected,
        found: got.kind().to_string(),
    }
}

pub fn load_forest(path: &Path) -> Result<ForestModel, ModelIoError> {
    match load_model(path)? {
        AnyModel::Forest(m) => Ok(m),
        other => Err(wrong_kind(path, "rf", &other)),
    }
}

pub fn load_boost(path: &Path) -> Result<BoostModel, ModelIoError> {
    match load_model(path)? {
        AnyModel::Boost(m) => Ok(m),
        other => Err(wrong_kind(path, "gb", &other)),
    }
}

pub fn load_mlp(path: &Path) -> Result<MlpModel, ModelIoError> {
    match load_model(path)? {
        AnyModel::Mlp(m) => Ok(m),
        other => Err(wrong_kind(path, "mlp", &other)),
    }
}

pub fn load_lstm(path: &Path) -> Result<LstmModel, ModelIoError> {
    match load_model(path)? {
        AnyModel::Lstm(m) => Ok(m),
        other => Err(wrong_kind(path, "lstm", &other)),
    }
}
