//! Scene configuration files: which corpus or episode to run, over
//! which objects, with what knobs.
//!
//! The format is line-oriented under an `LSDS-SCENE v1 <kind>` header,
//! ending with `end`. Unknown keys are errors; omitted keys fall back
//! to the defaults below. `define_object` lines add custom object specs
//! that the `objects`/`object` selection can then reference by name.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::textio::{self, ParseError};

use super::corpus::{SEVERITY_REPEATS, SEVERITY_SPEEDS, SEVERITY_STROKE_CM};
use super::objects::{training_objects, unseen_objects, ObjectSpec};
use super::scenario::DEFAULT_STROKE_CM;

pub const SCENE_MAGIC: &str = "LSDS-SCENE v1";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("cannot access `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene file `{path}`: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("scene references unknown object `{name}`")]
    UnknownObject { name: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
}

/// What a scene runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Detection,
    Severity,
    Control,
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneKind::Detection => "detection",
            SceneKind::Severity => "severity",
            SceneKind::Control => "control",
        })
    }
}

/// Which object specs a scene covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObjectSelection {
    Training,
    Unseen,
    All,
    Named(Vec<String>),
}

impl fmt::Display for ObjectSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectSelection::Training => f.write_str("training"),
            ObjectSelection::Unseen => f.write_str("unseen"),
            ObjectSelection::All => f.write_str("all"),
            ObjectSelection::Named(names) => f.write_str(&names.join(",")),
        }
    }
}

/// A parsed scene: kind, object selection, and the knobs that matter
/// for that kind. `objects` is the resolved spec list.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub selection: ObjectSelection,
    /// Custom specs declared inline, resolvable by name.
    pub custom: Vec<ObjectSpec>,
    /// Specs the selection resolves to, in selection order.
    pub objects: Vec<ObjectSpec>,
    /// Commanded slide speeds (cm/s) for severity scenes.
    pub speeds: Vec<f64>,
    /// Recordings per (object, speed) for severity scenes.
    pub repeats: usize,
    /// Grip margin relative to the slip threshold for control scenes.
    pub margin: f64,
    /// Slide stroke before disengagement.
    pub stroke_cm: f64,
    /// Tick budget of a control episode.
    pub max_ticks: usize,
}

impl SceneConfig {
    /// A scene with every knob at its default for `kind`.
    pub fn default_for(kind: SceneKind) -> Self {
        let selection = match kind {
            SceneKind::Control => ObjectSelection::Named(vec!["pipe".into()]),
            _ => ObjectSelection::Training,
        };
        let mut cfg = Self {
            kind,
            selection,
            custom: Vec::new(),
            objects: Vec::new(),
            speeds: SEVERITY_SPEEDS.to_vec(),
            repeats: SEVERITY_REPEATS,
            // Control grips hold at rest and let the arm ramp break them;
            // severity recordings grip just under the slippage threshold.
            margin: match kind {
                SceneKind::Control => 1.01,
                _ => 0.97,
            },
            stroke_cm: match kind {
                SceneKind::Severity => SEVERITY_STROKE_CM,
                _ => DEFAULT_STROKE_CM,
            },
            max_ticks: 400,
        };
        cfg.objects = cfg.resolve().expect("library names resolve");
        cfg
    }

    /// The single object of a control scene.
    pub fn control_object(&self) -> Result<&ObjectSpec, SceneError> {
        match self.objects.as_slice() {
            [one] => Ok(one),
            other => Err(SceneError::Invalid(format!(
                "control scene needs exactly one object, got {}",
                other.len()
            ))),
        }
    }

    fn resolve(&self) -> Result<Vec<ObjectSpec>, SceneError> {
        let lookup = |name: &str| -> Option<ObjectSpec> {
            if let Some(o) = self.custom.iter().find(|o| o.name == name) {
                return Some(o.clone());
            }
            training_objects()
                .into_iter()
                .chain(unseen_objects())
                .find(|o| o.name == name)
        };
        Ok(match &self.selection {
            ObjectSelection::Training => training_objects(),
            ObjectSelection::Unseen => unseen_objects(),
            ObjectSelection::All => {
                let mut all = training_objects();
                all.extend(unseen_objects());
                all
            }
            ObjectSelection::Named(names) => {
                let mut out = Vec::with_capacity(names.len());
                for name in names {
                    out.push(lookup(name).ok_or_else(|| SceneError::UnknownObject {
                        name: name.clone(),
                    })?);
                }
                out
            }
        })
    }
}

fn parse_selection(value: &str) -> ObjectSelection {
    match value {
        "training" => ObjectSelection::Training,
        "unseen" => ObjectSelection::Unseen,
        "all" => ObjectSelection::All,
        list => ObjectSelection::Named(
            list.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        ),
    }
}

/// Parses a scene file's text. `path` is only used in errors.
pub fn parse_scene_str(text: &str, path: &Path) -> Result<SceneConfig, SceneError> {
    let fmt_err = |e: ParseError| SceneError::Format {
        path: path.to_path_buf(),
        source: e,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt_err(ParseError::new(1, "empty file")))?;
    let kind_tok = textio::expect_magic(header, SCENE_MAGIC, 1).map_err(fmt_err)?;
    let kind = match kind_tok.trim() {
        "detection" => SceneKind::Detection,
        "severity" => SceneKind::Severity,
        "control" => SceneKind::Control,
        other => {
            return Err(fmt_err(ParseError::new(
                1,
                format!("unknown scene kind `{other}`"),
            )))
        }
    };

    let mut cfg = SceneConfig::default_for(kind);
    let mut saw_end = false;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "end" {
            saw_end = true;
            break;
        }
        let (key, value) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| fmt_err(ParseError::new(line_no, format!("bare key `{line}`"))))?;
        let value = value.trim();
        match key {
            "objects" | "object" => cfg.selection = parse_selection(value),
            "speeds" => {
                let mut speeds = Vec::new();
                for tok in value.split(',') {
                    let v = textio::parse_f64(tok, line_no, "speed").map_err(fmt_err)?;
                    if v < 0.0 {
                        return Err(fmt_err(ParseError::new(
                            line_no,
                            format!("negative speed {v}"),
                        )));
                    }
                    speeds.push(v);
                }
                if speeds.is_empty() || speeds.len() > 256 {
                    return Err(fmt_err(ParseError::new(
                        line_no,
                        format!("need 1..=256 speeds, got {}", speeds.len()),
                    )));
                }
                cfg.speeds = speeds;
            }
            "repeats" => {
                cfg.repeats = textio::parse_usize(value, line_no, "repeats").map_err(fmt_err)?;
                if cfg.repeats == 0 || cfg.repeats > 256 {
                    return Err(fmt_err(ParseError::new(line_no, "repeats must be in 1..=256")));
                }
            }
            "margin" => {
                cfg.margin = textio::parse_f64(value, line_no, "margin").map_err(fmt_err)?;
                if !(cfg.margin > 0.0) {
                    return Err(fmt_err(ParseError::new(line_no, "margin must be positive")));
                }
            }
            "stroke_cm" => {
                cfg.stroke_cm =
                    textio::parse_f64(value, line_no, "stroke_cm").map_err(fmt_err)?;
                if !(cfg.stroke_cm > 0.0) {
                    return Err(fmt_err(ParseError::new(line_no, "stroke must be positive")));
                }
            }
            "max_ticks" => {
                cfg.max_ticks =
                    textio::parse_usize(value, line_no, "max_ticks").map_err(fmt_err)?;
                if cfg.max_ticks == 0 {
                    return Err(fmt_err(ParseError::new(line_no, "max_ticks must be positive")));
                }
            }
            "define_object" => {
                let toks: Vec<&str> = value.split_whitespace().collect();
                if toks.len() != 8 {
                    return Err(fmt_err(ParseError::new(
                        line_no,
                        format!(
                            "define_object takes name and 7 numbers, got {} fields",
                            toks.len()
                        ),
                    )));
                }
                let mut nums = [0.0; 7];
                for (i, tok) in toks[1..].iter().enumerate() {
                    nums[i] = textio::parse_f64(tok, line_no, "object parameter").map_err(fmt_err)?;
                }
                let spec = ObjectSpec {
                    name: toks[0].to_string(),
                    mu_s: nums[0],
                    mu_k: nums[1],
                    k_obj: nums[2],
                    mass: nums[3],
                    texture_noise: nums[4],
                    deformability: nums[5],
                    contact_radius: nums[6],
                };
                spec.validate()
                    .map_err(|e| fmt_err(ParseError::new(line_no, e)))?;
                cfg.custom.push(spec);
            }
            other => {
                return Err(fmt_err(ParseError::new(
                    line_no,
                    format!("unknown key `{other}`"),
                )))
            }
        }
    }
    if !saw_end {
        return Err(fmt_err(ParseError::new(
            text.lines().count() + 1,
            "missing `end`",
        )));
    }
    cfg.objects = cfg.resolve()?;
    if cfg.objects.is_empty() {
        return Err(SceneError::Invalid("scene selects no objects".into()));
    }
    if cfg.kind == SceneKind::Control {
        cfg.control_object()?;
    }
    Ok(cfg)
}

/// Renders a scene back to its file form.
pub fn write_scene_string(cfg: &SceneConfig) -> String {
    let mut out = String::new();
    out.push_str(SCENE_MAGIC);
    out.push(' ');
    out.push_str(&cfg.kind.to_string());
    out.push('\n');
    for o in &cfg.custom {
        out.push_str(&format!(
            "define_object {} {} {} {} {} {} {} {}\n",
            o.name,
            o.mu_s,
            o.mu_k,
            o.k_obj,
            o.mass,
            o.texture_noise,
            o.deformability,
            o.contact_radius
        ));
    }
    let obj_key = if cfg.kind == SceneKind::Control {
        "object"
    } else {
        "objects"
    };
    out.push_str(&format!("{obj_key} {}\n", cfg.selection));
    match cfg.kind {
        SceneKind::Detection => {}
        SceneKind::Severity => {
            let speeds: Vec<String> = cfg.speeds.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("speeds {}\n", speeds.join(",")));
            out.push_str(&format!("repeats {}\n", cfg.repeats));
            out.push_str(&format!("stroke_cm {}\n", cfg.stroke_cm));
        }
        SceneKind::Control => {
            out.push_str(&format!("margin {}\n", cfg.margin));
            out.push_str(&format!("stroke_cm {}\n", cfg.stroke_cm));
            out.push_str(&format!("max_ticks {}\n", cfg.max_ticks));
        }
    }
    out.push_str("end\n");
    out
}

pub fn read_scene(path: &Path) -> Result<SceneConfig, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_scene_str(&text, path)
}

pub fn write_scene(path: &Path, cfg: &SceneConfig) -> Result<(), SceneError> {
    fs::write(path, write_scene_string(cfg)).map_err(|e| SceneError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
