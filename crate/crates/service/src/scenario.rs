//! Scenario files: line-delimited JSON events with a `type` tag.
//!
//! ```text
//! {"type":"scenario","name":"demo","seed":7}
//! {"type":"product","product_id":"kettle","materials":[...]}
//! {"type":"features","path":"demo_features.jsonl"}
//! {"type":"overlay","at_frame":120,"overlay":{...}}
//! {"type":"click","at_frame":130,"x":200,"y":300,"question_gold":"...","answer_gold":"..."}
//! ```
//!
//! Timed events carry `at_frame`: they run once every frame with an id up to
//! and including `at_frame` has been ingested. Ties keep file order.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streamdesk_core::clickqa::FrameOverlay;
use streamdesk_core::fixtures;
use streamdesk_core::offline::{CopyStyle, RawMaterial};
use streamdesk_core::jsonl::JsonlError;
use streamdesk_core::ses::{read_feature_file, FrameFeature};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Random { seed: u64, len: usize },
    SingleDip { len: usize, dip: usize },
    Constant { len: usize, value: f64 },
}

impl Generator {
    pub fn frames(&self) -> Vec<FrameFeature> {
        match *self {
            Generator::Random { seed, len } => fixtures::random_stream(seed, len),
            Generator::SingleDip { len, dip } => fixtures::single_dip_stream(len, dip),
            Generator::Constant { len, value } => fixtures::constant_stream(len, value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioLine {
    Scenario {
        name: String,
        #[serde(default)]
        seed: Option<u64>,
    },
    Product {
        #[serde(default)]
        product_id: Option<String>,
        materials: Vec<RawMaterial>,
        #[serde(default)]
        external_snippets: Vec<String>,
    },
    Features {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        generate: Option<Generator>,
    },
    Frame {
        #[serde(flatten)]
        frame: FrameFeature,
    },
    Overlay {
        #[serde(default)]
        at_frame: u64,
        overlay: FrameOverlay,
    },
    Click {
        #[serde(default)]
        at_frame: u64,
        /// Overlay frame; the latest overlay when absent.
        #[serde(default)]
        frame_id: Option<u64>,
        x: u32,
        y: u32,
        #[serde(default)]
        question_gold: Option<String>,
        #[serde(default)]
        answer_gold: Option<String>,
    },
    Copy {
        #[serde(default)]
        at_frame: u64,
        style: CopyStyle,
        #[serde(default)]
        exemplar: Option<String>,
    },
    Purify {
        #[serde(default)]
        at_frame: u64,
        text: String,
    },
}

/// A timed action, in replay order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub at_frame: u64,
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Overlay(FrameOverlay),
    Click {
        frame_id: Option<u64>,
        x: u32,
        y: u32,
        question_gold: Option<String>,
        answer_gold: Option<String>,
    },
    Copy {
        style: CopyStyle,
        exemplar: Option<String>,
    },
    Purify(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductFixture {
    pub product_id: Option<String>,
    pub materials: Vec<RawMaterial>,
    pub external_snippets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: Option<u64>,
    pub product: ProductFixture,
    pub frames: Vec<FrameFeature>,
    pub events: Vec<TimedEvent>,
}

fn read_features(path: &Path) -> Result<Vec<FrameFeature>, ScenarioError> {
    let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let at = |line: usize, message: String| ScenarioError::Line {
        path: path.to_path_buf(),
        line,
        message,
    };
    match read_feature_file(std::io::BufReader::new(file)) {
        Ok((_, frames)) => Ok(frames),
        Err(JsonlError::Io(source)) => Err(ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        }),
        Err(JsonlError::Parse { line, source }) => Err(at(line, source.to_string())),
        Err(JsonlError::Invalid { line, message }) => Err(at(line, message)),
        Err(JsonlError::MissingHeader) => Err(at(1, "missing header line".into())),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(std::io::BufReader::new(file), path, base)
    }

    /// Parse scenario text. `origin` names the file in errors; feature paths
    /// resolve against `base`.
    pub fn parse<R: BufRead>(reader: R, origin: &Path, base: &Path) -> Result<Self, ScenarioError> {
        let at = |line: usize, message: String| ScenarioError::Line {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut name = None;
        let mut seed = None;
        let mut product = None;
        let mut frames: Vec<FrameFeature> = Vec::new();
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|source| ScenarioError::Io {
                path: origin.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ScenarioLine = serde_json::from_str(&line).map_err(|e| at(n, e.to_string()))?;
            match parsed {
                ScenarioLine::Scenario { name: nm, seed: s } => {
                    if name.is_some() {
                        return Err(at(n, "second scenario header".into()));
                    }
                    name = Some(nm);
                    seed = s;
                }
                ScenarioLine::Product {
                    product_id,
                    materials,
                    external_snippets,
                } => {
                    if product.is_some() {
                        return Err(at(n, "only one product per scenario".into()));
                    }
                    if materials.is_empty() {
                        return Err(at(n, "product has no materials".into()));
                    }
                    product = Some(ProductFixture {
                        product_id,
                        materials,
                        external_snippets,
                    });
                }
                ScenarioLine::Features { path, generate } => match (path, generate) {
                    (Some(p), None) => frames.extend(read_features(&base.join(p))?),
                    (None, Some(g)) => frames.extend(g.frames()),
                    _ => return Err(at(n, "features needs exactly one of path or generate".into())),
                },
                ScenarioLine::Frame { frame } => frames.push(frame),
                ScenarioLine::Overlay { at_frame, overlay } => {
                    overlay.validate().map_err(|e| at(n, e.to_string()))?;
                    events.push(TimedEvent {
                        at_frame,
                        line: n,
                        action: Action::Overlay(overlay),
                    });
                }
                ScenarioLine::Click {
                    at_frame,
                    frame_id,
                    x,
                    y,
                    question_gold,
                    answer_gold,
                } => events.push(TimedEvent {
                    at_frame,
                    line: n,
                    action: Action::Click {
                        frame_id,
                        x,
                        y,
                        question_gold,
                        answer_gold,
                    },
                }),
                ScenarioLine::Copy {
                    at_frame,
                    style,
                    exemplar,
                } => events.push(TimedEvent {
                    at_frame,
                    line: n,
                    action: Action::Copy { style, exemplar },
                }),
                ScenarioLine::Purify { at_frame, text } => events.push(TimedEvent {
                    at_frame,
                    line: n,
                    action: Action::Purify(text),
                }),
            }
        }
        let invalid = |message: &str| ScenarioError::Invalid {
            path: origin.to_path_buf(),
            message: message.to_string(),
        };
        let product = product.ok_or_else(|| invalid("scenario has no product line"))?;
        if let Some(w) = frames.windows(2).position(|w| w[1].frame_id <= w[0].frame_id) {
            return Err(invalid(&format!(
                "feature stream is not increasing at frame {} -> {}",
                frames[w].frame_id,
                frames[w + 1].frame_id
            )));
        }
        events.sort_by_key(|e| (e.at_frame, e.line));
        Ok(Self {
            name: name.unwrap_or_else(|| origin.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into())),
            seed,
            product,
            frames,
            events,
        })
    }
}
