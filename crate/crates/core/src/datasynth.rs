//! Click-QA dataset synthesis.
//!
//! Each synthetic frame carries a fixed number of question overlays placed
//! at random non-overlapping positions; every overlay yields one sample whose
//! click is a uniform pixel inside its box.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clickqa::{BBox, BulletMessage, ClickEvent, EvalSample, FrameOverlay};
use crate::jsonl::{self, JsonlError};

/// Placement attempts per box before the layout is declared impossible.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_images: usize,
    pub questions_per_image: usize,
    pub seed: u64,
    pub frame_width: u32,
    pub frame_height: u32,
    /// Height of one text line; characters are half as wide.
    pub font_box_height: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_images: 8000,
            questions_per_image: 4,
            seed: 42,
            frame_width: 720,
            frame_height: 1280,
            font_box_height: 24,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.num_images == 0 {
            return bad("num_images must be positive");
        }
        if self.questions_per_image == 0 {
            return bad("questions_per_image must be positive");
        }
        if self.frame_width == 0 || self.frame_height == 0 || self.font_box_height == 0 {
            return bad("frame and font sizes must be positive");
        }
        Ok(())
    }

    fn char_width(&self) -> u32 {
        (self.font_box_height / 2).max(1)
    }

    /// Box size for `text`: wrapped to the frame width, one line per
    /// `font_box_height`.
    pub fn box_size(&self, text: &str) -> (u32, u32) {
        let chars = text.chars().count().max(1) as u32;
        let per_line = (self.frame_width / self.char_width()).max(1);
        let lines = chars.div_ceil(per_line);
        (chars.min(per_line) * self.char_width(), lines * self.font_box_height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl QaItem {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            answer: answer.into(),
            id: id.into(),
            category: None,
        }
    }

    pub fn with_category(mut self, c: impl Into<String>) -> Self {
        self.category = Some(c.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub overlay_index: usize,
    pub message_id: String,
    pub click: ClickEvent,
    pub question_gold: String,
    pub answer_gold: String,
    pub source_qa_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SynthConfig,
    pub overlays: Vec<FrameOverlay>,
    pub samples: Vec<SynthSample>,
}

impl Dataset {
    pub fn eval_samples(&self) -> Vec<EvalSample> {
        self.samples
            .iter()
            .map(|s| EvalSample {
                overlay: self.overlays[s.overlay_index].clone(),
                click: s.click,
                question_gold: s.question_gold.clone(),
                answer_gold: s.answer_gold.clone(),
                category: s.category.clone(),
                source_qa_id: Some(s.source_qa_id.clone()),
            })
            .collect()
    }

    /// Question to answer pairs, for scripting a test double.
    pub fn answer_key(&self) -> Vec<(String, String)> {
        self.samples
            .iter()
            .map(|s| (s.question_gold.clone(), s.answer_gold.clone()))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("pool has {have} questions; {need} are needed per image")]
    PoolTooSmall { have: usize, need: usize },
    #[error("expected {expected} questions, got {got}")]
    WrongQuestionCount { expected: usize, got: usize },
    #[error("{w}x{h} box for {question:?} does not fit a {frame_w}x{frame_h} frame")]
    BoxTooLarge { question: String, w: u32, h: u32, frame_w: u32, frame_h: u32 },
    #[error("could not place {question:?} without overlap after {MAX_PLACEMENT_ATTEMPTS} attempts")]
    Unplaceable { question: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    File(#[from] JsonlError),
    #[error("CLEVR file: {0}")]
    Clevr(#[from] serde_json::Error),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for image `index`, independent of every other image.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64)))
}

/// Place one box per question at random, pairwise disjoint positions.
pub fn plan_layout<R: Rng>(
    questions: &[&str],
    config: &SynthConfig,
    frame_id: u64,
    rng: &mut R,
) -> Result<FrameOverlay, SynthError> {
    if questions.len() != config.questions_per_image {
        return Err(SynthError::WrongQuestionCount {
            expected: config.questions_per_image,
            got: questions.len(),
        });
    }
    let (fw, fh) = (config.frame_width, config.frame_height);
    let mut messages: Vec<BulletMessage> = Vec::with_capacity(questions.len());
    for (k, q) in questions.iter().enumerate() {
        let (w, h) = config.box_size(q);
        if w > fw || h > fh {
            return Err(SynthError::BoxTooLarge {
                question: q.to_string(),
                w,
                h,
                frame_w: fw,
                frame_h: fh,
            });
        }
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let x = rng.random_range(0..=fw - w);
            let y = rng.random_range(0..=fh - h);
            let b = BBox::new(x, y, x + w, y + h);
            if messages.iter().all(|m| !m.bbox.intersects(&b)) {
                placed = Some(b);
                break;
            }
        }
        let bbox = placed.ok_or_else(|| SynthError::Unplaceable { question: q.to_string() })?;
        messages.push(BulletMessage::new(format!("m{k}"), *q, bbox));
    }
    Ok(FrameOverlay {
        frame_id,
        width: fw,
        height: fh,
        messages,
    })
}

/// Uniform pixel inside the message box.
pub fn sample_click<R: Rng>(message: &BulletMessage, frame_id: u64, rng: &mut R) -> ClickEvent {
    let b = message.bbox;
    ClickEvent::new(frame_id, rng.random_range(b.x_min..b.x_max), rng.random_range(b.y_min..b.y_max))
}

/// Build `num_images` overlays with one click sample per embedded question.
/// The output depends only on `pool` and `config`.
pub fn generate_dataset(pool: &[QaItem], config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let per = config.questions_per_image;
    if pool.len() < per {
        return Err(SynthError::PoolTooSmall {
            have: pool.len(),
            need: per,
        });
    }
    let mut overlays = Vec::with_capacity(config.num_images);
    let mut samples = Vec::with_capacity(config.num_images * per);
    for img in 0..config.num_images {
        let mut rng = image_rng(config.seed, img);
        let picked: Vec<&QaItem> = index::sample(&mut rng, pool.len(), per).into_iter().map(|i| &pool[i]).collect();
        let questions: Vec<&str> = picked.iter().map(|q| q.question.as_str()).collect();
        let frame_id = img as u64;
        let overlay = plan_layout(&questions, config, frame_id, &mut rng)?;
        for (item, msg) in picked.iter().zip(&overlay.messages) {
            samples.push(SynthSample {
                overlay_index: img,
                message_id: msg.message_id.clone(),
                click: sample_click(msg, frame_id, &mut rng),
                question_gold: item.question.clone(),
                answer_gold: item.answer.clone(),
                source_qa_id: item.id.clone(),
                category: item.category.clone(),
            });
        }
        overlays.push(overlay);
    }
    Ok(Dataset {
        config: config.clone(),
        overlays,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub num_images: usize,
    pub questions_per_image: usize,
    pub num_samples: usize,
    pub frame_width: u32,
    pub frame_height: u32,
    pub font_box_height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub overlay_path: String,
    pub frame_id: u64,
    pub x: u32,
    pub y: u32,
    pub question: String,
    pub answer: String,
    pub source_qa_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn overlay_rel_path(index: usize) -> String {
    format!("overlays/{index:06}.json")
}

/// Write overlay files and `manifest.jsonl` under `out`. Returns the manifest path.
pub fn write_dataset(dataset: &Dataset, out: &Path) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(out.join("overlays"))?;
    for (i, ov) in dataset.overlays.iter().enumerate() {
        let body = serde_json::to_vec(ov).expect("overlays always serialise");
        fs::write(out.join(overlay_rel_path(i)), body)?;
    }
    let c = &dataset.config;
    let header = ManifestHeader {
        seed: c.seed,
        num_images: c.num_images,
        questions_per_image: c.questions_per_image,
        num_samples: dataset.samples.len(),
        frame_width: c.frame_width,
        frame_height: c.frame_height,
        font_box_height: c.font_box_height,
    };
    let lines: Vec<ManifestLine> = dataset
        .samples
        .iter()
        .map(|s| ManifestLine {
            overlay_path: overlay_rel_path(s.overlay_index),
            frame_id: s.click.frame_id,
            x: s.click.x,
            y: s.click.y,
            question: s.question_gold.clone(),
            answer: s.answer_gold.clone(),
            source_qa_id: s.source_qa_id.clone(),
            category: s.category.clone(),
        })
        .collect();
    let path = out.join(MANIFEST_FILE);
    let mut w = BufWriter::new(fs::File::create(&path)?);
    jsonl::write_with_header(&mut w, &header, &lines)?;
    w.flush()?;
    Ok(path)
}

/// Evaluation samples from a manifest; overlay paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<(ManifestHeader, Vec<EvalSample>), SynthError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = std::io::BufReader::new(fs::File::open(path)?);
    let (header, lines): (ManifestHeader, Vec<ManifestLine>) = jsonl::read_with_header(reader)?;
    let mut cache: Option<(String, FrameOverlay)> = None;
    let mut out = Vec::with_capacity(lines.len());
    for (i, l) in lines.into_iter().enumerate() {
        let overlay = match &cache {
            Some((p, ov)) if *p == l.overlay_path => ov.clone(),
            _ => {
                let bytes = fs::read(base.join(&l.overlay_path))?;
                let ov: FrameOverlay = serde_json::from_slice(&bytes).map_err(|source| JsonlError::Parse {
                    line: i + 2,
                    source,
                })?;
                cache = Some((l.overlay_path.clone(), ov.clone()));
                ov
            }
        };
        out.push(EvalSample {
            overlay,
            click: ClickEvent::new(l.frame_id, l.x, l.y),
            question_gold: l.question,
            answer_gold: l.answer,
            category: l.category,
            source_qa_id: Some(l.source_qa_id),
        });
    }
    Ok((header, out))
}

/// QA pool in line-delimited form, one `{question, answer, id?, category?}`
/// per line. Missing ids become `q<line>`.
pub fn load_pool<R: BufRead>(reader: R) -> Result<Vec<QaItem>, SynthError> {
    let items: Vec<(usize, QaItem)> = jsonl::read_records(reader)?;
    Ok(items
        .into_iter()
        .map(|(line, mut q)| {
            if q.id.is_empty() {
                q.id = format!("q{line}");
            }
            q
        })
        .collect())
}

#[derive(Deserialize)]
struct ClevrFile {
    questions: Vec<ClevrQuestion>,
}

#[derive(Deserialize)]
struct ClevrQuestion {
    question: String,
    answer: Option<String>,
    question_index: Option<u64>,
}

fn clevr_category(answer: &str) -> &'static str {
    let a = answer.trim().to_ascii_lowercase();
    if a.parse::<u64>().is_ok() {
        "count"
    } else if a == "yes" || a == "no" {
        "yes-no"
    } else {
        "attribute"
    }
}

/// Questions from a CLEVR-format file. Unanswered (test-split) questions are skipped.
pub fn load_clevr<R: std::io::Read>(reader: R) -> Result<Vec<QaItem>, SynthError> {
    let file: ClevrFile = serde_json::from_reader(reader)?;
    Ok(file
        .questions
        .into_iter()
        .enumerate()
        .filter_map(|(i, q)| {
            let answer = q.answer?;
            let id = format!("clevr-{}", q.question_index.unwrap_or(i as u64));
            let category = clevr_category(&answer);
            Some(QaItem::new(id, q.question, answer).with_category(category))
        })
        .collect())
}

/// Small built-in pool of scene questions.
pub fn builtin_pool() -> Vec<QaItem> {
    const ITEMS: &[(&str, &str, &str)] = &[
        ("How many red cubes are there?", "2", "count"),
        ("How many spheres are behind the green cylinder?", "3", "count"),
        ("How many metal objects are there?", "4", "count"),
        ("How many small things are left of the blue ball?", "1", "count"),
        ("How many yellow objects are there?", "0", "count"),
        ("Is there a purple rubber sphere?", "yes", "exist"),
        ("Are there any large cylinders?", "no", "exist"),
        ("Is there a tiny brown cube?", "yes", "exist"),
        ("Is there anything made of the same material as the gray cube?", "no", "exist"),
        ("What color is the large metal sphere?", "cyan", "query"),
        ("What shape is the small rubber object?", "cylinder", "query"),
        ("What material is the big red thing?", "rubber", "query"),
        ("What size is the blue cube?", "large", "query"),
        ("What color is the object in front of the cyan cylinder?", "brown", "query"),
        ("Are there more cubes than spheres?", "yes", "compare number"),
        ("Are there fewer metal things than rubber things?", "no", "compare number"),
        ("Is the number of green objects equal to the number of red objects?", "yes", "compare number"),
        ("Are there more cylinders than large cubes?", "no", "compare number"),
        ("Is the red cube the same size as the gray ball?", "no", "compare attribute"),
        ("Does the green cylinder have the same material as the small cube?", "yes", "compare attribute"),
        ("Is the blue sphere the same color as the large cylinder?", "no", "compare attribute"),
        ("Does the yellow cube have the same shape as the purple thing?", "yes", "compare attribute"),
        ("What number of cylinders are gray or brown?", "2", "count"),
        ("What is the shape of the thing right of the red cube?", "sphere", "query"),
    ];
    ITEMS
        .iter()
        .enumerate()
        .map(|(i, (q, a, c))| QaItem::new(format!("builtin-{i}"), *q, *a).with_category(*c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clickqa::resolve_click;

    fn small(num_images: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            num_images,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn layout_is_disjoint_and_seeded() {
        let cfg = small(1, 7);
        let qs = ["Is it red?", "How many?", "What shape is it?", "Is there a cube?"];
        let a = plan_layout(&qs, &cfg, 0, &mut image_rng(7, 0)).unwrap();
        let b = plan_layout(&qs, &cfg, 0, &mut image_rng(7, 0)).unwrap();
        assert_eq!(a, b);
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert!(!a.messages[i].bbox.intersects(&a.messages[j].bbox));
            }
        }
        a.validate().unwrap();
    }

    #[test]
    fn single_question_and_oversize() {
        let cfg = SynthConfig {
            questions_per_image: 1,
            ..small(1, 1)
        };
        assert_eq!(plan_layout(&["q?"], &cfg, 0, &mut image_rng(1, 0)).unwrap().messages.len(), 1);
        let tiny = SynthConfig {
            questions_per_image: 1,
            frame_width: 40,
            frame_height: 20,
            ..small(1, 1)
        };
        assert!(matches!(
            plan_layout(&["a question far too long"], &tiny, 0, &mut image_rng(1, 0)),
            Err(SynthError::BoxTooLarge { .. })
        ));
    }

    #[test]
    fn crowded_frame_is_unplaceable() {
        let cfg = SynthConfig {
            questions_per_image: 2,
            frame_width: 48,
            frame_height: 24,
            ..small(1, 1)
        };
        assert!(matches!(
            plan_layout(&["abcd", "efgh"], &cfg, 0, &mut image_rng(1, 0)),
            Err(SynthError::Unplaceable { .. })
        ));
    }

    #[test]
    fn single_pixel_click() {
        let m = BulletMessage::new("m0", "x", (10, 10, 11, 11));
        assert_eq!(sample_click(&m, 0, &mut image_rng(0, 0)), ClickEvent::new(0, 10, 10));
    }

    #[test]
    fn counts_and_round_trip() {
        let d = generate_dataset(&builtin_pool(), &small(2, 3)).unwrap();
        assert_eq!(d.overlays.len(), 2);
        assert_eq!(d.samples.len(), 8);
        for s in &d.samples {
            let ov = &d.overlays[s.overlay_index];
            assert_eq!(resolve_click(ov, &s.click).unwrap().text, s.question_gold);
        }
    }

    #[test]
    fn pool_too_small() {
        assert!(matches!(
            generate_dataset(&builtin_pool()[..3], &small(1, 0)),
            Err(SynthError::PoolTooSmall { have: 3, need: 4 })
        ));
    }

    #[test]
    fn manifest_is_byte_identical_and_loads() {
        let d = generate_dataset(&builtin_pool(), &small(5, 11)).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_dataset(&d, a.path()).unwrap();
        let pb = write_dataset(&generate_dataset(&builtin_pool(), &small(5, 11)).unwrap(), b.path()).unwrap();
        assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
        let (header, samples) = load_manifest(&pa).unwrap();
        assert_eq!(header.num_samples, 20);
        assert_eq!(samples, d.eval_samples());
    }

    #[test]
    fn clevr_loader() {
        let text = r#"{"info": {}, "questions": [
            {"question": "How many cubes?", "answer": "3", "question_index": 10, "image_index": 0},
            {"question": "Is there a ball?", "answer": "no", "question_index": 11, "image_index": 0},
            {"question": "Hidden?", "question_index": 12, "image_index": 1}
        ]}"#;
        let pool = load_clevr(text.as_bytes()).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool[0].id, "clevr-10");
        assert_eq!(pool[0].category.as_deref(), Some("count"));
        assert_eq!(pool[1].category.as_deref(), Some("yes-no"));
    }

    #[test]
    fn long_questions_wrap() {
        let cfg = SynthConfig::default();
        let q = "x".repeat(130);
        let (w, h) = cfg.box_size(&q);
        assert_eq!((w, h), (720, 72));
    }
}
