use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::clickqa::{ClickEvent, FrameOverlay};
use crate::memory::MemoryEntry;
use crate::offline::{CopyStyle, ProductRecord};
use crate::ses::EventSegment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    /// PNG attached to a user turn.
    pub image: Option<Vec<u8>>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            text: text.into(),
            image: None,
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
            image: None,
        }
    }
}

pub struct ClickPrompt<'a> {
    pub frame_id: u64,
    pub click: ClickEvent,
    /// Frame with the cursor already composited at the click.
    pub image: Option<&'a RgbaImage>,
    /// Known layout of the frame. Only test doubles read it; real models see
    /// the pixels and the coordinates.
    pub layout: Option<&'a FrameOverlay>,
    /// Snap distance for clicks that miss every box.
    pub near_miss_radius: f64,
}

impl ClickPrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut user = ChatMessage::user(format!(
            "The streamer clicked at pixel (x={}, y={}) in frame {}. A mouse cursor marks the point. \
             Transcribe the viewer message under the cursor exactly as written. Reply with the message text only.",
            self.click.x, self.click.y, self.frame_id
        ));
        user.image = self.image.map(encode_png);
        vec![
            ChatMessage::system("You read viewer bullet messages overlaid on live-stream frames."),
            user,
        ]
    }
}

pub(crate) fn encode_png(img: &RgbaImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("encoding an in-memory RGBA image as PNG cannot fail");
    buf.into_inner()
}

pub struct AnswerPrompt<'a> {
    pub question: &'a str,
    pub record: Option<&'a ProductRecord>,
    /// Most recent event captions, oldest first.
    pub memory: &'a [MemoryEntry],
    pub supplementary: Option<&'a str>,
}

impl AnswerPrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut context = String::new();
        if let Some(r) = self.record {
            context.push_str(&r.context_block());
        }
        if !self.memory.is_empty() {
            context.push_str("Earlier in this stream:\n");
            for e in self.memory {
                context.push_str(&format!(
                    "- [{:.1}s-{:.1}s] {}\n",
                    e.segment.start_time, e.segment.end_time, e.caption
                ));
            }
        }
        if let Some(s) = self.supplementary {
            context.push_str(&format!("Additional information:\n{s}\n"));
        }
        vec![
            ChatMessage::system(
                "You help a live-commerce streamer answer viewer questions. Use only the product \
                 information and stream history provided. If the answer is not there, reply exactly \
                 \"not specified\". Keep answers short and spoken-friendly.",
            ),
            ChatMessage::user(format!("{context}\nViewer question: {}", self.question)),
        ]
    }
}

pub struct IntegrationPrompt<'a> {
    pub product_hint: Option<&'a str>,
    /// Normalised texts supplied by the streamer.
    pub user: &'a [String],
    /// Snippets retrieved from external sources.
    pub external: &'a [String],
}

impl IntegrationPrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut body = String::new();
        if let Some(name) = self.product_hint {
            body.push_str(&format!("Product: {name}\n"));
        }
        body.push_str("Streamer materials:\n");
        for (k, t) in self.user.iter().enumerate() {
            body.push_str(&format!("[U{}] {}\n", k + 1, t));
        }
        body.push_str("External information:\n");
        for (k, t) in self.external.iter().enumerate() {
            body.push_str(&format!("[E{}] {}\n", k + 1, t));
        }
        vec![
            ChatMessage::system(
                "You organise product knowledge for a live-commerce streamer. Think step by step: \
                 (1) extract the product facts stated in the streamer materials, keeping every core attribute; \
                 (2) supplement them with facts about the same product from the external information, \
                 never overriding the streamer's values; (3) drop repeated content and anything unrelated \
                 to the product. Then output only a JSON object with keys \"name\" (string), \"price\" \
                 (string with currency), \"specifications\" (array of {\"key\", \"value\"}), \
                 \"key_features\" (array of strings) and \"service_details\" (array of strings).",
            ),
            ChatMessage::user(body),
        ]
    }
}

pub struct CopyPrompt<'a> {
    pub record: &'a ProductRecord,
    pub style: CopyStyle,
    /// User-supplied sample whose voice the copy should imitate.
    pub exemplar: Option<&'a str>,
}

impl CopyPrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let tone = match self.style {
            CopyStyle::Literary => "literary: warm, scenic, a little nostalgic",
            CopyStyle::Professional => "professional: precise, specification-led, trustworthy",
            CopyStyle::General => "general: friendly, lively and easy to say out loud",
        };
        let mut user = format!("{}\nTone: {tone}\n", self.record.context_block());
        if let Some(ex) = self.exemplar {
            user.push_str(&format!("Imitate the writing style of this sample:\n\"\"\"\n{ex}\n\"\"\"\n"));
        }
        user.push_str(
            "Write live-stream promotional copy for this product. Build it around a concrete usage \
             scenario and an emotional cue the audience will recognise. Then list three short \
             interaction phrases the streamer can use to engage viewers. Output a JSON object with \
             keys \"body\" (string) and \"interaction_phrases\" (array of strings).",
        );
        vec![
            ChatMessage::system("You write promotional copy for live-commerce streamers."),
            ChatMessage::user(user),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyDraft {
    pub body: String,
    pub interaction_phrases: Vec<String>,
}

pub struct RewritePrompt<'a> {
    pub sentence: &'a str,
    /// Flagged phrases with their category.
    pub flagged: &'a [(String, String)],
}

impl RewritePrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut defs = String::new();
        for (phrase, category) in self.flagged {
            defs.push_str(&format!("- \"{phrase}\" ({category})\n"));
        }
        vec![
            ChatMessage::system(
                "You make live-stream copy compliant with platform rules. Prohibited terms include \
                 absolute claims (\"best\", \"number one\"), unverifiable medical or efficacy claims, \
                 guarantees of results, and misleading urgency. Think step by step: first identify each \
                 problematic phrase, then revise or remove it while keeping the sentence fluent and its \
                 meaning intact.",
            ),
            ChatMessage::user(format!(
                "Flagged phrases:\n{defs}Sentence: {}\nReply with the revised sentence only.",
                self.sentence
            )),
        ]
    }
}

pub struct CaptionPrompt<'a> {
    pub segment: &'a EventSegment,
    /// Tokens reused from the previous caption.
    pub prefix: Option<&'a [String]>,
}

impl CaptionPrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        let seg = self.segment;
        let mut text = format!(
            "Describe in one sentence what happens in the live stream between frames {} and {} \
             ({:.1}s to {:.1}s).",
            seg.start_frame, seg.end_frame, seg.start_time, seg.end_time
        );
        if let Some(prefix) = self.prefix {
            text.push_str(&format!(
                " Continue this caption without repeating it: \"{}\"",
                prefix.join(" ")
            ));
        }
        vec![
            ChatMessage::system("You caption events in a live-commerce video stream."),
            ChatMessage::user(text),
        ]
    }
}

pub struct JudgePrompt<'a> {
    pub question: &'a str,
    pub predicted: &'a str,
    pub gold: &'a str,
}

impl JudgePrompt<'_> {
    pub fn messages(&self) -> Vec<ChatMessage> {
        vec![
            ChatMessage::system("You grade answers. Reply with yes or no only."),
            ChatMessage::user(format!(
                "Question: {}\nReference answer: {}\nCandidate answer: {}\nIs the candidate answer correct?",
                self.question, self.gold, self.predicted
            )),
        ]
    }
}
