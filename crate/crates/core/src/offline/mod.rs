//! Offline preparation: product knowledge integration, promotional copy and
//! prohibited-term purification.

mod lexicon;
mod store;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CopyPrompt, IntegrationPrompt, ModelBackend};
use crate::text::normalize_whitespace;

pub use lexicon::{
    apply_matches, detect_prohibited, purify, Action, Lexicon, LexiconEntry, LexiconError, Match, PurificationReport,
    ReportedMatch, LEXICON_VERSION,
};
pub use store::{RecordStore, StoreError, RECORD_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Text,
    PreExtractedDocument,
    ImageReference,
    Transcript,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    User,
    ExternalRetrieval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawMaterial {
    pub source_kind: SourceKind,
    /// Text, or a path for image references.
    pub content: String,
    pub origin: Origin,
}

impl RawMaterial {
    pub fn user_text(content: impl Into<String>) -> Self {
        Self {
            source_kind: SourceKind::Text,
            content: content.into(),
            origin: Origin::User,
        }
    }

    pub fn external(content: impl Into<String>) -> Self {
        Self {
            source_kind: SourceKind::Text,
            content: content.into(),
            origin: Origin::ExternalRetrieval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Ingested {
    Text { kind: SourceKind, origin: Origin, text: String },
    /// Image content is not interpreted; only the reference is kept.
    Reference { origin: Origin, path: String },
}

impl Ingested {
    pub fn text(&self) -> Option<&str> {
        match self {
            Ingested::Text { text, .. } => Some(text),
            Ingested::Reference { .. } => None,
        }
    }

    pub fn origin(&self) -> Origin {
        match self {
            Ingested::Text { origin, .. } | Ingested::Reference { origin, .. } => *origin,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("material content is empty")]
    Empty,
    #[error("material is not valid UTF-8: {0}")]
    Undecodable(#[from] std::str::Utf8Error),
    #[error("material contains a NUL byte at offset {0}")]
    ControlByte(usize),
}

/// Collapse whitespace and tag with origin. Image references pass through.
pub fn ingest(material: &RawMaterial) -> Result<Ingested, IngestError> {
    let content = material.content.trim();
    if content.is_empty() {
        return Err(IngestError::Empty);
    }
    if material.source_kind == SourceKind::ImageReference {
        return Ok(Ingested::Reference {
            origin: material.origin,
            path: content.to_string(),
        });
    }
    if let Some(pos) = content.find('\0') {
        return Err(IngestError::ControlByte(pos));
    }
    Ok(Ingested::Text {
        kind: material.source_kind,
        origin: material.origin,
        text: normalize_whitespace(content),
    })
}

/// [`ingest`] for raw bytes of unknown encoding.
pub fn ingest_bytes(kind: SourceKind, bytes: &[u8], origin: Origin) -> Result<Ingested, IngestError> {
    let content = std::str::from_utf8(bytes)?;
    ingest(&RawMaterial {
        source_kind: kind,
        content: content.to_string(),
        origin,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Spec {
    pub key: String,
    pub value: String,
}

impl Spec {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }
}

/// Where a record field's value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSource {
    User,
    ExternalRetrieval,
    /// Not found verbatim in any material.
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// `name`, `price`, `specifications.<key>`, `key_features[i]` or `service_details[i]`.
    pub field: String,
    pub origin: FieldSource,
    /// External value that lost to the streamer's value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overridden: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub name: String,
    pub price: String,
    #[serde(default)]
    pub specifications: Vec<Spec>,
    #[serde(default)]
    pub key_features: Vec<String>,
    #[serde(default)]
    pub service_details: Vec<String>,
    #[serde(default)]
    pub provenance: Vec<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("product_id is empty")]
    EmptyId,
    #[error("product name is empty")]
    EmptyName,
}

impl ProductRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.product_id.trim().is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.name.trim().is_empty() {
            return Err(RecordError::EmptyName);
        }
        Ok(())
    }

    /// Plain-text rendering used as model context.
    pub fn context_block(&self) -> String {
        let mut s = format!("Product: {}\nPrice: {}\n", self.name, self.price);
        if !self.specifications.is_empty() {
            s.push_str("Specifications:\n");
            for sp in &self.specifications {
                s.push_str(&format!("- {}: {}\n", sp.key, sp.value));
            }
        }
        for (title, items) in [("Key features", &self.key_features), ("Service details", &self.service_details)] {
            if !items.is_empty() {
                s.push_str(&format!("{title}:\n"));
                for it in items {
                    s.push_str(&format!("- {it}\n"));
                }
            }
        }
        s
    }

    pub fn origin_of(&self, field: &str) -> Option<&Provenance> {
        self.provenance.iter().find(|p| p.field == field)
    }
}

/// A `label: value` fact found in material text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldMarker {
    Name(String),
    Price(String),
    Spec(String, String),
    Feature(String),
    Service(String),
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(name|price|specs?|specifications?|features?|services?)\s*:").expect("static regex")
    })
}

/// Markers in `text`, in order. A value runs to the next marker or line end.
pub fn field_markers(text: &str) -> Vec<FieldMarker> {
    let re = marker_regex();
    let found: Vec<_> = re.captures_iter(text).collect();
    let mut out = Vec::new();
    for (k, cap) in found.iter().enumerate() {
        let whole = cap.get(0).expect("group 0");
        let stop = found.get(k + 1).map_or(text.len(), |n| n.get(0).expect("group 0").start());
        let mut value = &text[whole.end()..stop];
        if let Some(nl) = value.find('\n') {
            value = &value[..nl];
        }
        let value = value.trim().trim_end_matches([';', ',']).trim();
        if value.is_empty() {
            continue;
        }
        let label = cap[1].to_ascii_lowercase();
        let marker = if label == "name" {
            FieldMarker::Name(value.to_string())
        } else if label == "price" {
            FieldMarker::Price(value.to_string())
        } else if label.starts_with("spec") {
            match value.split_once(['=', ':']) {
                Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
                    FieldMarker::Spec(k.trim().to_string(), v.trim().to_string())
                }
                _ => FieldMarker::Spec("detail".to_string(), value.to_string()),
            }
        } else if label.starts_with("feature") {
            FieldMarker::Feature(value.to_string())
        } else {
            FieldMarker::Service(value.to_string())
        };
        out.push(marker);
    }
    out
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("no materials supplied")]
    NoMaterials,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("integration output rejected ({reason}); raw output: {raw}")]
    Schema { reason: String, raw: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntegratedFields {
    name: String,
    price: String,
    #[serde(default)]
    specifications: Vec<Spec>,
    #[serde(default)]
    key_features: Vec<String>,
    #[serde(default)]
    service_details: Vec<String>,
}

fn dedup<T: Clone, K: PartialEq>(items: Vec<T>, key: impl Fn(&T) -> K) -> Vec<T> {
    let mut seen: Vec<K> = Vec::new();
    let mut out = Vec::new();
    for it in items {
        let k = key(&it);
        if !seen.contains(&k) {
            seen.push(k);
            out.push(it);
        }
    }
    out
}

fn norm_key(s: &str) -> String {
    normalize_whitespace(s).to_lowercase()
}

/// URL-safe identifier derived from a product name.
pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    let out = out.trim_end_matches('-').to_string();
    if out.is_empty() {
        "product".into()
    } else {
        out
    }
}

fn locate(value: &str, user: &[String], external: &[String]) -> FieldSource {
    let v = value.to_lowercase();
    if user.iter().any(|t| t.to_lowercase().contains(&v)) {
        FieldSource::User
    } else if external.iter().any(|t| t.to_lowercase().contains(&v)) {
        FieldSource::ExternalRetrieval
    } else {
        FieldSource::Model
    }
}

fn first_marker(texts: &[String], pick: impl Fn(FieldMarker) -> Option<String>) -> Option<String> {
    texts.iter().flat_map(|t| field_markers(t)).find_map(pick)
}

/// Build a product record from streamer materials and retrieved snippets.
///
/// The backend drafts the five fields; the engine then validates the draft,
/// drops duplicates, enforces streamer precedence for name and price, and
/// records where each value came from.
pub fn integrate(
    materials: &[RawMaterial],
    external_snippets: &[String],
    backend: &dyn ModelBackend,
    product_id: Option<&str>,
) -> Result<ProductRecord, IntegrateError> {
    if materials.is_empty() {
        return Err(IntegrateError::NoMaterials);
    }
    let mut user = Vec::new();
    let mut external = Vec::new();
    for m in materials {
        let ing = ingest(m)?;
        let text = match &ing {
            Ingested::Text { text, .. } => text.clone(),
            Ingested::Reference { path, .. } => format!("[image reference: {path}]"),
        };
        match ing.origin() {
            Origin::User => user.push(text),
            Origin::ExternalRetrieval => external.push(text),
        }
    }
    for s in external_snippets {
        let ing = ingest(&RawMaterial::external(s.as_str()))?;
        external.extend(ing.text().map(str::to_string));
    }

    let raw = backend.integrate(&IntegrationPrompt {
        product_hint: None,
        user: &user,
        external: &external,
    })?;
    let fields: IntegratedFields = serde_json::from_str(&raw).map_err(|e| IntegrateError::Schema {
        reason: e.to_string(),
        raw: raw.clone(),
    })?;
    let name = normalize_whitespace(&fields.name);
    if name.is_empty() {
        return Err(IntegrateError::Schema {
            reason: "name is empty".into(),
            raw,
        });
    }

    let mut record = ProductRecord {
        product_id: product_id.map_or_else(|| slugify(&name), str::to_string),
        name,
        price: normalize_whitespace(&fields.price),
        specifications: dedup(
            fields
                .specifications
                .into_iter()
                .map(|s| Spec::new(normalize_whitespace(&s.key), normalize_whitespace(&s.value)))
                .filter(|s| !s.key.is_empty() && !s.value.is_empty())
                .collect(),
            |s| (norm_key(&s.key), norm_key(&s.value)),
        ),
        key_features: dedup(
            fields.key_features.iter().map(|s| normalize_whitespace(s)).filter(|s| !s.is_empty()).collect(),
            |s| norm_key(s),
        ),
        service_details: dedup(
            fields.service_details.iter().map(|s| normalize_whitespace(s)).filter(|s| !s.is_empty()).collect(),
            |s| norm_key(s),
        ),
        provenance: Vec::new(),
    };

    // streamer values win for the scalar fields
    let scalar = |pick: fn(FieldMarker) -> Option<String>| (first_marker(&user, pick), first_marker(&external, pick));
    let names = scalar(|m| if let FieldMarker::Name(v) = m { Some(v) } else { None });
    let prices = scalar(|m| if let FieldMarker::Price(v) = m { Some(v) } else { None });
    for (field, (u, e)) in [("name", names), ("price", prices)] {
        let slot = if field == "name" { &mut record.name } else { &mut record.price };
        let mut overridden = None;
        if let Some(u) = &u {
            if !slot.eq_ignore_ascii_case(u) {
                *slot = u.clone();
            }
            if let Some(e) = &e {
                if !e.eq_ignore_ascii_case(u) {
                    overridden = Some(e.clone());
                }
            }
        }
        let origin = if slot.is_empty() {
            FieldSource::Model
        } else {
            locate(slot, &user, &external)
        };
        record.provenance.push(Provenance {
            field: field.to_string(),
            origin,
            overridden,
        });
    }
    for s in &record.specifications {
        record.provenance.push(Provenance {
            field: format!("specifications.{}", s.key),
            origin: locate(&s.value, &user, &external),
            overridden: None,
        });
    }
    for (label, items) in [("key_features", &record.key_features), ("service_details", &record.service_details)] {
        for (i, it) in items.iter().enumerate() {
            record.provenance.push(Provenance {
                field: format!("{label}[{i}]"),
                origin: locate(it, &user, &external),
                overridden: None,
            });
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopyStyle {
    Literary,
    Professional,
    General,
}

impl CopyStyle {
    pub const ALL: [CopyStyle; 3] = [CopyStyle::Literary, CopyStyle::Professional, CopyStyle::General];

    pub fn as_str(self) -> &'static str {
        match self {
            CopyStyle::Literary => "literary",
            CopyStyle::Professional => "professional",
            CopyStyle::General => "general",
        }
    }
}

impl fmt::Display for CopyStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CopyStyle {
    type Err = CopyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| CopyError::UnknownStyle(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Copy {
    pub product_id: String,
    pub style: CopyStyle,
    pub body: String,
    pub interaction_phrases: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CopyError {
    #[error("unknown copy style {0:?}; expected literary, professional or general")]
    UnknownStyle(String),
    #[error("style exemplar is empty")]
    EmptyExemplar,
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] RecordError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
}

fn draft_copy(
    record: &ProductRecord,
    style: CopyStyle,
    exemplar: Option<&str>,
    backend: &dyn ModelBackend,
) -> Result<Copy, CopyError> {
    record.validate()?;
    let draft = backend.write_copy(&CopyPrompt { record, style, exemplar })?;
    Ok(Copy {
        product_id: record.product_id.clone(),
        style,
        body: draft.body,
        interaction_phrases: draft.interaction_phrases,
    })
}

pub fn generate_copy(record: &ProductRecord, style: CopyStyle, backend: &dyn ModelBackend) -> Result<Copy, CopyError> {
    draft_copy(record, style, None, backend)
}

/// Copy in the voice of a user-supplied sample.
pub fn adapt_style(
    record: &ProductRecord,
    exemplar: &str,
    style: CopyStyle,
    backend: &dyn ModelBackend,
) -> Result<Copy, CopyError> {
    if exemplar.trim().is_empty() {
        return Err(CopyError::EmptyExemplar);
    }
    draft_copy(record, style, Some(exemplar), backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBackend;

    #[test]
    fn ingest_normalises() {
        let got = ingest(&RawMaterial::user_text("  Foo\n\nBar ")).unwrap();
        assert_eq!(got.text(), Some("Foo Bar"));
        let img = RawMaterial {
            source_kind: SourceKind::ImageReference,
            content: "shots/front.png".into(),
            origin: Origin::User,
        };
        assert_eq!(
            ingest(&img).unwrap(),
            Ingested::Reference {
                origin: Origin::User,
                path: "shots/front.png".into()
            }
        );
        assert!(matches!(ingest(&RawMaterial::user_text(" \n")), Err(IngestError::Empty)));
        assert!(matches!(
            ingest_bytes(SourceKind::Transcript, &[0x66, 0xff, 0x6f], Origin::User),
            Err(IngestError::Undecodable(_))
        ));
        let doc = ingest_bytes(SourceKind::PreExtractedDocument, b"spec sheet", Origin::ExternalRetrieval).unwrap();
        assert_eq!(doc.origin(), Origin::ExternalRetrieval);
    }

    #[test]
    fn markers_split_flattened_text() {
        let m = field_markers("name: AquaBot Kettle price: $39.99; spec: capacity = 1.7 L feature: auto shut-off");
        assert_eq!(
            m,
            vec![
                FieldMarker::Name("AquaBot Kettle".into()),
                FieldMarker::Price("$39.99".into()),
                FieldMarker::Spec("capacity".into(), "1.7 L".into()),
                FieldMarker::Feature("auto shut-off".into()),
            ]
        );
        assert_eq!(field_markers("Service:\n"), vec![]);
    }

    #[test]
    fn integrate_with_mock() {
        let mock = MockBackend::new(0);
        let materials = vec![
            RawMaterial::user_text("name: AquaBot Kettle\nprice: $39.99\nfeature: boils in 3 minutes\nfeature: boils in 3 minutes"),
            RawMaterial::user_text("service: two-year warranty"),
        ];
        let snippets = vec!["price: $45.00 spec: capacity = 1.7 L".to_string()];
        let r = integrate(&materials, &snippets, &mock, None).unwrap();
        assert_eq!(r.product_id, "aquabot-kettle");
        assert_eq!(r.name, "AquaBot Kettle");
        assert_eq!(r.price, "$39.99");
        assert_eq!(r.key_features, vec!["boils in 3 minutes"]);
        assert_eq!(r.specifications, vec![Spec::new("capacity", "1.7 L")]);
        let price = r.origin_of("price").unwrap();
        assert_eq!(price.origin, FieldSource::User);
        assert_eq!(price.overridden.as_deref(), Some("$45.00"));
        assert_eq!(r.origin_of("specifications.capacity").unwrap().origin, FieldSource::ExternalRetrieval);
    }

    #[test]
    fn integrate_rejects_nameless_output() {
        let mock = MockBackend::new(0);
        let err = integrate(&[RawMaterial::user_text("just some chatter")], &[], &mock, None).unwrap_err();
        match err {
            IntegrateError::Schema { raw, .. } => assert!(raw.contains("\"name\"")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(integrate(&[], &[], &mock, None), Err(IntegrateError::NoMaterials)));
    }

    fn record() -> ProductRecord {
        ProductRecord {
            product_id: "p1".into(),
            name: "AquaBot Kettle".into(),
            price: "$39.99".into(),
            ..ProductRecord::default()
        }
    }

    #[test]
    fn copy_styles() {
        let mock = MockBackend::new(0);
        let general = generate_copy(&record(), CopyStyle::General, &mock).unwrap();
        assert!(general.body.contains("AquaBot Kettle") && general.body.contains("$39.99"));
        assert_eq!(general.interaction_phrases.len(), 3);
        let lit = generate_copy(&record(), CopyStyle::Literary, &mock).unwrap();
        let pro = generate_copy(&record(), CopyStyle::Professional, &mock).unwrap();
        assert_ne!(lit.body, pro.body);
        assert!(matches!("poetic".parse::<CopyStyle>(), Err(CopyError::UnknownStyle(_))));
        assert_eq!("Literary".parse::<CopyStyle>().unwrap(), CopyStyle::Literary);
    }

    #[test]
    fn style_adaptation() {
        let mock = MockBackend::new(0);
        assert!(matches!(
            adapt_style(&record(), " ", CopyStyle::General, &mock),
            Err(CopyError::EmptyExemplar)
        ));
        let a = adapt_style(&record(), "E1", CopyStyle::General, &mock).unwrap();
        let b = adapt_style(&record(), "E1", CopyStyle::General, &mock).unwrap();
        assert_eq!(a, b);
        assert!(a.body.starts_with(&format!("[style {}]", crate::backend::fingerprint("E1"))));
    }
}
