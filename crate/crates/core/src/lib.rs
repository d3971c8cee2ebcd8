//! Engine for a live-commerce streaming assistant.
//!
//! The crate is organised around the two halves of the system:
//!
//! * the **offline** half ([`offline`]) turns raw product materials into a
//!   structured [`offline::ProductRecord`], drafts promotional copy and runs
//!   the prohibited-term purifier;
//! * the **online** half resolves streamer clicks on bullet messages
//!   ([`clickqa`]), answers them with product and history context, and keeps
//!   an event-level history ([`memory`]) built in the background from the
//!   frame-feature stream ([`ses`]) with caption prefix reuse ([`kea`]).
//!
//! Every large-model call goes through [`backend::ModelBackend`], so all
//! algorithms run deterministically against [`backend::MockBackend`].

pub mod backend;
pub mod clickqa;
pub mod datasynth;
pub mod fixtures;
pub mod instrument;
pub mod jsonl;
pub mod kea;
pub mod memory;
pub mod offline;
pub mod ses;
pub mod text;

pub use backend::{BackendError, BackendProfile, ModelBackend};
pub use kea::{KeaConfig, TokenScore, TruncationResult};
pub use ses::{EventSegment, FrameFeature, SesConfig, SesStream};
