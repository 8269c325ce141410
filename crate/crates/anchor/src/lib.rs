//! Client for pulling event anchor phrases out of a prompt via a
//! chat-completion endpoint, plus a file-based provider so everything
//! downstream runs offline.
//!
//! The live path sends one strict instruction (answer on a single
//! comma-separated line, every phrase copied verbatim), validates the
//! reply against the prompt, and groups phrases by the event whose
//! sentence contains them. The offline path reads the same phrase lists
//! from a plan file and applies identical validation.

pub mod service;
pub mod transport;

pub use service::{
    anchors_from_file, anchors_from_plan, assign_to_events, extract_anchors, AnchorError,
    AnchorRequest, AnchorResponse, FileAnchors, EXTRACTION_INSTRUCTION,
};
pub use transport::{ChatMessage, ChatRequest, ChatTransport, FixtureTransport, HttpTransport, TransportError};
