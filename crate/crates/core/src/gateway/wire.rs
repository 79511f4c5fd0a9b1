//! JSON chat-completion wire format.
//!
//! Requests carry a list of messages, each with a `parts` array mixing
//! `{"type":"text"}` and `{"type":"image","data":<base64 PNG>}` entries.
//! Responses carry `text`, `image` (base64 PNG), `refusal` or `embeddings`.

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::image::ImageBuffer;
use crate::prompt::{ChatRole, ImageSlot, ImageSource, MultimodalMessage, Part, PromptBundle, PromptKind, SlotRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Text,
    Image,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WirePart {
    Text { text: String },
    Image { slot: String, role: SlotRole, data: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: ChatRole,
    pub parts: Vec<WirePart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub output: OutputKind,
    /// Bundle kind (`deployment`, ...) or evaluator phase (`vie_sc`, `vie_pq`).
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub messages: Vec<WireMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input: Vec<String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Sampling index; lets repeated generations of one bundle differ.
    pub attempt: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refusal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WireError {
    #[error("image slot `{0}` is not bound to pixels")]
    Unbound(String),
    #[error("image slot `{slot}` is not decodable: {message}")]
    BadImage { slot: String, message: String },
    #[error("unknown bundle kind `{0}`")]
    UnknownKind(String),
    #[error("malformed message: {0}")]
    Message(String),
}

pub fn encode_image(img: &ImageBuffer) -> String {
    B64.encode(img.encode_png())
}

pub fn decode_image(data: &str) -> Result<ImageBuffer, String> {
    let bytes = B64.decode(data.trim()).map_err(|e| e.to_string())?;
    ImageBuffer::decode(&bytes).map_err(|e| e.to_string())
}

pub fn encode_messages(messages: &[MultimodalMessage]) -> Result<Vec<WireMessage>, WireError> {
    messages
        .iter()
        .map(|m| {
            let parts = m
                .parts()
                .iter()
                .map(|p| match p {
                    Part::Text(t) => Ok(WirePart::Text { text: t.clone() }),
                    Part::Image(slot) => match &slot.source {
                        ImageSource::Pixels(img) => Ok(WirePart::Image {
                            slot: slot.label.clone(),
                            role: slot.role,
                            data: encode_image(img),
                        }),
                        ImageSource::Path(_) => Err(WireError::Unbound(slot.label.clone())),
                    },
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(WireMessage { role: m.role(), parts })
        })
        .collect()
}

pub fn decode_messages(messages: &[WireMessage]) -> Result<Vec<MultimodalMessage>, WireError> {
    messages
        .iter()
        .map(|m| {
            let parts = m
                .parts
                .iter()
                .map(|p| match p {
                    WirePart::Text { text } => Ok(Part::Text(text.clone())),
                    WirePart::Image { slot, role, data } => {
                        let img = decode_image(data).map_err(|message| WireError::BadImage {
                            slot: slot.clone(),
                            message,
                        })?;
                        Ok(Part::Image(ImageSlot {
                            label: slot.clone(),
                            role: *role,
                            source: ImageSource::Pixels(Arc::new(img)),
                        }))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            MultimodalMessage::new(m.role, parts).map_err(|e| WireError::Message(e.to_string()))
        })
        .collect()
}

/// Inverse of the message encoding for bundle-backed requests.
pub fn decode_bundle(req: &WireRequest) -> Result<PromptBundle, WireError> {
    let kind: PromptKind = req.kind.parse().map_err(|_| WireError::UnknownKind(req.kind.clone()))?;
    Ok(PromptBundle::new(kind, decode_messages(&req.messages)?))
}

impl WireRequest {
    pub fn images(&self) -> impl Iterator<Item = (&str, SlotRole, &str)> {
        self.messages.iter().flat_map(|m| {
            m.parts.iter().filter_map(|p| match p {
                WirePart::Image { slot, role, data } => Some((slot.as_str(), *role, data.as_str())),
                WirePart::Text { .. } => None,
            })
        })
    }

    pub fn text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| m.parts.iter())
            .filter_map(|p| match p {
                WirePart::Text { text } => Some(text.as_str()),
                WirePart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}
