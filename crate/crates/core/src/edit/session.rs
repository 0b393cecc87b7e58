use serde::{Deserialize, Serialize};

use super::{image_id, quantize, Editor};
use crate::error::Result;
use crate::imageio::Geometry;
use crate::mask::RegionMask;
use crate::model::Encoded;
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub base_id: String,
    pub style_ref_id: String,
    pub result_id: String,
    pub mask_coverage: f64,
}

/// A chain of successive region edits on one image.
///
/// Each result, rounded to 8 bits, becomes the base of the next edit and is
/// re-encoded, so the cached codes always belong to the current base.
#[derive(Debug)]
pub struct EditSession {
    pub id: String,
    pub geometry: Option<Geometry>,
    base: ImageTensor,
    encoded: Encoded,
    history: Vec<HistoryEntry>,
    masks: Vec<Vec<u8>>,
}

impl EditSession {
    pub fn new(editor: &Editor, id: impl Into<String>, base: ImageTensor) -> Result<Self> {
        let base = quantize(&base);
        let encoded = editor.encode(&base)?;
        Ok(Self {
            id: id.into(),
            geometry: None,
            base,
            encoded,
            history: Vec::new(),
            masks: Vec::new(),
        })
    }

    pub fn base(&self) -> &ImageTensor {
        &self.base
    }

    pub fn encoded(&self) -> &Encoded {
        &self.encoded
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// PNG bytes of the mask used at each history step.
    pub fn mask_png(&self, step: usize) -> Option<&[u8]> {
        self.masks.get(step).map(Vec::as_slice)
    }

    pub fn reconstruction(&self, editor: &Editor) -> Result<ImageTensor> {
        editor.generate(&self.encoded.content, &self.encoded.style)
    }

    /// Applies a region edit to the current base and advances the base to
    /// the result. Nothing changes if the edit fails.
    pub fn apply(
        &mut self,
        editor: &Editor,
        style: &ImageTensor,
        mask: &RegionMask,
    ) -> Result<ImageTensor> {
        let edit = editor.region_edit_encoded(&self.encoded, style, mask)?;
        let result = quantize(&edit.result);
        let encoded = editor.encode(&result)?;
        let mask_png = mask.to_png_bytes()?;
        let entry = HistoryEntry {
            step: self.history.len(),
            base_id: image_id(&self.base),
            style_ref_id: image_id(style),
            result_id: image_id(&result),
            mask_coverage: mask.coverage(),
        };
        self.history.push(entry);
        self.masks.push(mask_png);
        self.base = result.shallow_clone();
        self.encoded = encoded;
        Ok(result)
    }
}
