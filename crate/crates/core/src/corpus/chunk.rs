use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusId};

/// Window parameters, measured in characters (Unicode scalar values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub max_len: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            max_len: 1000,
            overlap: 200,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.max_len == 0 || self.overlap >= self.max_len {
            return Err(CorpusError::InvalidChunkParams {
                max_len: self.max_len,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.max_len - self.overlap
    }
}

/// An addressable span of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub corpus: CorpusId,
    pub source_doc: String,
    /// Start offset in characters.
    pub char_offset: usize,
    pub text: String,
}

impl Chunk {
    pub fn make_id(corpus: CorpusId, source_doc: &str, char_offset: usize) -> String {
        format!("{corpus}:{source_doc}:{char_offset}")
    }
}

/// Fixed-stride character windows. Windows start every `max_len - overlap`
/// characters and the last one ends exactly at the end of the text.
pub fn chunk_document(
    corpus: CorpusId,
    source_doc: &str,
    text: &str,
    params: ChunkParams,
) -> Result<Vec<Chunk>, CorpusError> {
    params.validate()?;
    // byte offset of every char, plus the end sentinel
    let mut bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    let len = bounds.len();
    bounds.push(text.len());

    let mut chunks = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + params.max_len).min(len);
        chunks.push(Chunk {
            chunk_id: Chunk::make_id(corpus, source_doc, start),
            corpus,
            source_doc: source_doc.to_string(),
            char_offset: start,
            text: text[bounds[start]..bounds[end]].to_string(),
        });
        if end == len {
            break;
        }
        start += params.stride();
    }
    Ok(chunks)
}
