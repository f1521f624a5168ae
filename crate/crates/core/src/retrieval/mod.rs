//! Embedding and exact top-k similarity search over knowledge-base records.
//!
//! Two logical indexes exist: one over annotated-card summaries, used to find
//! reference cards for the architect, and one over object descriptions.

mod embed;
mod index;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{AnnotatedCard, DocStore};

pub use embed::{
    embed, EmbedError, Embedder, EmbeddingVector, HashingEmbedder, HttpEmbedder, HttpEmbedderConfig, ReplayEmbedder,
};
pub use index::{IndexEntry, IndexError, RecordKind, RecordRef, SearchHit, VectorIndex, FORMAT_VERSION};

pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("index refers to card `{0}` which is not in the knowledge base")]
    MissingCard(String),
}

/// Which text of an annotated card is embedded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardEmbedText {
    #[default]
    Summary,
    Content,
    SummaryAndContent,
}

impl CardEmbedText {
    pub fn text(self, card: &AnnotatedCard) -> String {
        match self {
            CardEmbedText::Summary => card.summary.clone(),
            CardEmbedText::Content => card.content.clone(),
            CardEmbedText::SummaryAndContent => format!("{}\n\n{}", card.summary, card.content),
        }
    }
}

/// Index over card texts, one entry per record id (in id order).
pub fn build_card_index(
    cards: &BTreeMap<String, AnnotatedCard>,
    embedder: &dyn Embedder,
    what: CardEmbedText,
) -> Result<VectorIndex, RetrievalError> {
    let mut index = VectorIndex::new();
    for (id, card) in cards {
        let vector = embed(&what.text(card), embedder, index.dim())?;
        index.add(IndexEntry {
            entry_id: id.clone(),
            vector,
            payload: RecordRef::card(id.clone()),
        })?;
    }
    Ok(index)
}

/// Index over object descriptions (the name stands in for an empty one).
pub fn build_doc_index(store: &DocStore, embedder: &dyn Embedder) -> Result<VectorIndex, RetrievalError> {
    let mut index = VectorIndex::new();
    for doc in store.iter() {
        let text = if doc.description.trim().is_empty() {
            doc.app_name.as_str()
        } else {
            doc.description.as_str()
        };
        let vector = embed(text, embedder, index.dim())?;
        index.add(IndexEntry {
            entry_id: doc.app_name.clone(),
            vector,
            payload: RecordRef::doc(doc.app_name.clone()),
        })?;
    }
    Ok(index)
}

/// A reference card returned to the architect.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub record_id: String,
    pub name: String,
    pub summary: String,
    pub content: String,
    pub score: f64,
}

/// Source of reference cards for a free-text query.
pub trait ReferenceSource: Send + Sync {
    fn references(&self, query: &str, k: usize) -> Result<Vec<Reference>, RetrievalError>;
}

/// Card retrieval backed by an embedder and the card-summary index.
pub struct CardRetriever {
    embedder: Arc<dyn Embedder>,
    index: VectorIndex,
    cards: BTreeMap<String, AnnotatedCard>,
}

impl CardRetriever {
    pub fn new(embedder: Arc<dyn Embedder>, index: VectorIndex, cards: BTreeMap<String, AnnotatedCard>) -> Self {
        Self { embedder, index, cards }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }
}

impl ReferenceSource for CardRetriever {
    fn references(&self, query: &str, k: usize) -> Result<Vec<Reference>, RetrievalError> {
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        let q = embed(query, self.embedder.as_ref(), self.index.dim())?;
        self.index
            .search(&q, k)?
            .into_iter()
            .map(|hit| {
                let card = self
                    .cards
                    .get(&hit.payload.id)
                    .ok_or_else(|| RetrievalError::MissingCard(hit.payload.id.clone()))?;
                Ok(Reference {
                    record_id: hit.payload.id,
                    name: card.name.clone(),
                    summary: card.summary.clone(),
                    content: card.content.clone(),
                    score: hit.score,
                })
            })
            .collect()
    }
}

/// A source that never returns anything; useful when no knowledge base is
/// available.
pub struct NoReferences;

impl ReferenceSource for NoReferences {
    fn references(&self, _query: &str, _k: usize) -> Result<Vec<Reference>, RetrievalError> {
        Ok(Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn card(summary: &str) -> AnnotatedCard {
        AnnotatedCard {
            name: summary.split_whitespace().next().unwrap().to_string(),
            summary: summary.into(),
            content: "[Mesh]\n[]\n".into(),
            source_path: "x.i".into(),
            apps_used: vec![],
        }
    }

    #[test]
    fn retriever_returns_nearest_card_first() {
        let mut vectors = HashMap::new();
        vectors.insert("heat rod".to_string(), vec![1.0, 0.0, 0.0]);
        vectors.insert("elastic plate".to_string(), vec![0.0, 1.0, 0.0]);
        vectors.insert("steady heat conduction".to_string(), vec![0.9, 0.1, 0.0]);
        let embedder = Arc::new(ReplayEmbedder::new(vectors));
        let cards: BTreeMap<_, _> = [("a".to_string(), card("heat rod")), ("b".to_string(), card("elastic plate"))]
            .into_iter()
            .collect();
        let index = build_card_index(&cards, embedder.as_ref(), CardEmbedText::Summary).unwrap();
        let r = CardRetriever::new(embedder, index, cards);
        let refs = r.references("steady heat conduction", 2).unwrap();
        assert_eq!(refs[0].record_id, "a");
        assert_eq!(refs.len(), 2);
        assert!(refs[0].score > refs[1].score);
    }

    #[test]
    fn empty_retriever() {
        let r = CardRetriever::new(Arc::new(HashingEmbedder::new(8)), VectorIndex::new(), BTreeMap::new());
        assert!(r.references("anything", 3).unwrap().is_empty());
    }
}
