//! Multimodal retrieval augmentation over pre-computed embeddings.
//!
//! - [`embedding`]: vectors, scoring, top-k selection, `RVE1` files
//! - [`index`]: HNSW and exact cosine search, `RHN1` files
//! - [`store`]: entity records keyed by vector id
//! - [`pipeline`]: image-anchored entity retrieval followed by
//!   query-expanded passage retrieval
//! - [`refine`]: query-oriented visual token selection
//! - [`training`]: noise-injected training instances
//! - [`eval`]: retrieval precision, answer accuracy, mention positions and
//!   the average-pooling baseline

pub mod embedding;
pub mod error;
pub mod eval;
pub mod index;
pub mod pipeline;
pub mod refine;
pub mod store;
pub mod text;
pub mod training;

pub use embedding::{cosine_similarity, softmax_scores, top_k, Embedding, EmbeddingFile, ScoredId};
pub use error::{Error, Result};
pub use index::{exact_search, HnswIndex, HnswParams, VectorStore};
pub use pipeline::{
    KnowledgeBase, KnowledgeSnippet, LocalLexicalBackend, MultimodalQuery, RemoteSearchBackend,
    RetrievalConfig, Retriever, TextBackend,
};
pub use refine::{refine_query_tokens, refine_retrieved_tokens, TokenSelection};
pub use store::{EntityRecord, EntityStore};
pub use training::{build_dataset, build_instance, TrainingInstance};
