//! Reference experimental system: BM25 over title and abstract, summed over
//! the user's topics, with a templated explanation naming the best topics.

pub mod client;
pub mod index;
pub mod offline;
pub mod scoring;

pub use client::{run_client_cycle, ClientError, CycleReport, HttpTransport, Step, Transport, TransportError};
pub use index::{tokenize, Bm25Index, Bm25Params, InvertedIndex};
pub use scoring::{explain, score_article_for_user, top_k_for_user, ScoredArticle};
