//! Masked-LM backends: tokenizers, the network, and the handle wrapping both.

pub mod checkpoint;
pub mod desk;
pub mod handle;
pub mod invariance;
pub mod network;
pub mod tokenizer;

pub use checkpoint::{is_resolvable, load_baseline, save_checkpoint};
pub use handle::{DistributionSet, FreezePolicy, ModelHandle, Snapshot, SnapshotState};
pub use invariance::{InvarianceReport, SentenceCheck};
pub use network::{Network, NetworkConfig, Trainable};
pub use tokenizer::{Encoding, SpecialTokens, Tokenizer, TokenizerKind};

/// Compares tokenizations under an augmented handle and its pristine counterpart.
pub fn verify_tokenization_invariance<S: AsRef<str>>(
    augmented: &ModelHandle,
    pristine: &ModelHandle,
    sentences: &[S],
) -> InvarianceReport {
    invariance::check_tokenizers(augmented.tokenizer(), pristine.tokenizer(), sentences)
}
