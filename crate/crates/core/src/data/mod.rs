//! Dataset files, the synthetic corpus and checkpoints.

mod checkpoint;
mod fasta;
mod pairs;
mod scores;
mod synthetic;

pub use checkpoint::{Checkpoint, StoredTensor, FORMAT_VERSION, MAGIC};
pub use fasta::{format_fasta, parse_fasta, read_fasta, write_fasta, FastaRecord};
pub use pairs::{format_pairs, load_pairs, parse_pairs, write_pairs, PairRecord};
pub use scores::{format_scores, parse_scores, read_scores};
pub use synthetic::{
    format_labels, generate_synthetic, motif_profile, parse_labels, write_labels, Property,
    SyntheticRecord, SyntheticRules,
};
