//! Template grammar and dataset generators.

pub mod catalog;
pub mod dataset;
pub mod generate;
pub mod lexical;
pub mod template;

pub use catalog::{Catalog, Frames};
pub use dataset::{DatasetSentence, GeneratedDataset, Purpose, SlotRecord};
pub use generate::*;
pub use lexical::{FillerSet, LexicalConfig, VerbEntry};
pub use template::{
    tag_structure, Alternation, ArgOrder, Bindings, Declared, Element, RelativeOrder, Role, SentenceTemplate,
    StructureTag, TenseAspect, Transformation, Voice,
};
