//! Dataset ingestion, task streams, replay memory and the incremental OOD
//! subset protocol.

mod dataset;
mod memory;
mod ood;
mod stream;

pub use dataset::{load_dataset, save_dataset, FeatureDataset, Format};
pub use memory::{herding_select, ExemplarStrategy, MemoryBuffer};
pub use ood::{ood_subset, BenchmarkData, ManifestEntry, OodSet, OodSuite, OodTag, SuiteManifest};
pub use stream::{split_tasks, ClassOrder, Task, TaskStream};
