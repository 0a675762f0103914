//! Procedural buildings, simulated overhead scans, the on-disk dataset
//! format, and ingestion of external mesh/cloud pairs.

mod building;
mod dataset;
pub mod format;
mod ingest;
mod scan;

pub use building::{generate_building, BuildingSpec, Footprint, RoofKind, SpecDistribution};
pub use dataset::{assign_splits, build_dataset, write_manifest, BuildConfig, Dataset, DatasetRecord, Split, MANIFEST};
pub use ingest::{ingest_external, IngestOptions, IngestSummary};
pub use scan::{simulate_partial_scan, PartialCloud, ScanMeta, SensorParams};
