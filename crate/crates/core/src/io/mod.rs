//! On-disk formats: OODT tensors, pack manifests, pool tables, detector
//! states and score sets.

pub mod manifest;
pub mod oodt;
pub mod pool_table;
pub mod scores;
pub mod state;

pub use manifest::{read_manifest, write_manifest, write_pack, Manifest};
pub use oodt::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, ReadOptions};
pub use pool_table::{parse_pool_table, read_pool_table, write_pool_table, PoolRow, PoolTable};
pub use scores::{read_scores, write_scores};
pub use state::{load_state, save_state};
