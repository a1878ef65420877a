//! Frames, triplet datasets, synthetic sequences and batching.

mod batch;
mod frame;
mod synthetic;
mod triplets;

pub use batch::{make_batches, stack_frames, Batch};
pub use frame::{quantize, read_frame, write_frame, Frame};
pub use synthetic::{
    canvas_margin, generate_synthetic, read_flow, render_texture, write_flow, FlowField, SyntheticSample,
    SyntheticSpec, Texture,
};
pub use triplets::{
    extract_triplets, is_duplicate, list_frames, load_dataset, load_flow, triplet_dir_name, write_dataset,
    Decision, ExtractOptions, FrameTriplet, Manifest, ManifestEntry, DEDUP_THRESHOLD,
};
