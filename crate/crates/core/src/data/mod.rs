//! Dataset ingestion: manifests, splits, image I/O, augmentation and the
//! synthetic phantom generator.

mod augment;
mod image;
mod manifest;
mod phantom;
mod split;

pub use self::augment::{augment, AugmentationPolicy, InverseMap};
pub use self::image::{load_image, load_mask, patchify, save_mask, unpatchify, ImageTensor, LabelMap};
pub use self::manifest::{load_manifest, Manifest, SampleRecord, Split};
pub use self::phantom::{generate_phantoms, phantom_label, render_phantom, PhantomSpec};
pub use self::split::{split_counts, stratified_split};
