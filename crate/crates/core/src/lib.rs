//! Zero-shot restoration of a distorted satellite image from a single
//! clean reference: disentangle the distortion, stamp graded copies of it
//! onto the reference to synthesize supervised pairs, then distill a
//! restoration network and run it on the distorted input.

pub mod checkpoint;
pub mod config;
pub mod ddn;
pub mod degradations;
pub mod error;
pub mod feature;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod pipeline;
pub mod restoration;
pub mod transfer;

pub use config::{validate_config, RunConfig};
pub use ddn::{train_ddn, training_step, DDNBundle};
pub use error::{Error, Result};
pub use feature::{FeatureMap, FeatureRole};
pub use image::{load_image, save_image, ImageTensor};
pub use losses::LossReport;
pub use networks::{
    build_networks, ArchDescriptor, DecoderNet, EncoderNet, EncoderRole, FeatureDiscriminatorNet,
    Networks,
};
pub use restoration::{restore, train_restoration, RestorationNet};
pub use transfer::{generate_kd_dataset, transfer_distortion, DistilledPair};
