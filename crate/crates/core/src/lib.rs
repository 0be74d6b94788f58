//! A from-scratch CPU inference engine for a single-class, two-head
//! Tiny-YOLO face detector, with the surrounding toolchain: a Darknet-style
//! config format, a bit-exact weights container, detection post-processing,
//! and COCO-style mAP evaluation over WIDER FACE annotations.
//!
//! ```
//! use swiftface::{config, weights, engine, detect, image::RgbImage};
//!
//! let spec = config::builtin_swiftface();
//! let params = weights::zero_init(&spec).unwrap();
//! let net = engine::Network::new(spec.clone(), &params).unwrap();
//! let img = RgbImage::new(64, 48);
//! let input = engine::preprocess(&img, &spec, engine::ResizeMode::Stretch).unwrap();
//! let heads = net.forward(&input).unwrap();
//! let faces = detect::postprocess(&heads, &spec, &input, 0.3, 0.45).unwrap();
//! assert!(faces.is_empty());
//! ```

pub mod bench;
pub mod config;
pub mod detect;
pub mod engine;
pub mod error;
pub mod eval;
pub mod image;
pub mod tensor;
pub mod weights;

pub use config::{builtin_swiftface, NetworkSpec};
pub use detect::{BBox, Detection};
pub use engine::{Network, PreprocessedImage};
pub use error::{Error, Result};
pub use tensor::Tensor;
pub use weights::ModelParams;
