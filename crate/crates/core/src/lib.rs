//! Learning class proxies in the image-embedding space from unlabeled,
//! precomputed features.
//!
//! Text proxies give raw pseudo labels; these are refined by entropic optimal
//! transport against a reference class distribution, hardened by a confidence
//! threshold, and used as targets for a KL objective that is minimized over
//! unit-norm proxy rows by projected gradient descent. Classification picks
//! the nearest learned proxy.
//!
//! ```
//! use inmap_core::{
//!     build_synthetic_model, evaluate, run_inmap, InmapParams, Mode, SyntheticSpec,
//! };
//!
//! let model = build_synthetic_model(&SyntheticSpec::new(8, 4, 200, 0.6, 2).with_seed(1))?;
//! let params = InmapParams { pgd_iters: 200, ..InmapParams::default() };
//! let out = run_inmap(&model.features, &model.text_proxies, None, &params)?;
//! let metrics = evaluate(&out.predictions, &model.labels, &model.features, &out.proxies)?;
//! assert!(metrics.accuracy > 0.5);
//! # assert_eq!(params.mode, Mode::Inmap);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod error;
pub mod pipeline;
pub mod proxy;
pub mod pseudo_label;
pub mod store;
pub mod theory;

pub use error::{Error, ErrorKind, Result};
pub use pipeline::{
    evaluate, pseudo_labels, run_inmap, InmapOutput, InmapParams, Metrics, Mode, Stage,
    StageError,
};
pub use proxy::{
    kl_gradient, kl_objective, learn_proxies, predict, project_unit_rows, PgdConfig,
    TraceEntry, TrainTrace,
};
pub use pseudo_label::{
    argmax, sinkhorn_refine, smooth_reference, softmax_labels, text_logits, threshold_labels,
    LabelDistribution, LabelRole, LogitsMatrix, ReferenceDistribution, SinkhornConfig,
    SinkhornSolver,
};
pub use store::{
    load_labels, load_matrix, normalize_rows, save_array, save_labels, save_matrix,
    save_proxies, EmbeddingMatrix, LabelVector, ProxySet,
};
pub use theory::{build_synthetic_model, SyntheticModel, SyntheticSpec};
