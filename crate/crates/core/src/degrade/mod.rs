//! Elementary degradations and the simple / diverse / diverse-plus pipelines.

mod convolve;
mod ops;
mod pipeline;

pub use convolve::convolve;
pub use ops::{add_gaussian_noise, jpeg_compress, JpegSpec, NoiseSpec, JPEG_ENCODER_ID};
pub use pipeline::{
    apply_ops, apply_pipeline, degrade_image, DegradationConfig, DegradeOp, OpTrace, PipelineKind, PIPELINE_SIDE,
};

use rayon::prelude::*;

use crate::{Error, Result};

/// Maps `f` over `items` on a dedicated pool of `workers` threads. Output order
/// follows input order, so results do not depend on the worker count.
pub fn par_map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::param(format!("thread pool: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

/// Degrades a batch of `(image_id, image)` pairs.
pub fn degrade_batch(
    config: &DegradationConfig,
    items: &[(String, crate::image::Image)],
    kind: PipelineKind,
    master_seed: u64,
    workers: usize,
) -> Result<Vec<(crate::image::Image, OpTrace)>> {
    par_map_ordered(items, workers, |(id, img)| degrade_image(config, id, img, kind, master_seed))?
        .into_iter()
        .collect()
}
