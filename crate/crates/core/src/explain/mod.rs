//! Class-activation explanations for single-input models.
//!
//! Gradients of the target class score with respect to the final
//! convolutional activation weight its channels; the rectified weighted sum,
//! normalized and upsampled, marks the image regions driving the class.

mod gradcam;
mod overlay;

pub use gradcam::{gradcam, Heatmap};
pub use overlay::{colormap, overlay, ExplainRecord};
