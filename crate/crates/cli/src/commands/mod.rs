mod eval;
mod gradcam;
mod preprocess;
mod summary;
mod synth;
mod train;

pub use eval::{run as eval, EvalArgs};
pub use gradcam::{run as gradcam, GradCamArgs};
pub use preprocess::{run as preprocess, PreprocessArgs};
pub use summary::{run as summary, SummaryArgs};
pub use synth::{run as synth, SynthArgs};
pub use train::{run as train, TrainArgs};

use std::path::{Path, PathBuf};

/// `<path>` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}
