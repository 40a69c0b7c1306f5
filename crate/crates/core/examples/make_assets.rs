//! Regenerates the bundled quality model and illumination profile from the
//! synthetic pristine corpus.

use std::path::Path;

use lowlight_core::intra::build_profile;
use lowlight_core::quality::{QualityModel, DEFAULT_RIDGE};
use lowlight_core::synth::pristine_corpus;

fn main() -> lowlight_core::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let corpus = pristine_corpus();
    QualityModel::pristine_from_corpus(&corpus, DEFAULT_RIDGE)?.save(&dir.join("pristine.model"))?;
    build_profile(&corpus)?.save(&dir.join("default.profile.json"))?;
    println!("wrote assets for {} images", corpus.len());
    Ok(())
}
