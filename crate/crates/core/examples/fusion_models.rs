//! Build both fusion architectures and inspect their parameters and outputs.

use memefuse::encoders::{EncoderConfig, EncoderRegistry};
use memefuse::labels::Task;
use memefuse::models::{Architecture, FusionModel, ModelConfig};
use memefuse::synth::render_image;

fn main() -> memefuse::error::Result<()> {
    let enc = EncoderConfig::default();
    let registry = EncoderRegistry::from_config(&enc)?;
    let img = render_image(3, 1, 64);
    for arch in [Architecture::DoubleTower, Architecture::SingleFlow] {
        let model = FusionModel::build(arch, &ModelConfig::default(), &enc, &registry, &Task::ALL)?;
        println!("{arch}: {} trainable weights", model.store().trainable_count());
        for (group, ids) in model.parameter_groups() {
            let n: usize = ids.iter().map(|&id| model.store().value(id).data().len()).sum();
            println!("  {:<7} {n} weights", group.name());
        }
        let p = model.predict_proba("a caption on a meme", &img, None)?;
        println!("  untrained probabilities {p:.3?}");
        let tta = model.predict_proba("a caption on a meme", &img, Some(56))?;
        println!("  with five-crop averaging {tta:.3?}");
    }
    Ok(())
}
