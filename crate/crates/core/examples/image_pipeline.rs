//! Resize, training augmentation, five-crop inference and encoder features.

use memefuse::encoders::{EncoderConfig, EncoderRegistry, TOY_IMAGE, TOY_TEXT};
use memefuse::image::{five_crop, train_augment};
use memefuse::seed;
use memefuse::synth::render_image;

fn main() -> memefuse::error::Result<()> {
    let img = render_image(7, 2, 96).resize(64, 64);
    println!("image {}x{}", img.height(), img.width());

    let mut rng = seed::rng(1, "example", &[]);
    let aug = train_augment(&img, &mut rng);
    println!("augmented stays in [0, 1]: {}", aug.in_unit_range());

    let crops = five_crop(&img, 56)?;
    println!("{} crops of {}x{}", crops.len(), crops[0].height(), crops[0].width());

    let registry = EncoderRegistry::from_config(&EncoderConfig::default())?;
    let text = registry.encode_text("when the meme hits different", TOY_TEXT, 16)?;
    println!("text tokens {:?}, pooled dim {}", text.token_ids, text.pooled.len());

    for (i, crop) in crops.iter().enumerate() {
        let f = registry.encode_image(crop, TOY_IMAGE)?;
        let norm = f.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("crop {i}: {} features, norm {norm:.3}", f.vector.len());
    }
    Ok(())
}
