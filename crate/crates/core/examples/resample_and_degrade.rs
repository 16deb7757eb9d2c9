//! Runs repeated downsample/upscale cycles on a synthetic picture and prints
//! how far each iteration drifts from the original.
//!
//! cargo run --release --example resample_and_degrade [out_dir]

use sriqa::dataset::ContentClass;
use sriqa::imaging::{ds_sr_iterate, psnr, write_image, BuiltinCubic, ScaleFactor};
use sriqa::synth::synthetic_content;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from);
    let original = synthetic_content(ContentClass::Buildings, 3, 120, 120);
    for (factor, cap) in [(2.0, 8), (3.0, 7), (4.0, 6)] {
        let steps = ds_sr_iterate(&original, ScaleFactor::new(factor)?, cap, &BuiltinCubic::bicubic())?;
        print!("x{factor}:");
        for (k, step) in steps.iter().enumerate() {
            print!(" t{}={:.2}dB", k + 1, psnr(&original, &step.hr)?);
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir)?;
                write_image(&dir.join(format!("x{factor}_t{}.ppm", k + 1)), &step.hr)?;
            }
        }
        println!();
    }
    Ok(())
}
