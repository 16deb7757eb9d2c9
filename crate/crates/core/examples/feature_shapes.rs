//! Layer-by-layer tensor shapes of both streams and the head, at desk width
//! and at full width. Nothing is allocated beyond the layer lists.

use sriqa::model::{head_layers, stream_layers, FusionMethod, ModelConfig, Stream};

fn main() -> sriqa::Result<()> {
    for cfg in [ModelConfig::default(), ModelConfig::full_width()] {
        println!("width_c = {}", cfg.width_c);
        for stream in [Stream::Lr, Stream::Hr] {
            let p = stream.patch_size();
            let mut shape = [4, p, p, 3];
            let mut params = 0;
            for layer in stream_layers(cfg.width_c, stream) {
                shape = layer.output_shape(shape)?;
                if let Some((w, b)) = layer.param_shapes() {
                    params += w.iter().product::<usize>() + b.iter().product::<usize>();
                }
            }
            println!("  {stream:?} stream on 4 patches of {p}px -> {shape:?}, {params} parameters");
        }
        for method in [FusionMethod::Difference, FusionMethod::Concat, FusionMethod::Both] {
            let c = ModelConfig {
                fusion_method: method,
                ..cfg.clone()
            };
            let head: usize = head_layers(&c)
                .iter()
                .filter_map(|l| l.param_shapes())
                .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
                .sum();
            println!("  {method:?}: fused {:?}, head {head} parameters", c.fused_shape());
        }
    }
    Ok(())
}
