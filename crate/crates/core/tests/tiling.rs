use filmrestore::arch::{restore, Generator, GeneratorConfig};
use filmrestore::degrade::{composite, sample_specs, synthetic_scene, Severity};
use filmrestore::infer::{restore_tiled, TileConfig};
use filmrestore::metrics::quantize;

#[test]
fn tiled_matches_whole_image_within_two_levels() {
    let mut gen = Generator::<f32>::new(GeneratorConfig {
        zero_init_output: false,
        seed: 5,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let clean = synthetic_scene::<f32>(9, 256, 256);
    let img = composite(&clean, &sample_specs(9, 256, 256, Severity::Heavy), "t").unwrap().corrupted;
    let whole = quantize(&restore(&img, &mut gen, 5).unwrap(), 8).unwrap();
    for tile in [64, 128] {
        let cfg = TileConfig { tile, overlap: 16, median_k: 5 };
        let tiled = quantize(&restore_tiled(&img, &mut gen, &cfg).unwrap(), 8).unwrap();
        let worst = whole.iter().zip(&tiled).map(|(a, b)| a.abs_diff(*b)).max().unwrap();
        assert!(worst <= 2, "tile {tile}: {worst} levels");
    }
}
