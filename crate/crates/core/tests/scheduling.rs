//! Results must not depend on how many workers run the kernels.

use ndarray::{Array1, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sar2opt_core::nn::{conv2d_backward, conv2d_forward, ConvGeom};
use sar2opt_core::pix2pix_net::ModelSpec;
use sar2opt_core::quality_metrics::{ssim, SsimParams};
use sar2opt_core::tile_store::{DType, Tile};
use sar2opt_core::trainer::{train_epoch, PreparedPair, TrainSpec, TrainState};

fn on_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn kernels_are_identical_across_pool_sizes() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let x = Array4::from_shape_simple_fn((3, 5, 20, 20), || r.gen_range(-1.0f32..1.0));
    let w = Array4::from_shape_simple_fn((7, 5, 4, 4), || r.gen_range(-0.3f32..0.3));
    let b = Array1::from_shape_simple_fn(7, || r.gen_range(-0.1f32..0.1));
    let mut tile = || {
        Tile::new(
            Array3::from_shape_simple_fn((3, 40, 40), || r.gen_range(0..256) as f64),
            DType::U8,
            None,
        )
        .unwrap()
    };
    let (ta, tb) = (tile(), tile());
    let run = || {
        let (y, cache) = conv2d_forward(&x, w.view(), b.view(), ConvGeom::new(4, 2, 1)).unwrap();
        let (dx, dw, db) = conv2d_backward(&cache, w.view(), &y);
        (y, dx, dw, db, ssim(&ta, &tb, &SsimParams::default()).unwrap().to_bits())
    };
    assert_eq!(on_pool(1, run), on_pool(4, run));
}

#[test]
fn training_epoch_is_identical_across_pool_sizes() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<PreparedPair> = (0..3)
        .map(|i| PreparedPair {
            pair_id: format!("p{i}"),
            sar: Array3::from_shape_simple_fn((2, 64, 64), || r.gen_range(-1.0f32..1.0)),
            optical: Array3::from_shape_simple_fn((3, 64, 64), || r.gen_range(-1.0f32..1.0)),
        })
        .collect();
    let spec = TrainSpec {
        seed: 1,
        ..TrainSpec::default()
    };
    let run = || {
        let mut st = TrainState::new(&ModelSpec::tiny(), 1).unwrap();
        train_epoch(&mut st, &data, &spec).unwrap();
        (st.generator, st.discriminator, st.loss_history)
    };
    assert_eq!(on_pool(1, run), on_pool(4, run));
}
