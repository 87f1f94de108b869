//! Compare analytic gradients of the Transformer (with the alignment term)
//! and of the residual MLP against central finite differences.
//!
//! `cargo run --release --example gradient_check`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use signspot::classify::{ClassSet, Mlp, MlpConfig};
use signspot::model::gradcheck::{all_coords, sample_coords};
use signspot::model::train::{example_gradients, TrainExample};
use signspot::model::{gradient_check, normal, ModelConfig, TrainConfig, Transformer};
use signspot::text::{EOS, N_SPECIAL};

fn main() -> signspot::Result<()> {
    let mcfg = ModelConfig {
        input_dim: 6,
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        feedforward_dim: 32,
        dropout_prob: 0.0,
        max_enc_len: 8,
        max_dec_len: 6,
        vocab_size: 8,
    };
    let model = Transformer::new(mcfg.clone(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ex = TrainExample {
        clip_id: "toy".into(),
        features: normal(&mut rng, 7, 6, 1.0),
        target: vec![3, 6, 4, EOS],
        align: vec![(0, 2), (1, 5)],
        align_skipped: 0,
    };
    let cfg = TrainConfig {
        align_loss_weight: 1.0,
        ..TrainConfig::default()
    };
    let report = gradient_check(model.params(), &all_coords(model.params()), 1e-6, |p| {
        let m = Transformer::from_params(mcfg.clone(), p.clone())?;
        let (loss, grads) = example_gradients(&m, &ex, &cfg, None)?;
        Ok((loss.total, grads))
    })?;
    println!("transformer: {report:?}");

    let mlp = Mlp::new(MlpConfig::default(), 32, ClassSet::new(N_SPECIAL..N_SPECIAL + 5), 1)?;
    let x = normal(&mut rng, 8, 32, 1.0);
    let labels: Vec<usize> = (0..8).map(|i| i % 5).collect();
    let coords = sample_coords(mlp.params(), 500, 2);
    let report = gradient_check(mlp.params(), &coords, 1e-6, |p| mlp.loss_and_grads(p, &x, &labels))?;
    println!("mlp: {report:?}");
    Ok(())
}
