//! Standalone discriminator probe: freeze untrained encoders, train only
//! the discriminator on patch latents, and watch the score separation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use satres_core::ddn::sample_patch;
use satres_core::degradations::{apply_degradation, synthetic_aerial, DegradationSpec};
use satres_core::losses::adversarial_from_scores;
use satres_core::nn::{Adam, GradMap};
use satres_core::{build_networks, RunConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let cfg = RunConfig {
        patch_size: 64,
        seed: 7,
        ..RunConfig::default()
    };
    let nets = build_networks(&cfg, (64, 64)).unwrap();
    let enc = nets.content_encoder;
    let mut disc = nets.discriminator;
    let mut opt = Adam::new(lr, cfg.adam_beta1, cfg.adam_beta2);

    let clean = synthetic_aerial(256, 256, 42);
    let (i_r, i_d, _) =
        satres_core::degradations::make_validation_pair(
            &clean,
            &DegradationSpec::default_compose(),
            (16, 16),
            224,
        )
        .unwrap();
    let _ = apply_degradation; // imported for parity with other probes

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for step in 1..=steps {
        let pr = sample_patch(&i_r, 64, &mut rng).unwrap();
        let pd = sample_patch(&i_d, 64, &mut rng).unwrap();
        let (f_rc, _) = enc.encode(&pr).unwrap();
        let (f_dc, _) = enc.encode(&pd).unwrap();
        let fwd_r = disc.forward_train(f_rc.data());
        let fwd_d = disc.forward_train(f_dc.data());
        let (_, g_r) = disc.backward(&fwd_r, -1.0 / fwd_r.score);
        let (_, g_d) = disc.backward(&fwd_d, 1.0 / (1.0 - fwd_d.score));
        let mut grads = GradMap::new();
        grads.merge(g_r);
        grads.merge(g_d);
        opt.step(&mut disc, &grads);
        if step % (steps / 10).max(1) == 0 {
            let (loss, _) = adversarial_from_scores(fwd_r.score, fwd_d.score);
            println!(
                "step {step:5}: s_r = {:.4}, s_d = {:.4}, disc_loss = {loss:.4}",
                fwd_r.score, fwd_d.score
            );
        }
    }
}
