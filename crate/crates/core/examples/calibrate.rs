//! Desk-scale calibration run: trains the full pipeline on the synthetic
//! fixture and prints every quantity the acceptance checks care about.

use std::time::Instant;

use satres_core::checkpoint::params_checksum;
use satres_core::ddn::{train_ddn, TrainArtifacts};
use satres_core::degradations::{make_validation_pair, synthetic_aerial, DegradationSpec};
use satres_core::losses::feature_regularization_loss;
use satres_core::metrics::{psnr, ssim};
use satres_core::restoration::{restore, train_restoration, train_restoration_from_scratch};
use satres_core::transfer::{generate_kd_dataset, transfer_distortion, transfer_latents};
use satres_core::RunConfig;

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (ri, &i) in idx.iter().enumerate() {
            r[i] = ri as f64;
        }
        r
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    num / (dx * dy).sqrt()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let iters: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let n_alpha: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(24);
    let epochs: u32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(150);

    let cfg = RunConfig {
        patch_size: 64,
        ddn_iterations: iters,
        n_alpha,
        restore_epochs: epochs,
        seed: 7,
        ..RunConfig::default()
    };
    println!("config: iters={iters} n_alpha={n_alpha} epochs={epochs}");

    let clean = synthetic_aerial(256, 256, 42);
    let (i_r, i_d, gt) =
        make_validation_pair(&clean, &DegradationSpec::default_compose(), (16, 16), 224).unwrap();
    let base_psnr = psnr(&i_d, &gt).unwrap().db;
    let base_ssim = ssim(&i_d, &gt).unwrap();
    println!("input:  PSNR(i_d, gt) = {base_psnr:.3} dB, SSIM = {base_ssim:.4}");

    // --- DDN ---
    let t0 = Instant::now();
    let bundle = train_ddn(&i_r, &i_d, &cfg, TrainArtifacts::none()).unwrap();
    println!("ddn:    {iters} iterations in {:.1}s", t0.elapsed().as_secs_f64());
    let rep = bundle.final_report.unwrap();
    println!(
        "ddn:    final losses adv_d={:.4} adv_g={:.4} reg={:.5} d_cy={:.4} r_cy={:.4} total={:.4}",
        rep.adv_d, rep.adv_g, rep.reg, rep.d_cy, rep.r_cy, rep.total
    );

    // criterion 2: disentanglement ratio on the full images
    let (pad_r, _, _) = i_r.pad_to_multiple(4).unwrap();
    let (pad_d, _, _) = i_d.pad_to_multiple(4).unwrap();
    let (_, inter_r) = bundle.distortion_encoder.encode(&pad_r).unwrap();
    let (_, inter_d) = bundle.distortion_encoder.encode(&pad_d).unwrap();
    let reg_r = feature_regularization_loss(&inter_r).unwrap();
    let reg_d = feature_regularization_loss(&inter_d).unwrap();
    println!(
        "disent: mean|E_d(i_r)| = {reg_r:.6}, mean|E_d(i_d)| = {reg_d:.6}, ratio = {:.4}  (< 0.2)",
        reg_r / reg_d
    );

    // diagnostics: latent scales and discriminator scores
    let (f_rc_diag, _) = bundle.content_encoder.encode(&pad_r).unwrap();
    let (f_dc_diag, _) = bundle.content_encoder.encode(&pad_d).unwrap();
    let s_r = bundle.discriminator.discriminate(&f_rc_diag).unwrap();
    let s_d = bundle.discriminator.discriminate(&f_dc_diag).unwrap();
    println!(
        "diag:   mean|F_rc| = {:.4}, mean|F_dc| = {:.4}, disc scores s_r = {s_r:.4}, s_d = {s_d:.4}",
        f_rc_diag.mean_abs(),
        f_dc_diag.mean_abs()
    );

    // criterion 3: cyclic reconstruction PSNR
    for (name, img) in [("i_r", &i_r), ("i_d", &i_d)] {
        let (padded, h, w) = img.pad_to_multiple(4).unwrap();
        let (fc, _) = bundle.content_encoder.encode(&padded).unwrap();
        let (fd, _) = bundle.distortion_encoder.encode(&padded).unwrap();
        let recon = bundle
            .decoder
            .decode(&fc.add(&fd).unwrap())
            .unwrap()
            .crop_to(h, w)
            .unwrap();
        let p = psnr(&recon, img).unwrap().db;
        let s = ssim(&recon, img).unwrap();
        println!("cyclic: PSNR(recon({name}), {name}) = {p:.3} dB (>= 25), SSIM = {s:.4}");
    }

    // criterion 4: transfer monotonicity + alpha=0 check
    let t1 = Instant::now();
    let alphas: Vec<f64> = (1..=20).map(|a| a as f64).collect();
    let l1s: Vec<f64> = (1..=20)
        .map(|a| {
            let out = transfer_distortion(&bundle, &i_r, &i_d, a).unwrap();
            out.data()
                .iter()
                .zip(i_r.data().iter())
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / out.data().len() as f64
        })
        .collect();
    let rho = spearman(&alphas, &l1s);
    println!(
        "alpha:  spearman(alpha, L1) = {rho:.4}  (>= 0.9); L1 at alpha 1/10/20 = {:.4}/{:.4}/{:.4}",
        l1s[0], l1s[9], l1s[19]
    );
    let alpha0 = transfer_distortion(&bundle, &i_r, &i_d, 0).unwrap();
    let (f_rc, _, _) = transfer_latents(&bundle, &i_r, &i_d).unwrap();
    let _ = f_rc;
    let (padded, h, w) = i_r.pad_to_multiple(4).unwrap();
    let (fc, _) = bundle.content_encoder.encode(&padded).unwrap();
    let (fd, _) = bundle.distortion_encoder.encode(&padded).unwrap();
    let cyc_r = bundle
        .decoder
        .decode(&fc.add(&fd).unwrap())
        .unwrap()
        .crop_to(h, w)
        .unwrap();
    let mae = alpha0
        .data()
        .iter()
        .zip(cyc_r.data().iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / alpha0.data().len() as f64;
    println!("alpha:  MAE(alpha0, cyclic_recon(i_r)) = {mae:.5}  (< 0.02); transfer timing {:.1}s", t1.elapsed().as_secs_f64());

    // --- dataset + KD ---
    let t2 = Instant::now();
    let dataset = generate_kd_dataset(&bundle, &i_r, &i_d, None).unwrap();
    println!("dataset: {} pairs in {:.1}s", dataset.len(), t2.elapsed().as_secs_f64());

    let t3 = Instant::now();
    let enc_before = params_checksum(&bundle.content_encoder);
    let kd = train_restoration(&bundle, &dataset, &cfg, None).unwrap();
    let enc_after = params_checksum(&kd.net.encoder);
    println!(
        "kd:     {} epochs in {:.1}s, frozen encoder intact: {}",
        epochs,
        t3.elapsed().as_secs_f64(),
        enc_before == enc_after
    );
    println!(
        "kd:     epoch mse first/mid/last = {:.6}/{:.6}/{:.6} (ratio first/last {:.1}x)",
        kd.epoch_mse[0],
        kd.epoch_mse[kd.epoch_mse.len() / 2],
        kd.epoch_mse.last().unwrap(),
        kd.epoch_mse[0] / kd.epoch_mse.last().unwrap()
    );

    // criterion 6: end-to-end gains
    let restored = restore(&kd.net, &i_d).unwrap();
    let r_psnr = psnr(&restored, &gt).unwrap().db;
    let r_ssim = ssim(&restored, &gt).unwrap();
    println!(
        "e2e:    PSNR {base_psnr:.3} -> {r_psnr:.3} (gain {:+.3} dB, need >= +3); SSIM {base_ssim:.4} -> {r_ssim:.4} (gain {:+.4}, need >= +0.05)",
        r_psnr - base_psnr,
        r_ssim - base_ssim
    );

    // criterion 7: scratch baseline
    let t4 = Instant::now();
    let scratch = train_restoration_from_scratch(&dataset, &cfg, None).unwrap();
    let scratch_final = *scratch.epoch_mse.last().unwrap();
    let reach = kd
        .epoch_mse
        .iter()
        .position(|&m| m <= scratch_final)
        .map(|i| i + 1);
    println!(
        "kd-adv: scratch {:.1}s, final mse {:.6}; kd reaches it at epoch {:?} of {} ({:.2}x, need <= 0.7x)",
        t4.elapsed().as_secs_f64(),
        scratch_final,
        reach,
        epochs,
        reach.map(|r| r as f64 / epochs as f64).unwrap_or(f64::NAN)
    );
}
