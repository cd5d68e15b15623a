//! Temporary diagnostic: inspect what the trained flow path contributes.
//! Usage: diag <checkpoint> <data-dir>   (run from the dir the data paths are
//! relative to). Prints per-sample gf_o feature slices, their variance across
//! samples, and parameter drift vs a fresh init.

use ptinet::model::encoders::encode_sample;
use ptinet::model::{ensure_conv_fc, init_params, FusedLayout, ModelCtx};
use ptinet::train::{Checkpoint, Dataset};
use ptinet::autodiff::Graph;
use rand_chacha::rand_core::SeedableRng;

fn main() {
    let mut args = std::env::args().skip(1);
    let ckpt_path = args.next().expect("usage: diag <ckpt> <data>");
    let data_dir = args.next().expect("usage: diag <ckpt> <data>");
    let ck = Checkpoint::load(ckpt_path.as_ref()).unwrap();
    let cfg = ck.config.clone();
    let n = cfg.n();
    let mut data = Dataset::load(
        data_dir.as_ref(),
        Some(&ck.vocab),
        cfg.m,
        n,
        cfg.stride,
        cfg.target_dims,
        ptinet::data::GlobalToggles { use_images: cfg.use_images, use_flow: cfg.use_flow },
        cfg.normalize,
    )
    .unwrap();
    let layout = FusedLayout::new(&cfg.encoder);
    let (off, w) = layout.segment("gf_o");
    let (ioff, iw) = layout.segment("gf_img");

    // Parameter drift vs fresh init.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ck.rng_seed);
    let mut fresh = init_params(&cfg.encoder, &ck.model_dims, &mut rng);
    ensure_conv_fc(&mut fresh, &cfg.encoder, cfg.target_dims, &mut rng);
    for prefix in ["gf_o.stem", "gf_o.fc", "gf_img.fc", "dec_traj.lstm"] {
        for name in ck.params.names() {
            if !name.starts_with(prefix) || !name.ends_with(".w") {
                continue;
            }
            let trained = ck.params.get(name);
            let init = fresh.get(name);
            let d: f64 = trained
                .iter()
                .zip(init.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = init.iter().map(|v| v * v).sum::<f64>().sqrt();
            println!("drift {name}: |Δ|={d:.4} |init|={norm:.4}");
        }
    }

    // Feature stats across up to 40 samples, for trained and fresh params.
    let mut feats: Vec<Vec<f64>> = Vec::new();
    let mut img_feats: Vec<Vec<f64>> = Vec::new();
    let mut fresh_feats: Vec<Vec<f64>> = Vec::new();
    for idx in 0..data.samples.len().min(40) {
        let sample = data.materialize(idx).unwrap();
        if idx < 3 {
            let fl = &sample.global_ctx.flows;
            let sums: Vec<f64> = fl.iter().map(|a| a.iter().map(|v| v.abs()).sum()).collect();
            println!(
                "sample {idx}: {} flow frames, abs-sums {:?}",
                fl.len(),
                sums.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
            );
        }
        let mut g = Graph::new();
        let mut ctx = ModelCtx::new(&mut g, &ck.params);
        let enc = encode_sample(&mut ctx, &sample, &cfg.encoder, None).unwrap();
        let f = g.value(enc.fused);
        feats.push(f.iter().skip(off).take(w).copied().collect());
        img_feats.push(f.iter().skip(ioff).take(iw).copied().collect());

        let mut g2 = Graph::new();
        let mut ctx2 = ModelCtx::new(&mut g2, &fresh);
        let enc2 = encode_sample(&mut ctx2, &sample, &cfg.encoder, None).unwrap();
        let f2 = g2.value(enc2.fused);
        fresh_feats.push(f2.iter().skip(off).take(w).copied().collect());
    }
    let stats = |rows: &Vec<Vec<f64>>, label: &str| {
        let k = rows[0].len();
        let nr = rows.len() as f64;
        let mut means = vec![0.0; k];
        for r in rows {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v / nr;
            }
        }
        let mut vars = vec![0.0; k];
        for r in rows {
            for ((s, v), m) in vars.iter_mut().zip(r).zip(&means) {
                *s += (v - m).powi(2) / nr;
            }
        }
        println!(
            "{label}: mean |feat| {:.4}  per-dim std {:?}",
            means.iter().map(|v| v.abs()).sum::<f64>() / k as f64,
            vars.iter().map(|v| format!("{:.4}", v.sqrt())).collect::<Vec<_>>()
        );
    };
    stats(&feats, "gf_o ");
    stats(&img_feats, "gf_img");
    stats(&fresh_feats, "gf_o@init");
}
