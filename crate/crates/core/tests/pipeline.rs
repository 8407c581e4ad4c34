use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stasunet::data::{
    darken, histogram_match, load_frames, save_frames, synth_scene, Clip, FrameStack, Motion, TrainingSet,
};
use stasunet::metrics::{psnr, ssim, PSNR_CAP};
use stasunet::model::{fit, load_checkpoint, save_checkpoint, AdamState, ModelConfig, StaSunet};
use stasunet::Tensor;

fn small() -> ModelConfig {
    ModelConfig {
        num_frames: 3,
        base_channels: 8,
        align_channels: 8,
        crop_size: 32,
        ..ModelConfig::toy()
    }
}

fn quantised(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

#[test]
fn frames_survive_a_png_roundtrip_at_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let gt = synth_scene(3, 4, 32, Motion::Mixed).unwrap();
    let low = darken(&gt, 0.1, 9).unwrap();
    save_frames(&low, dir.path()).unwrap();
    let back = load_frames(dir.path()).unwrap();
    assert_eq!(back.len(), low.len());
    for (a, b) in low.frames.iter().zip(&back.frames) {
        assert!(quantised(a).max_abs_diff(b) < 1e-6);
    }
    // Already-quantised frames are a fixed point.
    let again = tempfile::tempdir().unwrap();
    save_frames(&back, again.path()).unwrap();
    assert_eq!(load_frames(again.path()).unwrap().frames, back.frames);
}

#[test]
fn train_save_load_enhance() {
    let cfg = small();
    let gt = synth_scene(5, 5, cfg.crop_size, Motion::Translate).unwrap();
    let low = darken(&gt, 0.1, 1).unwrap();
    let set = TrainingSet::new(vec![(low.clone(), gt.clone())]).unwrap();
    let (model, mut store) = StaSunet::new(&cfg).unwrap();
    let mut state = AdamState::new(&store);
    let mut losses = Vec::new();
    fit(&model, &mut store, &mut state, &set, cfg.seed, 30, |_, l, _, _| {
        losses.push(l);
        Ok(())
    })
    .unwrap();
    assert_eq!(state.step, 30);
    let head: f32 = losses[..5].iter().sum();
    let tail: f32 = losses[25..].iter().sum();
    assert!(tail < head, "{losses:?}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.stas");
    save_checkpoint(&path, &cfg, &store, Some(&state)).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.adam.as_ref().map(|a| a.step), Some(30));
    let (reloaded, _) = StaSunet::new(&ck.config).unwrap();
    let a = model.enhance_clip(&store, &low).unwrap();
    let b = reloaded.enhance_clip(&ck.params, &low).unwrap();
    assert_eq!(a, b);
    for f in &a {
        assert_eq!(f.shape(), &[3, cfg.crop_size, cfg.crop_size]);
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn enhance_rejects_frames_the_model_cannot_tile() {
    let cfg = small();
    let (model, store) = StaSunet::new(&cfg).unwrap();
    let clip = synth_scene(0, 3, 36, Motion::Mixed).unwrap();
    assert!(model.enhance_clip(&store, &clip).is_err());
}

fn image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    Tensor::rand_uniform(&[3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn histogram_match_is_monotone_per_channel(seed in 0u64..1000, scale in 0.05f32..1.0) {
        let src = image(seed, 12, 12).map(|v| v * scale);
        let reference = image(seed + 1, 16, 16);
        let out = histogram_match(&src, &reference).unwrap();
        prop_assert_eq!(out.shape(), src.shape());
        let n = 12 * 12;
        for c in 0..3 {
            let s = &src.data()[c * n..(c + 1) * n];
            let o = &out.data()[c * n..(c + 1) * n];
            for i in 0..n {
                prop_assert!((0.0..=1.0).contains(&o[i]));
                for j in 0..n {
                    if s[i] < s[j] {
                        prop_assert!(o[i] <= o[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(seed in 0u64..1000, amp in 0.0f32..0.5) {
        let a = image(seed, 16, 16);
        let noise = image(seed + 7, 16, 16);
        let b = Tensor::from_fn(&[3, 16, 16], |i| (a.data()[i] + amp * (noise.data()[i] - 0.5)).clamp(0.0, 1.0));
        let (p1, p2) = (psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((p1 - p2).abs() < 1e-9);
        prop_assert!(p1 <= PSNR_CAP);
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-9);
        prop_assert!(s1 <= 1.0 + 1e-12 && s1 > -1.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn frame_stacks_replicate_edges(len in 1usize..6, t_frac in 0.0f64..1.0, half in 0usize..3) {
        let frames: Vec<_> = (0..len).map(|k| Tensor::full(&[3, 2, 2], k as f32)).collect();
        let clip = Clip::new(frames, 0.1, "s").unwrap();
        let t = ((len as f64 * t_frac) as usize).min(len - 1);
        let stack = FrameStack::from_clip(&clip, t, 2 * half + 1).unwrap();
        prop_assert_eq!(stack.target_index, half);
        for i in 0..stack.len() {
            let want = (t as isize + i as isize - half as isize).clamp(0, len as isize - 1) as f32;
            prop_assert!(stack.frame(i).data().iter().all(|&v| v == want));
        }
    }
}
