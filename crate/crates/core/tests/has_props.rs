use davt::backbone::{AttentionStack, ViTConfig};
use davt::has::{fuse_class_rows, fuse_stack, select_all, select_from_rows, FusionMode};
use davt::image::Image;
use davt::model::{Davt, ModelOptions};
use davt::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stochastic_stack(rng: &mut ChaCha8Rng, layers: usize, heads: usize, tokens: usize) -> AttentionStack {
    let layers = (0..layers)
        .map(|_| {
            let mut data = Vec::with_capacity(heads * tokens * tokens);
            for _ in 0..heads * tokens {
                let row: Vec<f64> = (0..tokens).map(|_| rng.random::<f64>().powi(3)).collect();
                let sum: f64 = row.iter().sum();
                data.extend(row.iter().map(|v| v / sum));
            }
            Tensor::new(&[heads, tokens, tokens], data).unwrap()
        })
        .collect();
    AttentionStack { layers }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fused_rows_stay_stochastic(seed in any::<u64>(), layers in 1usize..5, heads in 1usize..4, tokens in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = stochastic_stack(&mut rng, layers, heads, tokens);
        for mode in [FusionMode::Pairwise, FusionMode::Cumulative] {
            for h in fuse_stack(&stack, mode).unwrap() {
                for row in h.data().chunks(tokens) {
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn class_rows_match_full_products(seed in any::<u64>(), layers in 1usize..5, heads in 1usize..4, tokens in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = stochastic_stack(&mut rng, layers, heads, tokens);
        let full = fuse_stack(&stack, FusionMode::Pairwise).unwrap();
        let rows = fuse_class_rows(&stack, FusionMode::Pairwise).unwrap();
        for (f, r) in full.iter().zip(&rows) {
            for h in 0..heads {
                let start = h * tokens * tokens;
                prop_assert_eq!(&f.data()[start..start + tokens], &r.data()[h * tokens..(h + 1) * tokens]);
            }
        }
        let full = fuse_stack(&stack, FusionMode::Cumulative).unwrap();
        let rows = fuse_class_rows(&stack, FusionMode::Cumulative).unwrap();
        for (f, r) in full.iter().zip(&rows) {
            for h in 0..heads {
                let start = h * tokens * tokens;
                for (a, b) in f.data()[start..start + tokens].iter().zip(&r.data()[h * tokens..(h + 1) * tokens]) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn selection_ignores_positive_affine_maps(
        grid in prop::collection::vec(0u32..1000, 3 * 9),
        scale in 0.1f64..10.0,
        shift in -1.0f64..1.0,
    ) {
        let values: Vec<f64> = grid.iter().map(|&v| f64::from(v) / 1000.0).collect();
        let rows = Tensor::new(&[3, 9], values.clone()).unwrap();
        let moved = Tensor::new(&[3, 9], values.iter().map(|v| scale * v + shift).collect()).unwrap();
        let picked = select_from_rows(&rows).unwrap();
        prop_assert_eq!(&picked, &select_from_rows(&moved).unwrap());
        prop_assert!(picked.iter().all(|&i| i >= 1));
    }
}

fn tiny_config(seed: u64) -> ViTConfig {
    ViTConfig {
        image_size: 32,
        patch_size: 8,
        hidden_dim: 16,
        layers: 4,
        heads: 2,
        mlp_dim: 32,
        num_classes: 3,
        seed,
    }
}

fn random_image(rng: &mut ChaCha8Rng, side: usize) -> Image {
    Image::new(side, side, (0..side * side * 3).map(|_| rng.random()).collect()).unwrap()
}

/// Moves patch `j` (0-based, raster order) of `image` to slot `perm[j]`.
fn permute_patches(image: &Image, patch: usize, perm: &[usize]) -> Image {
    let g = image.height() / patch;
    let mut out = image.clone();
    for (j, &to) in perm.iter().enumerate() {
        let (sr, sc) = (j / g * patch, j % g * patch);
        let (dr, dc) = (to / g * patch, to % g * patch);
        for y in 0..patch {
            for x in 0..patch {
                out.set_pixel(dr + y, dc + x, image.pixel(sr + y, sc + x));
            }
        }
    }
    out
}

#[test]
fn selections_follow_patch_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for trial in 0..8 {
        let config = tiny_config(trial);
        let model = Davt::new(config.clone(), ModelOptions::default()).unwrap();
        let n = config.num_patches();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let image = random_image(&mut rng, config.image_size);

        let mut moved = model.clone();
        let d = config.hidden_dim;
        let pos = model.params.get("pos").unwrap().clone();
        let target = moved.params.get_mut("pos").unwrap();
        for (j, &to) in perm.iter().enumerate() {
            target.data_mut()[(1 + to) * d..(2 + to) * d].copy_from_slice(&pos.data()[(1 + j) * d..(2 + j) * d]);
        }
        let moved_image = permute_patches(&image, config.patch_size, &perm);

        let run = |m: &Davt, img: &Image| {
            let mut tape = Tape::new();
            let vars = m.bind(&mut tape, false);
            let out = m.forward(&mut tape, &vars, img).unwrap();
            (out.selections.unwrap(), tape.value(out.logits).data().to_vec())
        };
        let (sel, logits) = run(&model, &image);
        let (sel_moved, logits_moved) = run(&moved, &moved_image);
        for (a, b) in sel.iter().zip(&sel_moved) {
            let mapped: Vec<usize> = a.indices.iter().map(|&i| 1 + perm[i - 1]).collect();
            assert_eq!(mapped, b.indices, "trial {trial} layer {}", a.layer);
        }
        for (a, b) in logits.iter().zip(&logits_moved) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn final_input_rows_and_patch_only_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for layers in 2..6 {
        for heads in [1, 2, 4] {
            let config = ViTConfig {
                layers,
                heads,
                ..tiny_config(layers as u64)
            };
            for fusion in [FusionMode::Pairwise, FusionMode::Cumulative] {
                let model = Davt::new(config.clone(), ModelOptions { has: true, fusion }).unwrap();
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape, false);
                let out = model.forward(&mut tape, &vars, &random_image(&mut rng, 32)).unwrap();
                assert_eq!(tape.shape(out.final_input)[0], 1 + heads * (layers - 1));
                let again = select_all(&out.attention, fusion).unwrap();
                assert_eq!(Some(again), out.selections);
                for s in out.selections.unwrap() {
                    assert!(s.indices.iter().all(|&i| (1..=config.num_patches()).contains(&i)));
                }
            }
        }
    }
}
