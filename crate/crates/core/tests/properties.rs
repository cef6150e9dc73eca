use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use instasplat::editing::{duplicate_instance, recolor_instance, remove_instance, transform_instance};
use instasplat::io::depth::{decode_depth, encode_depth};
use instasplat::io::masks::{decode_mask_set, encode_label_image, sidecar_json};
use instasplat::io::ply::{read_gaussians, read_points, write_gaussians, write_points};
use instasplat::io::wire::{rle_decode, rle_encode};
use instasplat::merging::{collision_matrix, plan_merges};
use instasplat::metrics::{evaluate, Matching};
use instasplat::pipeline::{split, synth_benchmark};
use instasplat::propagation::morphology::{dilate, erode};
use instasplat::propagation::{finalize_labels, PropagationConfig};
use instasplat::raster::{full_opacity_mask, render, RenderMode};
use instasplat::refinement::{refine_mask, sample_prompts, Prompt, Provenance};
use instasplat::semantics::{query_open_vocab, DescriptorTable, QueryConfig};
use instasplat::synth::{Corruption, SynthSpec};
use instasplat::{
    instance_labels, instance_subset, Camera, DepthMap, Gaussian, Label, LabelWeights, Mask, MaskSet, MaskStage,
    PointCloud, Quat, Vec3,
};

fn random_gaussians(rng: &mut ChaCha8Rng, n: usize, labels: u32) -> Vec<Gaussian> {
    (0..n)
        .map(|_| {
            let axis = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            Gaussian::new(
                Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(1.5..3.0)),
                Vec3::new(rng.random_range(0.01..0.2), rng.random_range(0.01..0.2), rng.random_range(0.01..0.2)),
                Quat::from_scaled_axis(axis),
                rng.random_range(0.0..=1.0),
                Vec3::new(rng.random(), rng.random(), rng.random()),
            )
            .with_label(rng.random_range(0..=labels))
        })
        .collect()
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> Mask {
    Mask {
        width: w,
        height: h,
        data: (0..w * h).map(|_| rng.random_bool(p)).collect(),
    }
}

fn camera() -> Camera {
    Camera::new(30.0, 30.0, 12.0, 12.0, 24, 24, Quat::identity(), Vec3::zeros()).unwrap()
}

proptest! {
    #[test]
    fn subsets_partition_every_scene(seed in 0u64..10_000, n in 0usize..60) {
        let scene = random_gaussians(&mut ChaCha8Rng::seed_from_u64(seed), n, 4);
        let mut total = instance_subset(&scene, 0).len();
        for l in instance_labels(&scene) {
            let sub = instance_subset(&scene, l);
            prop_assert!(sub.iter().all(|g| g.label == l));
            total += sub.len();
        }
        prop_assert_eq!(total, scene.len());
    }

    #[test]
    fn gaussian_ply_save_is_a_fixed_point(seed in 0u64..10_000, n in 0usize..40) {
        let scene = random_gaussians(&mut ChaCha8Rng::seed_from_u64(seed), n, 6);
        let mut first = Vec::new();
        write_gaussians(&mut first, &scene).unwrap();
        let loaded = read_gaussians(&first[..]).unwrap();
        let mut second = Vec::new();
        write_gaussians(&mut second, &loaded).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(read_gaussians(&second[..]).unwrap(), loaded);
    }

    #[test]
    fn point_ply_and_depth_round_trip(seed in 0u64..10_000, n in 0usize..50, labeled: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.random(), rng.random::<f64>() * 1e3, -rng.random::<f64>())).collect();
        let cloud = if labeled {
            PointCloud::with_labels(pts.clone(), pts.iter().map(|_| rng.random_range(0..100)).collect())
        } else {
            PointCloud::new(pts)
        };
        let mut bytes = Vec::new();
        write_points(&mut bytes, &cloud).unwrap();
        prop_assert_eq!(read_points(&bytes[..]).unwrap(), cloud);

        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let mut depth = DepthMap::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if rng.random_bool(0.7) {
                    depth.set(x, y, rng.random_range(0.1..50.0));
                }
            }
        }
        prop_assert_eq!(decode_depth(&encode_depth(&depth)).unwrap(), depth);
    }

    #[test]
    fn mask_set_and_rle_round_trip(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let owner: Vec<u32> = (0..w * h).map(|_| rng.random_range(0..5)).collect();
        let masks: Vec<(u32, Mask)> = (1..5)
            .map(|id| (id * 7, Mask { width: w, height: h, data: owner.iter().map(|&o| o == id).collect() }))
            .filter(|(_, m)| !m.is_empty())
            .collect();
        let set = MaskSet { view: 3, width: w, height: h, stage: MaskStage::Propagated, masks };
        let png = encode_label_image(&set).unwrap();
        prop_assert_eq!(decode_mask_set(&png, Some(&sidecar_json(&set)), 3).unwrap(), set.clone());
        for (_, m) in &set.masks {
            let runs = rle_encode(m);
            prop_assert_eq!(runs.iter().sum::<u64>(), (w * h) as u64);
            prop_assert_eq!(&rle_decode(&runs, w, h).unwrap(), m);
        }
    }

    #[test]
    fn alpha_is_monotone_in_each_opacity(seed in 0u64..10_000, pick in 0usize..6, bump in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_gaussians(&mut rng, 6, 2);
        let mut more = scene.clone();
        more[pick].opacity += (1.0 - more[pick].opacity) * bump;
        let cam = camera();
        let a = render(&scene, &cam, RenderMode::Rgb).alpha;
        let b = render(&more, &cam, RenderMode::Rgb).alpha;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(*y >= *x - 1e-12);
        }
    }

    #[test]
    fn silhouette_ignores_other_labels(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene: Vec<Gaussian> = random_gaussians(&mut rng, 8, 1).into_iter().map(|g| g.with_label(1)).collect();
        let mut crowded = scene.clone();
        crowded.extend(random_gaussians(&mut rng, 8, 0).into_iter().map(|g| g.with_label(2)));
        crowded.shuffle(&mut rng);
        let cam = camera();
        prop_assert_eq!(full_opacity_mask(&scene, &cam, 1), full_opacity_mask(&crowded, &cam, 1));
    }

    #[test]
    fn erosion_shrinks_and_dilation_grows(seed in 0u64..10_000, r in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (rng.random_range(1..30), rng.random_range(1..30));
        let m = random_mask(&mut rng, w, h, 0.6);
        let (e, d) = (erode(&m, r), dilate(&m, r));
        for i in 0..m.data.len() {
            prop_assert!(!e.data[i] || m.data[i]);
            prop_assert!(!m.data[i] || d.data[i]);
        }
    }

    #[test]
    fn finalized_labels_clear_the_threshold(seed in 0u64..10_000, tau_a in 0.0f64..1.0, tau_b in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<LabelWeights> = (0..50)
            .map(|_| LabelWeights::from_pairs((0..rng.random_range(0..4)).map(|_| (rng.random_range(1..4), rng.random_range(0.5..2.0)))))
            .collect();
        let (lo, hi) = (tau_a.min(tau_b), tau_a.max(tau_b));
        let strict = finalize_labels(&weights, hi);
        let loose = finalize_labels(&weights, lo);
        for ((w, s), l) in weights.iter().zip(&strict).zip(&loose) {
            if let Some(label) = s {
                prop_assert!(w.get(*label) / w.total() >= hi);
                prop_assert_eq!(Some(*label), *l);
            }
        }
    }

    #[test]
    fn refine_mask_returns_an_input(seed in 0u64..10_000, with_prop: bool, tau in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prop = random_mask(&mut rng, 12, 12, 0.4);
        let sam = random_mask(&mut rng, 12, 12, 0.4);
        let sil = random_mask(&mut rng, 12, 12, 0.4);
        let (mask, provenance) = refine_mask(with_prop.then_some(&prop), &sam, &sil, tau).unwrap();
        match provenance {
            Provenance::Propagated => prop_assert_eq!(mask, Some(prop)),
            Provenance::Segmenter => prop_assert_eq!(mask, Some(sam)),
            Provenance::None => prop_assert!(mask.is_none() && !with_prop),
        }
    }

    #[test]
    fn prompts_are_inputs_and_spread_shrinks(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cands: Vec<Prompt> = (0..rng.random_range(2..40)).map(|_| [rng.random_range(0.0..64.0), rng.random_range(0.0..64.0)]).collect();
        let centroid = [32.0, 32.0];
        let spread = |ps: &[Prompt]| {
            let mut best = f64::INFINITY;
            for i in 0..ps.len() {
                for j in i + 1..ps.len() {
                    best = best.min((ps[i][0] - ps[j][0]).hypot(ps[i][1] - ps[j][1]));
                }
            }
            best
        };
        let mut prev = f64::INFINITY;
        for n in 1..8 {
            let got = sample_prompts(&cands, centroid, n).unwrap();
            prop_assert!(got.iter().all(|p| cands.contains(p)));
            let s = spread(&got);
            prop_assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn collision_ignores_cardinality_and_plans_terminate(seed in 0u64..10_000, k in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<(Label, Vec<Gaussian>)> = (1..=k as u32)
            .map(|l| {
                let c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 2.0);
                let n = rng.random_range(1..12);
                (l, random_gaussians(&mut rng, n, 0).into_iter().map(|g| Gaussian { mean: g.mean * 0.3 + c, ..g }).collect())
            })
            .collect();
        let refs: Vec<(Label, &[Gaussian])> = groups.iter().map(|(l, g)| (*l, g.as_slice())).collect();
        let c = collision_matrix(&refs).unwrap();
        let doubled: Vec<(Label, Vec<Gaussian>)> = groups.iter().map(|(l, g)| (*l, g.iter().chain(g).cloned().collect())).collect();
        let refs2: Vec<(Label, &[Gaussian])> = doubled.iter().map(|(l, g)| (*l, g.as_slice())).collect();
        prop_assert_eq!(&collision_matrix(&refs2).unwrap().entries, &c.entries);

        let plan = plan_merges(&c);
        let mut count = k;
        for round in &plan.rounds {
            prop_assert!(!round.is_empty());
            count -= round.len();
        }
        prop_assert_eq!(count, 1);
    }

    #[test]
    fn query_is_scale_invariant_and_monotone(seed in 0u64..10_000, scale in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(Label, Vec<f64>)> = (1..=12).map(|l| (l, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())).collect();
        let table = DescriptorTable::from_views(&entries).unwrap();
        let text: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = text.iter().map(|x| x * scale).collect();
        let mut prev = 0;
        for tau_corr in [0.0, 0.02, 0.1, 0.3, 1.0, 2.5] {
            let cfg = QueryConfig { tau_corr };
            let a = query_open_vocab(&text, &table, &cfg).unwrap();
            let b = query_open_vocab(&scaled, &table, &cfg).unwrap();
            let la: Vec<Label> = a.iter().map(|m| m.0).collect();
            let lb: Vec<Label> = b.iter().map(|m| m.0).collect();
            prop_assert_eq!(&la, &lb);
            prop_assert!(la.len() >= prev);
            prev = la.len();
        }
    }

    #[test]
    fn edits_leave_other_instances_alone(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_gaussians(&mut rng, 30, 3);
        let Some(&label) = instance_labels(&scene).iter().next() else { return Ok(()) };
        let others = |s: &[Gaussian]| s.iter().filter(|g| g.label != label).cloned().collect::<Vec<_>>();
        let motion = nalgebra::Isometry3::new(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.2, 0.1, -0.4));
        for edited in [
            remove_instance(&scene, label).unwrap(),
            transform_instance(&scene, label, &motion).unwrap(),
            recolor_instance(&scene, label, Vec3::new(0.2, 0.4, 0.6)).unwrap(),
        ] {
            prop_assert_eq!(others(&edited), others(&scene));
        }
        let (dup, fresh) = duplicate_instance(&scene, label, Vec3::zeros()).unwrap();
        prop_assert_eq!(&dup[..scene.len()], &scene[..]);
        let restored = remove_instance(&dup, fresh).unwrap();
        prop_assert_eq!(&restored, &scene);
        let cam = camera();
        prop_assert_eq!(render(&restored, &cam, RenderMode::Rgb).rgb, render(&scene, &cam, RenderMode::Rgb).rgb);
    }

    #[test]
    fn metric_invariants(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..80);
        let gt: Vec<Label> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<Label> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let mut perm: Vec<Label> = (1..6).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<Label> = pred.iter().map(|&p| if p == 0 { 0 } else { 100 + perm[p as usize - 1] }).collect();
        for mode in [Matching::OneToOne, Matching::ManyToOne] {
            let a = evaluate(&pred, &gt, mode).unwrap();
            let b = evaluate(&relabeled, &gt, mode).unwrap();
            prop_assert!(a.macc50 <= a.macc25);
            prop_assert!((0.0..=100.0).contains(&a.miou));
            prop_assert_eq!(a.miou, b.miou);
            prop_assert_eq!(
                a.instances.iter().map(|s| s.iou).collect::<Vec<_>>(),
                b.instances.iter().map(|s| s.iou).collect::<Vec<_>>()
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn local_ids_only_permute_global_labels(seed in 0u64..1_000) {
        let spec = SynthSpec {
            objects: 3,
            gaussians_per_object: 120,
            cameras: 6,
            width: 48,
            height: 48,
            corruption: Corruption { split_prob: 0.3, ..Corruption::default() },
            seed,
            ..SynthSpec::default()
        };
        let bench = synth_benchmark(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut shuffled = bench.views.clone();
        for v in &mut shuffled {
            let mut fresh: Vec<u32> = (1..=v.masks.masks.len() as u32).map(|i| i * 3).collect();
            fresh.shuffle(&mut rng);
            for ((id, _), new) in v.masks.masks.iter_mut().zip(fresh) {
                *id = new;
            }
            v.masks.masks.sort_by_key(|(id, _)| *id);
        }
        let cfg = PropagationConfig::default();
        let a = split(&bench.views, &bench.dense, &cfg).unwrap();
        let b = split(&shuffled, &bench.dense, &cfg).unwrap();
        prop_assert_eq!(&a.source_indices, &b.source_indices);
        let mut map: BTreeMap<Label, Label> = BTreeMap::new();
        let mut inverse: BTreeMap<Label, Label> = BTreeMap::new();
        for (x, y) in a.dense_labels.iter().zip(&b.dense_labels) {
            prop_assert_eq!(*map.entry(*x).or_insert(*y), *y);
            prop_assert_eq!(*inverse.entry(*y).or_insert(*x), *x);
        }

        // labeled points clear the vote threshold; re-projected masks are disjoint
        for &i in &a.source_indices {
            let (_, s) = a.weights[i].normalized().argmax().unwrap();
            prop_assert!(s >= cfg.tau_label);
        }
        for set in &a.masks {
            let mut claimed = vec![false; set.width * set.height];
            for (_, m) in &set.masks {
                for (c, &on) in claimed.iter_mut().zip(&m.data) {
                    prop_assert!(!(on && *c));
                    *c |= on;
                }
            }
        }
    }
}
