use std::fs;
use std::path::Path;
use std::process::Command as Process;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use nalgebra::{Isometry3, Matrix4, Translation3, UnitQuaternion};
use serde_json::json;

use instasplat::editing::{duplicate_instance, recolor_instance, remove_instance, rigid_from_matrix, transform_instance};
use instasplat::io::manifest::{depth_path, image_path};
use instasplat::io::ply::read_vertices;
use instasplat::io::wire::serve;
use instasplat::io::{
    load_descriptors, load_gaussians, load_mask_dir, load_points, save_cameras, save_depth, save_gaussians,
    save_mask_dir, save_png, save_points, AssetManifest, Assets, ConfigOverrides, WireSegmenter,
};
use instasplat::merging::MergeConfig;
use instasplat::metrics::{evaluate, transfer_labels, Matching};
use instasplat::pipeline::{label_gaussians, split, splat, synth_benchmark};
use instasplat::propagation::PropagationConfig;
use instasplat::refinement::{MaskBankSegmenter, OracleSegmenter, RefinementConfig, Segmenter};
use instasplat::semantics::{query_masks, query_open_vocab, QueryConfig};
use instasplat::synth::{Corruption, SynthSpec};
use instasplat::{instance_labels, Gaussian, Label, Mask, MaskSet, MaskStage, PointCloud, Vec3};

use crate::{
    Cli, Command, EditArgs, EditOp, EvalArgs, MatchingArg, QueryArgs, ServeArgs, ServeMode, SplatArgs, SplitArgs,
    SynthArgs, Thresholds,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a, cli.seed),
        Command::Split(a) => split_cmd(a),
        Command::Splat(a) => splat_cmd(a),
        Command::Query(a) => query(a),
        Command::Edit(a) => edit(a),
        Command::Eval(a) => eval(a),
        Command::SegmenterServe(a) => segmenter_serve(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(a: SynthArgs, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        objects: a.objects,
        gaussians_per_object: a.gaussians,
        spacing: a.spacing,
        cameras: a.cameras,
        width: a.width,
        height: a.height,
        corruption: Corruption {
            permute_ids: !a.no_permute,
            split_prob: a.split_prob,
            drop_prob: a.drop_prob,
            dilation_px: a.dilation,
        },
        seed,
        ..SynthSpec::default()
    };
    let bench = synth_benchmark(&spec)?;
    let manifest = AssetManifest::default();
    let out = &a.out;
    for d in [&manifest.images, &manifest.depths] {
        create_dir(&out.join(d))?;
    }
    let cameras: Vec<_> = bench.views.iter().map(|v| v.camera.clone()).collect();
    save_cameras(out.join(&manifest.cameras), &cameras)?;
    for (k, v) in bench.views.iter().enumerate() {
        save_png(image_path(&out.join(&manifest.images), k), &v.image)?;
        save_depth(depth_path(&out.join(&manifest.depths), k), &v.depth)?;
    }
    let raw: Vec<MaskSet> = bench.views.iter().map(|v| v.masks.clone()).collect();
    save_mask_dir(out.join(&manifest.masks), &raw)?;
    save_mask_dir(out.join("gt_masks"), &bench.gt_masks)?;
    save_points(out.join(&manifest.points), &bench.dense)?;
    save_points(out.join("gt_points.ply"), &bench.gt_points)?;
    save_gaussians(out.join("gt_scene.ply"), &bench.scene)?;
    let unlabeled: Vec<Gaussian> = bench.scene.iter().map(|g| g.clone().with_label(0)).collect();
    save_gaussians(out.join("scene.ply"), &unlabeled)?;
    Assets {
        root: out.clone(),
        manifest,
    }
    .save(out.join("manifest.json"))?;
    println!(
        "wrote {} objects, {} Gaussians, {} views to {}",
        spec.objects,
        bench.scene.len(),
        bench.views.len(),
        out.display()
    );
    Ok(())
}

/// Flag, then manifest override, then default.
fn pick(flag: Option<f64>, manifest: Option<f64>, default: f64) -> f64 {
    flag.or(manifest).unwrap_or(default)
}

fn propagation_config(t: &Thresholds, o: &ConfigOverrides) -> PropagationConfig {
    let d = PropagationConfig::default();
    PropagationConfig {
        tau_depth: pick(t.tau_depth, o.tau_depth, d.tau_depth),
        tau_label: pick(t.tau_label, o.tau_label, d.tau_label),
        lambda_init: pick(t.lambda_init, o.lambda_init, d.lambda_init),
        ..d
    }
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let assets = Assets::load(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let cfg = propagation_config(&a.thresholds, &assets.manifest.config);
    let views = assets.load_views(a.subsample)?;
    let dense = load_points(assets.resolve(&assets.manifest.points))?;
    let start = Instant::now();
    let out = split(&views, &dense, &cfg)?;
    log::info!("propagation over {} views took {:?}", views.len(), start.elapsed());
    create_dir(&a.out)?;
    save_points(a.out.join("labeled.ply"), &out.labeled)?;
    save_mask_dir(a.out.join("masks"), &out.masks)?;
    let labels: std::collections::BTreeSet<Label> = out.labeled.labels.iter().flatten().copied().collect();
    println!(
        "views {} labels {} labeled points {}/{}",
        views.len(),
        labels.len(),
        out.labeled.len(),
        dense.len()
    );
    Ok(())
}

fn segmenter_for(a: &SplatArgs) -> Result<Option<Box<dyn Segmenter>>> {
    let timeout = Duration::from_millis(a.timeout_ms);
    if let Some(cmd) = &a.segmenter_cmd {
        let mut parts = cmd.split_whitespace();
        let program = parts.next().context("empty segmenter command")?;
        let mut process = Process::new(program);
        process.args(parts);
        let seg = WireSegmenter::spawn(&mut process, timeout).with_context(|| format!("starting {cmd:?}"))?;
        return Ok(Some(Box::new(seg)));
    }
    if let Some(addr) = &a.segmenter_addr {
        let seg = WireSegmenter::connect(addr.as_str(), timeout).with_context(|| format!("connecting to {addr}"))?;
        return Ok(Some(Box::new(seg)));
    }
    if let Some(dir) = &a.segmenter_masks {
        return Ok(Some(Box::new(MaskBankSegmenter::new(load_mask_dir(dir)?))));
    }
    Ok(None)
}

fn splat_cmd(a: SplatArgs) -> Result<()> {
    let assets = Assets::load(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let o = &assets.manifest.config;
    let views = assets.load_views(a.subsample)?;
    let labeled = load_points(a.split.join("labeled.ply"))?;
    let propagated_dir = load_mask_dir(a.split.join("masks"))?;
    let propagated: Vec<MaskSet> = views
        .iter()
        .map(|v| {
            let (w, h) = v.camera.dims();
            propagated_dir
                .iter()
                .find(|s| s.view == v.masks.view)
                .cloned()
                .unwrap_or_else(|| MaskSet::new(v.masks.view, w, h, MaskStage::Propagated))
        })
        .collect();
    let scene = label_gaussians(&load_gaussians(&a.scene)?, &labeled)?;
    let refine_cfg = RefinementConfig {
        tau_iou: pick(a.thresholds.tau_iou, o.tau_iou, RefinementConfig::default().tau_iou),
        n_prompts: a.prompts,
    };
    let mut merge_cfg = MergeConfig::default();
    if let Some(steps) = a.steps {
        merge_cfg.steps = steps;
    }
    let segmenter = segmenter_for(&a)?;
    if segmenter.is_none() {
        log::warn!("no segmenter given; merging against the propagated masks");
    }
    let out = splat(&scene, &views, &propagated, segmenter.as_deref(), &refine_cfg, &merge_cfg)?;
    create_dir(&a.out)?;
    save_gaussians(a.out.join("scene.ply"), &out.assembled.scene)?;
    save_mask_dir(a.out.join("masks"), &out.refinement.masks)?;
    let merges: Vec<_> = out
        .assembled
        .merges
        .iter()
        .map(|m| {
            json!({
                "round": m.round,
                "pair": [m.pair.0, m.pair.1],
                "w_mask": m.w_mask,
                "initial_loss": m.initial_loss,
                "final_loss": m.final_loss,
                "pruned": m.pruned,
            })
        })
        .collect();
    let failures = out.refinement.failures().count();
    let report = json!({ "merges": merges, "segmenter_failures": failures });
    fs::write(a.out.join("merges.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "instances {} merges {} Gaussians {} -> {} segmenter failures {}",
        instance_labels(&scene).len(),
        out.assembled.merges.len(),
        scene.len(),
        out.assembled.scene.len(),
        failures
    );
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let table = load_descriptors(&a.descriptors)?.table()?;
    let text: Vec<f64> = serde_json::from_str(&fs::read_to_string(&a.text)?)
        .with_context(|| format!("{} is not a JSON array of numbers", a.text.display()))?;
    let cfg = QueryConfig {
        tau_corr: a.thresholds.tau_corr.unwrap_or(QueryConfig::default().tau_corr),
    };
    let matches = query_open_vocab(&text, &table, &cfg)?;
    for (label, distance) in &matches {
        println!("{label} {distance}");
    }
    if let (Some(scene), Some(manifest), Some(dir)) = (&a.scene, &a.manifest, &a.masks_out) {
        let assets = Assets::load(manifest)?;
        let cameras = instasplat::io::load_cameras(assets.resolve(&assets.manifest.cameras))?;
        let scene = load_gaussians(scene)?;
        let labels: Vec<Label> = matches.iter().map(|m| m.0).collect();
        let sets: Vec<MaskSet> = query_masks(&labels, &scene, &cameras)
            .into_iter()
            .enumerate()
            .map(|(view, m): (usize, Mask)| MaskSet {
                view,
                width: m.width,
                height: m.height,
                stage: MaskStage::Refined,
                masks: if m.is_empty() { vec![] } else { vec![(1, m)] },
            })
            .collect();
        save_mask_dir(dir, &sets)?;
    }
    Ok(())
}

fn edit(a: EditArgs) -> Result<()> {
    let scene = load_gaussians(&a.input)?;
    let out = match a.op {
        EditOp::Remove { label } => remove_instance(&scene, label)?,
        EditOp::Duplicate { label, offset } => {
            let (out, fresh) = duplicate_instance(&scene, label, Vec3::from(offset))?;
            println!("{fresh}");
            out
        }
        EditOp::Transform {
            label,
            matrix,
            rotate,
            translate,
        } => {
            let motion = match matrix {
                Some(m) => rigid_from_matrix(&Matrix4::from_row_slice(&m))?,
                None => {
                    let r = UnitQuaternion::from_scaled_axis(Vec3::from(rotate.unwrap_or_default()));
                    let t = Vec3::from(translate.unwrap_or_default());
                    Isometry3::from_parts(Translation3::from(t), r)
                }
            };
            transform_instance(&scene, label, &motion)?
        }
        EditOp::Recolor { label, rgb } => recolor_instance(&scene, label, Vec3::from(rgb))?,
    };
    save_gaussians(&a.output, &out)?;
    Ok(())
}

/// Labeled points from either a point or a Gaussian PLY.
fn load_labeled(path: &Path) -> Result<PointCloud> {
    let table = read_vertices(std::io::BufReader::new(fs::File::open(path)?))
        .with_context(|| format!("reading {}", path.display()))?;
    let cloud = if table.column("opacity").is_some() {
        let scene = load_gaussians(path)?;
        PointCloud::with_labels(scene.iter().map(|g| g.mean).collect(), scene.iter().map(|g| g.label).collect())
    } else {
        load_points(path)?
    };
    if cloud.labels.is_none() {
        bail!("{} carries no labels", path.display());
    }
    Ok(cloud)
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = load_labeled(&a.pred)?;
    let gt = load_labeled(&a.gt)?;
    let mode = match a.matching {
        MatchingArg::OneToOne => Matching::OneToOne,
        MatchingArg::ManyToOne => Matching::ManyToOne,
    };
    let transferred = transfer_labels(&pred.points, pred.labels.as_deref().unwrap_or_default(), &gt.points)?;
    let report = evaluate(&transferred, gt.labels.as_deref().unwrap_or_default(), mode)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.report {
        fs::write(path, report.to_key_values())?;
    }
    Ok(())
}

fn segmenter_serve(a: ServeArgs) -> Result<()> {
    let sets = load_mask_dir(&a.masks)?;
    let seg: Box<dyn Segmenter> = match a.mode {
        ServeMode::Oracle => Box::new(OracleSegmenter::new(sets)),
        ServeMode::Bank => Box::new(MaskBankSegmenter::new(sets)),
    };
    match &a.listen {
        Some(addr) => {
            let listener = std::net::TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            let (stream, _) = listener.accept()?;
            let reader = std::io::BufReader::new(stream.try_clone()?);
            serve(reader, stream, seg.as_ref())?;
        }
        None => {
            let stdin = std::io::stdin().lock();
            serve(stdin, std::io::stdout().lock(), seg.as_ref())?;
        }
    }
    Ok(())
}
