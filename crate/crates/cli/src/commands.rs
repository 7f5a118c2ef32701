//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use denseprompt::bench::{grid_sweep, make_scenes, rows_csv, sampler_comparison, timing_csv};
use denseprompt::checkpoint::Checkpoint;
use denseprompt::eval::{evaluate, EvalImage, Metrics};
use denseprompt::io::coco::{load_coco, CocoFile};
use denseprompt::model::Heads;
use denseprompt::pipeline::annotate;
use denseprompt::scene::{render, SceneArchive};
use denseprompt::trainer::{train, LabeledImage};
use serde::Serialize;

use crate::config::{Config, DataSource};
use crate::data::{self, ground_truth_coco};
use crate::output::{
    line_chart, overlay, series_by_sampler, write_csv, write_json, write_png, write_text,
};

pub struct Ctx {
    pub cfg: Config,
    pub fingerprint: String,
    pub out_dir: PathBuf,
}

impl Ctx {
    pub fn new(cfg: Config, out_dir: PathBuf) -> Self {
        let fingerprint = cfg.fingerprint();
        Ctx {
            cfg,
            fingerprint,
            out_dir,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Records the resolved configuration next to a command's outputs.
    fn save_config(&self, command: &str) -> Result<()> {
        let text = format!("# fingerprint={}\n{}", self.fingerprint, self.cfg.to_toml());
        write_text(&self.path(&format!("{command}.config.toml")), &text)
    }

    fn load_heads(&self, path: Option<&Path>) -> Result<Heads> {
        let p = path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path("heads.ck"));
        let ck = Checkpoint::load(&p)
            .with_context(|| format!("cannot load checkpoint {}", p.display()))?;
        Ok(ck.heads)
    }
}

pub fn show_config(ctx: &Ctx) -> Result<()> {
    print!("# fingerprint={}\n{}", ctx.fingerprint, ctx.cfg.to_toml());
    Ok(())
}

pub enum Split {
    Train,
    Eval,
}

/// Renders a scene source to PNGs with COCO ground truth and a replayable
/// archive under `<out>/scenes/`.
pub fn scenes(ctx: &Ctx, split: Split) -> Result<()> {
    let src = match split {
        Split::Train => &ctx.cfg.data.train,
        Split::Eval => &ctx.cfg.data.eval,
    };
    let DataSource::Scenes(s) = src else {
        bail!("the selected data source is not synthetic scenes");
    };
    let dir = ctx.path("scenes");
    let params = s.params();
    let mut specs = Vec::new();
    for seed in s.seeds() {
        let (scene, _) = params.generate(seed)?;
        write_png(
            &dir.join(format!("scene_{seed}.png")),
            &render(&scene),
            &ctx.fingerprint,
        )?;
        specs.push(scene);
    }
    let items = data::load(src)?;
    write_json(
        &dir.join("ground_truth.json"),
        &ground_truth_coco(&items, &ctx.fingerprint),
    )?;
    write_json(
        &dir.join("scenes.json"),
        &Archive {
            fingerprint: &ctx.fingerprint,
            archive: SceneArchive::new(params, &specs),
        },
    )?;
    ctx.save_config("scenes")?;
    println!("wrote {} scenes to {}", specs.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct Archive<'a> {
    fingerprint: &'a str,
    #[serde(flatten)]
    archive: SceneArchive,
}

pub fn train_cmd(ctx: &Ctx) -> Result<()> {
    let backend = ctx.cfg.backend()?;
    let items = data::load(&ctx.cfg.data.train)?;
    let images: Vec<LabeledImage> = items
        .into_iter()
        .map(|it| LabeledImage {
            image: it.image,
            boxes: it.boxes,
        })
        .collect();
    let out = train(backend.as_ref(), &images, &ctx.cfg.train)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let ck = Checkpoint {
        heads: out.heads.clone(),
        fingerprint: ctx.fingerprint.clone(),
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    ck.save(&ctx.path("heads.ck"))?;
    write_csv(&ctx.path("loss.csv"), &ctx.fingerprint, &out.loss_csv())?;
    ctx.save_config("train")?;
    let last = out.log.last().map(|r| r.l).unwrap_or(f64::NAN);
    println!(
        "trained {} iterations on {} images, final loss {last:.6}; wrote {}",
        out.log.len(),
        images.len(),
        ctx.path("heads.ck").display()
    );
    Ok(())
}

pub fn annotate_cmd(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let backend = ctx.cfg.backend()?;
    let heads = ctx.load_heads(checkpoint)?;
    let items = data::load(&ctx.cfg.data.eval)?;
    let mut results = CocoFile::new(&ctx.fingerprint);
    let mut crops =
        String::from("image_id,crop,x0,y0,width,height,scale,grid,prompts,decoded,pruned\n");
    let mut timing = String::from("image_id,features_s,prompts_s,sampling_s,merge_s\n");
    for item in &items {
        let r = annotate(&item.image, &heads, backend.as_ref(), &ctx.cfg.annotate)
            .with_context(|| format!("image {}", item.id))?;
        for (k, (w, st)) in r.plan.windows.iter().zip(&r.stats).enumerate() {
            let _ = writeln!(
                crops,
                "{},{k},{},{},{},{},{:.6},{},{},{},{}",
                item.id,
                w.x0,
                w.y0,
                w.width,
                w.height,
                w.scale,
                w.grid,
                st.prompts,
                st.decoded,
                st.pruned
            );
        }
        let t = &r.timing;
        let _ = writeln!(
            timing,
            "{},{:.6},{:.6},{:.6},{:.6}",
            item.id,
            t.features.as_secs_f64(),
            t.prompts.as_secs_f64(),
            t.sampling.as_secs_f64(),
            t.merge.as_secs_f64()
        );
        let ov = overlay(&item.image, &r.detections)?;
        write_png(
            &ctx.path(&format!("overlays/{}.png", item.id)),
            &ov,
            &ctx.fingerprint,
        )?;
        results.push_detections(item.coco_image(), &r.detections);
    }
    write_json(&ctx.path("results.json"), &results)?;
    write_json(
        &ctx.path("ground_truth.json"),
        &ground_truth_coco(&items, &ctx.fingerprint),
    )?;
    write_csv(&ctx.path("crops.csv"), &ctx.fingerprint, &crops)?;
    write_csv(&ctx.path("annotate_timing.csv"), &ctx.fingerprint, &timing)?;
    ctx.save_config("annotate")?;
    println!(
        "annotated {} images, {} detections; wrote {}",
        items.len(),
        results.annotations.len(),
        ctx.path("results.json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    fingerprint: &'a str,
    results_fingerprint: String,
    iou_threshold: f64,
    #[serde(flatten)]
    metrics: Metrics,
}

pub fn eval_cmd(ctx: &Ctx, results: Option<&Path>, ground_truth: Option<&Path>) -> Result<()> {
    let rp = results
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path("results.json"));
    let gp = ground_truth
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.path("ground_truth.json"));
    let res = load_coco(&rp).with_context(|| format!("results {}", rp.display()))?;
    let gt = load_coco(&gp).with_context(|| format!("ground truth {}", gp.display()))?;
    if let Some(im) = res
        .images
        .iter()
        .find(|r| !gt.images.iter().any(|g| g.id == r.id))
    {
        bail!("results image {} is not in the ground truth", im.id);
    }
    let images = gt
        .images
        .iter()
        .map(|im| {
            Ok(EvalImage {
                detections: res.boxes(im.id)?,
                ground_truth: gt.boxes(im.id)?.into_iter().map(|(b, _)| b).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = evaluate(&images, ctx.cfg.eval.iou_threshold);
    write_json(
        &ctx.path("metrics.json"),
        &MetricsFile {
            fingerprint: &ctx.fingerprint,
            results_fingerprint: res.info.map(|i| i.fingerprint).unwrap_or_default(),
            iou_threshold: ctx.cfg.eval.iou_threshold,
            metrics: m,
        },
    )?;
    ctx.save_config("eval")?;
    print!("{}", m.to_kv());
    Ok(())
}

pub fn bench_cmd(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let backend = ctx.cfg.backend()?;
    let b = &ctx.cfg.bench;
    let heads = match checkpoint {
        Some(p) => Some(ctx.load_heads(Some(p))?),
        None => None,
    };
    let scenes = make_scenes(&b.scenes.params(), &b.scenes.seeds())?;
    let bc = b.bench_config(ctx.cfg.seed);
    let sweep = if b.sweep_grids.is_empty() {
        Vec::new()
    } else {
        grid_sweep(
            backend.as_ref(),
            heads.as_ref(),
            &scenes,
            &b.sweep_grids,
            &bc,
        )?
    };
    let cmp = sampler_comparison(
        backend.as_ref(),
        heads.as_ref(),
        &scenes,
        &b.sampler_grids,
        &b.budgets,
        &b.samplers,
        &bc,
    )?;
    let fp = &ctx.fingerprint;
    write_csv(&ctx.path("bench_grids.csv"), fp, &rows_csv(&sweep))?;
    write_csv(&ctx.path("bench_samplers.csv"), fp, &rows_csv(&cmp))?;
    let all: Vec<_> = sweep.iter().chain(&cmp).cloned().collect();
    write_csv(&ctx.path("bench_timing.csv"), fp, &timing_csv(&all))?;
    if !sweep.is_empty() {
        let recall = series_by_sampler(&sweep, |r| r.recall);
        write_text(
            &ctx.path("bench_grids_recall.svg"),
            &line_chart("Full decode: recall by grid", "recall", &recall, false, fp)?,
        )?;
        let cost = series_by_sampler(&sweep, |r| r.mean_decoded);
        write_text(
            &ctx.path("bench_grids_decoded.svg"),
            &line_chart(
                "Full decode: prompts decoded by grid",
                "decoded prompts",
                &cost,
                true,
                fp,
            )?,
        )?;
    }
    if !cmp.is_empty() {
        let recall = series_by_sampler(&cmp, |r| r.recall);
        write_text(
            &ctx.path("bench_samplers.svg"),
            &line_chart(
                "Budgeted samplers: recall by grid",
                "recall",
                &recall,
                false,
                fp,
            )?,
        )?;
    }
    ctx.save_config("bench")?;
    print!("{}{}", rows_csv(&sweep), rows_csv(&cmp));
    Ok(())
}
