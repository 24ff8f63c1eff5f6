use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use segfactory::augment::{build_object_bank, BankSource, GenerateConfig, SetKind};
use segfactory::dataset::{
    dataset_root, evaluate_map, export_coco, generate_to_disk, hex_digest, import_coco, load_bank, save_bank,
    set_directory, write_atomic, CocoDocument, Config, DatasetManifest, Downscale, GeneratedSetRecord, ManifestStore,
};
use segfactory::imaging::{DepthImage, RasterImage};
use segfactory::labeler::{
    auto_select, label_dataset, render_overlay, CandidateKind, CandidateSet, Decision, DecisionSource, PreferExternal,
    SceneImages, SceneRecord, SpectralResidual,
};
use segfactory::synthetic::{write_synthetic_dataset, SyntheticParams};

use crate::{overlay_path, server, CliError};

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Scenes held in memory at once while augmenting.
const AUGMENT_CHUNK: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "segfactory",
    version,
    about = "Weakly supervised instance-segmentation dataset factory"
)]
pub struct Cli {
    /// Pipeline configuration file (JSON)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset manifest; scene paths are relative to its directory
    #[arg(long, global = true, value_name = "FILE", default_value = "manifest.json")]
    pub manifest: PathBuf,
    /// Worker threads for batch stages
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic turntable dataset with ground truth
    Synth {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the weak labeler over every scene and render candidate overlays
    Label,
    /// Re-apply automatic selection to scenes without a human decision
    Select,
    /// Build an object bank from the selected annotations
    Bank {
        #[arg(long, default_value = "main")]
        name: String,
    },
    /// Generate an augmented scene set
    Augment(AugmentArgs),
    /// Export the selected annotations as a COCO document
    Export {
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Mask mAP of predictions against ground truth
    Eval {
        #[arg(long, value_name = "FILE")]
        gt: PathBuf,
        #[arg(long, value_name = "FILE")]
        pred: PathBuf,
        /// Also write the full report as JSON
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Write a copy of the dataset reduced by an integer factor
    Downscale {
        #[arg(long)]
        factor: usize,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Serve the review API and UI bundle
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory holding the built UI
        #[arg(long, value_name = "DIR")]
        ui: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub kind: SetKind,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Set name under generated/; defaults to the kind
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value = "main")]
    pub bank: String,
    /// Directory of background PNGs; defaults to the scene backgrounds
    #[arg(long, value_name = "DIR")]
    pub backgrounds: Option<PathBuf>,
}

/// Logs to stderr at `info` unless `RUST_LOG` says otherwise.
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("see `segfactory --help` for usage");
            }
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| CliError::Usage(format!("config: {e}")))?,
        None => Config::default(),
    };
    let ctx = Ctx {
        manifest: cli.manifest,
        config,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Data(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Synth { count, seed } => synth(&ctx, count, seed),
        Command::Label => label(&ctx),
        Command::Select => select(&ctx),
        Command::Bank { name } => bank(&ctx, &name),
        Command::Augment(a) => augment(&ctx, &a),
        Command::Export { out } => export(&ctx, out),
        Command::Eval { gt, pred, out } => eval(&ctx, &gt, &pred, out.as_deref()),
        Command::Downscale { factor, out } => downscale(&ctx, factor, out),
        Command::Serve { port, host, ui } => serve(&ctx, &host, port, ui),
    })
}

struct Ctx {
    manifest: PathBuf,
    config: Config,
}

impl Ctx {
    fn store(&self) -> CliResult<ManifestStore> {
        if !self.manifest.is_file() {
            return Err(CliError::Usage(format!(
                "manifest {} not found; pass --manifest FILE",
                self.manifest.display()
            )));
        }
        Ok(ManifestStore::open(&self.manifest)?)
    }

    fn root(&self) -> PathBuf {
        dataset_root(&self.manifest)
    }
}

fn write_summary(path: &Path, value: &Value) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    log::info!("summary written to {}", path.display());
    Ok(())
}

fn rel_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn synth(ctx: &Ctx, count: usize, seed: u64) -> CliResult {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let d = write_synthetic_dataset(&ctx.manifest, &SyntheticParams::default(), count, seed)?;
    let instances: usize = d.scenes.iter().map(|s| s.masks.len()).sum();
    println!(
        "wrote {count} synthetic scenes with {instances} instances to {}",
        ctx.root().display()
    );
    write_summary(
        &ctx.root().join("synth.summary.json"),
        &json!({
            "stage": "synth",
            "scenes": count,
            "seed": seed,
            "instances": instances,
        }),
    )
}

/// Renders the three candidate overlays of a scene; returns file digests.
fn write_overlays(root: &Path, record: &SceneRecord, c: &CandidateSet) -> segfactory::Result<Vec<(String, String)>> {
    let image = RasterImage::load_png(root.join(&record.image_path))?;
    CandidateKind::ALL
        .iter()
        .map(|&kind| {
            let path = overlay_path(record, kind);
            let png = render_overlay(&image, c.instances(kind), kind).encode_png()?;
            write_atomic(&root.join(&path), &png)?;
            Ok((rel_string(&path), hex_digest(&png)))
        })
        .collect()
}

fn label(ctx: &Ctx) -> CliResult {
    let store = ctx.store()?;
    let root = store.root();
    let m = store.read()?;
    let records = m.records();
    let p = &ctx.config.labeler.params;
    let source = PreferExternal(SpectralResidual(ctx.config.labeler.saliency.clone()));
    let run = label_dataset(&root, &records, &m.candidates(), p, &source)?;

    let overlays: Vec<(String, String)> = run
        .scenes
        .par_iter()
        .zip(&records)
        .filter_map(|(o, r)| o.result.as_ref().ok().map(|c| write_overlays(&root, r, c)))
        .collect::<segfactory::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let progress = store.update(|m| {
        // human decisions recorded while the labeler ran survive the update
        let human: Vec<(String, Decision)> = m
            .scenes
            .iter()
            .filter_map(|s| {
                let c = s.candidates.as_ref().filter(|c| c.is_human_decided())?;
                Some((s.record.scene_id.clone(), c.decision))
            })
            .collect();
        m.apply_label_run(&run);
        for (id, d) in human {
            if let Some(c) = m
                .scenes
                .iter_mut()
                .find(|s| s.record.scene_id == id)
                .and_then(|s| s.candidates.as_mut())
            {
                c.decision = d;
                c.decision_source = Some(DecisionSource::Human);
            }
        }
        Ok::<_, segfactory::Error>(m.progress())
    })?;

    let errors: Vec<Value> = run
        .scenes
        .iter()
        .filter_map(|o| {
            o.result
                .as_ref()
                .err()
                .map(|e| json!({"scene_id": o.scene_id, "error": e}))
        })
        .collect();
    for e in &errors {
        log::warn!("scene {} failed: {}", e["scene_id"], e["error"]);
    }
    let labeled = run.scenes.len() - errors.len();
    println!(
        "labeled {labeled}/{} scenes; {} selected annotations",
        run.scenes.len(),
        run.selected.len()
    );
    write_summary(
        &root.join("label.summary.json"),
        &json!({
            "stage": "label",
            "scenes": run.scenes.len(),
            "labeled": labeled,
            "selected_annotations": run.selected.len(),
            "errors": errors,
            "progress": progress,
            "config_digest": ctx.config.digest(),
            "overlays": overlays.into_iter().collect::<BTreeMap<_, _>>(),
        }),
    )?;
    if labeled == 0 && !run.scenes.is_empty() {
        return Err(CliError::Data("no scene could be labeled".into()));
    }
    Ok(())
}

fn select(ctx: &Ctx) -> CliResult {
    let store = ctx.store()?;
    let p = ctx.config.labeler.params.clone();
    let (changed, progress) = store.update(|m| {
        let mut changed = 0;
        for s in &mut m.scenes {
            let Some(c) = s.candidates.take() else { continue };
            if c.is_human_decided() {
                s.candidates = Some(c);
                continue;
            }
            let before = (c.decision, c.decision_source);
            let c = auto_select(c, &p);
            if (c.decision, c.decision_source) != before {
                changed += 1;
                s.revision += 1;
            }
            s.candidates = Some(c);
        }
        Ok::<_, segfactory::Error>((changed, m.progress()))
    })?;
    println!("selection changed for {changed} scenes");
    write_summary(
        &store.root().join("select.summary.json"),
        &json!({"stage": "select", "changed": changed, "progress": progress}),
    )
}

fn bank(ctx: &Ctx, name: &str) -> CliResult {
    let store = ctx.store()?;
    let root = store.root();
    let m = store.read()?;
    let selected = m.selected();
    if selected.annotations.is_empty() {
        return Err(CliError::Data("no selected annotations; run `label` first".into()));
    }
    let build = build_object_bank(&selected.annotations, |image_id| {
        let s = &m.scenes[image_id as usize - 1];
        let images = SceneImages::load(&s.record, &root)?;
        Ok(BankSource {
            scene_id: s.record.scene_id.clone(),
            image: images.image,
            depth: images.depth,
        })
    });
    for (id, reason) in &build.skipped {
        log::warn!("annotation {id} skipped: {reason}");
    }
    if build.entries.is_empty() {
        return Err(CliError::Data("no annotation produced a bank entry".into()));
    }
    let index = save_bank(&root, name, &build.entries)?;
    let mut per_class: BTreeMap<u32, usize> = BTreeMap::new();
    for e in &build.entries {
        *per_class.entry(e.class_id).or_default() += 1;
    }
    println!(
        "bank {name}: {} entries, {} skipped",
        build.entries.len(),
        build.skipped.len()
    );
    let digest = hex_digest(&std::fs::read(&index).map_err(|e| CliError::Data(e.to_string()))?);
    write_summary(
        &index.with_extension("summary.json"),
        &json!({
            "stage": "bank",
            "name": name,
            "entries": build.entries.len(),
            "per_class": per_class,
            "skipped": build.skipped.iter().map(|(id, r)| json!({"annotation_id": id, "reason": r})).collect::<Vec<_>>(),
            "index_digest": digest,
        }),
    )
}

fn load_backgrounds(dir: &Path) -> CliResult<Vec<RasterImage>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Usage(format!("backgrounds directory {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no PNG files in {}", dir.display())));
    }
    paths
        .par_iter()
        .map(|p| Ok(RasterImage::load_png(p)?.to_rgb()))
        .collect()
}

fn augment(ctx: &Ctx, a: &AugmentArgs) -> CliResult {
    let store = ctx.store()?;
    let root = store.root();
    let m = store.read()?;
    let bank = load_bank(&root, &a.bank)?;
    let backgrounds = match &a.backgrounds {
        Some(dir) => load_backgrounds(dir)?,
        None if a.kind == SetKind::RandomBackground => {
            return Err(CliError::Usage(
                "--kind random-background needs --backgrounds DIR".into(),
            ))
        }
        None => m
            .scenes
            .par_iter()
            .map(|s| Ok(RasterImage::load_png(root.join(&s.record.background_path))?.to_rgb()))
            .collect::<CliResult<Vec<_>>>()?,
    };
    let cfg = GenerateConfig {
        placement: ctx.config.augment.clone(),
        lighting: ctx.config.lighting.clone(),
        camera: ctx.config.camera,
    };
    let name = a.name.clone().unwrap_or_else(|| a.kind.as_str().to_string());
    let cats = m.coco_categories();
    let out = generate_to_disk(
        &root,
        &name,
        &cats,
        &bank,
        &backgrounds,
        &cfg,
        a.kind,
        a.count,
        a.seed,
        AUGMENT_CHUNK,
    )?;

    let record = GeneratedSetRecord {
        name: name.clone(),
        kind: a.kind,
        count: a.count,
        seed: a.seed,
        config_digest: ctx.config.digest(),
    };
    store.update(|m| {
        m.generated_sets.retain(|g| g.name != name);
        m.generated_sets.push(record.clone());
        Ok::<_, segfactory::Error>(())
    })?;
    println!(
        "set {name}: {} images, {} annotations, {} failed scenes",
        out.images, out.annotations, out.failed_scenes
    );
    write_summary(
        &set_directory(&root, &name).join("augment.summary.json"),
        &json!({
            "stage": "augment",
            "set": record,
            "images": out.images,
            "annotations": out.annotations,
            "failed_scenes": out.failed_scenes,
            "digests": out.digests,
        }),
    )?;
    if out.images == 0 && a.count > 0 {
        return Err(CliError::Data(format!("every scene of set {name} failed")));
    }
    Ok(())
}

fn export(ctx: &Ctx, out: Option<PathBuf>) -> CliResult {
    let store = ctx.store()?;
    let m = store.read()?;
    let out = out.unwrap_or_else(|| store.root().join("export").join("annotations.json"));
    let data = m.selected();
    let doc = export_coco(&data, &out)?;
    let bytes = doc.to_json()?;
    println!(
        "exported {} images, {} annotations to {}",
        doc.images.len(),
        doc.annotations.len(),
        out.display()
    );
    write_summary(
        &out.with_file_name("export.summary.json"),
        &json!({
            "stage": "export",
            "file": out.file_name().map(|f| f.to_string_lossy().into_owned()),
            "images": doc.images.len(),
            "annotations": doc.annotations.len(),
            "digest": hex_digest(&bytes),
        }),
    )
}

fn load_coco(path: &Path, default_score: f64) -> CliResult<segfactory::dataset::CocoData> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{} not found", path.display())));
    }
    Ok(CocoDocument::load(path)?.decode(default_score)?)
}

fn eval(ctx: &Ctx, gt: &Path, pred: &Path, out: Option<&Path>) -> CliResult {
    let score = ctx.config.eval.default_score;
    let gt_data = load_coco(gt, score)?;
    let pred_data = load_coco(pred, score)?;
    let report = evaluate_map(&gt_data, &pred_data)?;
    println!("mAP {:.3}", report.map);
    let names: BTreeMap<u32, &str> = gt_data.categories.iter().map(|c| (c.id, c.name.as_str())).collect();
    for (id, ap) in &report.per_class_ap {
        println!(
            "  class {id} ({}): AP {:.3}  gts {}  predictions {}",
            names.get(id).copied().unwrap_or("?"),
            ap.mean,
            ap.gts,
            ap.predictions
        );
    }
    if let Some(out) = out {
        let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(out, &bytes)?;
    }
    Ok(())
}

fn downscale_set(root: &Path, out_root: &Path, name: &str, factor: usize) -> CliResult<Value> {
    let src = set_directory(root, name);
    let dst = set_directory(out_root, name);
    let ann = src.join("annotations.json");
    if !ann.is_file() {
        log::warn!("generated set {name} has no annotations; skipped");
        return Ok(json!({"name": name, "skipped": true}));
    }
    let mut data = import_coco(&ann)?;
    data.images
        .par_iter_mut()
        .map(|img| -> CliResult {
            let small = RasterImage::load_png(src.join(&img.file_name))?.downscale(factor)?;
            small.save_png(dst.join(&img.file_name))?;
            img.width = small.width();
            img.height = small.height();
            Ok(())
        })
        .collect::<CliResult<Vec<_>>>()?;
    data.annotations = data
        .annotations
        .par_iter()
        .map(|a| a.downscale(factor))
        .collect::<segfactory::Result<Vec<_>>>()?;
    // annotations that vanish at the lower resolution are dropped
    data.annotations.retain(|a| a.area() > 0);
    export_coco(&data, dst.join("annotations.json"))?;
    if let Ok(entries) = std::fs::read_dir(src.join("sidecars")) {
        for e in entries.flatten() {
            let to = dst.join("sidecars").join(e.file_name());
            let bytes = std::fs::read(e.path()).map_err(|e| CliError::Data(e.to_string()))?;
            write_atomic(&to, &bytes)?;
        }
    }
    Ok(json!({"name": name, "images": data.images.len(), "annotations": data.annotations.len()}))
}

fn downscale(ctx: &Ctx, factor: usize, out: Option<PathBuf>) -> CliResult {
    if factor == 0 {
        return Err(CliError::Usage("--factor must be at least 1".into()));
    }
    let store = ctx.store()?;
    let root = store.root();
    let m = store.read()?;
    let out_root = out.unwrap_or_else(|| root.join(format!("downscaled-x{factor}")));
    if out_root == root {
        return Err(CliError::Usage("--out must differ from the dataset directory".into()));
    }

    let scenes = m
        .scenes
        .par_iter()
        .map(|s| -> CliResult<segfactory::dataset::ManifestScene> {
            let r = &s.record;
            let copy = |rel: &Path| -> CliResult {
                let img = RasterImage::load_png(root.join(rel))?;
                img.downscale(factor)?.save_png(out_root.join(rel))?;
                Ok(())
            };
            copy(&r.image_path)?;
            copy(&r.background_path)?;
            if let Some(d) = &r.depth_path {
                DepthImage::load_png(root.join(d))?
                    .downscale(factor)?
                    .save_png(out_root.join(d))?;
            }
            let saliency = r
                .saliency_path
                .clone()
                .or_else(|| r.image_path.parent().map(|p| p.join("saliency.png")));
            if let Some(sal) = saliency.filter(|p| root.join(p).is_file()) {
                copy(&sal)?;
            }
            let mut scene = s.clone();
            scene.record.turntable = r.turntable.downscale(factor)?;
            if let Some(c) = &s.candidates {
                let mut small = c.downscale(factor)?;
                small.turntable_area = scene
                    .record
                    .turntable
                    .to_mask(small.image_width, small.image_height)?
                    .count();
                write_overlays(&out_root, &scene.record, &small)?;
                scene.candidates = Some(small);
            }
            Ok(scene)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let small = DatasetManifest { scenes, ..m.clone() };
    let sets = m
        .generated_sets
        .iter()
        .map(|g| downscale_set(&root, &out_root, &g.name, factor))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest_path = out_root.join("manifest.json");
    small.save(&manifest_path)?;
    println!(
        "downscaled {} scenes and {} generated sets by {factor} into {}",
        small.scenes.len(),
        sets.len(),
        out_root.display()
    );
    write_summary(
        &out_root.join("downscale.summary.json"),
        &json!({
            "stage": "downscale",
            "factor": factor,
            "scenes": small.scenes.len(),
            "generated_sets": sets,
            "manifest_digest": hex_digest(&small.to_json()?),
        }),
    )
}

fn serve(ctx: &Ctx, host: &str, port: u16, ui: Option<PathBuf>) -> CliResult {
    let store = ctx.store()?;
    if let Some(dir) = &ui {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("UI directory {} not found", dir.display())));
        }
    }
    let app = server::router(store, ui);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {host}:{port}: {e}")))?;
        log::info!(
            "review service listening on http://{}",
            listener.local_addr().map_err(|e| CliError::Data(e.to_string()))?
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Data(e.to_string()))
    })
}
