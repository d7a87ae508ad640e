use std::path::{Path, PathBuf};

use codedpix::io::image_io::load_image;
use codedpix::io::mask_io::load_mask;
use codedpix::io::pfm::read_pfm_2d;
use codedpix::io::write_file;
use codedpix::metrics::{scene_report, SceneReport};
use codedpix::{Error, Result};
use ndarray::{Array2, Array3};

use crate::config::RunConfig;
use crate::manifest::Manifest;
use crate::EXIT_CHECK_FAILED;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Prediction: a `recon` output directory or a directory of them.
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Ground truth: a scene directory or a dataset directory.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Where to write `report.jsonl` and the manifest; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Check that a mask passes at least half the light, then exit.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    pub mask_check: Option<PathBuf>,
}

struct Scene {
    name: String,
    depth: Array2<f64>,
    image: Array3<f64>,
}

fn first_existing(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| Error::format(dir, format!("none of {names:?} found")))
}

fn load_scene(dir: &Path, name: String, images: &[&str]) -> Result<Scene> {
    Ok(Scene {
        name,
        depth: read_pfm_2d(&dir.join("depth.pfm"))?,
        image: load_image(&first_existing(dir, images)?)?,
    })
}

/// A directory holding `depth.pfm` is one scene; otherwise each
/// subdirectory holding one is, in name order.
fn scene_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.join("depth.pfm").exists() {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, dir.to_path_buf())]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("depth.pfm").exists())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    subs.sort();
    if subs.is_empty() {
        return Err(Error::format(dir, "no scenes with depth.pfm"));
    }
    Ok(subs)
}

fn mask_check(path: &Path) -> Result<u8> {
    let mask = load_mask(path)?;
    let t = mask.transmission();
    let ok = t >= 0.5;
    println!(
        "{} transmission {t:.6} ({} 0.5)",
        if ok { "PASS" } else { "FAIL" },
        if ok { ">=" } else { "<" }
    );
    Ok(if ok { 0 } else { EXIT_CHECK_FAILED })
}

pub fn run(args: &Args, cfg: RunConfig) -> Result<u8> {
    if let Some(p) = &args.mask_check {
        return mask_check(p);
    }
    let (Some(pred_dir), Some(gt_dir)) = (&args.pred, &args.gt) else {
        return Err(Error::Validation("eval needs --pred and --gt, or --mask-check".into()));
    };
    let gts = scene_dirs(gt_dir)?;
    let preds = scene_dirs(pred_dir)?;
    let single = gts.len() == 1 && preds.len() == 1;
    let mut reports = Vec::new();
    for (name, gdir) in &gts {
        let pdir = if single {
            preds[0].1.clone()
        } else {
            preds
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, p)| p.clone())
                .ok_or_else(|| Error::Validation(format!("no prediction for scene '{name}'")))?
        };
        let gt = load_scene(gdir, name.clone(), &["image.pfm", "image.png"])?;
        let pred = load_scene(&pdir, name.clone(), &["aif.pfm", "image.pfm"])?;
        reports.push(scene_report(&gt.name, &pred.depth, &gt.depth, &pred.image, &gt.image)?);
    }
    reports.push(SceneReport::aggregate(&reports)?);

    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r).expect("report serializes"));
        text.push('\n');
    }
    match &args.out {
        Some(out) => {
            codedpix::io::create_dir(out)?;
            write_file(&out.join("report.jsonl"), text.as_bytes())?;
            let mut man = Manifest::new("eval", &cfg);
            man.extra("scenes", reports.len() - 1);
            man.extra("pred", pred_dir.display().to_string());
            man.extra("gt", gt_dir.display().to_string());
            man.write(out)?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}
