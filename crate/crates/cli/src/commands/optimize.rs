use std::path::PathBuf;

use codedpix::io::mask_io::save_mask;
use codedpix::io::{create_dir, write_file};
use codedpix::optimize::{Checkpoint, MaskOptimizer, TraceRecord};
use codedpix::synth::load_dataset;
use codedpix::Result;

use crate::config::{CommonFlags, RunConfig};
use crate::manifest::Manifest;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// RGB-D dataset directory (needed by the proxy objective).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub objective: Option<String>,
    /// Total mask-learning iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Stop after this many iterations of this invocation and checkpoint.
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Continue from a checkpoint; its optimizer settings take precedence.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
}

fn trace_text(records: &[TraceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn run(args: &Args, flags: &CommonFlags, mut cfg: RunConfig) -> Result<u8> {
    let o = &mut cfg.optimize;
    if let Some(v) = &args.objective {
        o.objective = v.clone();
    }
    if let Some(v) = args.iterations {
        o.iterations = Some(v);
    }
    if let Some(v) = args.lr {
        o.lr_mask = v;
    }
    if let Some(v) = args.alpha0 {
        o.alpha0 = v;
    }
    if let Some(v) = flags.mask_size {
        o.mask_size = v;
    }
    if let Some(v) = flags.seed {
        o.seed = v;
    }
    if let Some(v) = flags.noise_a {
        o.noise_a = v;
    }
    if let Some(v) = flags.noise_b {
        o.noise_b = v;
    }
    let dataset = match &args.dataset {
        Some(d) => load_dataset(d)?,
        None => Vec::new(),
    };
    let camera = cfg.camera();
    let model = cfg.model();
    let mut opt = match &args.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            cfg.optimize = ck.config.clone();
            MaskOptimizer::resume(&ck, &dataset, &camera, &model)?
        }
        None => {
            cfg.validate()?;
            MaskOptimizer::new(&cfg.optimize, &dataset, &camera, &model)?
        }
    };
    opt.run(args.stop_after)?;

    create_dir(&args.out)?;
    opt.checkpoint().save(&args.out.join("checkpoint.json"))?;
    write_file(&args.out.join("trace.jsonl"), trace_text(opt.records()).as_bytes())?;
    let mut man = Manifest::new("optimize-mask", &cfg);
    if let Some(p) = &args.resume {
        man.input("checkpoint", p, None)?;
    }
    if let Some(d) = &args.dataset {
        man.extra("dataset", d.display().to_string());
    }
    man.extra("iterations_done", opt.records().len());
    let done = opt.is_done();
    man.extra("complete", done);
    if done {
        let trace = opt.finish()?;
        save_mask(&args.out.join("mask.png"), &trace.final_binary)?;
        save_mask(&args.out.join("mask_continuous.png"), &trace.final_continuous)?;
        man.extra("mask_sha256", trace.final_binary.content_hash());
        man.extra("mask_transmission", trace.final_binary.transmission());
        man.extra("repaired_cells", trace.repaired_cells);
        man.extra("aborted", trace.aborted);
    }
    man.write(&args.out)?;
    Ok(0)
}
