use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fednet_core::ct::{self, read_mvol_as, write_mvol, CtVolume, SynthParams};
use fednet_core::harness::data::{list_mvol, CT_SUBDIR, LABEL_SUBDIR};
use fednet_core::harness::{self, gradsuite, StagePair, TrainConfig};
use fednet_core::Error;

#[derive(Parser)]
#[command(name = "fednet", version, about = "Liver and lesion segmentation in CT volumes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic phantoms into OUT/ct and OUT/labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Volume extents as NX,NY,NZ.
        #[arg(long, default_value = "64,64,48", value_parser = parse_dims)]
        dims: [usize; 3],
    },
    /// Window a CT volume to [0, 1] and write it as a float volume.
    Preprocess {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path, overriding `checkpoint_out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment lesions with a liver and a lesion checkpoint.
    Infer {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        liver: PathBuf,
        #[arg(long)]
        lesion: PathBuf,
        /// A CT volume or a directory of them; defaults to `data_dir/ct`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Receives `lesion/` and `liver/` mask directories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Dice of predicted masks against ground truth, matched by file name.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Ground-truth label to compare against; any non-zero label otherwise.
        #[arg(long)]
        gt_label: Option<u8>,
    },
    /// Train and score the six component combinations.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every op and block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run only the named check.
        #[arg(long)]
        only: Option<String>,
    },
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated extents".to_string())
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig, Error> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<(), Error> {
    fs::create_dir_all(p).map_err(|e| Error::from(e).at_path(p))
}

/// Returns false when a check failed.
fn run(cmd: Cmd) -> Result<bool, Error> {
    match cmd {
        Cmd::Synth { out, seed, count, dims } => {
            let vols = ct::synth_generate(seed, count, dims, &SynthParams::default())?;
            let (ct_dir, lab_dir) = (out.join(CT_SUBDIR), out.join(LABEL_SUBDIR));
            create_dir(&ct_dir)?;
            create_dir(&lab_dir)?;
            println!("case\tliver_voxels\tlesion_voxels");
            for (i, (img, lab)) in vols.iter().enumerate() {
                let name = format!("case_{i:03}.mvol");
                write_mvol(img, ct_dir.join(&name))?;
                write_mvol(lab, lab_dir.join(&name))?;
                let lesion = lab.voxels().iter().filter(|&&v| v == 2).count();
                println!("{name}\t{}\t{lesion}", lab.count_nonzero());
            }
        }
        Cmd::Preprocess { input, out } => {
            let v: CtVolume = read_mvol_as(&input)?;
            write_mvol(&ct::hu_window_normalize(&v), &out)?;
        }
        Cmd::Train { config, seed, out } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(o) = out {
                cfg.checkpoint_out = o;
            }
            let (_, report) = harness::train(&cfg)?;
            print!("{}", report.to_tsv(false));
            eprintln!("runtime_seconds\t{:.3}", report.runtime_secs);
        }
        Cmd::Infer {
            config,
            liver,
            lesion,
            input,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let models = StagePair::load(&cfg, &liver, &lesion)?;
            let input = input.unwrap_or_else(|| cfg.data_dir.join(CT_SUBDIR));
            let files: Vec<(String, PathBuf)> = if input.is_dir() {
                list_mvol(&input)?.into_iter().collect()
            } else {
                let name = input
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| Error::NoData(input.clone()))?
                    .to_string();
                vec![(name, input.clone())]
            };
            if files.is_empty() {
                return Err(Error::NoData(input));
            }
            let (lesion_dir, liver_dir) = (out.join("lesion"), out.join("liver"));
            create_dir(&lesion_dir)?;
            create_dir(&liver_dir)?;
            println!("case\tliver_voxels\tlesion_voxels");
            for (name, path) in files {
                let v: CtVolume = read_mvol_as(&path)?;
                let r = harness::infer_volume(&models, &cfg, &v)?;
                write_mvol(&r.lesion, lesion_dir.join(&name))?;
                write_mvol(&r.liver, liver_dir.join(&name))?;
                println!("{name}\t{}\t{}", r.liver.count_nonzero(), r.lesion.count_nonzero());
            }
        }
        Cmd::Evaluate { pred, gt, gt_label } => {
            let report = harness::evaluate_dirs(&pred, &gt, gt_label)?;
            print!("{}", report.to_tsv(false));
        }
        Cmd::Ablate { config, seed } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let train = harness::load_dataset(&cfg.data_dir)?;
            let eval = match &cfg.val_dir {
                Some(d) => harness::load_dataset(d)?,
                None => train.clone(),
            };
            let rows = harness::ablate(&cfg, &train, &eval)?;
            print!("{}", harness::render_table(&rows));
        }
        Cmd::Gradcheck { seed, only } => {
            let entries = match only {
                Some(name) => vec![gradsuite::run_check(&name, None, seed)?],
                None => gradsuite::run_suite(None, seed)?,
            };
            print!("{}", gradsuite::render(&entries));
            for e in entries.iter().filter(|e| !e.pass) {
                eprintln!("{}: {}", e.name, e.failure.as_deref().unwrap_or("failed"));
            }
            return Ok(entries.iter().all(|e| e.pass));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
