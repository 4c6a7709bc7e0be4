use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use tustin_core::checkpoint::{load_model, save_model};
use tustin_core::data::{DatasetManifest, ExperimentSequence, ManifestEntry, Split};
use tustin_core::euler_lagrange::{params_from_toml, params_to_toml, SpringMode};
use tustin_core::evaluate::{evaluate_models, trajectory_csv, Predictor, REFERENCE_ROWS};
use tustin_core::identify::{identify_parameters, relative_errors};
use tustin_core::synth::{write_layout, MANIFEST_FILE, PLANTED_FILE};
use tustin_core::train::{
    init_model, run_transfer_learning, train_standard, StageReport, TransferOptions, FINETUNE_CHECKPOINT,
};
use tustin_core::Model;

use crate::config::{resolve_out, EvalSplit, ModelSpec, Procedure, RunConfig};
use crate::{Cli, Command};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const STANDARD_CHECKPOINT: &str = "standard.json";

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.generation.seed = seed;
        cfg.training.seed = seed;
    }
    if cli.strict {
        cfg.training.strict = true;
    }
    let out = resolve_out(&cli.out);
    match &cli.command {
        Command::Generate => generate(&cfg, &out),
        Command::Prepare => prepare(&cfg, &out),
        Command::Train { procedure, resume } => {
            if let Some(p) = procedure {
                cfg.procedure = *p;
            }
            train(&cfg, &out, *resume)
        }
        Command::Identify { spring } => {
            if let Some(s) = spring {
                cfg.spring = *s;
            }
            identify(&cfg, &out)
        }
        Command::Evaluate => evaluate(&cfg, &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn snapshot(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join(RESOLVED_CONFIG), &cfg.to_toml()?)
}

struct Data {
    dir: PathBuf,
    manifest: DatasetManifest,
    train: Vec<ExperimentSequence<f64>>,
    validation: Vec<ExperimentSequence<f64>>,
}

impl Data {
    fn load(cfg: &RunConfig, out: &Path) -> Result<Self> {
        let dir = cfg.data_dir(out);
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            bail!("manifest not found: {}", path.display());
        }
        let manifest = DatasetManifest::read(&path)?;
        let loaded = manifest.load::<f64>(&dir)?;
        Ok(Self {
            dir,
            manifest,
            train: loaded.train,
            validation: loaded.validation,
        })
    }

    fn entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.manifest.experiments.iter().filter(|e| e.split == split).collect()
    }
}

fn stem(entry: &ManifestEntry) -> String {
    entry
        .file
        .file_stem()
        .map_or_else(|| entry.file.display().to_string(), |s| s.to_string_lossy().into_owned())
}

// ---------------------------------------------------------------------------

fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dir = cfg.data_dir(out);
    let manifest = write_layout(&cfg.generation, &dir)?;
    snapshot(cfg, &dir)?;
    info!("wrote {} experiments and {} to {}", manifest.experiments.len(), MANIFEST_FILE, dir.display());
    Ok(())
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = Data::load(cfg, out)?;
    let dir = out.join("prepared");
    snapshot(cfg, &dir)?;
    let mut summary = String::from("file,kind,split,samples,kbar,reached_equilibrium\n");
    let sequences = data.train.iter().chain(&data.validation);
    let entries = data.entries(Split::Train).into_iter().chain(data.entries(Split::Validation));
    for (entry, seq) in entries.zip(sequences) {
        let mut s = String::from("t,theta,alpha,u,theta_dot,alpha_dot,one_sided\n");
        for k in 0..seq.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                seq.t[k],
                seq.q[k][0],
                seq.q[k][1],
                seq.u[k][0],
                seq.qdot_est[k][0],
                seq.qdot_est[k][1],
                u8::from(seq.qdot_boundary[k])
            );
        }
        write(&dir.join(format!("{}.csv", stem(entry))), &s)?;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            entry.file.display(),
            seq.kind.label(),
            match entry.split {
                Split::Train => "train",
                Split::Validation => "validation",
            },
            seq.len(),
            seq.kbar,
            seq.reached_equilibrium()
        );
    }
    write(&dir.join("summary.csv"), &summary)?;
    info!("prepared {} experiments into {}", data.manifest.experiments.len(), dir.display());
    Ok(())
}

fn write_stage(dir: &Path, report: &StageReport) -> Result<()> {
    write(&dir.join(format!("{}_report.toml", report.stage)), &report.to_toml())?;
    write(&dir.join(format!("{}_trace.csv", report.stage)), &report.trace_csv())
}

fn train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<()> {
    let data = Data::load(cfg, out)?;
    let n_q = data.train.first().map_or(2, ExperimentSequence::n_q);
    let n_u = data.train.first().and_then(|s| s.u.first()).map_or(1, Vec::len);
    let model = init_model::<f64>(&cfg.training, n_q, n_u, data.manifest.tau_s)?;
    match cfg.procedure {
        Procedure::Transfer => {
            let dir = out.join("train-transfer");
            snapshot(cfg, &dir)?;
            let options = TransferOptions {
                checkpoint_dir: Some(dir.clone()),
                resume,
            };
            let (_, report) = run_transfer_learning(&model, &data.train, &cfg.training, &options)?;
            if let Some(pre) = &report.pretrain {
                write_stage(&dir, pre)?;
            }
            write_stage(&dir, &report.finetune)?;
            info!("fine-tuned loss {:.4e}; checkpoints in {}", report.finetune.final_loss, dir.display());
        }
        Procedure::Standard => {
            let dir = out.join("train-standard");
            snapshot(cfg, &dir)?;
            let (trained, report) = train_standard(&model, &data.train, &cfg.training)?;
            save_model(&trained, &dir.join(STANDARD_CHECKPOINT), "standard")?;
            write_stage(&dir, &report)?;
            info!("standard training loss {:.4e}; checkpoint in {}", report.final_loss, dir.display());
        }
    }
    Ok(())
}

fn mode_tag(mode: SpringMode) -> &'static str {
    match mode {
        SpringMode::WithSpring => "with_spring",
        SpringMode::NoSpring => "no_spring",
    }
}

fn identify(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = Data::load(cfg, out)?;
    let dir = out.join("identify");
    snapshot(cfg, &dir)?;
    let section = &cfg.identification;
    let bounds = section.resolved_bounds();
    let planted_path = data.dir.join(PLANTED_FILE);
    let planted = if planted_path.exists() {
        let text = std::fs::read_to_string(&planted_path).with_context(|| format!("reading {}", planted_path.display()))?;
        Some(params_from_toml(&text)?)
    } else {
        None
    };
    let mut summary = String::from("mode,initial_loss,final_loss,evaluations\n");
    let mut recovery = String::from("mode,parameter,identified,planted,relative_error\n");
    for mode in cfg.spring.modes() {
        let tag = mode_tag(mode);
        let (theta, report) = identify_parameters(&data.train, &bounds, &section.theta0, mode, &section.search)
            .with_context(|| format!("identification {tag}"))?;
        write(&dir.join(format!("theta_{tag}.toml")), &params_to_toml(&theta))?;
        write(&dir.join(format!("trace_{tag}.csv")), &report.trace_csv())?;
        let _ = writeln!(summary, "{tag},{:e},{:e},{}", report.initial_loss, report.final_loss, report.evaluations);
        info!("{tag}: loss {:.4e} -> {:.4e}", report.initial_loss, report.final_loss);
        if let Some(truth) = &planted {
            for (name, got, want, err) in relative_errors(&theta, truth, &report.free) {
                let _ = writeln!(recovery, "{tag},{},{got:e},{want:e},{err:e}", name.label());
            }
        }
    }
    write(&dir.join("summary.csv"), &summary)?;
    if planted.is_some() {
        write(&dir.join("recovery.csv"), &recovery)?;
    }
    Ok(())
}

fn discovered_models(out: &Path) -> Vec<ModelSpec> {
    let candidates = [
        ModelSpec::EulerLagrange {
            name: REFERENCE_ROWS[0].0.into(),
            params: out.join("identify").join("theta_with_spring.toml"),
            spring: SpringMode::WithSpring,
        },
        ModelSpec::TustinNet {
            name: REFERENCE_ROWS[1].0.into(),
            checkpoint: out.join("train-standard").join(STANDARD_CHECKPOINT),
        },
        ModelSpec::TustinNet {
            name: REFERENCE_ROWS[2].0.into(),
            checkpoint: out.join("train-transfer").join(FINETUNE_CHECKPOINT),
        },
    ];
    candidates
        .into_iter()
        .filter(|m| match m {
            ModelSpec::EulerLagrange { params, .. } => params.exists(),
            ModelSpec::TustinNet { checkpoint, .. } => checkpoint.exists(),
        })
        .collect()
}

fn load_predictor(spec: &ModelSpec) -> Result<Predictor> {
    Ok(match spec {
        ModelSpec::EulerLagrange { params, spring, .. } => {
            let text = std::fs::read_to_string(params).with_context(|| format!("reading {}", params.display()))?;
            Predictor::EulerLagrange {
                theta: params_from_toml(&text).with_context(|| format!("parsing {}", params.display()))?,
                mode: *spring,
            }
        }
        ModelSpec::TustinNet { checkpoint, .. } => {
            let model: Model = load_model(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            Predictor::Tustin(model)
        }
    })
}

fn evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = Data::load(cfg, out)?;
    let specs = if cfg.evaluation.models.is_empty() {
        discovered_models(out)
    } else {
        cfg.evaluation.models.clone()
    };
    if specs.is_empty() {
        bail!("no models to evaluate: list [[evaluation.model]] entries or run identify/train into {}", out.display());
    }
    let (split, experiments) = match cfg.evaluation.split {
        EvalSplit::Train => (Split::Train, &data.train),
        EvalSplit::Validation => (Split::Validation, &data.validation),
    };
    if experiments.is_empty() {
        bail!("the selected split holds no experiments");
    }
    let names: Vec<String> = data.entries(split).into_iter().map(stem).collect();
    let models = specs
        .iter()
        .map(|s| Ok((s.name().to_string(), load_predictor(s)?)))
        .collect::<Result<Vec<_>>>()?;

    let dir = out.join("evaluate");
    let mut resolved = cfg.clone();
    resolved.evaluation.models = specs;
    snapshot(&resolved, &dir)?;
    let table = evaluate_models(&models, experiments, &names)?;
    write(&dir.join("rmse.csv"), &table.to_csv())?;
    write(&dir.join("rmse.txt"), &table.to_text())?;
    let traj_dir = dir.join("trajectories");
    create_dir(&traj_dir)?;
    for (seq, name) in experiments.iter().zip(&names) {
        let runs = models
            .iter()
            .map(|(n, p)| Ok((n.clone(), p.free_run(seq)?)))
            .collect::<Result<Vec<_>>>()?;
        write(&traj_dir.join(format!("{name}.csv")), &trajectory_csv(seq, &runs))?;
    }
    print!("{}", table.to_text());
    Ok(())
}
