//! `ccc`: generate worlds and datasets, train, evaluate, run the oracle
//! suite, sweep ablation rows and plot run logs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use ccc_core::oracle::suite::{self, SuiteConfig};
use ccc_core::trainer::{
    self, bt_train, build_models, plot, runlog, Checkpoint, Mode, Prepared, Row, RunLog, TrainConfig, TrainData, Trainer,
};
use ccc_core::world::{make_datasets, read_episodes, read_worlds, write_episodes, write_worlds, Datasets, WorldSet};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

const SPLITS: [&str; 4] = ["train", "unlabeled", "val_seen", "val_unseen"];

#[derive(Parser)]
#[command(name = "ccc", version, about = "Counterfactual cycle-consistent follower/speaker training on grid worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the world set described by the config.
    GenWorld {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the labeled, unlabeled and validation splits.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Existing world file; generated (and written to OUT) when omitted.
        #[arg(long)]
        worlds: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train follower, speaker and creator.
    Train {
        #[command(flatten)]
        common: Common,
        /// seq2seq, speaker-follower or rcm.
        #[arg(long)]
        preset: Option<String>,
        /// baseline, bt, ccc or ablation:<row>.
        #[arg(long)]
        mode: Option<String>,
        /// Dataset directory from `gen-data`; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write `checkpoint-<iteration>.ckpt` every this many iterations.
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train, val_seen, val_unseen or all.
        #[arg(long, default_value = "all")]
        split: String,
        /// Metric CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle property suite.
    OracleCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use the full sample sizes instead of the quick ones.
        #[arg(long)]
        full: bool,
    },
    /// Train every ablation row and write one combined table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated rows; all rows when omitted.
        #[arg(long)]
        rows: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render run-log columns as an SVG line chart.
    Plot {
        #[arg(long)]
        log: PathBuf,
        /// Comma-separated run-log columns.
        #[arg(long, default_value = "il,speaker_mle,delta_a,delta_x")]
        columns: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error with a chosen exit code.
#[derive(Debug)]
struct Coded(u8, String);

impl std::fmt::Display for Coded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Coded {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Coded(2, msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use ccc_core::Error as E;
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.0;
        }
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::Config { .. } | E::Parse(_) => 2,
                E::NonFinite(_) | E::NonFiniteGradient(_) | E::TrainingDiverged { .. } => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", msg.join(": "));
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenWorld { common, out } => {
            let mut banner = Banner::new("gen-world");
            let cfg = resolve(&common, &mut banner, &[])?;
            banner.print(Some(&cfg));
            let worlds = cfg.data.worlds(cfg.seed)?;
            write(&out, write_worlds(&worlds))?;
            eprintln!("wrote {} worlds to {}", worlds.len(), out.display());
            Ok(())
        }
        Command::GenData { common, worlds, out } => {
            let mut banner = Banner::new("gen-data");
            let cfg = resolve(&common, &mut banner, &[])?;
            let world_set = match &worlds {
                Some(p) => read_worlds(&banner.read(p)?).with_context(|| format!("reading {}", p.display()))?,
                None => cfg.data.worlds(cfg.seed)?,
            };
            banner.print(Some(&cfg));
            let d = &cfg.data;
            let spec = d.split_spec();
            let seed = d.seed.unwrap_or(cfg.seed);
            let data = make_datasets(
                &world_set,
                ccc_core::rng::derive_seed(seed, &[ccc_core::rng::purpose::PATH]),
                d.n_labeled,
                d.m_unlabeled,
                &spec,
            )?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("worlds.txt"), write_worlds(&world_set))?;
            write_splits(&out, &data)?;
            eprintln!(
                "wrote {} labeled, {} unlabeled, {} val-seen, {} val-unseen episodes to {}",
                data.labeled.len(),
                data.unlabeled.len(),
                data.val_seen.len(),
                data.val_unseen.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            common,
            preset,
            mode,
            data,
            resume,
            checkpoint_every,
            out,
        } => {
            let mut banner = Banner::new("train");
            let mut extra = Vec::new();
            if let Some(p) = preset {
                extra.push(("preset".to_string(), p));
            }
            if let Some(m) = mode {
                extra.push(("mode".to_string(), m));
            }
            let cfg = resolve(&common, &mut banner, &extra)?;
            let prepared = load_data(&cfg, data.as_deref(), &mut banner)?;
            let ck = match &resume {
                Some(p) => Some(Checkpoint::from_bytes(&banner.read_bytes(p)?).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            banner.print(Some(&cfg));
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("config.txt"), cfg.to_text())?;
            let trainer = train(&cfg, &prepared, ck.as_ref(), checkpoint_every, &out)?;
            write_bytes(&out.join("checkpoint.ckpt"), &trainer.checkpoint().to_bytes())?;
            let rows = evaluate_splits(&trainer, &prepared, &["val_seen", "val_unseen"])?;
            write(&out.join("metrics.csv"), runlog::metrics_csv(&rows))?;
            print!("{}", runlog::metrics_csv(&rows));
            Ok(())
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            split,
            out,
        } => {
            let mut banner = Banner::new("eval");
            // The training config next to a checkpoint describes its shapes.
            let sibling = checkpoint.with_file_name("config.txt");
            let common = if common.config.is_none() && sibling.exists() {
                Common {
                    config: Some(sibling),
                    ..common
                }
            } else {
                common
            };
            let cfg = resolve(&common, &mut banner, &[])?;
            let prepared = load_data(&cfg, data.as_deref(), &mut banner)?;
            let ck = Checkpoint::from_bytes(&banner.read_bytes(&checkpoint)?)
                .with_context(|| format!("reading {}", checkpoint.display()))?;
            banner.print(Some(&cfg));
            let mut trainer = Trainer::from_checkpoint(cfg, &ck)?;
            trainer.threads = threads()?;
            let splits: Vec<&str> = match split.as_str() {
                "all" => vec!["train", "val_seen", "val_unseen"],
                s if ["train", "val_seen", "val_unseen"].contains(&s) => vec![s],
                s => return Err(usage(format!("--split: unknown split `{s}`"))),
            };
            let rows = evaluate_splits(&trainer, &prepared, &splits)?;
            write(&out, runlog::metrics_csv(&rows))?;
            print!("{}", runlog::metrics_csv(&rows));
            Ok(())
        }
        Command::OracleCheck { seed, full } => {
            let banner = Banner::new("oracle-check");
            banner.print(None);
            let cfg = if full { SuiteConfig::full(seed) } else { SuiteConfig::quick(seed) };
            let checks = suite::run(&cfg)?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if failed > 0 {
                return Err(Coded(4, format!("{failed} of {} oracle checks failed", checks.len())).into());
            }
            Ok(())
        }
        Command::Ablate {
            common,
            rows,
            data,
            out,
        } => {
            let mut banner = Banner::new("ablate");
            let cfg = resolve(&common, &mut banner, &[])?;
            let rows: Vec<Row> = match rows {
                Some(r) => r
                    .split(',')
                    .map(|s| s.trim().parse::<Row>().map_err(|e| usage(format!("--rows: {e}"))))
                    .collect::<anyhow::Result<_>>()?,
                None => Row::ALL.to_vec(),
            };
            let prepared = load_data(&cfg, data.as_deref(), &mut banner)?;
            banner.print(Some(&cfg));
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut table = Vec::new();
            for row in rows {
                let mut c = cfg.clone();
                c.apply_mode(Mode::Ablation(row));
                eprintln!("row {} ...", row.name());
                let dir = out.join(row.name().replace('+', "_"));
                fs::create_dir_all(&dir)?;
                write(&dir.join("config.txt"), c.to_text())?;
                let t = train(&c, &prepared, None, None, &dir)?;
                write_bytes(&dir.join("checkpoint.ckpt"), &t.checkpoint().to_bytes())?;
                for mut m in evaluate_splits(&t, &prepared, &["val_seen", "val_unseen"])? {
                    m.label = row.name().to_string();
                    table.push(m);
                }
            }
            let csv = runlog::metrics_csv(&table);
            write(&out.join("ablation.csv"), csv.clone())?;
            print!("{csv}");
            Ok(())
        }
        Command::Plot { log, columns, out } => {
            let mut banner = Banner::new("plot");
            let text = banner.read(&log)?;
            banner.print(None);
            let log_data = RunLog::from_csv(&text)?;
            let mut series = Vec::new();
            for c in columns.split(',').map(str::trim) {
                if runlog::column_index(c).is_none() {
                    return Err(usage(format!("--columns: unknown run-log column `{c}`")));
                }
                series.push((c.to_string(), log_data.series(c)));
            }
            let title = log.file_name().map_or("run log".into(), |f| f.to_string_lossy().into_owned());
            write(&out, plot::line_chart(&title, &series))?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

/// Input files with their SHA-256, printed before any work starts.
struct Banner {
    command: &'static str,
    inputs: Vec<(PathBuf, String)>,
}

impl Banner {
    fn new(command: &'static str) -> Self {
        Banner {
            command,
            inputs: Vec::new(),
        }
    }

    fn read_bytes(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push((path.to_path_buf(), hex));
        Ok(bytes)
    }

    fn read(&mut self, path: &Path) -> anyhow::Result<String> {
        let bytes = self.read_bytes(path)?;
        String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))
    }

    fn print(&self, config: Option<&TrainConfig>) {
        eprintln!("== ccc {} {}", self.command, env!("CARGO_PKG_VERSION"));
        for (p, h) in &self.inputs {
            eprintln!("input {} sha256:{h}", p.display());
        }
        if let Ok(t) = std::env::var("CCC_THREADS") {
            eprintln!("CCC_THREADS={t}");
        }
        if let Some(c) = config {
            for line in c.to_text().lines() {
                eprintln!("config {line}");
            }
        }
        eprintln!("==");
    }
}

/// Defaults, then the config file, then `--seed`, then command flags, then
/// `--set` overrides.
fn resolve(common: &Common, banner: &mut Banner, extra: &[(String, String)]) -> anyhow::Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(p) = &common.config {
        let text = banner.read(p)?;
        cfg.merge(&text).with_context(|| format!("in {}", p.display()))?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    for (k, v) in extra {
        cfg.set(k, v).with_context(|| format!("--{k}"))?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set: expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim()).with_context(|| format!("--set {kv}"))?;
    }
    Ok(cfg)
}

fn threads() -> anyhow::Result<usize> {
    match std::env::var("CCC_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(usage(format!("CCC_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(1),
    }
}

fn write(path: &Path, text: String) -> anyhow::Result<()> {
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_splits(dir: &Path, data: &Datasets) -> anyhow::Result<()> {
    for name in SPLITS {
        let eps = data.split(name).expect("known split");
        write(&dir.join(format!("{name}.tsv")), write_episodes(eps))?;
    }
    Ok(())
}

fn load_data(cfg: &TrainConfig, dir: Option<&Path>, banner: &mut Banner) -> anyhow::Result<Prepared> {
    let Some(dir) = dir else {
        return Ok(trainer::prepare_data(cfg)?);
    };
    let worlds_path = dir.join("worlds.txt");
    let worlds: WorldSet =
        read_worlds(&banner.read(&worlds_path)?).with_context(|| format!("reading {}", worlds_path.display()))?;
    let mut splits = Vec::new();
    for name in SPLITS {
        let p = dir.join(format!("{name}.tsv"));
        splits.push(read_episodes(&banner.read(&p)?, &worlds).with_context(|| format!("reading {}", p.display()))?);
    }
    let [labeled, unlabeled, val_seen, val_unseen]: [_; 4] = splits.try_into().expect("four splits");
    Ok(Prepared {
        worlds,
        data: Datasets {
            labeled,
            unlabeled,
            val_seen,
            val_unseen,
        },
    })
}

fn train(
    cfg: &TrainConfig,
    prepared: &Prepared,
    resume: Option<&Checkpoint>,
    checkpoint_every: Option<u64>,
    out: &Path,
) -> anyhow::Result<Trainer> {
    let data = TrainData {
        worlds: &prepared.worlds,
        labeled: &prepared.data.labeled,
        unlabeled: &prepared.data.unlabeled,
        eval: Some(("val_unseen", &prepared.data.val_unseen)),
    };
    let log_path = out.join("runlog.csv");
    let trainer = if cfg.mode == Mode::Bt {
        if resume.is_some() {
            bail!(Coded(2, "--resume is not supported with --mode bt".into()));
        }
        let (mut t, pseudo) = bt_train(cfg, data)?;
        t.threads = threads()?;
        write(&out.join("pseudo_labeled.tsv"), write_episodes(&pseudo))?;
        t
    } else {
        let (mut t, mut log) = match resume {
            Some(ck) => {
                let t = Trainer::from_checkpoint(cfg.clone(), ck)?;
                // Keep the rows before the resume point from an earlier log
                // in the same directory.
                let mut log = match fs::read_to_string(&log_path) {
                    Ok(text) => RunLog::from_csv(&text)?,
                    Err(_) => RunLog::default(),
                };
                log.rows.retain(|r| r.iteration < t.iteration);
                (t, log)
            }
            None => (Trainer::new(cfg.clone(), build_models(cfg)), RunLog::default()),
        };
        t.threads = threads()?;
        let every = checkpoint_every.filter(|&k| k > 0).unwrap_or(u64::MAX);
        while t.iteration < cfg.iterations {
            let until = (t.iteration / every).saturating_add(1).saturating_mul(every).min(cfg.iterations);
            t.run(data, until)?;
            if until.is_multiple_of(every) {
                write_bytes(&out.join(format!("checkpoint-{until}.ckpt")), &t.checkpoint().to_bytes())?;
            }
        }
        log.rows.append(&mut t.log.rows);
        t.log = log;
        t
    };
    write(&log_path, trainer.log.to_csv())?;
    if !trainer.eval_rows.is_empty() {
        write(&out.join("eval_curve.csv"), runlog::metrics_csv(&trainer.eval_rows))?;
    }
    Ok(trainer)
}

fn evaluate_splits(t: &Trainer, prepared: &Prepared, splits: &[&str]) -> anyhow::Result<Vec<runlog::MetricRow>> {
    splits
        .iter()
        .map(|&s| {
            let eps = prepared.data.split(s).expect("known split");
            Ok(t.evaluate(&prepared.worlds, s, eps)?)
        })
        .collect()
}
