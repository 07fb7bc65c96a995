//! `npat` command-line tool.
//!
//! Settings come from the built-in defaults, then `--config FILE`, then
//! `--set KEY=VALUE` pairs, then the dedicated flags (`--mode`, `--seed`,
//! `--steps`, ...). When a checkpoint is given without `--config`, the
//! `config.txt` written next to it by `train` is used as the file layer.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use npat::config::{parse_modes, RunConfig};
use npat::eval::{evaluate, MetricsReport};
use npat::export::{alignment_pgm, feat_text, matrix_csv, note_boundaries_csv, penalty_pgm};
use npat::loss::{penalty_matrix, DEFAULT_DECAY_FRAMES, DEFAULT_SHIFT_FRAMES};
use npat::network::{read_checkpoint, write_checkpoint, Model, SystemMode, Utterance};
use npat::score::Score;
use npat::synthdata::{generate_corpus, read_corpus, write_corpus, Song};
use npat::train::{Example, StepLog, Trainer};

const CONFIG_FILE: &str = "config.txt";
const CHECKPOINT_FILE: &str = "model.npat";
const LOSS_LOG: &str = "loss.csv";

#[derive(Parser, Debug)]
#[command(
    name = "npat",
    version,
    about = "Note-position-aware attention singing synthesis on a synthetic corpus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// base, nf, np, npnf, prop, noatt, notrans, ptrans or ttrans.
    #[arg(long, global = true, value_name = "NAME")]
    mode: Option<String>,
    /// Model seed; also the corpus seed for `gen-data`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    steps: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Corpus directory to read.
    #[arg(long, global = true, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Any config key, e.g. `--set lr=5e-4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and print its checksum.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model, logging losses and writing checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize one corpus song from a checkpoint.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Corpus index of the song.
        #[arg(long, value_name = "N")]
        song: usize,
    },
    /// Synthesize every test song and report metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Write a song's alignment as a PGM plus a note-boundary CSV.
    ExportAlignment {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "N")]
        song: usize,
    },
    /// Write the guided-attention penalty of a song as CSV and PGM.
    ExportPenalty {
        #[command(flatten)]
        common: Common,
        /// Corpus index of the song.
        #[arg(long, value_name = "N", conflicts_with = "score")]
        song: Option<usize>,
        /// Score file to use instead of a corpus song.
        #[arg(long, value_name = "PATH")]
        score: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_DECAY_FRAMES)]
        decay: usize,
        #[arg(long, default_value_t = DEFAULT_SHIFT_FRAMES)]
        shift: usize,
    },
    /// Train and evaluate several modes under one budget, merging the reports.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated mode names.
        #[arg(long, default_value = "base,nf,np,npnf,prop,noatt,notrans,ptrans,ttrans")]
        modes: String,
    },
}

/// Error with the exit code it should produce.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<npat::Error>() {
            Some(npat::Error::Config(_)) => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

impl From<npat::Error> for Failure {
    fn from(e: npat::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { common } => gen_data(&common),
        Command::Train { common } => train(&common),
        Command::Synth {
            common,
            checkpoint,
            song,
        } => synth(&common, &checkpoint, song),
        Command::Eval { common, checkpoint } => eval(&common, &checkpoint),
        Command::ExportAlignment {
            common,
            checkpoint,
            song,
        } => export_alignment(&common, &checkpoint, song),
        Command::ExportPenalty {
            common,
            song,
            score,
            decay,
            shift,
        } => export_penalty(&common, song, score.as_deref(), decay, shift),
        Command::Ablate { common, modes } => ablate(&common, &modes),
    }
}

/// Layers the config sources. `fallback` is a config file used when no
/// `--config` is given and it exists.
fn resolve(common: &Common, fallback: Option<&Path>) -> CliResult<RunConfig> {
    let file = common
        .config
        .clone()
        .or_else(|| fallback.filter(|p| p.is_file()).map(Path::to_path_buf));
    let mut cfg = match &file {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(anyhow!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v).map_err(usage)?;
    }
    if let Some(m) = &common.mode {
        cfg.set("mode", m).map_err(usage)?;
    }
    if let Some(s) = common.seed {
        cfg.model.seed = s;
        cfg.corpus.seed = s;
    }
    if let Some(n) = common.steps {
        cfg.train.steps = n;
    }
    if let Some(d) = &common.corpus {
        cfg.corpus_dir = d.clone();
    }
    if let Some(d) = &common.out {
        cfg.out_dir = d.clone();
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn checkpoint_config(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.parent().map(|d| d.join(CONFIG_FILE))
}

fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(usage)?;
    if !dir.is_dir() {
        return Err(usage(anyhow!("{} is not a directory", dir.display())));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_songs(cfg: &RunConfig) -> CliResult<Vec<Song>> {
    Ok(read_corpus(&cfg.corpus_dir).with_context(|| {
        format!(
            "reading corpus {} (run `npat gen-data` first?)",
            cfg.corpus_dir.display()
        )
    })?)
}

/// The corpus, checked to leave at least one training song.
fn load_corpus(cfg: &RunConfig) -> CliResult<Vec<Song>> {
    let songs = read_songs(cfg)?;
    if songs.len() <= cfg.corpus.num_test {
        return Err(usage(anyhow!(
            "corpus has {} songs but num_test is {}",
            songs.len(),
            cfg.corpus.num_test
        )));
    }
    Ok(songs)
}

/// Songs after the first `len - num_test` are held out.
fn split(cfg: &RunConfig, songs: &[Song]) -> usize {
    songs.len() - cfg.corpus.num_test
}

fn load_model(cfg: &RunConfig, checkpoint: &Path) -> CliResult<Model> {
    let params = read_checkpoint(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let model = Model::with_params(cfg.model.clone(), params).with_context(|| {
        format!(
            "checkpoint {} does not match the configured {} model",
            checkpoint.display(),
            cfg.model.mode
        )
    })?;
    Ok(model)
}

fn pick_song(songs: &[Song], index: usize) -> CliResult<&Song> {
    songs
        .get(index)
        .ok_or_else(|| usage(anyhow!("song {index} out of range: corpus has {} songs", songs.len())))
}

fn utterance(model: &Model, song: &Song) -> CliResult<Utterance> {
    let mut utt = Utterance::new(&song.score, model.config.reduction_factor)?;
    if model.config.mode.attention().is_none() {
        utt = utt.with_oracle(song.truth.alignment.clone())?;
    }
    Ok(utt)
}

fn gen_data(common: &Common) -> CliResult<()> {
    let mut cfg = resolve(common, None)?;
    if let Some(d) = &common.out {
        cfg.corpus_dir = d.clone();
    }
    ensure_out_dir(&cfg.corpus_dir)?;
    let songs = generate_corpus(&cfg.corpus)?;
    let sum = write_corpus(&cfg.corpus_dir, &songs)?;
    println!(
        "wrote {} songs ({} train, {} test) to {}",
        songs.len(),
        cfg.corpus.num_train(),
        cfg.corpus.num_test,
        cfg.corpus_dir.display()
    );
    println!("checksum {sum}");
    Ok(())
}

/// Trains `cfg.model` on `train` into `dir`: config, loss log and checkpoint.
/// On a non-finite loss the last periodic checkpoint is left in place.
fn train_into(cfg: &RunConfig, train: &[Song], dir: &Path) -> CliResult<Model> {
    ensure_out_dir(dir)?;
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())?;
    let r = cfg.model.reduction_factor;
    let data = train
        .iter()
        .map(|s| Example::new(s, r))
        .collect::<npat::Result<Vec<_>>>()?;
    let model = Model::new(cfg.model.clone())?;
    let lambda = if cfg.model.mode.use_guided() {
        cfg.train.lambda
    } else {
        0.0
    };
    println!(
        "training {} for {} steps on {} songs, lambda {lambda:.1}",
        cfg.model.mode,
        cfg.train.steps,
        data.len()
    );

    let log_path = dir.join(LOSS_LOG);
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    writeln!(log, "{}", StepLog::CSV_HEADER).context("writing loss log")?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let every = cfg.train.checkpoint_every;
    let report_every = (cfg.train.steps / 20).max(1);

    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let result = trainer.run(&data, |s, m| {
        writeln!(log, "{}", s.csv_row()).map_err(|e| npat::Error::InvalidArgument(format!("loss log: {e}")))?;
        if every > 0 && s.step % every == 0 {
            write_checkpoint(&ckpt, &m.params)?;
        }
        if s.step % report_every == 0 {
            println!(
                "step {:>6}  total {:.5}  dec {:.5}  post {:.5}  guided {:.5}",
                s.step, s.report.total, s.report.feat_decoder, s.report.feat_postnet, s.report.guided
            );
        }
        Ok(())
    });
    log.flush().context("writing loss log")?;
    if let Err(e) = result {
        let kept = if ckpt.is_file() {
            format!("last good checkpoint kept at {}", ckpt.display())
        } else {
            "no checkpoint was written yet".to_string()
        };
        return Err(anyhow::Error::from(e)
            .context(format!("training stopped at step {}; {kept}", trainer.steps_done()))
            .into());
    }
    write_checkpoint(&ckpt, &trainer.model.params)?;
    println!("wrote {}", ckpt.display());
    Ok(trainer.model)
}

fn train(common: &Common) -> CliResult<()> {
    let cfg = resolve(common, None)?;
    let songs = load_corpus(&cfg)?;
    let n = split(&cfg, &songs);
    train_into(&cfg, &songs[..n], &cfg.out_dir)?;
    Ok(())
}

fn synth(common: &Common, checkpoint: &Path, index: usize) -> CliResult<()> {
    let cfg = resolve(common, checkpoint_config(checkpoint).as_deref())?;
    let model = load_model(&cfg, checkpoint)?;
    let songs = read_songs(&cfg)?;
    let song = pick_song(&songs, index)?;
    let syn = model.synthesize(&utterance(&model, song)?)?;
    ensure_out_dir(&cfg.out_dir)?;
    let feat = cfg.out_dir.join(format!("song_{index:04}.synth.feat"));
    let align = cfg.out_dir.join(format!("song_{index:04}.alignment.csv"));
    write_file(&feat, feat_text(&syn.frames))?;
    write_file(&align, matrix_csv(&syn.alignment)?)?;
    println!("wrote {} and {}", feat.display(), align.display());
    Ok(())
}

fn test_report(cfg: &RunConfig, model: &Model, songs: &[Song]) -> CliResult<MetricsReport> {
    let test: Vec<(usize, &Song)> = songs.iter().enumerate().skip(split(cfg, songs)).collect();
    Ok(evaluate(model, &test)?)
}

fn eval(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let cfg = resolve(common, checkpoint_config(checkpoint).as_deref())?;
    let model = load_model(&cfg, checkpoint)?;
    let songs = load_corpus(&cfg)?;
    let report = test_report(&cfg, &model, &songs)?;
    ensure_out_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("metrics.csv"), report.to_csv())?;
    write_file(&cfg.out_dir.join("metrics.txt"), report.to_string())?;
    print!("{report}");
    Ok(())
}

fn export_alignment(common: &Common, checkpoint: &Path, index: usize) -> CliResult<()> {
    let cfg = resolve(common, checkpoint_config(checkpoint).as_deref())?;
    let model = load_model(&cfg, checkpoint)?;
    let songs = read_songs(&cfg)?;
    let song = pick_song(&songs, index)?;
    let syn = model.synthesize(&utterance(&model, song)?)?;
    ensure_out_dir(&cfg.out_dir)?;
    let img = cfg.out_dir.join(format!("alignment_{index:04}.pgm"));
    let notes = cfg.out_dir.join(format!("alignment_{index:04}_notes.csv"));
    write_file(&img, alignment_pgm(&syn.alignment)?)?;
    write_file(&notes, note_boundaries_csv(&song.score, cfg.model.reduction_factor)?)?;
    let d = syn.alignment.dims();
    println!("wrote {} ({}x{}) and {}", img.display(), d[0], d[1], notes.display());
    Ok(())
}

fn export_penalty(
    common: &Common,
    song: Option<usize>,
    score: Option<&Path>,
    decay: usize,
    shift: usize,
) -> CliResult<()> {
    let cfg = resolve(common, None)?;
    let (stem, score) = match (song, score) {
        (_, Some(p)) => {
            let s = Score::load(p).with_context(|| format!("reading {}", p.display()))?;
            let stem = p
                .file_stem()
                .map_or("score".into(), |s| s.to_string_lossy().into_owned());
            (stem, s)
        }
        (Some(i), None) => {
            let songs = read_songs(&cfg)?;
            (format!("{i:04}"), pick_song(&songs, i)?.score.clone())
        }
        (None, None) => return Err(usage(anyhow!("give --song N or --score PATH"))),
    };
    let g = penalty_matrix(&score, cfg.model.reduction_factor, decay, shift).map_err(usage)?;
    ensure_out_dir(&cfg.out_dir)?;
    let csv = cfg.out_dir.join(format!("penalty_{stem}.csv"));
    let img = cfg.out_dir.join(format!("penalty_{stem}.pgm"));
    write_file(&csv, matrix_csv(&g.values)?)?;
    write_file(&img, penalty_pgm(&g.values)?)?;
    println!(
        "wrote {} and {} ({}x{})",
        csv.display(),
        img.display(),
        g.phonemes(),
        g.steps()
    );
    Ok(())
}

fn ablate(common: &Common, modes: &str) -> CliResult<()> {
    let base = resolve(common, None)?;
    let modes: Vec<SystemMode> = parse_modes(modes).map_err(usage)?;
    let songs = load_corpus(&base)?;
    let n = split(&base, &songs);
    ensure_out_dir(&base.out_dir)?;
    let mut reports = Vec::with_capacity(modes.len());
    for mode in modes {
        let mut cfg = base.clone();
        cfg.model.mode = mode;
        let dir = base.out_dir.join(mode.name());
        let model = train_into(&cfg, &songs[..n], &dir)?;
        let report = test_report(&cfg, &model, &songs)?;
        write_file(&dir.join("metrics.csv"), report.to_csv())?;
        println!(
            "{mode}: monotonicity {:.4}  timing MAE {:.2} frames  F0 RMSE {:.1} cents",
            report.mean.monotonicity, report.mean.timing_mae, report.mean.f0_rmse
        );
        reports.push(report);
    }
    let mut csv = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in &reports {
        for row in r.csv_rows() {
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    let path = base.out_dir.join("ablation.csv");
    write_file(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}
