//! `resynth` command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or format errors.

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use resynth::io::{load_codebook, load_track, read_wav, save_codebook, save_track, write_wav};
use resynth::{analyze, compare_metrics, copy_synthesis, synthesize, train, Codebook, Config, ExcitationMode, SynthesisMode, Waveform};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "resynth", version, about = "Residual codebook vocoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train full and compressed codebooks from a directory of WAV files.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Compressed codebook output.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the full codebook here.
        #[arg(long)]
        full_out: Option<PathBuf>,
    },
    /// Extract the target track and envelope of one utterance.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        track_out: PathBuf,
    },
    /// Analyze and resynthesize one utterance.
    CopySynth {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Metrics report; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Synthesize from a track file.
    Synth {
        #[arg(long)]
        track: PathBuf,
        /// Required unless --pulse is given.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use energy-matched pulses instead of codebook frames.
        #[arg(long)]
        pulse: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export the eigen-RN frames of a codebook's PCA model as CSV.
    Pca {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        eigen_out: PathBuf,
    },
    /// Compare two recordings.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Write a synthetic speech corpus (one WAV per utterance).
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 5.0)]
        seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    Compressed,
    Pulse,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    let cfg = Config::default();
    match command {
        Command::Train { corpus, out, k, n, seed, full_out } => {
            let waves = read_corpus(&corpus, &cfg)?;
            let trained = train(&waves, k, n, seed, &cfg).context("training failed")?;
            save_codebook(&out, &trained.compressed).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = full_out {
                save_codebook(&path, &trained.full).with_context(|| format!("writing {}", path.display()))?;
            }
            eprintln!(
                "trained on {} utterances, {} frames; {} entries written",
                waves.len(),
                trained.frame_count,
                trained.compressed.len()
            );
        }
        Command::Analyze { input, track_out } => {
            let w = read_input(&input, &cfg)?;
            let a = analyze(&w, &cfg).context("analysis failed")?;
            save_track(&track_out, &a.track, Some(&a.envelope))
                .with_context(|| format!("writing {}", track_out.display()))?;
        }
        Command::CopySynth { input, codebook, mode, out, report, seed } => {
            let (mode, cb) = match (mode, codebook) {
                (Mode::Pulse, cb) => {
                    if cb.is_some() {
                        eprintln!("warning: pulse mode ignores --codebook");
                    }
                    (SynthesisMode::Pulse, None)
                }
                (_, None) => return Err(Failure::Usage("--codebook is required for full and compressed modes".into())),
                (Mode::Full, Some(p)) => (SynthesisMode::Full, Some(read_codebook(&p)?)),
                (Mode::Compressed, Some(p)) => (SynthesisMode::Compressed, Some(read_codebook(&p)?)),
            };
            let w = read_input(&input, &cfg)?;
            let (y, metrics) = copy_synthesis(&w, cb.as_ref(), mode, seed, &cfg).context("copy-synthesis failed")?;
            write_output(&out, &y)?;
            match report {
                Some(path) => std::fs::write(&path, metrics.to_text())
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", metrics.to_text()),
            }
        }
        Command::Synth { track, codebook, out, pulse, seed } => {
            let cb = match (pulse, codebook) {
                (true, _) => None,
                (false, Some(p)) => Some(read_codebook(&p)?),
                (false, None) => return Err(Failure::Usage("--codebook is required unless --pulse is given".into())),
            };
            let file = load_track(&track).with_context(|| format!("reading {}", track.display()))?;
            let envelope = match file.envelope {
                Some(env) => env,
                None => {
                    eprintln!("warning: track has no envelope section; writing the bare excitation");
                    resynth::EnvelopeTrack::identity(1, vec![0]).context("identity envelope")?
                }
            };
            let mode = if pulse { ExcitationMode::Pulse } else { ExcitationMode::Codebook };
            let (y, selection) =
                synthesize(&file.track, &envelope, cb.as_ref(), mode, seed).context("synthesis failed")?;
            write_output(&out, &y)?;
            if selection.energy_hole_count > 0 {
                eprintln!("note: {} selections were upsampled", selection.energy_hole_count);
            }
        }
        Command::Pca { codebook, eigen_out } => {
            let cb = read_codebook(&codebook)?;
            let Some(pca) = cb.pca() else {
                return Err(anyhow::anyhow!("{} carries no PCA model", codebook.display()).into());
            };
            let mut csv = String::from("index,eigenvalue");
            for i in 0..resynth::RN_LEN {
                let _ = write!(csv, ",c{i}");
            }
            csv.push('\n');
            for i in 0..resynth::RN_LEN {
                let row = pca.eigen_frame(i).context("eigen frame")?;
                let _ = write!(csv, "{i},{:?}", pca.eigenvalues()[i]);
                for v in row {
                    let _ = write!(csv, ",{v:?}");
                }
                csv.push('\n');
            }
            std::fs::write(&eigen_out, csv).with_context(|| format!("writing {}", eigen_out.display()))?;
        }
        Command::Metrics { reference, test } => {
            let r = read_input(&reference, &cfg)?;
            let t = read_input(&test, &cfg)?;
            let m = compare_metrics(&r, &t).context("cannot compare")?;
            println!("segmental_snr_db\t{:?}", m.segmental_snr_db);
            println!("log_spectral_distortion_db\t{:?}", m.log_spectral_distortion_db);
        }
        Command::GenCorpus { out, count, seconds, seed } => {
            let corpus = resynth::synthetic::corpus(count, seconds, cfg.sample_rate, seed).context("generation failed")?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, u) in corpus.iter().enumerate() {
                write_output(&out.join(format!("utt{i:04}.wav")), &u.waveform)?;
            }
        }
    }
    Ok(())
}

fn read_input(path: &Path, cfg: &Config) -> anyhow::Result<Waveform> {
    let wav = read_wav(path, cfg.sample_rate).with_context(|| format!("reading {}", path.display()))?;
    if wav.resampled() {
        eprintln!(
            "warning: {} resampled from {} Hz to {} Hz",
            path.display(),
            wav.original_rate,
            cfg.sample_rate
        );
    }
    Ok(wav.waveform)
}

fn read_codebook(path: &Path) -> anyhow::Result<Codebook> {
    load_codebook(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(path: &Path, w: &Waveform) -> anyhow::Result<()> {
    let clipped = write_wav(path, w).with_context(|| format!("writing {}", path.display()))?;
    if clipped > 0 {
        eprintln!("warning: {clipped} samples clipped in {}", path.display());
    }
    Ok(())
}

fn read_corpus(dir: &Path, cfg: &Config) -> anyhow::Result<Vec<Waveform>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        eprintln!("warning: {} contains no WAV files", dir.display());
    }
    paths.iter().map(|p| read_input(p, cfg)).collect()
}
