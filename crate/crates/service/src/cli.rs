//! Command-line front end. `main.rs` only parses arguments and calls [`run`].

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use streamdesk_core::backend::{BackendError, BackendKind, MockBackend, ModelBackend};
use streamdesk_core::clickqa::{
    evaluate_dataset, resolve_click_within, ClickError, ClickEvent, EvalOptions, ExactMatchJudge, FrameOverlay, Judge,
    ModelJudge,
};
use streamdesk_core::datasynth::{self, SynthConfig, SynthError};
use streamdesk_core::jsonl::{self, JsonlError};
use streamdesk_core::kea::{find_truncation, read_trace_file, KeaError};
use streamdesk_core::offline::{
    adapt_style, generate_copy, integrate, purify, CopyError, CopyStyle, IntegrateError, Lexicon, LexiconError,
    ProductRecord, RawMaterial, RecordStore, StoreError,
};
use streamdesk_core::ses::{
    read_feature_file, segment_offline, segment_streaming, write_feature_file, FeatureFileHeader, SesError,
};
use streamdesk_core::{fixtures, EventSegment};
use thiserror::Error;

use crate::config::{Config, ConfigError, JudgeChoice};
use crate::engine::{Engine, EngineError};
use crate::scenario::{Scenario, ScenarioError};
use crate::server::{self, ServeError};
use crate::simulate::{run_simulation, SimulationError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Ses(#[from] SesError),
    #[error(transparent)]
    Kea(#[from] KeaError),
    #[error(transparent)]
    Click(#[from] ClickError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Copy(#[from] CopyError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: JsonlError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn file_err(path: &Path) -> impl FnOnce(JsonlError) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>, CliError> {
    Ok(BufReader::new(fs::File::open(path).map_err(io_err(path))?))
}

#[derive(Debug, Parser)]
#[command(
    name = "streamdesk",
    version,
    about = "Live-commerce streaming assistant",
    after_help = "Environment: STREAMDESK_BACKEND_ENDPOINT selects the http backend at that URL; \
                  STREAMDESK_STORAGE sets the record directory. --set overrides both."
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config value, e.g. `--set ses.alpha=1.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Replay a scenario file and write its transcript.
    Simulate(SimulateArgs),
    /// Bundled scenarios.
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// Event segmentation of feature streams.
    #[command(subcommand)]
    Ses(SesCmd),
    /// Caption prefix truncation.
    #[command(subcommand)]
    Kea(KeaCmd),
    /// Click-to-question resolution and evaluation.
    #[command(subcommand)]
    Clickqa(ClickqaCmd),
    /// Synthetic click datasets.
    #[command(subcommand)]
    Datasynth(DatasynthCmd),
    /// Product records, copy and purification.
    #[command(subcommand)]
    Offline(OfflineCmd),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Record directory.
    #[arg(long)]
    pub storage: Option<PathBuf>,
    /// OpenAI-compatible endpoint; switches the backend to http.
    #[arg(long)]
    pub backend_endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file; omit with --demo.
    pub scenario: Option<PathBuf>,
    /// Run the bundled demo scenario.
    #[arg(long, conflicts_with = "scenario")]
    pub demo: bool,
    /// Transcript destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    /// Write the bundled demo scenario to a file.
    Demo {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StreamKind {
    Random,
    SingleDip,
    Constant,
}

#[derive(Debug, Subcommand)]
pub enum SesCmd {
    /// Segment a feature file.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        window: Option<usize>,
        /// Push frames one by one through the streaming segmenter.
        #[arg(long)]
        streaming: bool,
        /// One JSON segment per line instead of a table.
        #[arg(long)]
        emit_json: bool,
    },
    /// Write a synthetic feature file.
    Generate {
        #[arg(long, value_enum, default_value = "random")]
        kind: StreamKind,
        #[arg(long, default_value_t = 900)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frame index of the dip for single-dip.
        #[arg(long, default_value_t = 100)]
        dip: usize,
        /// Signal value for constant.
        #[arg(long, default_value_t = 0.8)]
        value: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum KeaCmd {
    /// Find the reuse prefix of a scored caption.
    Truncate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        delta: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendChoice {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum JudgeArg {
    Exact,
    Model,
}

#[derive(Debug, Subcommand)]
pub enum ClickqaCmd {
    /// QRA and RQ over a dataset manifest.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        backend: Option<BackendChoice>,
        #[arg(long, value_enum)]
        judge: Option<JudgeArg>,
        /// Mock only: fraction of transcriptions garbled.
        #[arg(long)]
        corruption: Option<f64>,
        /// Send coordinates only, without compositing the cursor.
        #[arg(long)]
        no_visual_prompt: bool,
    },
    /// Resolve a click against an overlay file.
    Resolve {
        #[arg(long)]
        overlay: PathBuf,
        #[arg(long)]
        x: u32,
        #[arg(long)]
        y: u32,
        #[arg(long)]
        radius: Option<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasynthCmd {
    /// Lay out questions on blank frames and sample clicks.
    Generate {
        /// Question pool, one JSON item per line; the built-in pool when absent.
        #[arg(long, conflicts_with = "clevr")]
        pool: Option<PathBuf>,
        /// CLEVR questions file.
        #[arg(long)]
        clevr: Option<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        per_image: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum OfflineCmd {
    /// Build a product record from a materials file.
    Integrate {
        /// One raw material per line.
        #[arg(long)]
        input: PathBuf,
        /// External snippets, one per line.
        #[arg(long)]
        snippets: Option<PathBuf>,
        #[arg(long)]
        product_id: Option<String>,
        /// Also save the record to the configured storage.
        #[arg(long)]
        save: bool,
    },
    /// Draft promotional copy for a stored or file record.
    Copy {
        #[arg(long, conflicts_with = "record")]
        product: Option<String>,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value = "general")]
        style: String,
        /// Sample text whose voice to follow.
        #[arg(long)]
        exemplar: Option<PathBuf>,
    },
    /// Remove prohibited terms from text.
    Purify {
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, conflicts_with = "input")]
        text: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    Ok(Config::layered(
        cli.config.as_deref(),
        |k| std::env::var(k).ok(),
        &cli.overrides,
    )?)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Usage(e.to_string()))?;
    writeln!(out).map_err(io_err(Path::new("<stdout>")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = load_config(&cli)?;
    match cli.command {
        Command::Serve(a) => serve(config, a),
        Command::Simulate(a) => simulate(&config, a),
        Command::Scenario(ScenarioCmd::Demo { out }) => {
            fs::write(&out, crate::DEMO_SCENARIO).map_err(io_err(&out))?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Ses(cmd) => ses(&mut config, cmd),
        Command::Kea(KeaCmd::Truncate {
            trace,
            delta,
            alpha,
            beta,
        }) => {
            let mut kea = config.kea;
            kea.delta = delta.unwrap_or(kea.delta);
            kea.alpha = alpha.unwrap_or(kea.alpha);
            kea.beta = beta.unwrap_or(kea.beta);
            kea.validate()?;
            let (header, tokens) = read_trace_file(open(&trace)?).map_err(file_err(&trace))?;
            let cut = find_truncation(&tokens, &kea)?;
            let prefix: Vec<&str> = tokens[..cut.prefix_len].iter().map(|t| t.token_text.as_str()).collect();
            print_json(&serde_json::json!({
                "caption_id": header.caption_id,
                "caption_len": header.caption_len,
                "truncation_index": cut.index,
                "prefix_len": cut.prefix_len,
                "prefix_tokens": prefix,
            }))
        }
        Command::Clickqa(cmd) => clickqa(&config, cmd),
        Command::Datasynth(DatasynthCmd::Generate {
            pool,
            clevr,
            images,
            per_image,
            seed,
            out,
        }) => {
            let items = match (pool, clevr) {
                (Some(p), _) => datasynth::load_pool(open(&p)?)?,
                (None, Some(c)) => datasynth::load_clevr(open(&c)?)?,
                (None, None) => datasynth::builtin_pool(),
            };
            let synth = SynthConfig {
                num_images: images,
                questions_per_image: per_image,
                seed,
                ..SynthConfig::default()
            };
            let dataset = datasynth::generate_dataset(&items, &synth)?;
            let manifest = datasynth::write_dataset(&dataset, &out)?;
            eprintln!("{} samples on {} images -> {}", dataset.samples.len(), images, manifest.display());
            Ok(())
        }
        Command::Offline(cmd) => offline(&config, cmd),
    }
}

fn serve(mut config: Config, a: ServeArgs) -> Result<(), CliError> {
    if let Some(h) = a.host {
        config.server.host = h;
    }
    if let Some(p) = a.port {
        config.server.port = p;
    }
    if let Some(s) = a.storage {
        config.storage = s;
    }
    if let Some(e) = a.backend_endpoint {
        config.backend.kind = BackendKind::Http;
        config.backend.endpoint = Some(e);
    }
    config.validate()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err(Path::new("<runtime>")))?;
    let engine = Arc::new(Engine::new(config.clone())?);
    rt.block_on(async move {
        let listener = server::bind(&config.server.host, config.server.port).await?;
        server::serve(engine, listener).await
    })?;
    Ok(())
}

fn simulate(config: &Config, a: SimulateArgs) -> Result<(), CliError> {
    let scenario = match (&a.scenario, a.demo) {
        (Some(p), false) => Scenario::load(p)?,
        (None, true) => crate::demo_scenario()?,
        _ => return Err(CliError::Usage("give a scenario file or --demo".into())),
    };
    let report = run_simulation(&scenario, config)?;
    match &a.out {
        Some(path) => {
            let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
            report.write_transcript(&mut w)?;
            w.flush().map_err(io_err(path))?;
        }
        None => report.write_transcript(std::io::stdout().lock())?,
    }
    let m = &report.metrics;
    eprintln!(
        "{}: {} clicks, QRA {:.3}, RQ {:.3}, mean reward {:.3}, {} segments, prefix reuse {:.3}",
        scenario.name, m.clicks, m.qra, m.rq, m.mean_reward, m.segments, m.prefix_reuse_rate
    );
    Ok(())
}

fn print_segments(segments: &[EventSegment], json: bool) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let w = io_err(Path::new("<stdout>"));
    let mut lines = Vec::new();
    if json {
        for s in segments {
            let mut buf = Vec::new();
            jsonl::write_line(&mut buf, s).map_err(file_err(Path::new("<stdout>")))?;
            lines.push(buf);
        }
    } else {
        lines.push(b"start_frame\tend_frame\tstart_time\tend_time\n".to_vec());
        for s in segments {
            lines.push(
                format!("{}\t{}\t{:.3}\t{:.3}\n", s.start_frame, s.end_frame, s.start_time, s.end_time).into_bytes(),
            );
        }
    }
    lines.iter().try_for_each(|l| out.write_all(l)).map_err(w)
}

fn ses(config: &mut Config, cmd: SesCmd) -> Result<(), CliError> {
    match cmd {
        SesCmd::Segment {
            input,
            gamma,
            alpha,
            window,
            streaming,
            emit_json,
        } => {
            let ses = &mut config.ses;
            ses.gamma = gamma.unwrap_or(ses.gamma);
            ses.alpha = alpha.unwrap_or(ses.alpha);
            ses.window_size = window.unwrap_or(ses.window_size);
            let (_, frames) = read_feature_file(open(&input)?).map_err(file_err(&input))?;
            let segments = if streaming {
                segment_streaming(&frames, ses)?
            } else {
                segment_offline(&frames, ses)?
            };
            print_segments(&segments, emit_json)
        }
        SesCmd::Generate {
            kind,
            len,
            seed,
            dip,
            value,
            out,
        } => {
            let frames = match kind {
                StreamKind::Random => fixtures::random_stream(seed, len),
                StreamKind::SingleDip if dip >= len => {
                    return Err(CliError::Usage(format!("--dip {dip} must be below --len {len}")))
                }
                StreamKind::SingleDip => fixtures::single_dip_stream(len, dip),
                StreamKind::Constant => fixtures::constant_stream(len, value),
            };
            let mut w = BufWriter::new(fs::File::create(&out).map_err(io_err(&out))?);
            write_feature_file(&mut w, &FeatureFileHeader::default(), &frames).map_err(file_err(&out))?;
            w.flush().map_err(io_err(&out))?;
            eprintln!("{} frames -> {}", frames.len(), out.display());
            Ok(())
        }
    }
}

fn clickqa(config: &Config, cmd: ClickqaCmd) -> Result<(), CliError> {
    match cmd {
        ClickqaCmd::Evaluate {
            dataset,
            backend,
            judge,
            corruption,
            no_visual_prompt,
        } => {
            let (_, samples) = datasynth::load_manifest(&dataset)?;
            let mut profile = config.backend.clone();
            match backend {
                Some(BackendChoice::Mock) => profile.kind = BackendKind::Mock,
                Some(BackendChoice::Http) => profile.kind = BackendKind::Http,
                None => {}
            }
            if let Some(c) = corruption {
                profile.corruption_rate = c;
            }
            profile.validate()?;
            let model: Arc<dyn ModelBackend> = match profile.kind {
                // the mock has no world knowledge; give it the dataset's answers
                BackendKind::Mock => Arc::new(
                    MockBackend::new(profile.seed)
                        .with_corruption(profile.corruption_rate)
                        .with_answer_key(samples.iter().map(|s| (s.question_gold.clone(), s.answer_gold.clone()))),
                ),
                BackendKind::Http => profile.build()?,
            };
            let choice = match judge {
                Some(JudgeArg::Exact) => JudgeChoice::Exact,
                Some(JudgeArg::Model) => JudgeChoice::Model,
                None => config.judge,
            };
            let judge: Box<dyn Judge> = match choice {
                JudgeChoice::Exact => Box::new(ExactMatchJudge),
                JudgeChoice::Model => Box::new(ModelJudge::new(Arc::clone(&model))),
            };
            let options = EvalOptions {
                visual_prompt: !no_visual_prompt && config.clickqa.visual_prompt,
                near_miss_radius: config.clickqa.near_miss_radius,
            };
            let report = evaluate_dataset(&samples, model.as_ref(), judge.as_ref(), &options);
            print_json(&report)
        }
        ClickqaCmd::Resolve { overlay, x, y, radius } => {
            let text = fs::read_to_string(&overlay).map_err(io_err(&overlay))?;
            let ov: FrameOverlay =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", overlay.display())))?;
            ov.validate()?;
            let click = ClickEvent::new(ov.frame_id, x, y);
            let msg = resolve_click_within(&ov, &click, radius.unwrap_or(config.clickqa.near_miss_radius))?;
            print_json(msg)
        }
    }
}

fn load_lexicon(config: &Config, path: Option<&Path>) -> Result<Lexicon, CliError> {
    Ok(match path.or(config.lexicon.as_deref()) {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::builtin(),
    })
}

fn offline(config: &Config, cmd: OfflineCmd) -> Result<(), CliError> {
    match cmd {
        OfflineCmd::Integrate {
            input,
            snippets,
            product_id,
            save,
        } => {
            let materials: Vec<RawMaterial> = jsonl::read_records(open(&input)?)
                .map_err(file_err(&input))?
                .into_iter()
                .map(|(_, m)| m)
                .collect();
            let snippets: Vec<String> = match &snippets {
                Some(p) => fs::read_to_string(p)
                    .map_err(io_err(p))?
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(str::to_string)
                    .collect(),
                None => Vec::new(),
            };
            let backend = config.backend.build()?;
            let record = integrate(&materials, &snippets, backend.as_ref(), product_id.as_deref())?;
            if save {
                RecordStore::open(&config.storage)?.save(&record)?;
                eprintln!("saved {} to {}", record.product_id, config.storage.display());
            }
            print_json(&record)
        }
        OfflineCmd::Copy {
            product,
            record,
            style,
            exemplar,
        } => {
            let record: ProductRecord = match (product, record) {
                (Some(id), None) => RecordStore::open(&config.storage)?.load(&id)?,
                (None, Some(p)) => {
                    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
                    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
                }
                _ => return Err(CliError::Usage("give --product or --record".into())),
            };
            let style: CopyStyle = style.parse()?;
            let backend = config.backend.build()?;
            let mut copy = match &exemplar {
                Some(p) => {
                    let ex = fs::read_to_string(p).map_err(io_err(p))?;
                    adapt_style(&record, &ex, style, backend.as_ref())?
                }
                None => generate_copy(&record, style, backend.as_ref())?,
            };
            let lexicon = load_lexicon(config, None)?;
            copy.body = purify(&copy.body, &lexicon, None).0;
            for p in &mut copy.interaction_phrases {
                *p = purify(p, &lexicon, None).0;
            }
            print_json(&copy)
        }
        OfflineCmd::Purify { lexicon, text, input } => {
            let lexicon = load_lexicon(config, lexicon.as_deref())?;
            let text = match (text, input) {
                (Some(t), None) => t,
                (None, Some(p)) => fs::read_to_string(&p).map_err(io_err(&p))?,
                _ => return Err(CliError::Usage("give --text or --input".into())),
            };
            let (clean, report) = purify(&text, &lexicon, None);
            print_json(&serde_json::json!({ "text": clean, "report": report }))
        }
    }
}
