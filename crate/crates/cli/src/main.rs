use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use layoutqa_core::client::{BackendSpec, ModelClient, RunLogEntry};
use layoutqa_core::datagen;
use layoutqa_core::eval::{self, AnlsOptions, AnlsReport};
use layoutqa_core::layout::{render_layout, LayoutConfig};
use layoutqa_core::ocr::{self, Granularity, IngestOptions, OcrFormat, OcrPage};
use layoutqa_core::pipeline::{self, RunManifest};
use layoutqa_core::prompt::{document_for, fill_template, PromptKind, PromptVariant, TaskKind};
use layoutqa_core::FilledPrompt;

/// Exit code when the eval gate is not met. 1 is a hard error, 2 a usage error.
const EXIT_GATE: u8 = 3;

#[derive(Parser)]
#[command(name = "layoutqa", version, about = "Layout-aware document QA with text-only models")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an OCR page as layout-preserving text.
    Layout {
        #[command(flatten)]
        ocr: OcrArgs,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Fill a task prompt for one page and question.
    Prompt {
        #[command(flatten)]
        ocr: OcrArgs,
        #[command(flatten)]
        layout: LayoutArgs,
        #[command(flatten)]
        variant: VariantArgs,
        #[arg(long)]
        question: String,
    },
    /// Send one prompt to a backend and print the completion.
    Infer {
        /// Prompt text file; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        /// Fixture lookup key for mock backends.
        #[arg(long, default_value = "prompt")]
        question_id: String,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Append a run-log line to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score predictions against gold answers.
    Eval {
        /// Predictions JSONL: {"question_id", "answer"}.
        #[arg(long)]
        predictions: PathBuf,
        /// QA records, JSONL or a JSON array.
        #[arg(long)]
        qa: PathBuf,
        /// Report JSON path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-question CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Exit with code 3 if the mean falls below this.
        #[arg(long)]
        min_anls: Option<f64>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Compare answers case-sensitively.
        #[arg(long)]
        case_sensitive: bool,
    },
    /// Generate instruction-tuning examples from CSV tables.
    Datagen {
        #[arg(long)]
        tables_dir: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        backend: BackendArgs,
        /// Examples JSONL; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Execute a manifest end to end.
    Run {
        manifest: PathBuf,
        /// Exit with code 3 if the mean falls below this.
        #[arg(long)]
        min_anls: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Canonical,
    AzureRead,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Line,
    Word,
}

#[derive(Args)]
struct OcrArgs {
    /// OCR JSON file; stdin when omitted.
    #[arg(long, alias = "ocr")]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "canonical")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "line")]
    granularity: GranularityArg,
    /// Page id for sources that carry none.
    #[arg(long)]
    page_id: Option<String>,
}

impl OcrArgs {
    fn load(&self) -> Result<OcrPage> {
        let raw = read_input(self.input.as_deref())?;
        let format = match self.format {
            FormatArg::Canonical => OcrFormat::Canonical,
            FormatArg::AzureRead => OcrFormat::AzureRead,
        };
        let opts = IngestOptions {
            granularity: match self.granularity {
                GranularityArg::Line => Granularity::Line,
                GranularityArg::Word => Granularity::Word,
            },
            page_id: self.page_id.clone(),
        };
        let parsed = ocr::parse_ocr(&raw, format, &opts).context("reading OCR input")?;
        if parsed.warnings.total() > 0 {
            log::warn!("OCR input repaired: {:?}", parsed.warnings);
        }
        Ok(parsed.page)
    }
}

#[derive(Args)]
struct LayoutArgs {
    #[arg(long, default_value_t = 1)]
    min_gap: usize,
    /// Do not indent rows by their left offset.
    #[arg(long)]
    no_indent: bool,
    #[arg(long, default_value_t = 0.5)]
    row_overlap: f64,
    /// Drop trailing rows beyond this many characters.
    #[arg(long)]
    max_chars: Option<usize>,
}

impl LayoutArgs {
    fn config(&self) -> LayoutConfig {
        LayoutConfig {
            min_gap_spaces: self.min_gap,
            leading_indent: !self.no_indent,
            row_overlap_threshold: self.row_overlap,
            max_chars: self.max_chars,
        }
    }
}

#[derive(Args)]
struct VariantArgs {
    #[arg(long)]
    task: TaskKind,
    /// Use space-joined text instead of the layout rendering.
    #[arg(long)]
    no_layout: bool,
    /// Use the plain prompt instead of the task instructions.
    #[arg(long)]
    no_task: bool,
}

impl VariantArgs {
    fn variant(&self) -> PromptVariant {
        PromptVariant {
            layout_on: !self.no_layout,
            task_on: !self.no_task,
        }
    }
}

#[derive(Args)]
struct BackendArgs {
    /// `echo`, or a backend spec JSON file.
    #[arg(long, default_value = "echo")]
    backend: String,
}

impl BackendArgs {
    fn spec(&self) -> Result<BackendSpec> {
        if self.backend == "echo" {
            return Ok(BackendSpec::mock_echo());
        }
        let path = Path::new(&self.backend);
        let raw = fs::read(path).with_context(|| format!("reading backend spec {}", path.display()))?;
        let mut spec: BackendSpec =
            serde_json::from_slice(&raw).with_context(|| format!("parsing backend spec {}", path.display()))?;
        if let Some(p) = spec.fixture_path.as_mut().filter(|p| p.is_relative()) {
            *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
        }
        Ok(spec)
    }
}

fn read_input(path: Option<&Path>) -> Result<Vec<u8>> {
    match path {
        Some(p) => fs::read(p).with_context(|| format!("reading {}", p.display())),
        None => {
            let mut buf = Vec::new();
            io::stdin().read_to_end(&mut buf).context("reading stdin")?;
            Ok(buf)
        }
    }
}

fn write_output(path: Option<&Path>, body: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn with_newline(mut s: String) -> Vec<u8> {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s.into_bytes()
}

fn gate(report: &AnlsReport, min: Option<f64>) -> ExitCode {
    match min {
        Some(min) if report.mean < min => {
            eprintln!("mean ANLS {:.4} below gate {min}", report.mean);
            ExitCode::from(EXIT_GATE)
        }
        _ => ExitCode::SUCCESS,
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Layout { ocr, layout } => {
            let page = ocr.load()?;
            let text = render_layout(&page, &layout.config())?;
            if text.truncated {
                log::warn!("output truncated to {} rows", text.rows_rendered);
            }
            write_output(None, &with_newline(text.text))?;
        }
        Command::Prompt {
            ocr,
            layout,
            variant,
            question,
        } => {
            let page = ocr.load()?;
            let v = variant.variant();
            let doc = document_for(&page, v, &layout.config())?;
            let prompt = fill_template(variant.task, v, &doc, &question, &page.page_id)?;
            write_output(None, &with_newline(prompt.text))?;
        }
        Command::Infer {
            input,
            backend,
            question_id,
            cache_dir,
            log,
        } => {
            let text = String::from_utf8(read_input(input.as_deref())?).context("prompt is not UTF-8")?;
            let mut client = ModelClient::new(backend.spec()?)?;
            if let Some(dir) = cache_dir {
                client = client.with_cache(dir)?;
            }
            let prompt = FilledPrompt::raw(text, PromptKind::QuestionGeneration, question_id);
            let result = client.complete(&prompt);
            if let Some(path) = log {
                let line = serde_json::to_string(&RunLogEntry::new(&prompt, &result))? + "\n";
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .and_then(|mut f| f.write_all(line.as_bytes()))
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            write_output(None, &with_newline(result?.text))?;
        }
        Command::Eval {
            predictions,
            qa,
            out,
            csv,
            min_anls,
            threshold,
            case_sensitive,
        } => {
            let preds = pipeline::load_predictions(&read_input(Some(&predictions))?)?;
            let records = ocr::load_qa(&read_input(Some(&qa))?)?;
            let opts = AnlsOptions {
                threshold,
                lowercase: !case_sensitive,
            };
            let report = eval::anls_dataset(&preds, &records, &opts)?;
            write_output(out.as_deref(), &with_newline(serde_json::to_string_pretty(&report)?))?;
            if let Some(path) = csv {
                let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
                pipeline::write_report_csv(&report, file)?;
            }
            return Ok(gate(&report, min_anls));
        }
        Command::Datagen {
            tables_dir,
            n,
            seed,
            backend,
            out,
            stats,
        } => {
            let tables: Vec<_> = datagen::load_tables_dir(&tables_dir)?
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            let client = ModelClient::new(backend.spec()?)?;
            let ds = datagen::generate_dataset(&tables, n, &client, seed)?;
            let mut body = Vec::new();
            datagen::write_jsonl(&ds.examples, &mut body)?;
            write_output(out.as_deref(), &body)?;
            let stats_json = serde_json::to_string_pretty(&ds.stats)?;
            match stats {
                Some(path) => write_output(Some(&path), &with_newline(stats_json))?,
                None => eprintln!("{stats_json}"),
            }
        }
        Command::Run { manifest, min_anls } => {
            let m = RunManifest::load(&manifest)?;
            let outcome = pipeline::run(&m)?;
            let summary = serde_json::json!({
                "run_dir": outcome.run_dir,
                "mean": outcome.report.mean,
                "count": outcome.report.count,
                "failures": outcome.failures.len(),
                "backend_calls": outcome.backend_calls,
            });
            write_output(None, &with_newline(serde_json::to_string_pretty(&summary)?))?;
            if !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("{}: {}", f.question_id, f.message);
                }
                bail!("{} question(s) failed", outcome.failures.len());
            }
            return Ok(gate(&outcome.report, min_anls));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
