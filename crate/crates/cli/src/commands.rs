use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use drowsy_core::classify::{
    evaluate_dataset, format_model_comparison, load_manifest, read_pgm, serve, BaselineClassifier,
    Classifier, ClassifyError, ExternalClassifier, LabeledRoi, ModelReportRow,
};
use drowsy_core::config::{ClassifierSpec, ConfigError, PipelineConfig};
use drowsy_core::detections::read_detections;
use drowsy_core::events::{analyze, event_line, stats_csv, window_stats, EventsError};
use drowsy_core::geometry::{LandmarkSet6, Point2};
use drowsy_core::pipeline::{Pipeline, PipelineError};
use drowsy_core::pose::{default_camera, ChinModel, PnpSolver, PoseError};
use drowsy_core::recorder::{read_timeseries, FrameRecord, Format, RecorderError, TimeseriesWriter};
use drowsy_core::synth::{generate, truth_line, Scenario};
use serde_json::json;

use crate::{ClassifierArg, Common, FormatArg};

/// Error carrying its process exit status.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn config(message: impl fmt::Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    fn input(message: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e)
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Input { .. } => Self::input(e),
            PipelineError::Recorder(RecorderError::Parse { .. }) => Self::input(e),
            _ => Self::config(e),
        }
    }
}

type CliResult = Result<(), CliError>;

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn open_input(p: &Path) -> Result<Box<dyn BufRead>, CliError> {
    if is_stdio(p) {
        return Ok(Box::new(BufReader::new(io::stdin().lock())));
    }
    let f = File::open(p).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(p: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match p {
        None => Ok(Box::new(io::stdout().lock())),
        Some(p) if is_stdio(p) => Ok(Box::new(io::stdout().lock())),
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
    }
}

fn write_all(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::config(format!("write failed: {e}")))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

fn apply_classifier(
    cfg: &mut PipelineConfig,
    classifier: Option<ClassifierArg>,
    backend_cmd: Option<String>,
) -> CliResult {
    let timeout_ms = match &cfg.classifier {
        ClassifierSpec::External { timeout_ms, .. } => *timeout_ms,
        ClassifierSpec::Baseline => 200,
    };
    let existing = match &cfg.classifier {
        ClassifierSpec::External { command, .. } => Some(command.clone()),
        ClassifierSpec::Baseline => None,
    };
    let wanted = classifier.unwrap_or(match (&backend_cmd, &cfg.classifier) {
        (Some(_), _) | (None, ClassifierSpec::External { .. }) => ClassifierArg::External,
        (None, ClassifierSpec::Baseline) => ClassifierArg::Baseline,
    });
    cfg.classifier = match wanted {
        ClassifierArg::Baseline => ClassifierSpec::Baseline,
        ClassifierArg::External => {
            let command = backend_cmd
                .or(existing)
                .ok_or_else(|| CliError::config("--classifier external needs --backend-cmd or a configured command"))?;
            ClassifierSpec::External { command, timeout_ms }
        }
    };
    cfg.validate()?;
    Ok(())
}

pub fn extract(
    common: &Common,
    format: Option<FormatArg>,
    classifier: Option<ClassifierArg>,
    backend_cmd: Option<String>,
    no_hold: bool,
) -> CliResult {
    let mut cfg = load_config(common.config.as_deref())?;
    apply_classifier(&mut cfg, classifier, backend_cmd)?;
    if no_hold {
        cfg.hold.enabled = false;
    }
    let format = format.map_or(cfg.format, Format::from);
    let streaming = is_stdio(&common.input);
    let input = open_input(&common.input)?;
    let mut pipeline = Pipeline::new(&cfg)?;
    let out = open_output(common.output.as_deref())?;
    let mut writer = TimeseriesWriter::new(out, format).map_err(CliError::config)?;
    let mut frames = 0usize;
    for item in read_detections(input) {
        let (_, frame) = item.map_err(CliError::input)?;
        let rec = pipeline.process(&frame)?;
        writer.write(&rec).map_err(CliError::config)?;
        if streaming {
            writer.flush().map_err(CliError::config)?;
        }
        frames += 1;
    }
    writer.finish().map_err(CliError::config)?;
    log::info!("processed {frames} frames");
    Ok(())
}

pub fn pose(coords: &[f64], config: Option<&Path>, image_size: Option<Vec<u32>>, derived_chin: bool) -> CliResult {
    let cfg = load_config(config)?;
    let cam = match image_size {
        Some(s) => default_camera(s[0], s[1]).map_err(CliError::config)?,
        None => cfg.camera_model()?,
    };
    if coords.iter().any(|c| !c.is_finite()) {
        return Err(CliError::input("coordinates must be finite"));
    }
    let p = |i: usize| Point2::new(coords[2 * i], coords[2 * i + 1]);
    let points = LandmarkSet6::from_points([p(0), p(1), p(2), p(3), p(4), p(5)]);
    let chin = if derived_chin {
        ChinModel::Derived { k: cfg.chin_k }
    } else {
        ChinModel::Anatomical
    };
    let pose = PnpSolver::new(cfg.solver, chin)
        .solve(&points, &cfg.face_model()?, &cam)
        .map_err(|e| match e {
            PoseError::InvalidInput(_) => CliError::input(e),
            _ => CliError::config(e),
        })?;
    let out = json!({
        "yaw": pose.yaw_deg,
        "pitch": pose.pitch_deg,
        "roll": pose.roll_deg,
        "rms": pose.reproj_rms_px,
        "tvec": pose.tvec,
        "converged": pose.converged,
        "iterations": pose.iterations,
    });
    write_all(&mut io::stdout().lock(), &format!("{out}\n"))
}

fn infer_format(path: &Path, flag: Option<FormatArg>, cfg: &PipelineConfig) -> Format {
    if let Some(f) = flag {
        return f.into();
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => Format::Jsonl,
        Some("csv") => Format::Csv,
        _ => cfg.format,
    }
}

fn load_timeseries(common: &Common, format: Option<FormatArg>, cfg: &PipelineConfig) -> Result<Vec<FrameRecord>, CliError> {
    let format = infer_format(&common.input, format, cfg);
    let records = read_timeseries(open_input(&common.input)?, format).map_err(|e| {
        CliError::input(format!("{}: {}", common.input.display(), e.error))
    })?;
    if records.is_empty() {
        return Err(CliError::input(EventsError::EmptyStream));
    }
    Ok(records)
}

pub fn events(common: &Common, format: Option<FormatArg>) -> CliResult {
    let cfg = load_config(common.config.as_deref())?;
    let records = load_timeseries(common, format, &cfg)?;
    let text: String = analyze(&records, &cfg.events).iter().map(event_line).collect();
    write_all(&mut *open_output(common.output.as_deref())?, &text)
}

pub fn stats(common: &Common, format: Option<FormatArg>, window_ms: u64, stride_ms: u64) -> CliResult {
    let cfg = load_config(common.config.as_deref())?;
    if stride_ms == 0 || window_ms < stride_ms {
        return Err(CliError::config(EventsError::InvalidWindow));
    }
    let records = load_timeseries(common, format, &cfg)?;
    let events = analyze(&records, &cfg.events);
    let stats = window_stats(&records, &events, window_ms, stride_ms).map_err(CliError::config)?;
    write_all(&mut *open_output(common.output.as_deref())?, &stats_csv(&stats))
}

pub fn synth(input: &Path, output: &Path, truth: Option<&Path>, seed: Option<u64>) -> CliResult {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::config(format!("{}: {e}", input.display())))?;
    let mut scn = Scenario::from_json(&text).map_err(CliError::config)?;
    if let Some(s) = seed {
        scn.seed = s;
    }
    let out = generate(&scn).map_err(CliError::config)?;
    let detections: String = out.detections.iter().map(|f| f.to_line() + "\n").collect();
    write_all(&mut *open_output(Some(output))?, &detections)?;
    if let Some(t) = truth {
        let lines: String = out.truth.iter().map(|f| truth_line(f) + "\n").collect();
        write_all(&mut *open_output(Some(t))?, &lines)?;
    }
    Ok(())
}

pub fn report(input: &Path) -> CliResult {
    let mut rows = Vec::new();
    for (i, line) in open_input(input)?.lines().enumerate() {
        let line = line.map_err(|e| CliError::input(format!("{}: {e}", input.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ModelReportRow = serde_json::from_str(&line)
            .map_err(|e| CliError::input(format!("{}: line {}: {e}", input.display(), i + 1)))?;
        rows.push(row);
    }
    write_all(&mut io::stdout().lock(), &format_model_comparison(&rows))
}

fn resolve_path(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn evaluate(common: &Common, seed: u64, classifier: Option<ClassifierArg>, backend_cmd: Option<String>) -> CliResult {
    let mut cfg = load_config(common.config.as_deref())?;
    apply_classifier(&mut cfg, classifier, backend_cmd)?;
    let entries = load_manifest(&common.input).map_err(CliError::input)?;
    let base = common.input.parent().unwrap_or(Path::new("."));
    let items = entries
        .iter()
        .map(|e| {
            Ok(LabeledRoi {
                image: read_pgm(&resolve_path(base, &e.path), e.kind)?,
                label: e.label,
            })
        })
        .collect::<Result<Vec<_>, ClassifyError>>()
        .map_err(CliError::input)?;
    let mut backend: Box<dyn Classifier> = match &cfg.classifier {
        ClassifierSpec::Baseline => Box::new(BaselineClassifier),
        spec @ ClassifierSpec::External { command, .. } => {
            Box::new(ExternalClassifier::spawn(command, spec.timeout()).map_err(CliError::config)?)
        }
    };
    let report = evaluate_dataset(&items, backend.as_mut(), seed).map_err(CliError::config)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_all(&mut *open_output(common.output.as_deref())?, &text)
}

pub fn serve_baseline() -> CliResult {
    serve(io::stdin().lock(), io::stdout().lock(), io::stderr().lock(), &mut BaselineClassifier)
        .map(|_| ())
        .map_err(|e| CliError::config(format!("i/o error: {e}")))
}
