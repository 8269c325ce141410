//! The four subcommands: `plan`, `solve`, `steer-sim`, `anchors`.
//!
//! Persisted reports are deterministic byte-for-byte for a given input:
//! they carry no timestamps (the only timestamped output is the anchor
//! audit log, which is explicitly excluded from that guarantee).

use std::path::{Path, PathBuf};

use eventsteer_anchor::{
    anchors_from_plan, assign_to_events, extract_anchors, AnchorError, AnchorRequest,
    ChatTransport, HttpTransport,
};
use eventsteer_core::event_model::{
    assign_windows, plan_from_json, validate_plan, EventPlan, Span,
};
use eventsteer_core::simulator::{
    compare, csv_summary, generate_scenario, run, AttentionReport, DeltaReport,
    REPORT_SCHEMA_VERSION,
};
use eventsteer_core::steering::{SteeringConfig, StrengthMode};
use eventsteer_core::strength_solver::{solve, SolverInstance};
use serde::Serialize;

use crate::config::Settings;
use crate::CliError;

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Resource(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Resource(format!("cannot write {}: {e}", path.display())))
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Resource(format!("cannot create {}: {e}", dir.display())))
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

/// Persisted output of `plan`: the span assignment plus enough plan
/// context to interpret it.
#[derive(Serialize)]
struct SpansFile {
    schema_version: u32,
    latent_frames: usize,
    tokens_per_frame: usize,
    display: String,
    spans: Vec<Span>,
}

pub fn cmd_plan(
    plan_arg: Option<&Path>,
    out_flag: Option<&Path>,
    settings: &Settings,
) -> Result<(), CliError> {
    let path = plan_arg
        .map(Path::to_path_buf)
        .or_else(|| settings.plan_path.clone())
        .ok_or_else(|| {
            CliError::Validation(
                "no plan file: pass one as an argument or set \"plan\" in the config".to_string(),
            )
        })?;
    let plan = load_plan(&path)?;

    let report = validate_plan(&plan);
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    if !report.is_usable() {
        for violation in &report.violations {
            eprintln!("violation: {violation}");
        }
        return Err(CliError::Validation(format!(
            "plan {} has {} violation(s)",
            path.display(),
            report.violations.len()
        )));
    }

    let weights: Vec<f64> = plan.events.iter().map(|e| e.weight).collect();
    let assignment = assign_windows(&weights, plan.latent_frames)
        .map_err(|e| CliError::Validation(format!("window assignment failed: {e}")))?;

    println!("{}", assignment.display_compact());

    let out_dir = out_flag.unwrap_or(&settings.out);
    ensure_out_dir(out_dir)?;
    let spans_path = out_dir.join("spans.json");
    let file = SpansFile {
        schema_version: REPORT_SCHEMA_VERSION,
        latent_frames: plan.latent_frames,
        tokens_per_frame: plan.tokens_per_frame,
        display: assignment.display_compact(),
        spans: assignment.spans.clone(),
    };
    write_text(&spans_path, &to_pretty_json(&file))?;
    eprintln!("spans written to {}", spans_path.display());
    Ok(())
}

pub fn cmd_solve(instance_path: &Path, settings: &Settings) -> Result<(), CliError> {
    let text = read_text(instance_path)?;
    let instance: SolverInstance = serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!(
            "invalid instance {}: {e}",
            instance_path.display()
        ))
    })?;
    let strengths = solve(&instance, settings.solver);
    print!("{}", to_pretty_json(&strengths));
    Ok(())
}

/// One batch line of `steer-sim --seeds N`.
#[derive(Serialize)]
struct BatchRow {
    seed: u64,
    spans: usize,
    non_first_spans: usize,
    improved_spans: usize,
    all_improved: bool,
    mean_target_delta: f64,
    mean_leakage_delta: f64,
    mean_margin_delta: f64,
    steer_calls_on: usize,
}

#[derive(Serialize)]
struct BatchFile {
    schema_version: u32,
    rows: Vec<BatchRow>,
}

struct SeedRun {
    off: AttentionReport,
    on: AttentionReport,
    delta: DeltaReport,
    steer_calls_on: usize,
    warnings: Vec<String>,
}

fn run_seed(settings: &Settings, seed: u64, steering_on: bool) -> Result<SeedRun, CliError> {
    let mut cfg = settings.scenario.clone();
    cfg.seed = seed;
    let scenario =
        generate_scenario(&cfg).map_err(|e| CliError::Validation(format!("scenario: {e}")))?;
    let steering = SteeringConfig {
        strength_mode: StrengthMode::Solve(settings.solver),
        ridge: settings.ridge,
        margin_eps: settings.margin_eps,
    };
    let off = run(&scenario, false, &steering, &settings.schedule)
        .map_err(|e| CliError::Validation(format!("baseline run: {e}")))?;
    let on = run(&scenario, steering_on, &steering, &settings.schedule)
        .map_err(|e| CliError::Validation(format!("steered run: {e}")))?;
    let delta = compare(&off.report, &on.report)
        .map_err(|e| CliError::Validation(format!("report comparison: {e}")))?;
    let mut warnings = off.warnings;
    warnings.extend(on.warnings);
    Ok(SeedRun {
        off: off.report,
        on: on.report,
        delta,
        steer_calls_on: on.steer_calls,
        warnings,
    })
}

fn batch_row(seed: u64, run: &SeedRun) -> BatchRow {
    let non_first: Vec<_> = run.delta.spans.iter().skip(1).collect();
    let n = non_first.len().max(1) as f64;
    BatchRow {
        seed,
        spans: run.delta.spans.len(),
        non_first_spans: run.delta.verdict.non_first_spans,
        improved_spans: run.delta.verdict.improved_spans,
        all_improved: run.delta.verdict.all_non_first_improved,
        mean_target_delta: non_first.iter().map(|s| s.target_mass_delta).sum::<f64>() / n,
        mean_leakage_delta: non_first.iter().map(|s| s.leakage_delta).sum::<f64>() / n,
        mean_margin_delta: non_first.iter().map(|s| s.margin_delta).sum::<f64>() / n,
        steer_calls_on: run.steer_calls_on,
    }
}

fn batch_csv(rows: &[BatchRow]) -> String {
    let mut out = String::from(
        "seed,spans,non_first_spans,improved_spans,all_improved,\
         mean_target_delta,mean_leakage_delta,mean_margin_delta,steer_calls_on\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.9},{:.9},{:.9},{}\n",
            r.seed,
            r.spans,
            r.non_first_spans,
            r.improved_spans,
            r.all_improved,
            r.mean_target_delta,
            r.mean_leakage_delta,
            r.mean_margin_delta,
            r.steer_calls_on
        ));
    }
    out
}

pub fn cmd_steer_sim(settings: &Settings, no_steering: bool) -> Result<(), CliError> {
    ensure_out_dir(&settings.out)?;
    match settings.seeds {
        None => steer_sim_single(settings, no_steering),
        Some(n) => steer_sim_batch(settings, no_steering, n),
    }
}

fn steer_sim_single(settings: &Settings, no_steering: bool) -> Result<(), CliError> {
    let seed = settings.scenario.seed;
    let result = run_seed(settings, seed, !no_steering)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }

    let mut written = Vec::new();
    if settings.format.wants_json() {
        for (name, text) in [
            ("report_off.json", to_pretty_json(&result.off)),
            ("report_on.json", to_pretty_json(&result.on)),
            ("delta.json", to_pretty_json(&result.delta)),
        ] {
            let path = settings.out.join(name);
            write_text(&path, &text)?;
            written.push(path);
        }
    }
    if settings.format.wants_csv() {
        let csv = csv_summary(&result.off, &result.on)
            .map_err(|e| CliError::Validation(format!("report comparison: {e}")))?;
        let path = settings.out.join("summary.csv");
        write_text(&path, &csv)?;
        written.push(path);
    }

    let v = &result.delta.verdict;
    println!(
        "seed {seed}: {}/{} non-first spans improved (target mass up, leakage down); steer calls on={}",
        v.improved_spans, v.non_first_spans, result.steer_calls_on
    );
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn steer_sim_batch(settings: &Settings, no_steering: bool, count: u32) -> Result<(), CliError> {
    let base = settings.scenario.seed;
    let mut rows = Vec::with_capacity(count as usize);
    let mut all_improved = 0u32;
    for k in 0..count {
        let seed = base + u64::from(k);
        let result = run_seed(settings, seed, !no_steering)?;
        for w in &result.warnings {
            eprintln!("warning: seed {seed}: {w}");
        }
        let row = batch_row(seed, &result);
        if row.all_improved {
            all_improved += 1;
        }
        rows.push(row);
    }

    if settings.format.wants_csv() {
        let path = settings.out.join("batch_summary.csv");
        write_text(&path, &batch_csv(&rows))?;
        eprintln!("wrote {}", path.display());
    }
    if settings.format.wants_json() {
        let path = settings.out.join("batch_summary.json");
        let file = BatchFile {
            schema_version: REPORT_SCHEMA_VERSION,
            rows,
        };
        write_text(&path, &to_pretty_json(&file))?;
        eprintln!("wrote {}", path.display());
    }

    println!(
        "seeds {base}..{}: all non-first spans improved in {all_improved}/{count} runs",
        base + u64::from(count)
    );
    Ok(())
}

/// Plan JSON document shape for `anchors` output, matching what
/// `plan_from_json` accepts so the written file round-trips.
#[derive(Serialize)]
struct PlanDocOut {
    latent_frames: usize,
    tokens_per_frame: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt: Option<String>,
    events: Vec<EventDocOut>,
}

#[derive(Serialize)]
struct EventDocOut {
    text: String,
    anchors: Vec<String>,
    weight: f64,
}

fn load_plan(path: &Path) -> Result<EventPlan, CliError> {
    let text = read_text(path)?;
    plan_from_json(&text)
        .map_err(|e| CliError::Validation(format!("invalid plan {}: {e}", path.display())))
}

fn anchor_error(e: AnchorError) -> CliError {
    match e {
        AnchorError::Io { .. } | AnchorError::Transport(_) => CliError::Resource(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

pub struct AnchorsArgs {
    pub plan: PathBuf,
    pub from_file: bool,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_var: Option<String>,
    pub audit: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn cmd_anchors(args: &AnchorsArgs, settings: &Settings) -> Result<(), CliError> {
    let plan = load_plan(&args.plan)?;

    let per_event = if args.from_file {
        let found = anchors_from_plan(&plan).map_err(anchor_error)?;
        for w in &found.warnings {
            eprintln!("warning: {w}");
        }
        found.per_event
    } else {
        extract_via_endpoint(args, settings, &plan)?
    };

    for (event_id, phrases) in per_event.iter().enumerate() {
        if phrases.is_empty() {
            return Err(CliError::Validation(format!(
                "no anchor phrase for event {event_id}; every event needs at least one"
            )));
        }
    }

    let out_dir = args.out.as_deref().unwrap_or(&settings.out);
    ensure_out_dir(out_dir)?;
    let out_path = out_dir.join("anchored_plan.json");
    let doc = PlanDocOut {
        latent_frames: plan.latent_frames,
        tokens_per_frame: plan.tokens_per_frame,
        prompt: plan.prompt.clone(),
        events: plan
            .events
            .iter()
            .zip(&per_event)
            .map(|(event, anchors)| EventDocOut {
                text: event.text.clone(),
                anchors: anchors.clone(),
                weight: event.weight,
            })
            .collect(),
    };
    write_text(&out_path, &to_pretty_json(&doc))?;

    for (event_id, phrases) in per_event.iter().enumerate() {
        println!("event {event_id}: {}", phrases.join(", "));
    }
    eprintln!("anchored plan written to {}", out_path.display());
    Ok(())
}

fn extract_via_endpoint(
    args: &AnchorsArgs,
    settings: &Settings,
    plan: &EventPlan,
) -> Result<Vec<Vec<String>>, CliError> {
    let endpoint = args
        .endpoint
        .clone()
        .or_else(|| settings.anchor.endpoint.clone())
        .ok_or_else(|| {
            CliError::Validation(
                "anchors needs --from-file, or an endpoint via --endpoint or the config"
                    .to_string(),
            )
        })?;
    let model = args
        .model
        .clone()
        .or_else(|| settings.anchor.model.clone())
        .ok_or_else(|| {
            CliError::Validation("no model name: pass --model or set it in the config".to_string())
        })?;

    let prompt = plan.prompt_text();
    let mut request = AnchorRequest::new(prompt.clone(), endpoint, model).map_err(anchor_error)?;
    request.token_var = args
        .token_var
        .clone()
        .or_else(|| settings.anchor.token_var.clone());
    request.retry = settings.anchor.retry;
    request.audit_log = args
        .audit
        .clone()
        .or_else(|| settings.anchor.audit_log.clone());

    let transport = HttpTransport::new(request.endpoint.clone(), request.token_var.clone());
    let response = extract_anchors(&request, &transport as &dyn ChatTransport)
        .map_err(anchor_error)?;
    assign_to_events(&response, &prompt, plan).map_err(anchor_error)
}
