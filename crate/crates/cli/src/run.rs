//! Command implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use atgen_core::agent::llm::{LlmDetector, LlmPolicy};
use atgen_core::agent::{history_jsonl, l_max, DetectorKind, HeuristicPolicy, PolicyKind};
use atgen_core::baseline::{run_baseline, BaselineRun, Pattern};
use atgen_core::corpus::{read_netlist, Benchmark, Manifest};
use atgen_core::detector::diagnosis_summary;
use atgen_core::metrics::{compare, mosfet_area, write_records, Comparison};
use atgen_core::report::{
    aggregate, load_bundles, write_summary, RunKind, RunSummary, FINAL_NETLIST_FILE, HISTORY_FILE, METRICS_FILE,
};
use atgen_core::simulator::{dc_sweep, SweepSpec};
use atgen_core::units::parse_value;
use atgen_core::{run_campaign, CampaignConfig, Detector, Netlist, Policy, RuleDetector};
use rayon::prelude::*;

use crate::http::HttpTransport;

pub const EXIT_OK: u8 = 0;
pub const EXIT_PARTIAL: u8 = 2;

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<CampaignConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            let mut cfg = CampaignConfig::from_toml(&text)?;
            // A manifest named in the config is relative to the config file.
            if let (Some(m), Some(dir)) = (cfg.manifest.as_mut(), p.parent()) {
                if Path::new(m).is_relative() {
                    *m = dir.join(&*m).display().to_string();
                }
            }
            cfg
        }
        None => CampaignConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// `SOURCE START STOP POINTS` from the command line, or the config sweep.
pub fn sweep_from_args(args: Option<&[String]>, cfg: &CampaignConfig) -> Result<SweepSpec> {
    let Some(args) = args else {
        return Ok(cfg.sweep.clone());
    };
    let [source, start, stop, points] = args else {
        bail!("--sweep takes SOURCE START STOP POINTS");
    };
    let num = |s: &str| parse_value(s).ok_or_else(|| anyhow!("bad sweep value `{s}`"));
    let spec = SweepSpec::new(
        source,
        num(start)?,
        num(stop)?,
        points.parse().with_context(|| format!("bad point count `{points}`"))?,
    );
    spec.validate()?;
    Ok(spec)
}

fn read(path: &Path) -> Result<Netlist> {
    Ok(read_netlist(path)?)
}

fn make_detector(cfg: &CampaignConfig) -> Result<Box<dyn Detector>> {
    Ok(match cfg.detector_kind {
        DetectorKind::Rules => Box::new(RuleDetector::new(cfg.detector.clone())),
        DetectorKind::Llm => {
            let (transport, model) = HttpTransport::from_env()?;
            Box::new(LlmDetector::new(Box::new(transport), &model))
        }
    })
}

fn make_policy(cfg: &CampaignConfig) -> Result<Box<dyn Policy>> {
    Ok(match cfg.policy {
        PolicyKind::Heuristic => Box::new(HeuristicPolicy::new()),
        PolicyKind::Llm => {
            let (transport, model) = HttpTransport::from_env()?;
            Box::new(LlmPolicy::new(Box::new(transport), &model))
        }
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn simulate(netlist: &Path, sweep: &SweepSpec, cfg: &CampaignConfig, out_dir: Option<&Path>) -> Result<u8> {
    let n = read(netlist)?;
    for w in &n.meta.warnings {
        eprintln!("warning: {w}");
    }
    let trace = dc_sweep(&n, sweep, &cfg.simulator)?;
    let csv = trace.to_csv_string();
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join(format!("{}.csv", stem(netlist)));
            write_file(&path, csv)?;
            eprintln!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    if trace.all_converged() {
        Ok(EXIT_OK)
    } else {
        let failed: Vec<String> = trace
            .converged
            .iter()
            .zip(&trace.sweep_values)
            .filter(|(c, _)| !**c)
            .map(|(_, v)| v.to_string())
            .collect();
        eprintln!("warning: no convergence at {} = {}", sweep.source_id, failed.join(", "));
        Ok(EXIT_PARTIAL)
    }
}

pub fn detect(
    netlist: &Path,
    sweep: &SweepSpec,
    reference: Option<&Path>,
    cfg: &CampaignConfig,
    out_dir: Option<&Path>,
) -> Result<u8> {
    let n = read(netlist)?;
    let trace = dc_sweep(&n, sweep, &cfg.simulator)?;
    let mut cfg = cfg.clone();
    if let Some(r) = reference {
        let golden = read(r)?;
        cfg.detector.reference = Some(dc_sweep(&golden, sweep, &cfg.simulator)?);
    }
    let detector = make_detector(&cfg)?;
    let report = detector.detect(&n, &trace, 0)?;
    let mut jsonl = Vec::new();
    report.write_jsonl(&mut jsonl)?;
    match out_dir {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(format!("{}.detect.jsonl", stem(netlist))), &jsonl)?;
        }
        None => std::io::stdout().write_all(&jsonl)?,
    }
    eprint!("{}", diagnosis_summary(&report));
    Ok(if trace.all_converged() { EXIT_OK } else { EXIT_PARTIAL })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "netlist".into())
}

/// A circuit to attack, from a manifest entry or a loose file.
pub struct Target {
    pub name: String,
    pub netlist: Netlist,
    pub output_node: String,
    pub area: f64,
    pub sweep: SweepSpec,
}

impl Target {
    pub fn from_benchmark(b: Benchmark, cfg: &CampaignConfig) -> Self {
        Target {
            sweep: b.sweep(&cfg.sweep),
            name: b.entry.name,
            output_node: b.entry.output_node,
            area: b.entry.area,
            netlist: b.netlist,
        }
    }

    /// Output node: flag, then config, then a `* output <node>` comment.
    pub fn from_file(path: &Path, output: Option<&str>, area: Option<f64>, cfg: &CampaignConfig) -> Result<Self> {
        let netlist = read(path)?;
        let from_comment = netlist.comments.iter().find_map(|c| {
            let rest = c.trim_start_matches('*').trim();
            rest.strip_prefix("output ").map(|n| n.trim().to_string())
        });
        let output_node = output
            .map(str::to_string)
            .or_else(|| cfg.metrics.output_node.clone())
            .or(from_comment)
            .ok_or_else(|| anyhow!("no output node: pass --output-node or set metrics.output_node"))?;
        let area = match area.or(cfg.metrics.area) {
            Some(a) => a,
            None => {
                let a = mosfet_area(&netlist);
                if a <= 0.0 {
                    bail!("netlist has no transistor area: pass --area");
                }
                a
            }
        };
        Ok(Target {
            name: stem(path),
            netlist,
            output_node,
            area,
            sweep: cfg.sweep.clone(),
        })
    }
}

/// Resolve the circuits a command runs on.
pub fn targets(
    netlist: Option<&Path>,
    manifest: Option<&Path>,
    entries: &[String],
    output: Option<&str>,
    area: Option<f64>,
    cfg: &CampaignConfig,
) -> Result<Vec<Target>> {
    let manifest_path = manifest.map(Path::to_path_buf).or_else(|| cfg.manifest.as_ref().map(PathBuf::from));
    match (netlist, manifest_path) {
        (Some(path), _) => Ok(vec![Target::from_file(path, output, area, cfg)?]),
        (None, Some(mpath)) => {
            let m = Manifest::load(&mpath)?;
            let chosen: Vec<_> = if entries.is_empty() {
                m.entries.iter().collect()
            } else {
                entries.iter().map(|e| m.entry(e)).collect::<Result<_, _>>()?
            };
            chosen
                .into_iter()
                .map(|e| Ok(Target::from_benchmark(m.benchmark(e)?, cfg)))
                .collect()
        }
        (None, None) => bail!("give a netlist path or --manifest"),
    }
}

fn campaign_one(t: &Target, cfg: &CampaignConfig, out_dir: &Path) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    cfg.sweep = t.sweep.clone();
    let detector = make_detector(&cfg)?;
    let mut policy = make_policy(&cfg)?;
    let result = run_campaign(&t.netlist, &cfg, policy.as_mut(), detector.as_ref())
        .with_context(|| format!("campaign on {} failed", t.name))?;
    let clean = dc_sweep(&t.netlist, &t.sweep, &cfg.simulator)?;
    let infected = dc_sweep(&result.final_netlist, &t.sweep, &cfg.simulator)?;
    let metrics = compare(
        &Comparison {
            name: &t.name,
            clean: &t.netlist,
            clean_trace: &clean,
            trojan: &result.final_netlist,
            trojan_trace: &infected,
            output_node: &t.output_node,
            area: t.area,
            n_it: result.n_it,
            r_evade: result.r_evade_final,
        },
        &cfg.metrics,
    )?;
    let dir = out_dir.join(&t.name);
    create_dir(&dir)?;
    write_file(&dir.join(FINAL_NETLIST_FILE), result.final_netlist.to_spice())?;
    write_file(&dir.join(HISTORY_FILE), history_jsonl(&result.history))?;
    let mut csv = Vec::new();
    write_records(std::slice::from_ref(&metrics), &mut csv)?;
    write_file(&dir.join(METRICS_FILE), csv)?;
    let summary = RunSummary::from_campaign(&t.name, &result, metrics);
    write_summary(&dir, &summary)?;
    Ok(summary)
}

fn report_status<T>(results: &[(String, Result<T>)], describe: impl Fn(&T) -> String) -> u8 {
    let mut failed = 0;
    for (name, r) in results {
        match r {
            Ok(v) => println!("{name}: {}", describe(v)),
            Err(e) => {
                failed += 1;
                eprintln!("error: {name}: {e:#}");
            }
        }
    }
    match failed {
        0 => EXIT_OK,
        f if f == results.len() => 1,
        _ => EXIT_PARTIAL,
    }
}

pub fn campaign(targets: &[Target], cfg: &CampaignConfig, out_dir: &Path, threads: Option<usize>) -> Result<u8> {
    if matches!(cfg.policy, PolicyKind::Llm) || matches!(cfg.detector_kind, DetectorKind::Llm) {
        HttpTransport::from_env()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("cannot start worker threads")?;
    let results: Vec<(String, Result<RunSummary>)> = pool.install(|| {
        targets
            .par_iter()
            .map(|t| (t.name.clone(), campaign_one(t, cfg, out_dir)))
            .collect()
    });
    if results.len() == 1 {
        if let (_, Err(e)) = &results[0] {
            return Err(anyhow!("{e:#}"));
        }
    }
    Ok(report_status(&results, |s| {
        format!(
            "{:?} after {} iterations, L_T {} of {}, R_evade {:.1}%, activation {:.1}%",
            s.reason.expect("campaigns have a reason"),
            s.n_it,
            s.l_t,
            s.l_max,
            s.metrics.r_evade,
            s.metrics.activation_range
        )
    }))
}

fn baseline_one(t: &Target, pattern: Pattern, cfg: &CampaignConfig, out_dir: &Path) -> Result<RunSummary> {
    let detector = make_detector(cfg)?;
    let run = BaselineRun {
        name: &t.name,
        netlist: &t.netlist,
        output_node: &t.output_node,
        area: t.area,
        sweep: &t.sweep,
        sim: &cfg.simulator,
        metrics: &cfg.metrics,
        detector: detector.as_ref(),
    };
    let (outcome, metrics) = run_baseline(&run, pattern, cfg.seed)?;
    let dir = out_dir.join(format!("{}-{}", t.name, pattern));
    create_dir(&dir)?;
    write_file(&dir.join(FINAL_NETLIST_FILE), outcome.netlist.to_spice())?;
    let mut csv = Vec::new();
    write_records(std::slice::from_ref(&metrics), &mut csv)?;
    write_file(&dir.join(METRICS_FILE), csv)?;
    let summary = RunSummary {
        name: t.name.clone(),
        kind: RunKind::Baseline {
            pattern: pattern.to_string(),
        },
        seed: cfg.seed,
        reason: None,
        t: cfg.t,
        n_it: 0,
        l_t: outcome.inserted.len(),
        l_max: l_max(cfg.alpha, t.netlist.node_count()),
        inserted: outcome.inserted,
        r_evade_series: Vec::new(),
        metrics,
    };
    write_summary(&dir, &summary)?;
    Ok(summary)
}

pub fn baseline(targets: &[Target], pattern: Pattern, cfg: &CampaignConfig, out_dir: &Path) -> Result<u8> {
    let results: Vec<(String, Result<RunSummary>)> = targets
        .par_iter()
        .map(|t| (t.name.clone(), baseline_one(t, pattern, cfg, out_dir)))
        .collect();
    if results.len() == 1 {
        if let (_, Err(e)) = &results[0] {
            return Err(anyhow!("{e:#}"));
        }
    }
    Ok(report_status(&results, |s| {
        format!(
            "{pattern} at {}, activation {:.1}%, delta_p {:.2}%, delta_a {:.3}%",
            s.inserted.join(" "),
            s.metrics.activation_range,
            s.metrics.delta_p,
            s.metrics.delta_a
        )
    }))
}

pub fn report(results: &Path, out_dir: Option<&Path>) -> Result<u8> {
    let runs = load_bundles(results)?;
    let rep = aggregate(&runs);
    let dir = out_dir.unwrap_or(results);
    create_dir(dir)?;
    let mut csv = Vec::new();
    rep.write_csv(&mut csv)?;
    write_file(&dir.join("report.csv"), csv)?;
    let table = rep.to_table();
    write_file(&dir.join("report.txt"), &table)?;
    let mut series = Vec::new();
    rep.write_series(&mut series)?;
    write_file(&dir.join("revade_series.csv"), series)?;
    print!("{table}");
    for issue in &rep.issues {
        eprintln!("warning: {issue}");
    }
    Ok(EXIT_OK)
}
