use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use muacp::scenario::{load_scenario, preset, preset_names};
use muacp::uncertainty::{ConfidenceModel, Profile};
use muacp::sim::{read_log, write_log, LogLine};
use muacp::{compute_metrics, run_batch, EpisodeResult, MetricTable, Mode, ScenarioConfig, SimSettings};
use serde::Serialize;

use crate::error::CliError;
use crate::svg::{color, Chart, Series};

/// Reads a scenario file; a bare name such as `lane3.json` that does not
/// exist on disk falls back to the bundled preset of that name.
pub fn resolve_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    if !path.exists() {
        let bare = path.parent().is_none_or(|p| p.as_os_str().is_empty());
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if bare {
            if let Some(c) = preset(stem) {
                info!("using bundled preset {stem}");
                return Ok(c);
            }
        }
    }
    Ok(load_scenario(path)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_json<T: Serialize>(path: &Path, what: &'static str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Encode { what, source })?;
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn write_logs(dir: &Path, results: &[EpisodeResult], config: &ScenarioConfig) -> Result<(), CliError> {
    create_dir(dir)?;
    for r in results {
        let path = dir.join(format!("{}_seed{}.jsonl", r.mode.name().to_lowercase(), r.seed));
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(file);
        let mut c = config.clone();
        c.seed = r.seed;
        write_log(r, &c, &mut w).map_err(|source| CliError::Log {
            path: path.clone(),
            source,
        })?;
        w.flush().map_err(CliError::io(&path))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scenario: PathBuf,
    pub mode: Option<Mode>,
    pub seeds: Vec<u64>,
    pub sigma: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub rain: Option<Vec<f64>>,
    pub out: PathBuf,
    pub workers: usize,
    pub logs: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SweepPoint {
    sigma: Option<f64>,
    rho: Option<f64>,
    rain: Option<f64>,
    dir: String,
    metrics: MetricTable,
}

fn axis(values: &Option<Vec<f64>>) -> Vec<Option<f64>> {
    match values {
        Some(v) => v.iter().map(|&x| Some(x)).collect(),
        None => vec![None],
    }
}

/// One batch per point of the σ × ρ × rain grid. A single point writes
/// straight into the output directory.
pub fn run(opts: &RunOptions) -> Result<(), CliError> {
    let mut base = resolve_scenario(&opts.scenario)?;
    if let Some(m) = opts.mode {
        base.mode = m;
    }
    let name = opts
        .scenario
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario")
        .to_string();
    let settings = SimSettings::default();
    let mut points = Vec::new();
    for sigma in axis(&opts.sigma) {
        for rho in axis(&opts.rho) {
            for rain in axis(&opts.rain) {
                points.push((sigma, rho, rain));
            }
        }
    }
    let single = points.len() == 1;
    create_dir(&opts.out)?;
    let mut sweep = Vec::new();
    for (sigma, rho, rain) in points {
        let mut c = base.clone();
        if let Some(s) = sigma {
            c.uncertainty.sigma = Profile::Constant(s);
        }
        if let Some(r) = rho {
            c.uncertainty.confidence = ConfidenceModel::Fixed { rho: r };
        }
        if let Some(r) = rain {
            c.uncertainty.rain = Profile::Constant(r);
        }
        let tag: Vec<String> = [("sigma", sigma), ("rho", rho), ("rain", rain)]
            .iter()
            .filter_map(|(n, v)| v.map(|v| format!("{n}{v}")))
            .collect();
        let dir_name = if single { String::new() } else { tag.join("_") };
        let dir = opts.out.join(&dir_name);
        info!(
            "{name}: {} x {} seeds{}",
            c.mode.name(),
            opts.seeds.len(),
            if tag.is_empty() { String::new() } else { format!(" at {}", tag.join(" ")) }
        );
        let results = run_batch(&c, &opts.seeds, &settings, opts.workers)?;
        let title = if tag.is_empty() { name.clone() } else { format!("{name} {}", tag.join(" ")) };
        let metrics = compute_metrics(&title, &results);
        create_dir(&dir)?;
        if opts.logs {
            write_logs(&dir.join("logs"), &results, &c)?;
        }
        write_json(&dir.join("metrics.json"), "metrics", &metrics)?;
        write_text(&dir.join("metrics.txt"), &metrics.to_text())?;
        print!("{}", metrics.to_text());
        sweep.push(SweepPoint {
            sigma,
            rho,
            rain,
            dir: dir_name,
            metrics,
        });
    }
    if !single {
        write_json(&opts.out.join("sweep.json"), "sweep", &sweep)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1 {
    pub three: MetricTable,
    pub six: MetricTable,
}

/// Both platoon sizes under all three modes.
pub fn reproduce_table1(out: &Path, seeds: &[u64], workers: usize, logs: bool) -> Result<Table1, CliError> {
    create_dir(out)?;
    let settings = SimSettings::default();
    let mut tables = Vec::new();
    for (name, title) in [("table1_3av", "3 AVs"), ("table1_6av", "6 AVs")] {
        let base = preset(name).ok_or_else(|| CliError::Usage(format!("missing preset {name}")))?;
        let mut results = Vec::new();
        for mode in Mode::ALL {
            let mut c = base.clone();
            c.mode = mode;
            info!("{title}: {} x {} seeds", mode.name(), seeds.len());
            let batch = run_batch(&c, seeds, &settings, workers)?;
            if logs {
                write_logs(&out.join(name), &batch, &c)?;
            }
            results.extend(batch);
        }
        tables.push(compute_metrics(title, &results));
    }
    let six = tables.pop().expect("two tables");
    let three = tables.pop().expect("two tables");
    let table = Table1 { three, six };
    write_json(&out.join("table1.json"), "table", &table)?;
    let text = format!("{}\n{}", table.three.to_text(), table.six.to_text());
    write_text(&out.join("table1.txt"), &text)?;
    print!("{text}");
    Ok(table)
}

struct Trace {
    name: String,
    dt: f64,
    vehicles: usize,
    /// `states[t][k]`, starting with the initial states.
    states: Vec<Vec<[f64; 4]>>,
    inputs: Vec<Vec<[f64; 2]>>,
}

fn load_trace(path: &Path) -> Result<Trace, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    let lines = read_log(BufReader::new(file)).map_err(|source| CliError::Log {
        path: path.to_path_buf(),
        source,
    })?;
    let mut trace = Trace {
        name: path.file_stem().and_then(|s| s.to_str()).unwrap_or("log").to_string(),
        dt: 0.05,
        vehicles: 0,
        states: Vec::new(),
        inputs: Vec::new(),
    };
    for line in lines {
        match line {
            LogLine::Header { scenario, initial, .. } => {
                trace.dt = scenario.horizon.dt;
                trace.vehicles = initial.len();
                trace.states.push(initial.iter().map(|z| z.to_array()).collect());
            }
            LogLine::Step { inputs, states, .. } => {
                trace.inputs.push(inputs.iter().map(|u| [u.a, u.delta]).collect());
                trace.states.push(states.iter().map(|z| z.to_array()).collect());
            }
            LogLine::Summary { .. } => {}
        }
    }
    Ok(trace)
}

pub const PLOT_FILES: [&str; 5] = [
    "trajectory.svg",
    "acceleration.svg",
    "steering.svg",
    "velocity.svg",
    "heading.svg",
];

/// Five charts; with several logs, later logs are drawn dashed over the first.
pub fn plot(logs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if logs.is_empty() {
        return Err(CliError::Usage("plot needs at least one --log".into()));
    }
    let traces = logs.iter().map(|p| load_trace(p)).collect::<Result<Vec<_>, _>>()?;
    create_dir(out)?;
    let overlay = traces.len() > 1;
    let series = |f: &dyn Fn(&Trace, usize) -> Vec<(f64, f64)>| -> Vec<Series> {
        let mut all = Vec::new();
        for (i, tr) in traces.iter().enumerate() {
            for k in 0..tr.vehicles {
                let who = if k == 0 { "LV".to_string() } else { format!("FV{k}") };
                all.push(Series {
                    label: if overlay { format!("{who} {}", tr.name) } else { who },
                    points: f(tr, k),
                    color: color(k),
                    dashed: i > 0,
                });
            }
        }
        all
    };
    let state = |i: usize| {
        move |tr: &Trace, k: usize| -> Vec<(f64, f64)> {
            tr.states
                .iter()
                .enumerate()
                .map(|(t, row)| (t as f64 * tr.dt, row[k][i]))
                .collect()
        }
    };
    let input = |i: usize| {
        move |tr: &Trace, k: usize| -> Vec<(f64, f64)> {
            tr.inputs
                .iter()
                .enumerate()
                .map(|(t, row)| (t as f64 * tr.dt, row[k][i]))
                .collect()
        }
    };
    let charts = [
        Chart {
            title: "Trajectories".into(),
            x_label: "x (m)".into(),
            y_label: "y (m)".into(),
            series: series(&|tr: &Trace, k: usize| tr.states.iter().map(|row| (row[k][0], row[k][1])).collect()),
        },
        Chart {
            title: "Acceleration".into(),
            x_label: "t (s)".into(),
            y_label: "a (m/s²)".into(),
            series: series(&input(0)),
        },
        Chart {
            title: "Steering angle".into(),
            x_label: "t (s)".into(),
            y_label: "δ (rad)".into(),
            series: series(&input(1)),
        },
        Chart {
            title: "Velocity".into(),
            x_label: "t (s)".into(),
            y_label: "v (m/s)".into(),
            series: series(&state(3)),
        },
        Chart {
            title: "Heading angle".into(),
            x_label: "t (s)".into(),
            y_label: "φ (rad)".into(),
            series: series(&state(2)),
        },
    ];
    let mut written = Vec::new();
    for (chart, file) in charts.iter().zip(PLOT_FILES) {
        let path = out.join(file);
        write_text(&path, &chart.to_svg())?;
        written.push(path);
    }
    Ok(written)
}

/// Lists the bundled presets, or writes them as JSON files into `export`.
pub fn presets(export: Option<&Path>) -> Result<(), CliError> {
    for name in preset_names() {
        match export {
            Some(dir) => {
                create_dir(dir)?;
                let c = preset(name).expect("listed preset exists");
                write_json(&dir.join(format!("{name}.json")), "preset", &c)?;
            }
            None => println!("{name}"),
        }
    }
    Ok(())
}
