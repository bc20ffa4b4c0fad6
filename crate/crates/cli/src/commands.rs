use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;

use geoshift::evaluate::{compare_methods, report_csv, report_json, report_text, results_from_corrected, write_corrected};
use geoshift::footprints::{parse_footprints, prepare_groups, write_footprints, PrepareOptions, StageCount};
use geoshift::metrics::MetricKind;
use geoshift::optimize::{correct_dataset, CorrectionConfig, CorrectionResult, Method};
use geoshift::raster::{load_raster, save_raster, RasterKind};
use geoshift::synthetic::{gen_dataset, gen_terrain, plant_offset, DatasetSpec, GroundTruth, GroupTruth, TerrainSpec};

use crate::args::{CommonArgs, EvaluateArgs, SimulateArgs};
use crate::config::RunConfig;

/// A failed run, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 1).
    Usage(anyhow::Error),
    /// Unreadable, inconsistent or exhausted input data (exit 2).
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Self::Usage(e) | Self::Data(e) => e,
        }
    }
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }
}

pub const CORRECTED_FILE: &str = "corrected_footprints.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";
pub const PREPROCESS_JSON: &str = "preprocess.json";
pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_TXT: &str = "bench.txt";

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .data()
}

fn resolve_config(args: &CommonArgs, bench: bool) -> Result<RunConfig, Failure> {
    let (mut cfg, file_keys) = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .data()?;
            let table: toml::Table = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .usage()?;
            let keys: Vec<String> = table.keys().cloned().collect();
            (RunConfig::load(path).usage()?, keys)
        }
        None => (RunConfig::default(), Vec::new()),
    };
    if bench {
        // A bench sweeps everything unless the file or flags narrow it.
        if !file_keys.iter().any(|k| k == "methods") {
            cfg.methods = Method::ALL.to_vec();
        }
        if !file_keys.iter().any(|k| k == "metrics") {
            cfg.metrics = MetricKind::ALL.to_vec();
        }
    }
    cfg.apply(args).usage()?;
    cfg.finalize().usage()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PreprocessSummary<'a> {
    stages: &'a [StageCount],
    dropped_missing: usize,
    dropped_unparseable: usize,
    n_groups: usize,
    n_footprints: usize,
    preprocess_time_s: f64,
}

struct Pipeline {
    results: Vec<CorrectionResult>,
    original: Vec<geoshift::footprints::ShotGroup>,
    preprocess_json: String,
}

fn run_pipeline(cfg: &RunConfig) -> Result<Pipeline, Failure> {
    let dem_path = cfg.require(&cfg.dem_path, "dem_path").usage()?;
    let fp_path = cfg.require(&cfg.footprints_path, "footprints_path").usage()?;
    let start = Instant::now();
    let dem = load_raster(dem_path, RasterKind::Dem).data()?;
    let geoid = cfg
        .geoid_path
        .as_deref()
        .map(|p| load_raster(p, RasterKind::Geoid))
        .transpose()
        .data()?;
    let file = File::open(fp_path)
        .with_context(|| format!("opening footprints {}", fp_path.display()))
        .data()?;
    let parsed = parse_footprints(std::io::BufReader::new(file))
        .with_context(|| format!("reading footprints {}", fp_path.display()))
        .data()?;
    let (dropped_missing, dropped_unparseable) = (parsed.dropped_missing, parsed.dropped_unparseable);
    let opts = PrepareOptions {
        rules: cfg.quality.clone(),
        radius: cfg.radius,
        agg: cfg.agg,
        prefix_len: cfg.prefix_len,
        footprint_crs: cfg.crs.clone(),
    };
    let prepared = prepare_groups(parsed, &dem, geoid.as_ref(), &opts).data()?;
    for s in &prepared.stages {
        eprintln!("preprocess: {s}");
    }
    if let Some(stage) = prepared.exhausted_at() {
        return Err(Failure::Data(anyhow!("no footprints survived preprocessing; the last rows were removed by {}", stage.stage)));
    }
    let preprocess_time = if cfg.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
    let preprocess_json = serde_json::to_string_pretty(&PreprocessSummary {
        stages: &prepared.stages,
        dropped_missing,
        dropped_unparseable,
        n_groups: prepared.groups.len(),
        n_footprints: prepared.n_footprints(),
        preprocess_time_s: preprocess_time,
    })
    .data()?
        + "\n";

    let mut results = Vec::new();
    for &method in &cfg.methods {
        for &metric in &cfg.metrics {
            let ccfg = CorrectionConfig {
                method,
                metric,
                bounds: cfg.bounds,
                optimizer: cfg.optimizer.clone(),
                radius: cfg.radius,
                agg: cfg.agg,
                oob_penalty: cfg.oob_penalty,
                workers: cfg.workers,
            };
            let mut r = correct_dataset(&prepared.groups, &dem, &ccfg).data()?;
            if !cfg.record_timing {
                r.wall_time_s = 0.0;
                r.groups.iter_mut().for_each(|g| g.wall_time_s = 0.0);
            }
            eprintln!(
                "{method}/{metric}: {} groups, {} skipped, {:.3} s",
                r.groups.len(),
                r.n_skipped,
                r.wall_time_s
            );
            results.push(r);
        }
    }
    Ok(Pipeline {
        results,
        original: prepared.groups,
        preprocess_json,
    })
}

fn output_dir(cfg: &RunConfig) -> Result<&Path, Failure> {
    let dir = cfg.require(&cfg.output_dir, "output_dir").usage()?;
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .data()?;
    Ok(dir)
}

pub fn correct(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = resolve_config(args, false)?;
    let dir = output_dir(&cfg)?.to_path_buf();
    let p = run_pipeline(&cfg)?;
    let rows = compare_methods(&p.results, &p.original).data()?;

    let path = dir.join(CORRECTED_FILE);
    let file = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .data()?;
    write_corrected(&p.results, BufWriter::new(file)).data()?;
    write_file(&dir, REPORT_CSV, &report_csv(&rows))?;
    write_file(&dir, REPORT_JSON, &report_json(&rows).data()?)?;
    write_file(&dir, EFFECTIVE_CONFIG, &cfg.to_toml().data()?)?;
    write_file(&dir, PREPROCESS_JSON, &p.preprocess_json)?;
    eprint!("{}", report_text(&rows));
    Ok(())
}

pub fn bench(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = resolve_config(args, true)?;
    let dir = output_dir(&cfg)?.to_path_buf();
    let p = run_pipeline(&cfg)?;
    let rows = compare_methods(&p.results, &p.original).data()?;
    write_file(&dir, BENCH_CSV, &report_csv(&rows))?;
    write_file(&dir, BENCH_TXT, &report_text(&rows))?;
    write_file(&dir, EFFECTIVE_CONFIG, &cfg.to_toml().data()?)?;
    write_file(&dir, PREPROCESS_JSON, &p.preprocess_json)?;
    eprint!("{}", report_text(&rows));
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    if !(args.radius > 0.0 && args.radius.is_finite()) {
        return Err(Failure::Usage(anyhow!("radius must be positive, got {}", args.radius)));
    }
    let dem = load_raster(&args.dem, RasterKind::Dem).data()?;
    let file = File::open(&args.corrected)
        .with_context(|| format!("opening {}", args.corrected.display()))
        .data()?;
    let (results, original) = results_from_corrected(std::io::BufReader::new(file), &dem, args.radius, args.agg)
        .with_context(|| format!("reading {}", args.corrected.display()))
        .data()?;
    let rows = compare_methods(&results, &original).data()?;
    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating output directory {}", args.output_dir.display()))
        .data()?;
    write_file(&args.output_dir, REPORT_CSV, &report_csv(&rows))?;
    write_file(&args.output_dir, REPORT_JSON, &report_json(&rows).data()?)?;
    eprint!("{}", report_text(&rows));
    Ok(())
}

pub const TERRAIN_STEM: &str = "terrain";
pub const FOOTPRINTS_FILE: &str = "footprints.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let tspec = TerrainSpec {
        kind: args.terrain,
        n_rows: args.rows,
        n_cols: args.cols,
        cell_size: args.cell_size,
        relief: args.relief,
        seed: args.seed,
    };
    let dspec = DatasetSpec {
        n_groups: args.groups,
        n_footprints: args.footprints,
        spacing: args.spacing,
        noise_sd: args.noise_sd,
        offset_range: (args.offset_min, args.offset_max),
        seed: args.seed,
    };
    let terrain = gen_terrain(&tspec).usage()?;
    let dataset = gen_dataset(&terrain, &dspec).usage()?;

    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating output directory {}", args.output_dir.display()))
        .data()?;
    save_raster(&terrain, args.output_dir.join(format!("{TERRAIN_STEM}.{}", args.format))).data()?;

    let mut observed = Vec::new();
    let mut truth = GroundTruth {
        terrain: tspec,
        groups: Vec::new(),
    };
    for (track, group) in &dataset {
        observed.extend(plant_offset(group, track.planted_dx, track.planted_dy).footprints);
        truth.groups.push(GroupTruth::new(group, track.planted_dx, track.planted_dy));
    }
    let path = args.output_dir.join(FOOTPRINTS_FILE);
    let file = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .data()?;
    write_footprints(&observed, BufWriter::new(file)).data()?;
    write_file(&args.output_dir, GROUND_TRUTH_FILE, &(serde_json::to_string_pretty(&truth).data()? + "\n"))?;
    eprintln!(
        "simulate: {} groups, {} footprints written to {}",
        truth.groups.len(),
        observed.len(),
        args.output_dir.display()
    );
    Ok(())
}
