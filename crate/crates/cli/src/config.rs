use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use geoshift::footprints::{QualityRules, DEFAULT_PREFIX_LEN};
use geoshift::metrics::MetricKind;
use geoshift::optimize::{Bounds, LbfgsbConfig, Method, OptimizerConfig, DEFAULT_OOB_PENALTY};
use geoshift::raster::AggregationKind;

use crate::args::CommonArgs;

/// Everything a `correct` or `bench` run depends on. Field names are the keys
/// of the TOML config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dem_path: Option<PathBuf>,
    pub geoid_path: Option<PathBuf>,
    pub footprints_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// CRS tag of the footprint coordinates; the DEM's tag when unset.
    pub crs: Option<String>,
    pub methods: Vec<Method>,
    pub metrics: Vec<MetricKind>,
    pub radius: f64,
    pub agg: AggregationKind,
    pub workers: usize,
    pub seed: u64,
    pub prefix_len: usize,
    pub oob_penalty: f64,
    /// Write measured wall times; when false they are written as 0 so output
    /// files are byte-stable.
    pub record_timing: bool,
    pub quality: QualityRules,
    pub bounds: Bounds,
    pub optimizer: OptimizerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dem_path: None,
            geoid_path: None,
            footprints_path: None,
            output_dir: None,
            crs: None,
            methods: vec![Method::Grid, Method::Lbfgsb],
            metrics: vec![MetricKind::Euclidean],
            radius: 12.5,
            agg: AggregationKind::Mean,
            workers: 1,
            seed: 0,
            prefix_len: DEFAULT_PREFIX_LEN,
            oob_penalty: DEFAULT_OOB_PENALTY,
            record_timing: true,
            quality: QualityRules::default(),
            bounds: Bounds::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies command-line overrides on top of file values.
    pub fn apply(&mut self, a: &CommonArgs) -> anyhow::Result<()> {
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &a.$flag { self.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            dem => dem_path,
            geoid => geoid_path,
            footprints => footprints_path,
            output_dir => output_dir,
            crs => crs,
            radius => radius,
            agg => agg,
            workers => workers,
            seed => seed,
            prefix_len => prefix_len,
            oob_penalty => oob_penalty,
            max_abs_dx => bounds.max_abs_dx,
            max_abs_dy => bounds.max_abs_dy,
            grid_step => optimizer.grid_step,
            lbfgsb_max_iter => optimizer.lbfgsb.max_iter,
            lbfgsb_tol => optimizer.lbfgsb.tol,
            lbfgsb_memory => optimizer.lbfgsb.memory,
            ga_pop => optimizer.ga.pop,
            ga_generations => optimizer.ga.generations,
            ga_crossover_rate => optimizer.ga.crossover_rate,
            ga_mutation_rate => optimizer.ga.mutation_rate,
            pso_swarm => optimizer.pso.swarm,
            pso_iterations => optimizer.pso.iterations,
            pso_cognitive => optimizer.pso.cognitive,
            pso_social => optimizer.pso.social,
            pso_inertia => optimizer.pso.inertia,
        );
        if let Some(h) = a.lbfgsb_fd_step {
            self.optimizer.lbfgsb.fd_step = Some(h);
        }
        if a.five_start {
            self.optimizer.lbfgsb.multistart = LbfgsbConfig::five_start().multistart;
        }
        if let Some(m) = &a.methods {
            self.methods = m.clone();
        }
        if let Some(m) = &a.metrics {
            self.metrics = m.clone();
        }
        if a.no_timing {
            self.record_timing = false;
        }
        Ok(())
    }

    /// Checks the invariants and resolves the single seed.
    pub fn finalize(&mut self) -> anyhow::Result<()> {
        self.optimizer.seed = self.seed;
        if self.methods.is_empty() || self.metrics.is_empty() {
            bail!("at least one method and one metric are required");
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            bail!("radius must be positive, got {}", self.radius);
        }
        if self.prefix_len == 0 {
            bail!("prefix_len must be positive");
        }
        self.bounds.validate()?;
        self.optimizer.validate()?;
        self.quality.validate()?;
        Ok(())
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, name: &str) -> anyhow::Result<&'a Path> {
        value
            .as_deref()
            .with_context(|| format!("missing {name}: set it in the config file or pass the matching flag"))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = toml::from_str(
            "methods = [\"pso\", \"ga\"]\nmetrics = [\"area\"]\nseed = 9\n[optimizer.pso]\nswarm = 20\n[quality]\nmin_sensitivity = 0.9\n",
        )
        .unwrap();
        assert_eq!(c.methods, vec![Method::Pso, Method::Ga]);
        assert_eq!(c.optimizer.pso.swarm, 20);
        assert_eq!(c.optimizer.pso.iterations, 100);
        assert_eq!(c.quality.min_sensitivity, 0.9);
        assert_eq!(c.radius, 12.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("radiuss = 3.0\n").is_err());
        assert!(toml::from_str::<RunConfig>("[optimizer.ga]\npopulation = 3\n").is_err());
    }

    #[test]
    fn finalize_checks_invariants() {
        let mut c = RunConfig {
            methods: vec![],
            ..Default::default()
        };
        assert!(c.finalize().is_err());
        let mut c = RunConfig {
            seed: 5,
            ..Default::default()
        };
        c.finalize().unwrap();
        assert_eq!(c.optimizer.seed, 5);
    }
}
